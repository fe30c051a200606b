// SPDX-License-Identifier: Apache-2.0
//
// The DISTANA lattice. One Prediction Kernel (linear -> LSTM -> linear) is
// evaluated at every cell with a single shared parameter set. Lateral values
// produced at step t reach the neighbors at step t+1, either through a shared
// linear Transition Kernel summed over neighbors (base, v1) or as
// direction-indexed inputs (v2, v3).
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distana/autodiff.hpp"
#include "distana/mesh.hpp"

namespace distana {

enum class Variant { Base, V1, V2, V3 };
const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);  // "distana", "distana-v1", ...

struct PkConfig {
  std::size_t dyn_in = 1;
  std::size_t static_in = 0;
  std::size_t lateral_in = 1;
  std::size_t pre_units = 1;
  std::size_t lstm_cells = 4;
  std::size_t dyn_out = 1;
  std::size_t lateral_out = 1;

  std::size_t input_width() const { return dyn_in + static_in + lateral_in; }
  std::size_t output_width() const { return dyn_out + lateral_out; }
  friend bool operator==(const PkConfig&, const PkConfig&) = default;
};

struct ModelConfig {
  Variant variant = Variant::Base;
  PkConfig pk;

  /// Standard configurations: base uses a one-unit pre-layer, v1-v3 four.
  static ModelConfig make(Variant variant, std::size_t lstm_cells = 4);

  bool uses_tk() const { return variant == Variant::Base || variant == Variant::V1; }
  void validate() const;
  std::string display_name() const;  // e.g. DISTANA4, DISTANAv2
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Shared weights. Gate columns are ordered input, forget, candidate, output.
struct ModelParams {
  Tensor w_pre;    // input_width × pre_units
  Tensor w_gates;  // (pre_units + lstm_cells) × 4·lstm_cells
  Tensor b_gates;  // 1 × 4·lstm_cells
  Tensor w_post;   // lstm_cells × output_width
  std::optional<Tensor> w_tk;  // lateral_out × lateral_in, TK variants only

  std::vector<std::pair<std::string, Tensor*>> blocks();
  std::vector<std::pair<std::string, const Tensor*>> blocks() const;
  std::size_t count() const;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
std::size_t param_count(const ModelConfig& cfg);

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : config_(std::move(cfg)), params_(init_params(config_, seed)) {}
  Model(ModelConfig cfg, ModelParams params);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  std::size_t param_count() const { return params_.count(); }

 private:
  ModelConfig config_;
  ModelParams params_;
};

/// Parameters as Vars: either taped leaves (training) or constants (inference).
struct BoundParams {
  Var w_pre, w_gates, b_gates, w_post, w_tk;

  static BoundParams constants(const ModelParams& p);
  static BoundParams leaves(Tape& tape, const ModelParams& p);
  std::vector<Var> list() const;  // same order as ModelParams::blocks()
};

struct PkState {
  Var h;  // cells × lstm_cells
  Var c;
};

struct PkOutput {
  Var dyn_out;      // cells × dyn_out
  Var lateral_out;  // cells × lateral_out
  PkState state;
};

/// Evaluates the PK on every row (cell) at once; rows never interact.
/// `static_in` may be empty when the config has no static inputs.
PkOutput pk_forward(const PkConfig& cfg, const BoundParams& p, const Var& dyn_in, const Var& static_in,
                    const Var& lateral_in, const PkState& state);

/// Precomputed neighbor gather for one topology and variant.
class Router {
 public:
  Router(const MeshTopology& topology, const ModelConfig& cfg);

  std::size_t cells() const { return cells_; }
  Variant variant() const { return variant_; }
  /// Per-cell lateral input from the previous step's outgoing buffers.
  Var route(const BoundParams& p, const Var& buffers) const;

 private:
  std::size_t cells_;
  Variant variant_;
  std::shared_ptr<const GatherMap> map_;
};

/// TK routing: lateral_in(i) = sum over present neighbors j of buffer(j) · W_tk.
Var lateral_route_tk(const MeshTopology& topology, const ModelConfig& cfg, const Var& w_tk, const Var& buffers);
/// Direct routing: slot d of cell i reads neighbor d's value (v2) or its opposite(d) slot (v3).
Var lateral_route_direct(const MeshTopology& topology, const ModelConfig& cfg, const Var& buffers);

struct LatticeState {
  Var h;        // cells × lstm_cells
  Var c;        // cells × lstm_cells
  Var lateral;  // cells × lateral_out, outgoing buffer of the previous step

  static LatticeState zeros(std::size_t cells, const PkConfig& cfg);
};

struct StepResult {
  Var prediction;  // cells × dyn_out
  LatticeState state;
};

/// One synchronous update of every cell. `frame_in` is cells × dyn_in;
/// `static_in` is cells × static_in or empty.
StepResult lattice_step(const ModelConfig& cfg, const BoundParams& p, const Router& router, const Var& frame_in,
                        const LatticeState& state, const Var& static_in = {});

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then little-endian f64 arrays in the
// order listed under "arrays".

struct NamedArray {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  nlohmann::json info = nlohmann::json::object();
  std::vector<NamedArray> extra;  // e.g. optimizer moments
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws ConfigError when `expected` is given and differs from the stored config.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = {});
/// FNV-1a over the parameter bytes.
std::uint64_t params_fingerprint(const ModelParams& p);

}  // namespace distana
