// SPDX-License-Identifier: Apache-2.0
#include "distana/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "distana/errors.hpp"
#include "distana/wavegen.hpp"

namespace distana {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "distana";
    case Variant::V1: return "distana-v1";
    case Variant::V2: return "distana-v2";
    case Variant::V3: return "distana-v3";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "distana") return Variant::Base;
  if (s == "distana-v1") return Variant::V1;
  if (s == "distana-v2") return Variant::V2;
  if (s == "distana-v3") return Variant::V3;
  throw ConfigError("unknown model '" + s + "' (expected distana, distana-v1, distana-v2 or distana-v3)");
}

ModelConfig ModelConfig::make(Variant variant, std::size_t lstm_cells) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.pk.lstm_cells = lstm_cells;
  cfg.pk.pre_units = variant == Variant::Base ? 1 : 4;
  cfg.pk.lateral_in = (variant == Variant::V2 || variant == Variant::V3) ? kDirections : 1;
  cfg.pk.lateral_out = variant == Variant::V3 ? kDirections : 1;
  return cfg;
}

void ModelConfig::validate() const {
  if (pk.dyn_in < 1 || pk.dyn_out < 1) throw ConfigError("model: dyn_in and dyn_out must be >= 1");
  if (pk.lstm_cells < 1 || pk.pre_units < 1) throw ConfigError("model: lstm_cells and pre_units must be >= 1");
  switch (variant) {
    case Variant::Base:
    case Variant::V1:
      if (pk.lateral_in != 1) throw ConfigError("model: TK variants take exactly one lateral input");
      break;
    case Variant::V2:
      if (pk.lateral_in != kDirections || pk.lateral_out != 1) {
        throw ConfigError("model: distana-v2 needs 8 lateral inputs and 1 lateral output");
      }
      break;
    case Variant::V3:
      if (pk.lateral_in != kDirections || pk.lateral_out != kDirections) {
        throw ConfigError("model: distana-v3 needs 8 lateral inputs and 8 lateral outputs");
      }
      break;
  }
}

std::string ModelConfig::display_name() const {
  switch (variant) {
    case Variant::Base: return "DISTANA" + std::to_string(pk.lstm_cells);
    case Variant::V1: return "DISTANAv1";
    case Variant::V2: return "DISTANAv2";
    case Variant::V3: return "DISTANAv3";
  }
  return "DISTANA";
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"dyn_in", pk.dyn_in},
          {"static_in", pk.static_in},
          {"lateral_in", pk.lateral_in},
          {"pre_units", pk.pre_units},
          {"lstm_cells", pk.lstm_cells},
          {"dyn_out", pk.dyn_out},
          {"lateral_out", pk.lateral_out}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg = make(variant_from_string(j.at("variant").get<std::string>()), j.value("lstm_cells", std::size_t{4}));
  cfg.pk.dyn_in = j.value("dyn_in", cfg.pk.dyn_in);
  cfg.pk.static_in = j.value("static_in", cfg.pk.static_in);
  cfg.pk.lateral_in = j.value("lateral_in", cfg.pk.lateral_in);
  cfg.pk.pre_units = j.value("pre_units", cfg.pk.pre_units);
  cfg.pk.dyn_out = j.value("dyn_out", cfg.pk.dyn_out);
  cfg.pk.lateral_out = j.value("lateral_out", cfg.pk.lateral_out);
  cfg.validate();
  return cfg;
}

// --- parameters ----------------------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> ModelParams::blocks() {
  std::vector<std::pair<std::string, Tensor*>> out{
      {"w_pre", &w_pre}, {"w_gates", &w_gates}, {"b_gates", &b_gates}, {"w_post", &w_post}};
  if (w_tk) out.emplace_back("w_tk", &*w_tk);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::blocks() const {
  std::vector<std::pair<std::string, const Tensor*>> out{
      {"w_pre", &w_pre}, {"w_gates", &w_gates}, {"b_gates", &b_gates}, {"w_post", &w_post}};
  if (w_tk) out.emplace_back("w_tk", &*w_tk);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : blocks()) n += t->size();
  return n;
}

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-s, s);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const PkConfig& pk = cfg.pk;
  const std::size_t k = pk.lstm_cells;
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.w_pre = uniform_init({pk.input_width(), pk.pre_units}, pk.input_width(), rng);
  p.w_gates = uniform_init({pk.pre_units + k, 4 * k}, pk.pre_units + k, rng);
  p.b_gates = Tensor({1, 4 * k});
  for (std::size_t j = k; j < 2 * k; ++j) p.b_gates[j] = 1.0;  // forget gate
  p.w_post = uniform_init({k, pk.output_width()}, k, rng);
  if (cfg.uses_tk()) p.w_tk = uniform_init({pk.lateral_out, pk.lateral_in}, pk.lateral_out, rng);
  return p;
}

std::size_t param_count(const ModelConfig& cfg) { return init_params(cfg, 0).count(); }

Model::Model(ModelConfig cfg, ModelParams params) : config_(std::move(cfg)), params_(std::move(params)) {
  config_.validate();
  ModelParams ref = init_params(config_, 0);
  auto want = ref.blocks();
  auto have = params_.blocks();
  if (want.size() != have.size()) throw ConfigError("model: parameter blocks do not match the configuration");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].second->shape() != have[i].second->shape()) {
      throw ConfigError("model: block " + want[i].first + " has shape " + shape_string(have[i].second->shape()) +
                        ", expected " + shape_string(want[i].second->shape()));
    }
  }
}

BoundParams BoundParams::constants(const ModelParams& p) {
  BoundParams b{constant(p.w_pre), constant(p.w_gates), constant(p.b_gates), constant(p.w_post), {}};
  if (p.w_tk) b.w_tk = constant(*p.w_tk);
  return b;
}

BoundParams BoundParams::leaves(Tape& tape, const ModelParams& p) {
  BoundParams b{tape.leaf(p.w_pre), tape.leaf(p.w_gates), tape.leaf(p.b_gates), tape.leaf(p.w_post), {}};
  if (p.w_tk) b.w_tk = tape.leaf(*p.w_tk);
  return b;
}

std::vector<Var> BoundParams::list() const {
  std::vector<Var> out{w_pre, w_gates, b_gates, w_post};
  if (!w_tk.empty()) out.push_back(w_tk);
  return out;
}

// --- forward -------------------------------------------------------------------

PkOutput pk_forward(const PkConfig& cfg, const BoundParams& p, const Var& dyn_in, const Var& static_in,
                    const Var& lateral_in, const PkState& state) {
  const std::size_t k = cfg.lstm_cells;
  auto check = [&](const Var& v, std::size_t width, const char* what) {
    if (v.shape().size() != 2 || v.shape()[1] != width || v.shape()[0] != dyn_in.shape()[0]) {
      throw ShapeError(std::string("pk_forward: ") + what + " has shape " + shape_string(v.shape()) +
                       ", expected cells x " + std::to_string(width));
    }
  };
  if (dyn_in.shape().size() != 2) throw ShapeError("pk_forward: dynamic input must be cells x dyn_in");
  check(dyn_in, cfg.dyn_in, "dynamic input");
  check(lateral_in, cfg.lateral_in, "lateral input");
  check(state.h, k, "hidden state");
  check(state.c, k, "cell state");

  std::vector<Var> inputs{dyn_in};
  if (cfg.static_in > 0) {
    if (static_in.empty()) throw ShapeError("pk_forward: configuration expects static inputs");
    check(static_in, cfg.static_in, "static input");
    inputs.push_back(static_in);
  }
  inputs.push_back(lateral_in);
  Var x = inputs.size() == 1 ? inputs[0] : concat_cols(inputs);
  Var pre = matmul(x, p.w_pre);

  std::vector<Var> gate_in{pre, state.h};
  Var z = add_row(matmul(concat_cols(gate_in), p.w_gates), p.b_gates);
  Var i = sigmoid(slice_cols(z, 0, k));
  Var f = sigmoid(slice_cols(z, k, 2 * k));
  Var g = tanh(slice_cols(z, 2 * k, 3 * k));
  Var o = sigmoid(slice_cols(z, 3 * k, 4 * k));
  Var c = add(mul(f, state.c), mul(i, g));
  Var h = mul(o, tanh(c));

  Var out = matmul(h, p.w_post);
  return {slice_cols(out, 0, cfg.dyn_out), slice_cols(out, cfg.dyn_out, cfg.dyn_out + cfg.lateral_out), {h, c}};
}

namespace {

std::shared_ptr<const GatherMap> build_map(const MeshTopology& topo, const ModelConfig& cfg) {
  const std::size_t n = topo.cells();
  auto map = std::make_shared<GatherMap>();
  const std::size_t lo = cfg.pk.lateral_out;
  map->in_shape = {n, lo};
  map->offsets.push_back(0);
  if (cfg.uses_tk()) {
    // Sum of neighbor buffers, channel by channel; W_tk is applied afterwards.
    map->out_shape = {n, lo};
    for (CellId i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < lo; ++ch) {
        for (Direction d : kAllDirections) {
          if (auto j = topo.neighbor(i, d)) map->sources.push_back(*j * lo + ch);
        }
        map->offsets.push_back(map->sources.size());
      }
    }
  } else {
    map->out_shape = {n, kDirections};
    for (CellId i = 0; i < n; ++i) {
      for (Direction d : kAllDirections) {
        if (auto j = topo.neighbor(i, d)) {
          const std::size_t slot = cfg.variant == Variant::V3 ? index_of(opposite(d)) : 0;
          map->sources.push_back(*j * lo + slot);
        }
        map->offsets.push_back(map->sources.size());
      }
    }
  }
  return map;
}

}  // namespace

Router::Router(const MeshTopology& topology, const ModelConfig& cfg)
    : cells_(topology.cells()), variant_(cfg.variant), map_(build_map(topology, cfg)) {
  cfg.validate();
}

Var Router::route(const BoundParams& p, const Var& buffers) const {
  Var gathered = gather_sum(buffers, map_);
  if (variant_ == Variant::Base || variant_ == Variant::V1) {
    if (p.w_tk.empty()) throw ConfigError("router: TK variant without TK parameters");
    return matmul(gathered, p.w_tk);
  }
  return gathered;
}

Var lateral_route_tk(const MeshTopology& topology, const ModelConfig& cfg, const Var& w_tk, const Var& buffers) {
  if (!cfg.uses_tk()) throw ConfigError("lateral_route_tk called with a direct-routing configuration");
  BoundParams p;
  p.w_tk = w_tk;
  return Router(topology, cfg).route(p, buffers);
}

Var lateral_route_direct(const MeshTopology& topology, const ModelConfig& cfg, const Var& buffers) {
  if (cfg.uses_tk()) throw ConfigError("lateral_route_direct called with a TK configuration");
  return Router(topology, cfg).route(BoundParams{}, buffers);
}

LatticeState LatticeState::zeros(std::size_t cells, const PkConfig& cfg) {
  return {constant(Tensor({cells, cfg.lstm_cells})), constant(Tensor({cells, cfg.lstm_cells})),
          constant(Tensor({cells, cfg.lateral_out}))};
}

StepResult lattice_step(const ModelConfig& cfg, const BoundParams& p, const Router& router, const Var& frame_in,
                        const LatticeState& state, const Var& static_in) {
  if (frame_in.shape() != Shape{router.cells(), cfg.pk.dyn_in}) {
    throw ShapeError("lattice_step: frame " + shape_string(frame_in.shape()) + " for " +
                     std::to_string(router.cells()) + " cells");
  }
  Var lateral_in = router.route(p, state.lateral);
  PkOutput out = pk_forward(cfg.pk, p, frame_in, static_in, lateral_in, {state.h, state.c});
  return {out.dyn_out, {out.state.h, out.state.c, out.lateral_out}};
}

// --- checkpoints ---------------------------------------------------------------

namespace {

void append_f64(std::vector<unsigned char>& bytes, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<unsigned char>(bits >> (8 * b)));
  }
}

}  // namespace

std::uint64_t params_fingerprint(const ModelParams& p) {
  std::vector<unsigned char> bytes;
  for (const auto& [name, t] : p.blocks()) append_f64(bytes, t->data());
  return fnv1a(bytes);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<unsigned char> bytes;
  for (const auto& [name, t] : ckpt.params.blocks()) {
    arrays.push_back({{"name", name}, {"shape", t->shape()}});
    append_f64(bytes, t->data());
  }
  for (const auto& e : ckpt.extra) {
    arrays.push_back({{"name", e.name}, {"shape", e.value.shape()}});
    append_f64(bytes, e.value.data());
  }
  nlohmann::json header{{"format", 1}, {"config", ckpt.config.to_json()}, {"arrays", arrays}, {"info", ckpt.info}};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header.value("format", 0) != 1) throw IoError("unsupported checkpoint format in " + path.string());

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  if (expected && !(*expected == ckpt.config)) {
    throw ConfigError("checkpoint " + path.string() + " holds " + ckpt.config.to_json().dump() + ", expected " +
                      expected->to_json().dump());
  }
  ckpt.info = header.value("info", nlohmann::json::object());
  ckpt.params = init_params(ckpt.config, 0);
  auto blocks = ckpt.params.blocks();

  std::size_t index = 0;
  for (const auto& a : header.at("arrays")) {
    Shape shape = a.at("shape").get<Shape>();
    Tensor t(shape);
    std::vector<unsigned char> raw(t.size() * 8);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw IoError("truncated checkpoint " + path.string());
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
      t[i] = std::bit_cast<double>(bits);
    }
    const auto name = a.at("name").get<std::string>();
    if (index < blocks.size()) {
      if (name != blocks[index].first || shape != blocks[index].second->shape()) {
        throw ConfigError("checkpoint array '" + name + "' " + shape_string(shape) + " does not match block '" +
                          blocks[index].first + "' " + shape_string(blocks[index].second->shape()));
      }
      *blocks[index].second = std::move(t);
    } else {
      ckpt.extra.push_back({name, std::move(t)});
    }
    ++index;
  }
  if (index < blocks.size()) throw ConfigError("checkpoint " + path.string() + " is missing parameter blocks");
  return ckpt;
}

}  // namespace distana
