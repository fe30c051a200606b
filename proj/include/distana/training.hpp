// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distana/model.hpp"
#include "distana/wavegen.hpp"

namespace distana {

struct TrainConfig {
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 1;
  std::size_t teacher_steps = 0;  // inputs fed from ground truth; 0 = whole sequence
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  std::filesystem::path out_dir;     // empty = no files written

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams& p);
};

/// Bias-corrected Adam step applied in place.
void adam_update(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                 const TrainConfig& cfg);

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

/// Mean over steps of mse(prediction_t, frame_{t+1}) on an unrolled lattice.
Var sequence_loss(const ModelConfig& cfg, const BoundParams& p, const Router& router, const Field& sequence,
                  std::size_t teacher_steps = 0);

/// Loss and parameter gradients (ModelParams::blocks() order) for one sequence.
std::pair<double, std::vector<Tensor>> loss_and_gradients(const Model& model, const Router& router,
                                                          const Field& sequence, std::size_t teacher_steps = 0);

/// Reset state, unroll with teacher forcing, backprop, clip, one Adam update.
double train_step(Model& model, const Router& router, const Field& sequence, AdamState& adam,
                  const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch;
  double train_mse;
  double seconds;
};

struct Episode {
  nlohmann::json config;
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;
  std::filesystem::path final_checkpoint;

  double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().train_mse; }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch loop with per-epoch shuffling seeded by (seed, epoch). When `resume`
/// is given, optimizer state and epoch counter are restored from it.
Episode fit(Model& model, std::span<const Field> train, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
            const std::optional<Checkpoint>& resume = std::nullopt);

/// Model + optimizer + progress as a checkpoint.
Checkpoint make_training_checkpoint(const Model& model, const AdamState& adam, const TrainConfig& cfg,
                                    std::size_t next_epoch, const std::vector<EpochRecord>& history);

}  // namespace distana
