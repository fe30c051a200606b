// SPDX-License-Identifier: Apache-2.0
#include "distana/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "distana/errors.hpp"

namespace distana {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip norm must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"learning_rate", learning_rate}, {"beta1", beta1},
          {"beta2", beta2},         {"epsilon", epsilon},             {"batch_size", batch_size},
          {"teacher_steps", teacher_steps}, {"clip_norm", clip_norm}, {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.teacher_steps = j.value("teacher_steps", c.teacher_steps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  return c;
}

AdamState AdamState::zeros_like(const ModelParams& p) {
  AdamState s;
  for (const auto& [name, t] : p.blocks()) {
    s.m.emplace_back(t->shape());
    s.v.emplace_back(t->shape());
  }
  return s;
}

void adam_update(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                 const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment counts differ");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b]->shape() != grads[b].shape() || params[b]->shape() != state.m[b].shape()) {
      throw ShapeError("adam_update: shape mismatch in block " + std::to_string(b));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto w = params[b]->data();
    auto g = grads[b].data();
    auto m = state.m[b].data();
    auto v = state.v[b].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data()) v *= k;
  }
  return norm;
}

Var sequence_loss(const ModelConfig& cfg, const BoundParams& p, const Router& router, const Field& sequence,
                  std::size_t teacher_steps) {
  if (sequence.steps() < 2) throw ShapeError("sequence_loss: need at least two frames");
  const std::size_t n = sequence.frame_size();
  if (n != router.cells()) throw ShapeError("sequence_loss: field does not match the mesh");
  LatticeState state = LatticeState::zeros(n, cfg.pk);
  Var total;
  Var previous;
  for (std::size_t k = 0; k + 1 < sequence.steps(); ++k) {
    Var input = (teacher_steps == 0 || k < teacher_steps) ? constant(sequence.frame(k).reshaped({n, 1})) : previous;
    StepResult r = lattice_step(cfg, p, router, input, state);
    Var step_loss = mse(r.prediction, constant(sequence.frame(k + 1).reshaped({n, 1})));
    total = total.empty() ? step_loss : add(total, step_loss);
    previous = r.prediction;
    state = std::move(r.state);
  }
  return scale(total, 1.0 / static_cast<double>(sequence.steps() - 1));
}

std::pair<double, std::vector<Tensor>> loss_and_gradients(const Model& model, const Router& router,
                                                          const Field& sequence, std::size_t teacher_steps) {
  Tape tape;
  BoundParams p = BoundParams::leaves(tape, model.params());
  Var loss = sequence_loss(model.config(), p, router, sequence, teacher_steps);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (const Var& v : p.list()) grads.push_back(tape.grad(v));
  return {loss.value().item(), std::move(grads)};
}

namespace {

std::vector<Tensor*> param_pointers(Model& model) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : model.params().blocks()) out.push_back(t);
  return out;
}

void apply_update(Model& model, std::vector<Tensor>& grads, AdamState& adam, const TrainConfig& cfg) {
  clip_global_norm(grads, cfg.clip_norm);
  auto ptrs = param_pointers(model);
  adam_update(ptrs, grads, adam, cfg);
}

}  // namespace

double train_step(Model& model, const Router& router, const Field& sequence, AdamState& adam,
                  const TrainConfig& cfg) {
  double loss = 0.0;
  std::vector<Tensor> grads;
  try {
    std::tie(loss, grads) = loss_and_gradients(model, router, sequence, cfg.teacher_steps);
  } catch (const NumericError& e) {
    throw NumericError(std::string("training diverged: ") + e.what() + " (optimizer step " +
                       std::to_string(adam.step) + ")");
  }
  if (!std::isfinite(loss)) throw NumericError("training diverged: non-finite loss at optimizer step " + std::to_string(adam.step));
  apply_update(model, grads, adam, cfg);
  return loss;
}

Checkpoint make_training_checkpoint(const Model& model, const AdamState& adam, const TrainConfig& cfg,
                                    std::size_t next_epoch, const std::vector<EpochRecord>& history) {
  Checkpoint ckpt{model.config(), model.params(), nlohmann::json::object(), {}};
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history) hist.push_back({{"epoch", r.epoch}, {"train_mse", r.train_mse}, {"seconds", r.seconds}});
  ckpt.info = {{"next_epoch", next_epoch}, {"adam_step", adam.step}, {"train_config", cfg.to_json()}, {"history", hist}};
  if (!history.empty()) ckpt.info["final_train_mse"] = history.back().train_mse;
  auto blocks = model.params().blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    ckpt.extra.push_back({"adam_m/" + blocks[b].first, adam.m[b]});
    ckpt.extra.push_back({"adam_v/" + blocks[b].first, adam.v[b]});
  }
  return ckpt;
}

Episode fit(Model& model, std::span<const Field> train, const TrainConfig& cfg, const EpochCallback& on_epoch,
            const std::optional<Checkpoint>& resume) {
  cfg.validate();
  if (train.empty()) throw ConfigError("fit: training set is empty");
  const Field& first = train.front();
  for (const Field& f : train) {
    if (f.height() != first.height() || f.width() != first.width()) throw ShapeError("fit: sequences differ in field size");
  }
  const MeshTopology topo = MeshTopology::grid(first.height(), first.width(), BorderMode::ZeroPad);
  const Router router(topo, model.config());

  AdamState adam = AdamState::zeros_like(model.params());
  std::size_t start_epoch = 0;
  std::vector<EpochRecord> history;
  if (resume) {
    if (!(resume->config == model.config())) throw ConfigError("fit: resume checkpoint has a different model config");
    model.params() = resume->params;
    auto blocks = model.params().blocks();
    for (const auto& e : resume->extra) {
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (e.name == "adam_m/" + blocks[b].first) adam.m[b] = e.value;
        if (e.name == "adam_v/" + blocks[b].first) adam.v[b] = e.value;
      }
    }
    adam.step = resume->info.value("adam_step", std::uint64_t{0});
    start_epoch = resume->info.value("next_epoch", std::size_t{0});
    for (const auto& r : resume->info.value("history", nlohmann::json::array())) {
      history.push_back({r.at("epoch").get<std::size_t>(), r.at("train_mse").get<double>(), r.at("seconds").get<double>()});
    }
  }

  if (!cfg.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (!std::filesystem::is_directory(cfg.out_dir)) throw IoError("cannot create output directory " + cfg.out_dir.string());
  }

  Episode ep;
  ep.config = {{"model", model.config().to_json()}, {"train", cfg.to_json()}, {"sequences", train.size()}};
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start == 1) {
        loss_sum += train_step(model, router, train[order[start]], adam, cfg);
        continue;
      }
      std::vector<Tensor> acc;
      for (std::size_t i = start; i < end; ++i) {
        auto [loss, grads] = loss_and_gradients(model, router, train[order[i]], cfg.teacher_steps);
        if (!std::isfinite(loss)) throw NumericError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
        loss_sum += loss;
        if (acc.empty()) {
          acc = std::move(grads);
        } else {
          for (std::size_t b = 0; b < acc.size(); ++b)
            for (std::size_t j = 0; j < acc[b].size(); ++j) acc[b][j] += grads[b][j];
        }
      }
      for (Tensor& g : acc)
        for (double& v : g.data()) v /= static_cast<double>(end - start);
      apply_update(model, acc, adam, cfg);
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), secs};
    history.push_back(rec);
    ep.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
      write_checkpoint(cfg.out_dir / name.str(), make_training_checkpoint(model, adam, cfg, epoch + 1, history));
    }
  }

  if (!cfg.out_dir.empty()) {
    ep.final_checkpoint = cfg.out_dir / "final.ckpt";
    write_checkpoint(ep.final_checkpoint, make_training_checkpoint(model, adam, cfg, cfg.epochs, history));
  }
  ep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ep;
}

}  // namespace distana
