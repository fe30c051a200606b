// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "distana/errors.hpp"
#include "distana/training.hpp"
#include "oracles.hpp"

using namespace distana;
namespace fs = std::filesystem;

namespace {

std::vector<Field> small_ds1(std::size_t n, std::uint64_t seed = 3) {
  DatasetConfig cfg;
  cfg.n_train = n;
  cfg.n_test = 1;
  cfg.seed = seed;
  // A larger time step keeps the waves visible in short sequences.
  cfg.ds1.dt = 0.05;
  cfg.ds1.steps = 20;
  return sample_dataset(cfg).train;
}

Field random_field(std::size_t t, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Field f(t, h, w);
  for (double& v : f.data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  return f;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  Tensor w({3}, {1.0, -2.0, 0.5});
  Tensor g({3}, {3.0, -0.01, 250.0});
  AdamState st{{Tensor({3})}, {Tensor({3})}, 0};
  Tensor* ps[] = {&w};
  adam_update(ps, std::span<const Tensor>(&g, 1), st, cfg);
  EXPECT_NEAR(w[0], 1.0 - 1e-3, 1e-10);
  EXPECT_NEAR(w[1], -2.0 + 1e-3, 1e-8);
  EXPECT_NEAR(w[2], 0.5 - 1e-3, 1e-10);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  TrainConfig cfg;
  Tensor w({2}, {0.3, -0.7});
  const Tensor before = w;
  Tensor g({2});
  AdamState st{{Tensor({2})}, {Tensor({2})}, 0};
  Tensor* ps[] = {&w};
  adam_update(ps, std::span<const Tensor>(&g, 1), st, cfg);
  EXPECT_EQ(w, before);
}

TEST(Adam, FirstMomentDecaysByBeta1) {
  TrainConfig cfg;
  Tensor w({1}, {0.0});
  AdamState st{{Tensor({1})}, {Tensor({1})}, 0};
  Tensor* ps[] = {&w};
  Tensor g({1}, {2.0});
  adam_update(ps, std::span<const Tensor>(&g, 1), st, cfg);
  Tensor zero({1});
  for (int i = 0; i < 3; ++i) {
    const double m = st.m[0][0];
    adam_update(ps, std::span<const Tensor>(&zero, 1), st, cfg);
    EXPECT_NEAR(st.m[0][0], 0.9 * m, 1e-16);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  TrainConfig cfg;
  Tensor w({2});
  Tensor g({3});
  AdamState st{{Tensor({2})}, {Tensor({2})}, 0};
  Tensor* ps[] = {&w};
  EXPECT_THROW(adam_update(ps, std::span<const Tensor>(&g, 1), st, cfg), ShapeError);
}

TEST(Clip, ScalesToMaxNorm) {
  std::vector<Tensor> g{Tensor({2}, {3.0, 0.0}), Tensor({1}, {4.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  std::vector<Tensor> small{Tensor({1}, {0.5})};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.5);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.teacher_steps = 15;
  TrainConfig back = TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.epochs, 7u);
  EXPECT_EQ(back.teacher_steps, 15u);
  cfg.clip_norm = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SequenceLoss, ZeroModelLossIsMeanSquaredTarget) {
  auto cfg = ModelConfig::make(Variant::Base);
  ModelParams p = init_params(cfg, 0);
  for (auto& [name, t] : p.blocks())
    for (double& v : t->data()) v = 0.0;
  Field f = small_ds1(1)[0];
  Router router(MeshTopology::grid(16, 16, BorderMode::ZeroPad), cfg);
  const double loss = sequence_loss(cfg, BoundParams::constants(p), router, f).value().item();
  double s = 0.0;
  for (std::size_t i = f.frame_size(); i < f.data().size(); ++i) s += f.data()[i] * f.data()[i];
  EXPECT_NEAR(loss, s / double(f.data().size() - f.frame_size()), 1e-15);
}

TEST(Gradients, MatchFiniteDifferencesOnUnrolledLoss) {
  std::mt19937_64 rng(12);
  for (Variant v : {Variant::Base, Variant::V1, Variant::V2, Variant::V3}) {
    Model model(ModelConfig::make(v), rng());
    Router router(MeshTopology::grid(4, 4, BorderMode::ZeroPad), model.config());
    Field seq = random_field(12, 4, 4, rng);
    auto [loss, grads] = loss_and_gradients(model, router, seq);
    // Fourth-order central differences through the untaped forward pass.
    auto blocks = model.params().blocks();
    std::vector<Tensor> numeric;
    const double h = 1e-4;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      Tensor& w = *blocks[b].second;
      numeric.emplace_back(w.shape());
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double orig = w[i];
        auto at = [&](double x) {
          w[i] = x;
          return sequence_loss(model.config(), BoundParams::constants(model.params()), router, seq).value().item();
        };
        numeric[b][i] = (8 * (at(orig + h) - at(orig - h)) - (at(orig + 2 * h) - at(orig - 2 * h))) / (12 * h);
        w[i] = orig;
      }
    }
    double g_max = 0.0;
    for (const Tensor& g : grads)
      for (double x : g.data()) g_max = std::max(g_max, std::abs(x));
    double worst = 0.0;
    for (std::size_t b = 0; b < grads.size(); ++b)
      for (std::size_t i = 0; i < grads[b].size(); ++i) {
        const double a = grads[b][i], n = numeric[b][i];
        worst = std::max(worst, std::abs(a - n) / std::max(1e-6 * g_max, std::abs(a) + std::abs(n)));
      }
    EXPECT_LE(worst, 1e-4) << to_string(v);
  }
}

TEST(SequenceLoss, InvariantUnderCellRelabeling) {
  std::mt19937_64 rng(13);
  const std::size_t h = 4, w = 5, n = h * w;
  auto cfg = ModelConfig::make(Variant::V3);
  auto params = BoundParams::constants(init_params(cfg, 4));
  Field seq = random_field(6, h, w, rng);
  auto grid = MeshTopology::grid(h, w, BorderMode::ZeroPad);

  std::vector<CellId> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<MeshTopology::Neighborhood> nb(n);
  for (CellId c = 0; c < n; ++c)
    for (Direction d : kAllDirections)
      if (auto m = grid.neighbor(c, d)) nb[perm[c]][index_of(d)] = perm[*m];
  MeshTopology relabeled(nb, BorderMode::ZeroPad);
  ASSERT_TRUE(validate(relabeled).empty());

  // The relabeled sequence stores cell c at flat position perm[c], as a 1×n field.
  Field flat(seq.steps(), 1, n);
  Field moved(seq.steps(), 1, n);
  for (std::size_t t = 0; t < seq.steps(); ++t)
    for (CellId c = 0; c < n; ++c) {
      flat.at(t, 0, c) = seq.data()[t * n + c];
      moved.at(t, 0, perm[c]) = seq.data()[t * n + c];
    }
  const double a = sequence_loss(cfg, params, Router(grid, cfg), flat).value().item();
  const double b = sequence_loss(cfg, params, Router(relabeled, cfg), moved).value().item();
  EXPECT_NEAR(a, b, 1e-15 * a);
}

TEST(Fit, ZeroLearningRateLeavesParametersBitIdentical) {
  Model model(ModelConfig::make(Variant::Base), 5);
  const auto before = params_fingerprint(model.params());
  const ModelParams copy = model.params();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  auto data = small_ds1(2);
  fit(model, data, cfg);
  EXPECT_EQ(params_fingerprint(model.params()), before);
  EXPECT_EQ(model.params().w_gates, copy.w_gates);
}

TEST(Fit, DeterministicAcrossRuns) {
  auto data = small_ds1(3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 77;
  Model a(ModelConfig::make(Variant::V2), 1);
  Model b(ModelConfig::make(Variant::V2), 1);
  Episode ea = fit(a, data, cfg);
  Episode eb = fit(b, data, cfg);
  ASSERT_EQ(ea.epochs.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(ea.epochs[i].train_mse, eb.epochs[i].train_mse);
  EXPECT_EQ(params_fingerprint(a.params()), params_fingerprint(b.params()));
}

TEST(Fit, LossDecreases) {
  auto data = small_ds1(2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 3e-3;
  Model model(ModelConfig::make(Variant::Base), 2);
  Episode ep = fit(model, data, cfg);
  ASSERT_EQ(ep.epochs.size(), 50u);
  EXPECT_LT(ep.epochs.back().train_mse, ep.epochs.front().train_mse);
  for (const auto& r : ep.epochs) EXPECT_TRUE(std::isfinite(r.train_mse));
}

TEST(Fit, ResumeMatchesUninterruptedRun) {
  auto data = small_ds1(3);
  fs::path dir = fs::temp_directory_path() / "distana_test_resume";
  fs::remove_all(dir);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 5;
  cfg.checkpoint_every = 2;
  cfg.out_dir = dir;
  Model full(ModelConfig::make(Variant::V1), 8);
  Episode ef = fit(full, data, cfg);
  ASSERT_TRUE(fs::exists(dir / "epoch_0002.ckpt"));
  ASSERT_TRUE(fs::exists(dir / "final.ckpt"));

  Checkpoint mid = read_checkpoint(dir / "epoch_0002.ckpt", ModelConfig::make(Variant::V1));
  Model resumed(ModelConfig::make(Variant::V1), 999);
  cfg.out_dir.clear();
  Episode er = fit(resumed, data, cfg, {}, mid);
  ASSERT_EQ(er.epochs.size(), 2u);
  EXPECT_EQ(er.epochs[0].train_mse, ef.epochs[2].train_mse);
  EXPECT_EQ(er.epochs[1].train_mse, ef.epochs[3].train_mse);
  EXPECT_EQ(params_fingerprint(resumed.params()), params_fingerprint(full.params()));
}

TEST(Fit, EmptyDatasetRejected) {
  Model model(ModelConfig::make(Variant::Base), 1);
  EXPECT_THROW(fit(model, std::span<const Field>{}, TrainConfig{}), ConfigError);
}

TEST(Fit, ProgressCallbackPerEpoch) {
  auto data = small_ds1(1);
  TrainConfig cfg;
  cfg.epochs = 3;
  Model model(ModelConfig::make(Variant::Base), 1);
  std::vector<std::size_t> seen;
  fit(model, data, cfg, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
}
