// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "distana/errors.hpp"
#include "distana/evaluation.hpp"
#include "distana/training.hpp"

using namespace distana;

namespace {

Field random_field(std::size_t t, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Field f(t, h, w);
  for (double& v : f.data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  return f;
}

// Test-only predictor that looks up the true next frame.
class OraclePredictor final : public Predictor {
 public:
  explicit OraclePredictor(Field truth) : truth_(std::move(truth)) {}
  std::string name() const override { return "oracle"; }
  std::size_t param_count() const override { return 0; }
  void reset(std::size_t, std::size_t) override { k_ = 0; }
  Tensor step(const Tensor&) override { return truth_.frame(++k_); }
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<OraclePredictor>(truth_); }

 private:
  Field truth_;
  std::size_t k_ = 0;
};

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Baseline, Predictions) {
  Tensor f({2, 2}, {1, -2, 3, 0.5});
  EXPECT_EQ(baseline_predict(BaselineKind::LastFrame, f), f);
  EXPECT_EQ(baseline_predict(BaselineKind::Zero, f), Tensor({2, 2}));
  EXPECT_STREQ(to_string(BaselineKind::LastFrame), "Baseline t-1");
}

TEST(Baseline, LastFrameIsExactOnConstantSequence) {
  Field f(10, 3, 3);
  for (double& v : f.data()) v = 0.42;
  BaselinePredictor lf(BaselineKind::LastFrame);
  EXPECT_EQ(rollout(lf, f, EvalProtocol{3, 5}).test_error, 0.0);
}

TEST(Protocol, Validation) {
  EXPECT_NO_THROW(EvalProtocol{}.validate(80));
  EXPECT_THROW(EvalProtocol{}.validate(79), ConfigError);
  EXPECT_THROW((EvalProtocol{0, 5}.validate(80)), ConfigError);
  EXPECT_TRUE(EvalProtocol{}.in_closed_window(15));
  EXPECT_FALSE(EvalProtocol{}.in_closed_window(14));
  EXPECT_FALSE(EvalProtocol{}.in_closed_window(80));
}

TEST(Rollout, LastFrameHoldsFinalTeacherFrame) {
  Field f = random_field(80, 4, 4, 1);
  BaselinePredictor lf(BaselineKind::LastFrame);
  RolloutResult r = rollout(lf, f, EvalProtocol{});
  ASSERT_EQ(r.predictions.steps(), 79u);
  ASSERT_EQ(r.step_mse.size(), 79u);
  for (std::size_t k = 14; k < 79; ++k) EXPECT_EQ(r.predictions.frame(k), f.frame(14));
  double s = 0.0;
  for (std::size_t k = 14; k < 79; ++k) s += r.step_mse[k];
  EXPECT_NEAR(r.test_error, s / 65.0, 1e-15);
}

TEST(Rollout, OracleHasZeroError) {
  Field f = random_field(80, 3, 5, 2);
  OraclePredictor o(f);
  EXPECT_EQ(rollout(o, f, EvalProtocol{}).test_error, 0.0);
}

TEST(Rollout, TeacherForcedMatchesTrainingLoss) {
  Field f = random_field(20, 4, 4, 3);
  for (Variant v : {Variant::Base, Variant::V3}) {
    Model model(ModelConfig::make(v), 4);
    DistanaPredictor pred(model);
    RolloutResult r = rollout(pred, f, EvalProtocol{15, 0});
    Router router(MeshTopology::grid(4, 4, BorderMode::ZeroPad), model.config());
    const double loss = sequence_loss(model.config(), BoundParams::constants(model.params()), router, f).value().item();
    EXPECT_NEAR(r.test_error, loss, 1e-15);
  }
}

TEST(Rollout, ClosedLoopMatchesTrainingLossWithSameTeacherLength) {
  Field f = random_field(25, 4, 4, 4);
  Model model(ModelConfig::make(Variant::V2), 9);
  DistanaPredictor pred(model);
  RolloutResult r = rollout(pred, f, EvalProtocol{5, 20});
  Router router(MeshTopology::grid(4, 4, BorderMode::ZeroPad), model.config());
  Var loss = sequence_loss(model.config(), BoundParams::constants(model.params()), router, f, 5);
  double all = 0.0;
  for (double e : r.step_mse) all += e;
  EXPECT_NEAR(all / double(r.step_mse.size()), loss.value().item(), 1e-15);
}

TEST(Rollout, MismatchedProtocolRejected) {
  BaselinePredictor z(BaselineKind::Zero);
  EXPECT_THROW(rollout(z, random_field(30, 2, 2, 5), EvalProtocol{}), ConfigError);
}

TEST(Suite, RowsAndZeroBaseline) {
  std::vector<Field> test{random_field(80, 4, 4, 6), random_field(80, 4, 4, 7)};
  Model model(ModelConfig::make(Variant::Base), 1);
  const auto hash = params_fingerprint(model.params());
  auto dp = std::make_shared<DistanaPredictor>(model);
  std::vector<SuiteEntry> entries{{dp, 0.5},
                                  {std::make_shared<BaselinePredictor>(BaselineKind::LastFrame), {}},
                                  {std::make_shared<BaselinePredictor>(BaselineKind::Zero), {}}};
  auto rows = evaluate_suite(entries, test, EvalProtocol{});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].model, "DISTANA4");
  EXPECT_EQ(rows[0].params, model.param_count());
  EXPECT_EQ(*rows[0].train_error, 0.5);
  EXPECT_FALSE(rows[2].train_error);
  double s = 0.0;
  for (const Field& f : test)
    for (std::size_t t = 15; t < 80; ++t)
      for (std::size_t i = 0; i < 16; ++i) s += f.data()[t * 16 + i] * f.data()[t * 16 + i];
  EXPECT_NEAR(rows[2].test_error, s / (2 * 65 * 16), 1e-15);
  EXPECT_EQ(params_fingerprint(dp->model().params()), hash);
  for (const auto& r : rows) EXPECT_GE(r.inference_seconds, 0.0);
}

TEST(Suite, ThreadCountDoesNotChangeErrors) {
  std::vector<Field> test;
  for (int i = 0; i < 5; ++i) test.push_back(random_field(80, 4, 4, 10 + i));
  std::vector<SuiteEntry> entries{{std::make_shared<DistanaPredictor>(Model(ModelConfig::make(Variant::V1), 2)), {}},
                                  {std::make_shared<DistanaPredictor>(Model(ModelConfig::make(Variant::V2), 3)), {}}};
  setenv("DISTANA_THREADS", "1", 1);
  auto one = evaluate_suite(entries, test, EvalProtocol{});
  setenv("DISTANA_THREADS", "4", 1);
  auto four = evaluate_suite(entries, test, EvalProtocol{});
  unsetenv("DISTANA_THREADS");
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i].test_error, four[i].test_error);
}

TEST(Export, CsvHasDeclaredColumns) {
  std::vector<ResultRow> rows{{"DISTANA4", 107, 1.5e-6, 2.5e-5, 0.01}, {"Baseline zero", 0, {}, 8e-5, 0.0}};
  auto ls = lines(results_csv(rows));
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[0], "model,params,train_error,test_error,inference_seconds");
  for (const auto& l : ls) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 4);
  EXPECT_EQ(ls[2].substr(0, 18), "Baseline zero,0,-,");
  EXPECT_NE(results_text(rows).find("DISTANA4"), std::string::npos);
}

TEST(Export, TracesSwitchRegimeAtFifteen) {
  DatasetConfig dc;
  dc.n_train = 1;
  dc.n_test = 1;
  Field f = sample_dataset(dc).test[0];
  BaselinePredictor lf(BaselineKind::LastFrame);
  RolloutResult r = rollout(lf, f, EvalProtocol{});
  auto ls = lines(export_traces(r.predictions, f, 8, 8, EvalProtocol{}));
  ASSERT_EQ(ls.size(), 80u);  // header + 79
  EXPECT_EQ(ls[0], "step,target,prediction,regime");
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const bool closed = i >= 15;
    EXPECT_EQ(ls[i].ends_with(closed ? ",closed" : ",teacher"), true) << ls[i];
    std::istringstream is(ls[i]);
    std::string step, target;
    std::getline(is, step, ',');
    std::getline(is, target, ',');
    EXPECT_EQ(std::stoul(step), i);
    EXPECT_EQ(std::stod(target), f.at(i, 8, 8));
  }
  EXPECT_THROW(export_traces(r.predictions, f, 16, 0, EvalProtocol{}), ConfigError);
}

TEST(Threads, EnvironmentOverride) {
  setenv("DISTANA_THREADS", "3", 1);
  EXPECT_EQ(worker_threads(), 3u);
  setenv("DISTANA_THREADS", "zero", 1);
  EXPECT_GE(worker_threads(), 1u);
  unsetenv("DISTANA_THREADS");
}
