// SPDX-License-Identifier: Apache-2.0
//
// Closed-loop evaluation. A rollout predicts frames 1..T-1 of a sequence.
// Predictions whose target frame lies in [teacher_steps, teacher_steps +
// closed_steps) form the closed-loop window: from then on the predictor is
// fed its own previous output instead of the ground truth.
#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distana/baselines.hpp"
#include "distana/model.hpp"
#include "distana/wavegen.hpp"

namespace distana {

struct EvalProtocol {
  std::size_t teacher_steps = 15;
  std::size_t closed_steps = 65;

  void validate(std::size_t sequence_length) const;
  bool in_closed_window(std::size_t target_frame) const {
    return target_frame >= teacher_steps && target_frame < teacher_steps + closed_steps;
  }
};

/// Anything that maps the current frame to a next-frame prediction.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual std::size_t param_count() const = 0;
  /// Clears recurrent state before a new sequence of the given frame shape.
  virtual void reset(std::size_t height, std::size_t width) = 0;
  /// H×W in, H×W out.
  virtual Tensor step(const Tensor& frame) = 0;
  virtual std::unique_ptr<Predictor> clone() const = 0;
};

class DistanaPredictor final : public Predictor {
 public:
  explicit DistanaPredictor(Model model, std::string name = {});

  std::string name() const override { return name_; }
  std::size_t param_count() const override { return model_.param_count(); }
  void reset(std::size_t height, std::size_t width) override;
  Tensor step(const Tensor& frame) override;
  std::unique_ptr<Predictor> clone() const override;

  const Model& model() const { return model_; }

 private:
  Model model_;
  std::string name_;
  BoundParams bound_;
  std::optional<Router> router_;
  std::optional<LatticeState> state_;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
};

class BaselinePredictor final : public Predictor {
 public:
  explicit BaselinePredictor(BaselineKind kind) : kind_(kind) {}

  std::string name() const override { return to_string(kind_); }
  std::size_t param_count() const override { return 0; }
  void reset(std::size_t, std::size_t) override {}
  Tensor step(const Tensor& frame) override { return baseline_predict(kind_, frame); }
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<BaselinePredictor>(kind_); }

 private:
  BaselineKind kind_;
};

struct RolloutResult {
  Field predictions;              // T-1 frames; frame k predicts sequence frame k+1
  std::vector<double> step_mse;   // per prediction
  double test_error = 0.0;        // mean over the closed-loop window (all steps if it is empty)
};

RolloutResult rollout(Predictor& predictor, const Field& sequence, const EvalProtocol& protocol);

struct ResultRow {
  std::string model;
  std::size_t params = 0;
  std::optional<double> train_error;
  double test_error = 0.0;
  double inference_seconds = 0.0;
};

struct SuiteEntry {
  std::shared_ptr<const Predictor> predictor;
  std::optional<double> train_error;
};

/// Mean closed-loop test error per entry over `test`; inference time is the
/// median of 5 single-threaded passes over the first sequence.
std::vector<ResultRow> evaluate_suite(std::span<const SuiteEntry> entries, std::span<const Field> test,
                                      const EvalProtocol& protocol);

inline constexpr const char* kResultColumns = "model,params,train_error,test_error,inference_seconds";
std::string results_csv(std::span<const ResultRow> rows);
std::string results_text(std::span<const ResultRow> rows);

/// CSV (step,target,prediction,regime) for one cell; step is the target frame index.
std::string export_traces(const Field& predictions, const Field& targets, std::size_t row, std::size_t col,
                          const EvalProtocol& protocol);

/// Worker count from DISTANA_THREADS, defaulting to hardware concurrency.
std::size_t worker_threads();

}  // namespace distana
