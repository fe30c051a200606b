// SPDX-License-Identifier: Apache-2.0
#include "distana/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "distana/errors.hpp"

namespace distana {

void EvalProtocol::validate(std::size_t sequence_length) const {
  if (teacher_steps + closed_steps > sequence_length) {
    throw ConfigError("protocol needs " + std::to_string(teacher_steps + closed_steps) + " frames, sequence has " +
                      std::to_string(sequence_length));
  }
  if (closed_steps > 0 && teacher_steps < 1) throw ConfigError("protocol: closed loop needs at least one teacher step");
}

// --- predictors ------------------------------------------------------------------

DistanaPredictor::DistanaPredictor(Model model, std::string name)
    : model_(std::move(model)),
      name_(name.empty() ? model_.config().display_name() : std::move(name)),
      bound_(BoundParams::constants(model_.params())) {}

void DistanaPredictor::reset(std::size_t height, std::size_t width) {
  if (!router_ || height != height_ || width != width_) {
    router_.emplace(MeshTopology::grid(height, width, BorderMode::ZeroPad), model_.config());
    height_ = height;
    width_ = width;
  }
  state_ = LatticeState::zeros(height * width, model_.config().pk);
}

Tensor DistanaPredictor::step(const Tensor& frame) {
  if (!state_) throw std::logic_error("DistanaPredictor::step before reset");
  StepResult r = lattice_step(model_.config(), bound_, *router_, constant(frame.reshaped({height_ * width_, 1})), *state_);
  state_ = std::move(r.state);
  return r.prediction.value().reshaped({height_, width_});
}

std::unique_ptr<Predictor> DistanaPredictor::clone() const {
  return std::make_unique<DistanaPredictor>(model_, name_);
}

// --- rollout -----------------------------------------------------------------------

namespace {

double frame_mse(const Tensor& a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(b.size());
}

}  // namespace

RolloutResult rollout(Predictor& predictor, const Field& sequence, const EvalProtocol& protocol) {
  protocol.validate(sequence.steps());
  if (sequence.steps() < 2) throw ConfigError("rollout: sequence needs at least two frames");
  const std::size_t steps = sequence.steps() - 1;
  RolloutResult out;
  out.predictions = Field(steps, sequence.height(), sequence.width());
  out.step_mse.reserve(steps);
  predictor.reset(sequence.height(), sequence.width());

  Tensor previous;
  double closed_sum = 0.0;
  double all_sum = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    Tensor input = protocol.in_closed_window(k) ? previous : sequence.frame(k);
    Tensor pred = predictor.step(input);
    const double e = frame_mse(pred, sequence.frame(k + 1).data());
    out.step_mse.push_back(e);
    all_sum += e;
    if (protocol.in_closed_window(k + 1)) closed_sum += e;
    out.predictions.set_frame(k, pred);
    previous = std::move(pred);
  }
  out.test_error = protocol.closed_steps > 0 ? closed_sum / static_cast<double>(protocol.closed_steps)
                                             : all_sum / static_cast<double>(steps);
  return out;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("DISTANA_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<ResultRow> evaluate_suite(std::span<const SuiteEntry> entries, std::span<const Field> test,
                                      const EvalProtocol& protocol) {
  if (test.empty()) throw ConfigError("evaluate_suite: empty test set");
  for (const Field& f : test) protocol.validate(f.steps());

  // Errors per (entry, sequence), computed in parallel, reduced in order.
  const std::size_t jobs = entries.size() * test.size();
  std::vector<double> errors(jobs, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        auto p = entries[j / test.size()].predictor->clone();
        errors[j] = rollout(*p, test[j % test.size()], protocol).test_error;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(worker_threads(), std::max<std::size_t>(jobs, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<ResultRow> rows;
  const Field& probe = test.front();
  std::vector<Tensor> frames;
  for (std::size_t k = 0; k < probe.steps(); ++k) frames.push_back(probe.frame(k));
  for (std::size_t e = 0; e < entries.size(); ++e) {
    ResultRow row;
    row.model = entries[e].predictor->name();
    row.params = entries[e].predictor->param_count();
    row.train_error = entries[e].train_error;
    double s = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) s += errors[e * test.size() + i];
    row.test_error = s / static_cast<double>(test.size());

    std::vector<double> times;
    auto p = entries[e].predictor->clone();
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      p->reset(probe.height(), probe.width());
      for (std::size_t k = 0; k + 1 < frames.size(); ++k) (void)p->step(frames[k]);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + 2, times.end());
    row.inference_seconds = times[2];
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- export ---------------------------------------------------------------------------

std::string results_csv(std::span<const ResultRow> rows) {
  std::ostringstream os;
  os << kResultColumns << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.model << ',' << r.params << ',';
    if (r.train_error) {
      os << *r.train_error;
    } else {
      os << '-';
    }
    os << ',' << r.test_error << ',' << r.inference_seconds << '\n';
  }
  return os.str();
}

std::string results_text(std::span<const ResultRow> rows) {
  std::size_t width = 12;
  for (const auto& r : rows) width = std::max(width, r.model.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Model" << std::right << std::setw(8) << "#pars"
     << std::setw(14) << "Train error" << std::setw(14) << "Test error" << std::setw(12) << "Inf. time" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.model << std::right << std::setw(8) << r.params;
    std::ostringstream tr;
    if (r.train_error) {
      tr << std::scientific << std::setprecision(2) << *r.train_error;
    } else {
      tr << '-';
    }
    os << std::setw(14) << tr.str() << std::setw(14) << std::scientific << std::setprecision(2) << r.test_error
       << std::setw(11) << std::fixed << std::setprecision(4) << r.inference_seconds << "s" << '\n';
    os.unsetf(std::ios::floatfield);
  }
  return os.str();
}

std::string export_traces(const Field& predictions, const Field& targets, std::size_t row, std::size_t col,
                          const EvalProtocol& protocol) {
  if (row >= targets.height() || col >= targets.width()) {
    throw ConfigError("trace cell (" + std::to_string(row) + "," + std::to_string(col) + ") is outside the field");
  }
  if (predictions.steps() + 1 != targets.steps() || predictions.height() != targets.height() ||
      predictions.width() != targets.width()) {
    throw ShapeError("export_traces: predictions must cover frames 1..T-1 of the targets");
  }
  std::ostringstream os;
  os << "step,target,prediction,regime\n" << std::setprecision(17);
  for (std::size_t k = 0; k < predictions.steps(); ++k) {
    const std::size_t step = k + 1;
    os << step << ',' << targets.at(step, row, col) << ',' << predictions.at(k, row, col) << ','
       << (protocol.in_closed_window(step) ? "closed" : "teacher") << '\n';
  }
  return os.str();
}

}  // namespace distana
