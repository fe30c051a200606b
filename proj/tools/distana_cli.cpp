// SPDX-License-Identifier: Apache-2.0
//
// distana: generate data, train, evaluate, roll out, check gradients.
//
// Exit codes: 0 ok, 1 gradcheck above tolerance, 2 configuration error,
// 3 numeric failure, 4 I/O error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "distana/autodiff.hpp"
#include "distana/errors.hpp"
#include "distana/evaluation.hpp"
#include "distana/model.hpp"
#include "distana/training.hpp"
#include "distana/wavegen.hpp"

namespace fs = std::filesystem;
using namespace distana;
using nlohmann::json;

namespace {

constexpr int kExitGradcheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const std::size_t h = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const std::size_t w = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
    if (h == 0 || w == 0) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::logic_error&) {
    throw ConfigError("grid must look like HxW, got '" + s + "'");
  }
}

std::string slug(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

// --- generate ------------------------------------------------------------------

struct GenerateArgs {
  std::optional<std::string> dataset;
  fs::path out;
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_test;
  std::string format = "bin";
};

int run_generate(const GenerateArgs& a) {
  DatasetConfig cfg;
  if (!a.config.empty()) cfg = DatasetConfig::from_json(read_json_file(a.config));
  if (a.dataset) cfg.kind = dataset_kind_from_string(*a.dataset);
  if (a.seed) cfg.seed = *a.seed;
  if (a.n_train) cfg.n_train = *a.n_train;
  if (a.n_test) cfg.n_test = *a.n_test;
  cfg.validate();

  Dataset ds = sample_dataset(cfg);
  ensure_dir(a.out);
  const std::string manifest = write_dataset(a.out, ds, a.format == "csv").dump();
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a({reinterpret_cast<const unsigned char*>(manifest.data()), manifest.size()});
  std::cout << json{{"out", a.out.string()},
                    {"train", ds.train.size()},
                    {"test", ds.test.size()},
                    {"manifest_hash", hash.str()}}
                   .dump()
            << '\n';
  return 0;
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string model = "distana";
  std::size_t lstm_cells = 4;
  fs::path data;
  fs::path out;
  fs::path config;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> teacher_steps;
  std::optional<std::size_t> checkpoint_every;
  std::optional<std::size_t> n_train;
  std::uint64_t init_seed = 1;
  fs::path init;
  fs::path resume;
};

int run_train(const TrainArgs& a) {
  ModelConfig mcfg = ModelConfig::make(variant_from_string(a.model), a.lstm_cells);
  mcfg.validate();
  TrainConfig tcfg;
  if (!a.config.empty()) tcfg = TrainConfig::from_json(read_json_file(a.config));
  if (a.epochs) tcfg.epochs = *a.epochs;
  if (a.lr) tcfg.learning_rate = *a.lr;
  if (a.seed) tcfg.seed = *a.seed;
  if (a.teacher_steps) tcfg.teacher_steps = *a.teacher_steps;
  if (a.checkpoint_every) tcfg.checkpoint_every = *a.checkpoint_every;
  tcfg.out_dir = a.out;
  tcfg.validate();
  if (!fs::is_directory(a.data)) throw IoError("data directory not found: " + a.data.string());

  Dataset ds = read_dataset(a.data);
  std::vector<Field> train = std::move(ds.train);
  if (a.n_train) {
    if (*a.n_train == 0 || *a.n_train > train.size()) {
      throw ConfigError("--n-train must be in [1, " + std::to_string(train.size()) + "]");
    }
    train.resize(*a.n_train);
  }

  Model model(mcfg, a.init_seed);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = read_checkpoint(a.resume, mcfg);
  if (!a.init.empty()) model.params() = read_checkpoint(a.init, mcfg).params;

  ensure_dir(a.out);
  std::ofstream log(a.out / "loss.jsonl", std::ios::app);
  if (!log) throw IoError("cannot write " + (a.out / "loss.jsonl").string());
  Episode ep = fit(model, train, tcfg, [&](const EpochRecord& r) {
    const std::string line = json{{"epoch", r.epoch}, {"train_mse", r.train_mse}, {"seconds", r.seconds}}.dump();
    std::cout << line << std::endl;
    log << line << '\n';
  }, resume);
  log.flush();
  std::cerr << "final checkpoint " << ep.final_checkpoint.string() << '\n';
  return 0;
}

// --- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::vector<fs::path> checkpoints;
  std::vector<std::string> names;
  fs::path data;
  fs::path out;
  std::size_t teacher = 15;
  std::size_t closed = 65;
  std::string model;
  std::size_t lstm_cells = 4;
  std::string trace_cell = "8,8";
  bool no_baselines = false;
};

std::pair<std::size_t, std::size_t> parse_cell(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(s);
    return {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
  } catch (const std::logic_error&) {
    throw ConfigError("cell must look like ROW,COL, got '" + s + "'");
  }
}

int run_evaluate(const EvaluateArgs& a) {
  EvalProtocol protocol{a.teacher, a.closed};
  if (!a.names.empty() && a.names.size() != a.checkpoints.size()) {
    throw ConfigError("--names needs one entry per checkpoint");
  }
  const auto [trace_row, trace_col] = parse_cell(a.trace_cell);
  std::optional<ModelConfig> expected;
  if (!a.model.empty()) expected = ModelConfig::make(variant_from_string(a.model), a.lstm_cells);
  if (!fs::is_directory(a.data)) throw IoError("data directory not found: " + a.data.string());

  std::vector<SuiteEntry> entries;
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    Checkpoint ck = read_checkpoint(a.checkpoints[i], expected);
    std::optional<double> train_error;
    if (ck.info.contains("final_train_mse")) train_error = ck.info.at("final_train_mse").get<double>();
    std::string name = a.names.empty() ? "" : a.names[i];
    entries.push_back({std::make_shared<DistanaPredictor>(Model(ck.config, std::move(ck.params)), name), train_error});
  }
  if (!a.no_baselines) {
    entries.push_back({std::make_shared<BaselinePredictor>(BaselineKind::LastFrame), {}});
    entries.push_back({std::make_shared<BaselinePredictor>(BaselineKind::Zero), {}});
  }
  if (entries.empty()) throw ConfigError("nothing to evaluate");

  Dataset ds = read_dataset(a.data);
  if (ds.test.empty()) throw ConfigError("data set has no test sequences");
  for (const Field& f : ds.test) protocol.validate(f.steps());
  if (trace_row >= ds.test.front().height() || trace_col >= ds.test.front().width()) {
    throw ConfigError("trace cell " + a.trace_cell + " is outside the field");
  }

  std::vector<ResultRow> rows = evaluate_suite(entries, ds.test, protocol);
  ensure_dir(a.out);
  write_text(a.out / "results.csv", results_csv(rows));
  write_text(a.out / "results.txt", results_text(rows));
  const fs::path traces = a.out / "traces";
  ensure_dir(traces);
  for (const auto& e : entries) {
    auto p = e.predictor->clone();
    RolloutResult r = rollout(*p, ds.test.front(), protocol);
    std::ostringstream name;
    name << slug(e.predictor->name()) << "_r" << trace_row << "_c" << trace_col << ".csv";
    write_text(traces / name.str(), export_traces(r.predictions, ds.test.front(), trace_row, trace_col, protocol));
  }
  std::cout << results_text(rows);
  return 0;
}

// --- rollout ---------------------------------------------------------------------

struct RolloutArgs {
  fs::path checkpoint;
  fs::path data;
  std::string split = "test";
  std::size_t index = 0;
  fs::path out;
  std::size_t teacher = 15;
  std::size_t closed = 65;
  std::string trace_cell = "8,8";
};

int run_rollout(const RolloutArgs& a) {
  EvalProtocol protocol{a.teacher, a.closed};
  if (a.split != "train" && a.split != "test") throw ConfigError("--split must be train or test");
  const auto [row, col] = parse_cell(a.trace_cell);
  if (!fs::is_directory(a.data)) throw IoError("data directory not found: " + a.data.string());
  Checkpoint ck = read_checkpoint(a.checkpoint);
  Dataset ds = read_dataset(a.data);
  const auto& seqs = a.split == "train" ? ds.train : ds.test;
  if (a.index >= seqs.size()) {
    throw ConfigError("--index " + std::to_string(a.index) + " out of range (" + std::to_string(seqs.size()) +
                      " sequences)");
  }
  const Field& seq = seqs[a.index];
  if (row >= seq.height() || col >= seq.width()) throw ConfigError("trace cell " + a.trace_cell + " is outside the field");

  DistanaPredictor pred(Model(ck.config, std::move(ck.params)));
  RolloutResult r = rollout(pred, seq, protocol);
  ensure_dir(a.out);
  r.predictions.meta = {{"model", ck.config.to_json()}, {"split", a.split}, {"index", a.index},
                        {"teacher_steps", a.teacher}, {"closed_steps", a.closed}};
  write_field(a.out / "predictions", r.predictions);
  write_text(a.out / "trace.csv", export_traces(r.predictions, seq, row, col, protocol));
  std::ostringstream steps;
  steps << "step,mse\n" << std::setprecision(17);
  for (std::size_t k = 0; k < r.step_mse.size(); ++k) steps << k + 1 << ',' << r.step_mse[k] << '\n';
  write_text(a.out / "step_mse.csv", steps.str());
  std::cout << json{{"test_error", r.test_error}, {"steps", r.step_mse.size()}}.dump() << '\n';
  return 0;
}

// --- gradcheck -------------------------------------------------------------------

struct GradcheckArgs {
  std::string model = "distana";
  std::size_t lstm_cells = 4;
  std::string grid = "4x4";
  std::size_t steps = 12;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  bool inject_fault = false;
};

int run_gradcheck(const GradcheckArgs& a) {
  const ModelConfig cfg = ModelConfig::make(variant_from_string(a.model), a.lstm_cells);
  cfg.validate();
  const auto [h, w] = parse_grid(a.grid);
  if (a.steps < 2) throw ConfigError("--steps must be at least 2");

  const ModelParams params = init_params(cfg, a.seed);
  Field seq(a.steps, h, w);
  std::mt19937_64 rng(a.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (double& v : seq.data()) v = u(rng);
  const Router router(MeshTopology::grid(h, w, BorderMode::ZeroPad), cfg);

  std::vector<Tensor> points;
  std::vector<std::string> names;
  for (const auto& [name, t] : params.blocks()) {
    names.push_back(name);
    points.push_back(*t);
  }
  auto loss = [&](std::span<const Var> leaves) {
    BoundParams b{leaves[0], leaves[1], leaves[2], leaves[3], leaves.size() > 4 ? leaves[4] : Var{}};
    Var l = sequence_loss(cfg, b, router, seq);
    return a.inject_fault ? scale_gradient(l, 1.01) : l;
  };
  GradcheckReport rep = gradcheck(loss, points);

  json groups = json::object();
  for (std::size_t i = 0; i < names.size(); ++i) groups[names[i]] = rep.per_leaf[i];
  const bool ok = rep.max_rel_error <= a.tolerance;
  std::cout << json{{"model", cfg.display_name()},
                    {"grid", a.grid},
                    {"steps", a.steps},
                    {"max_rel_error", rep.max_rel_error},
                    {"worst", {{"group", names[rep.worst_leaf]}, {"index", rep.worst_index}}},
                    {"groups", groups},
                    {"tolerance", a.tolerance},
                    {"ok", ok}}
                   .dump(2)
            << '\n';
  return ok ? 0 : kExitGradcheck;
}

// --- info ------------------------------------------------------------------------

int run_info(const fs::path& checkpoint, const std::string& model, std::size_t lstm_cells) {
  ModelConfig cfg;
  json out;
  if (!checkpoint.empty()) {
    Checkpoint ck = read_checkpoint(checkpoint);
    cfg = ck.config;
    out["fingerprint"] = params_fingerprint(ck.params);
    out["info"] = ck.info.contains("history") ? json{{"final_train_mse", ck.info.value("final_train_mse", json())},
                                                    {"next_epoch", ck.info.value("next_epoch", json())}}
                                              : ck.info;
  } else {
    cfg = ModelConfig::make(variant_from_string(model), lstm_cells);
    cfg.validate();
  }
  out["name"] = cfg.display_name();
  out["config"] = cfg.to_json();
  out["params"] = param_count(cfg);
  json blocks = json::object();
  const ModelParams shapes = init_params(cfg, 0);
  for (const auto& [name, t] : shapes.blocks()) blocks[name] = t->shape();
  out["blocks"] = blocks;
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DISTANA wave-field prediction"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a wave data set");
  g->add_option("--dataset", gen.dataset, "ds1 (default), ds2 or ds1-var; overrides the config file");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--config", gen.config, "Data set config JSON");
  g->add_option("--seed", gen.seed, "RNG seed");
  g->add_option("--n-train", gen.n_train, "Training sequences");
  g->add_option("--n-test", gen.n_test, "Test sequences");
  g->add_option("--format", gen.format, "bin, or csv to also write per-frame CSV")
      ->check(CLI::IsMember({"bin", "csv"}))
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--model", tr.model, "distana, distana-v1, distana-v2 or distana-v3")->capture_default_str();
  t->add_option("--lstm-cells", tr.lstm_cells, "LSTM cells per kernel")->capture_default_str();
  t->add_option("--data", tr.data, "Data set directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--config", tr.config, "Training config JSON");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--seed", tr.seed, "Shuffle seed");
  t->add_option("--teacher-steps", tr.teacher_steps, "Ground-truth inputs per sequence, 0 = all");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints");
  t->add_option("--n-train", tr.n_train, "Use only the first N training sequences");
  t->add_option("--init-seed", tr.init_seed, "Weight initialization seed")->capture_default_str();
  t->add_option("--init", tr.init, "Start from the weights of this checkpoint");
  t->add_option("--resume", tr.resume, "Resume from a training checkpoint");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Closed-loop evaluation table");
  e->add_option("--checkpoints", ev.checkpoints, "Model checkpoints");
  e->add_option("--names", ev.names, "Display names, one per checkpoint");
  e->add_option("--data", ev.data, "Data set directory")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--teacher", ev.teacher, "Teacher-forced steps")->capture_default_str();
  e->add_option("--closed", ev.closed, "Closed-loop steps")->capture_default_str();
  e->add_option("--model", ev.model, "Reject checkpoints that are not this model");
  e->add_option("--lstm-cells", ev.lstm_cells, "LSTM cells for --model")->capture_default_str();
  e->add_option("--trace-cell", ev.trace_cell, "ROW,COL of the exported trace")->capture_default_str();
  e->add_flag("--no-baselines", ev.no_baselines, "Skip the baseline rows");

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Roll out one sequence");
  r->add_option("--checkpoint", ro.checkpoint)->required();
  r->add_option("--data", ro.data, "Data set directory")->required();
  r->add_option("--split", ro.split)->capture_default_str();
  r->add_option("--index", ro.index)->capture_default_str();
  r->add_option("--out", ro.out, "Output directory")->required();
  r->add_option("--teacher", ro.teacher)->capture_default_str();
  r->add_option("--closed", ro.closed)->capture_default_str();
  r->add_option("--trace-cell", ro.trace_cell)->capture_default_str();

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare gradients with finite differences");
  c->add_option("--model", gc.model)->capture_default_str();
  c->add_option("--lstm-cells", gc.lstm_cells)->capture_default_str();
  c->add_option("--grid", gc.grid, "HxW")->capture_default_str();
  c->add_option("--steps", gc.steps, "Sequence length")->capture_default_str();
  c->add_option("--seed", gc.seed)->capture_default_str();
  c->add_option("--tolerance", gc.tolerance)->capture_default_str();
  c->add_flag("--inject-grad-fault", gc.inject_fault)->group("");

  fs::path info_ckpt;
  std::string info_model = "distana";
  std::size_t info_cells = 4;
  auto* i = app.add_subcommand("info", "Describe a model or checkpoint");
  i->add_option("--checkpoint", info_ckpt);
  i->add_option("--model", info_model)->capture_default_str();
  i->add_option("--lstm-cells", info_cells)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitConfig;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*e) return run_evaluate(ev);
    if (*r) return run_rollout(ro);
    if (*c) return run_gradcheck(gc);
    if (*i) return run_info(info_ckpt, info_model, info_cells);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "i/o error: " << err.what() << '\n';
    return kExitIo;
  }
  return 0;
}
