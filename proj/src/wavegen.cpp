// SPDX-License-Identifier: Apache-2.0
#include "distana/wavegen.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "distana/errors.hpp"

namespace distana {

Field::Field(std::size_t steps, std::size_t height, std::size_t width)
    : steps_(steps), height_(height), width_(width), data_(steps * height * width, 0.0) {}

Tensor Field::frame(std::size_t t) const {
  if (t >= steps_) throw ShapeError("frame index " + std::to_string(t) + " out of range");
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(t * frame_size());
  return Tensor({height_, width_}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(frame_size())));
}

void Field::set_frame(std::size_t t, const Tensor& frame) {
  if (t >= steps_ || frame.size() != frame_size()) throw ShapeError("set_frame: shape mismatch");
  std::copy(frame.data().begin(), frame.data().end(), data_.begin() + static_cast<std::ptrdiff_t>(t * frame_size()));
}

// --- configs ---------------------------------------------------------------

void Ds1Config::validate() const {
  if (height == 0 || width == 0) throw ConfigError("ds1: field must be non-empty");
  if (steps < 1) throw ConfigError("ds1: steps must be >= 1");
  if (!(c > 0.0)) throw ConfigError("ds1: wave speed c must be > 0");
  if (!(d >= 0.0)) throw ConfigError("ds1: decay d must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("ds1: dt must be > 0");
}

nlohmann::json Ds1Config::to_json() const {
  return {{"height", height}, {"width", width}, {"steps", steps}, {"dt", dt}, {"c", c}, {"d", d},
          {"center_x", center_x}, {"center_y", center_y}, {"seed", seed}};
}

Ds1Config Ds1Config::from_json(const nlohmann::json& j) {
  Ds1Config c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.steps = j.value("steps", c.steps);
  c.dt = j.value("dt", c.dt);
  c.c = j.value("c", c.c);
  c.d = j.value("d", c.d);
  c.center_x = j.value("center_x", c.center_x);
  c.center_y = j.value("center_y", c.center_y);
  c.seed = j.value("seed", c.seed);
  return c;
}

double Ds2Config::courant() const { return c * dt * std::sqrt(1.0 / (dx * dx) + 1.0 / (dy * dy)); }

void Ds2Config::validate() const {
  if (height == 0 || width == 0) throw ConfigError("ds2: field must be non-empty");
  if (steps < 1) throw ConfigError("ds2: steps must be >= 1");
  if (!(c > 0.0) || !(dt > 0.0) || !(dx > 0.0) || !(dy > 0.0)) {
    throw ConfigError("ds2: c, dt, dx, dy must be > 0");
  }
  if (!(var_x > 0.0) || !(var_y > 0.0)) throw ConfigError("ds2: Gaussian variances must be > 0");
  if (courant() > 1.0 + 1e-12) {
    std::ostringstream os;
    os << "ds2: CFL condition violated: c*dt*sqrt(1/dx^2+1/dy^2) = " << courant()
       << " > 1 (i.e. c*dt/dx must not exceed 1/sqrt(2) on square cells; got c*dt/dx = " << c * dt / dx << ")";
    throw ConfigError(os.str());
  }
}

nlohmann::json Ds2Config::to_json() const {
  return {{"height", height}, {"width", width}, {"steps", steps}, {"dt", dt}, {"dx", dx}, {"dy", dy},
          {"c", c}, {"amplitude", amplitude}, {"var_x", var_x}, {"var_y", var_y},
          {"center_x", center_x}, {"center_y", center_y}, {"seed", seed}};
}

Ds2Config Ds2Config::from_json(const nlohmann::json& j) {
  Ds2Config c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.steps = j.value("steps", c.steps);
  c.dt = j.value("dt", c.dt);
  c.dx = j.value("dx", c.dx);
  c.dy = j.value("dy", c.dy);
  c.c = j.value("c", c.c);
  c.amplitude = j.value("amplitude", c.amplitude);
  c.var_x = j.value("var_x", c.var_x);
  c.var_y = j.value("var_y", c.var_y);
  c.center_x = j.value("center_x", c.center_x);
  c.center_y = j.value("center_y", c.center_y);
  c.seed = j.value("seed", c.seed);
  return c;
}

// --- DS1 -------------------------------------------------------------------

double ds1_value(double x, double y, double t, const Ds1Config& cfg) {
  const double r = std::hypot(x - cfg.center_x, y - cfg.center_y);
  const double front = cfg.c * t;
  if (r < front) return std::sin(r - front) * std::exp(-cfg.d * (front - r));
  return 0.0;
}

Field ds1_sequence(const Ds1Config& cfg) {
  cfg.validate();
  Field f(cfg.steps, cfg.height, cfg.width);
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    for (std::size_t row = 0; row < cfg.height; ++row)
      for (std::size_t col = 0; col < cfg.width; ++col)
        f.at(k, row, col) = ds1_value(static_cast<double>(col), static_cast<double>(row), t, cfg);
  }
  f.meta = {{"generator", "ds1"}, {"config", cfg.to_json()}};
  return f;
}

// --- DS2 -------------------------------------------------------------------

Tensor ds2_init(const Ds2Config& cfg) {
  Tensor u({cfg.height, cfg.width});
  for (std::size_t row = 0; row < cfg.height; ++row) {
    for (std::size_t col = 0; col < cfg.width; ++col) {
      const double ddx = static_cast<double>(col) - cfg.center_x;
      const double ddy = static_cast<double>(row) - cfg.center_y;
      u(row, col) = cfg.amplitude * std::exp(-(ddx * ddx / (2.0 * cfg.var_x) + ddy * ddy / (2.0 * cfg.var_y)));
    }
  }
  return u;
}

Tensor ds2_step(const Tensor& prev, const Tensor& curr, const Ds2Config& cfg) {
  if (prev.shape() != curr.shape() || curr.rank() != 2) throw ShapeError("ds2_step: frames must share an H×W shape");
  const std::size_t h = curr.shape()[0];
  const std::size_t w = curr.shape()[1];
  const double k = cfg.c * cfg.c * cfg.dt * cfg.dt;
  const double hx2 = cfg.dx * cfg.dx;
  const double hy2 = cfg.dy * cfg.dy;
  auto sample = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return 0.0;
    return curr(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  Tensor next({h, w});
  for (std::size_t row = 0; row < h; ++row) {
    for (std::size_t col = 0; col < w; ++col) {
      const long r = static_cast<long>(row);
      const long c = static_cast<long>(col);
      const double u = curr(row, col);
      const double uxx = (sample(r, c + 1) - 2.0 * u + sample(r, c - 1)) / hx2;
      const double uyy = (sample(r + 1, c) - 2.0 * u + sample(r - 1, c)) / hy2;
      next(row, col) = k * (uxx + uyy) + 2.0 * u - prev(row, col);
    }
  }
  return next;
}

Field ds2_sequence(const Ds2Config& cfg) {
  cfg.validate();
  Field f(cfg.steps, cfg.height, cfg.width);
  Tensor prev({cfg.height, cfg.width});  // u(-Δt) is zero
  Tensor curr = ds2_init(cfg);
  f.set_frame(0, curr);
  for (std::size_t k = 1; k < cfg.steps; ++k) {
    Tensor next = ds2_step(prev, curr, cfg);
    if (!next.all_finite()) throw NumericError("ds2: non-finite value at step " + std::to_string(k));
    f.set_frame(k, next);
    prev = std::move(curr);
    curr = std::move(next);
  }
  f.meta = {{"generator", "ds2"}, {"config", cfg.to_json()}};
  return f;
}

// --- datasets ----------------------------------------------------------------

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Ds1: return "ds1";
    case DatasetKind::Ds2: return "ds2";
    case DatasetKind::Ds1VariableC: return "ds1-var";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "ds1") return DatasetKind::Ds1;
  if (s == "ds2") return DatasetKind::Ds2;
  if (s == "ds1-var") return DatasetKind::Ds1VariableC;
  throw ConfigError("unknown dataset kind '" + s + "' (expected ds1, ds2 or ds1-var)");
}

void DatasetConfig::validate() const {
  if (n_train < 1 || n_test < 1) throw ConfigError("dataset: n_train and n_test must be >= 1");
  if (kind == DatasetKind::Ds2) {
    ds2.validate();
  } else {
    ds1.validate();
  }
}

nlohmann::json DatasetConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"n_train", n_train}, {"n_test", n_test}, {"seed", seed},
          {"ds1", ds1.to_json()}, {"ds2", ds2.to_json()}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  if (j.contains("kind")) c.kind = dataset_kind_from_string(j["kind"].get<std::string>());
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.seed = j.value("seed", c.seed);
  if (j.contains("ds1")) c.ds1 = Ds1Config::from_json(j["ds1"]);
  if (j.contains("ds2")) c.ds2 = Ds2Config::from_json(j["ds2"]);
  return c;
}

namespace {

std::pair<double, double> center_range(std::size_t extent) {
  if (extent >= 3) return {1.0, static_cast<double>(extent - 2)};
  return {0.0, static_cast<double>(extent - 1)};
}

Field sample_one(const DatasetConfig& cfg, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t h = cfg.kind == DatasetKind::Ds2 ? cfg.ds2.height : cfg.ds1.height;
  const std::size_t w = cfg.kind == DatasetKind::Ds2 ? cfg.ds2.width : cfg.ds1.width;
  auto [x_lo, x_hi] = center_range(w);
  auto [y_lo, y_hi] = center_range(h);
  std::uniform_real_distribution<double> ux(x_lo, x_hi);
  std::uniform_real_distribution<double> uy(y_lo, y_hi);
  const double cx = ux(rng);
  const double cy = uy(rng);

  Field f;
  if (cfg.kind == DatasetKind::Ds2) {
    Ds2Config c = cfg.ds2;
    c.center_x = cx;
    c.center_y = cy;
    f = ds2_sequence(c);
  } else {
    Ds1Config c = cfg.ds1;
    c.center_x = cx;
    c.center_y = cy;
    if (cfg.kind == DatasetKind::Ds1VariableC) {
      std::uniform_real_distribution<double> uc(0.5 * cfg.ds1.c, 1.5 * cfg.ds1.c);
      c.c = uc(rng);
    }
    f = ds1_sequence(c);
  }
  f.meta["kind"] = to_string(cfg.kind);
  f.meta["split"] = split == 0 ? "train" : "test";
  f.meta["index"] = index;
  return f;
}

}  // namespace

Dataset sample_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  for (std::size_t i = 0; i < cfg.n_train; ++i) ds.train.push_back(sample_one(cfg, 0, i));
  for (std::size_t i = 0; i < cfg.n_test; ++i) ds.test.push_back(sample_one(cfg, 1, i));
  return ds;
}

// --- files ---------------------------------------------------------------------

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

std::vector<unsigned char> to_f32_le(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return bytes;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("write failed for " + p.string());
}

nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

}  // namespace

void write_field(const std::filesystem::path& stem, const Field& field) {
  nlohmann::json header{{"shape", {field.steps(), field.height(), field.width()}},
                        {"dtype", "f32"},
                        {"order", "row-major"},
                        {"meta", field.meta.is_null() ? nlohmann::json::object() : field.meta}};
  write_text(with_suffix(stem, ".json"), header.dump(2) + "\n");
  auto bytes = to_f32_le(field.data());
  std::ofstream os(with_suffix(stem, ".bin"), std::ios::binary);
  if (!os) throw IoError("cannot write " + with_suffix(stem, ".bin").string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + with_suffix(stem, ".bin").string());
}

Field read_field(const std::filesystem::path& stem) {
  auto header = read_json(with_suffix(stem, ".json"));
  if (header.value("dtype", "") != "f32" || header.value("order", "") != "row-major") {
    throw IoError("unsupported field encoding in " + with_suffix(stem, ".json").string());
  }
  const auto& shape = header.at("shape");
  Field f(shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(), shape.at(2).get<std::size_t>());
  f.meta = header.value("meta", nlohmann::json::object());
  std::ifstream is(with_suffix(stem, ".bin"), std::ios::binary);
  if (!is) throw IoError("cannot read " + with_suffix(stem, ".bin").string());
  std::vector<unsigned char> bytes(f.data().size() * 4);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size() || is.peek() != std::char_traits<char>::eof()) {
    throw IoError("binary size does not match declared shape in " + with_suffix(stem, ".bin").string());
  }
  auto out = f.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return f;
}

void write_field_csv(const std::filesystem::path& stem, const Field& field) {
  for (std::size_t t = 0; t < field.steps(); ++t) {
    std::ostringstream name;
    name << stem.string() << "_frame_" << std::setw(3) << std::setfill('0') << t << ".csv";
    std::ostringstream os;
    os << std::setprecision(9);
    for (std::size_t r = 0; r < field.height(); ++r) {
      for (std::size_t c = 0; c < field.width(); ++c) os << (c ? "," : "") << field.at(t, r, c);
      os << '\n';
    }
    write_text(name.str(), os.str());
  }
}

nlohmann::json write_dataset(const std::filesystem::path& dir, const Dataset& dataset, bool csv) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "train", ec);
  fs::create_directories(dir / "test", ec);
  if (ec || !fs::is_directory(dir / "test")) throw IoError("cannot create dataset directory " + dir.string());

  nlohmann::json manifest{{"format", 1}, {"config", dataset.config.to_json()}};
  auto emit_split = [&](const char* split, const std::vector<Field>& fields) {
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < fields.size(); ++i) {
      std::ostringstream name;
      name << "seq_" << std::setw(4) << std::setfill('0') << i;
      fs::path stem = dir / split / name.str();
      write_field(stem, fields[i]);
      if (csv) write_field_csv(stem, fields[i]);
      auto bytes = to_f32_le(fields[i].data());
      std::ostringstream hash;
      hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes);
      files.push_back({{"stem", std::string(split) + "/" + name.str()},
                       {"shape", {fields[i].steps(), fields[i].height(), fields[i].width()}},
                       {"fnv1a", hash.str()}});
    }
    manifest[split] = files;
  };
  emit_split("train", dataset.train);
  emit_split("test", dataset.test);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  auto manifest = read_json(dir / "manifest.json");
  Dataset ds;
  ds.config = DatasetConfig::from_json(manifest.at("config"));
  for (const auto& e : manifest.at("train")) ds.train.push_back(read_field(dir / e.at("stem").get<std::string>()));
  for (const auto& e : manifest.at("test")) ds.test.push_back(read_field(dir / e.at("stem").get<std::string>()));
  if (ds.train.empty() && ds.test.empty()) throw IoError("dataset " + dir.string() + " lists no sequences");
  return ds;
}

}  // namespace distana
