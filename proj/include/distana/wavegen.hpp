// SPDX-License-Identifier: Apache-2.0
//
// Circular wave data sets: a closed-form outward wave (DS1) and an explicit
// finite-difference solution of the 2D wave equation with reflecting
// borders (DS2).
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distana/tensor.hpp"

namespace distana {

/// T×H×W raster of wave heights.
class Field {
 public:
  Field() = default;
  Field(std::size_t steps, std::size_t height, std::size_t width);

  std::size_t steps() const { return steps_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t frame_size() const { return height_ * width_; }

  double& at(std::size_t t, std::size_t row, std::size_t col) { return data_[(t * height_ + row) * width_ + col]; }
  double at(std::size_t t, std::size_t row, std::size_t col) const {
    return data_[(t * height_ + row) * width_ + col];
  }

  /// Frame t as an H×W tensor.
  Tensor frame(std::size_t t) const;
  void set_frame(std::size_t t, const Tensor& frame);

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  nlohmann::json meta;

  friend bool operator==(const Field& a, const Field& b) {
    return a.steps_ == b.steps_ && a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  std::size_t steps_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

struct Ds1Config {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t steps = 80;
  double dt = 0.0015;   // time units per frame
  double c = 10.0;      // wave speed, cells per time unit
  double d = 0.25;      // decay
  double center_x = 8.0;
  double center_y = 8.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static Ds1Config from_json(const nlohmann::json& j);
};

struct Ds2Config {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t steps = 80;
  double dt = 0.1;
  double dx = 1.0;
  double dy = 1.0;
  double c = 3.0;
  double amplitude = 0.34;
  double var_x = 0.5;
  double var_y = 0.5;
  double center_x = 8.0;
  double center_y = 8.0;
  std::uint64_t seed = 0;

  /// c·Δt·sqrt(1/Δx² + 1/Δy²); reduces to √2·c·Δt/Δx on square cells.
  double courant() const;
  /// Throws ConfigError on CFL violation (c·Δt/Δx > 1/√2 on square cells).
  void validate() const;
  nlohmann::json to_json() const;
  static Ds2Config from_json(const nlohmann::json& j);
};

double ds1_value(double x, double y, double t, const Ds1Config& cfg);
Field ds1_sequence(const Ds1Config& cfg);

/// Gaussian bell frame at t = 0, shaped H×W.
Tensor ds2_init(const Ds2Config& cfg);
/// One explicit leapfrog step; samples outside the field count as zero.
Tensor ds2_step(const Tensor& prev, const Tensor& curr, const Ds2Config& cfg);
Field ds2_sequence(const Ds2Config& cfg);

enum class DatasetKind { Ds1, Ds2, Ds1VariableC };
const char* to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Ds1;
  std::size_t n_train = 100;
  std::size_t n_test = 20;
  std::uint64_t seed = 0;
  Ds1Config ds1;
  Ds2Config ds2;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct Dataset {
  DatasetConfig config;
  std::vector<Field> train;
  std::vector<Field> test;
};

/// Draws one sequence per (split, index) from its own RNG stream, so the
/// result does not depend on generation order.
Dataset sample_dataset(const DatasetConfig& cfg);

// ---------------------------------------------------------------------------
// Files: <stem>.json sidecar + <stem>.bin little-endian f32, loaded back as f64.

void write_field(const std::filesystem::path& stem, const Field& field);
Field read_field(const std::filesystem::path& stem);
/// One CSV per frame, <stem>_frame_NNN.csv, H rows of W values.
void write_field_csv(const std::filesystem::path& stem, const Field& field);

/// Writes train/ and test/ sequence files plus manifest.json; returns the manifest.
nlohmann::json write_dataset(const std::filesystem::path& dir, const Dataset& dataset, bool csv = false);
Dataset read_dataset(const std::filesystem::path& dir);

/// FNV-1a over bytes; used for manifest and checkpoint fingerprints.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 1469598103934665603ULL);

}  // namespace distana
