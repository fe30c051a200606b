// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace distana {

/// Compass directions in fixed order 0..7. N decreases the row index, E increases the column.
enum class Direction : int { N = 0, NE, E, SE, S, SW, W, NW };

inline constexpr std::size_t kDirections = 8;
inline constexpr std::array<Direction, kDirections> kAllDirections = {
    Direction::N, Direction::NE, Direction::E, Direction::SE,
    Direction::S, Direction::SW, Direction::W, Direction::NW};

constexpr Direction opposite(Direction d) {
  return static_cast<Direction>((static_cast<int>(d) + 4) % 8);
}
constexpr std::size_t index_of(Direction d) { return static_cast<std::size_t>(d); }

/// (row, column) offset of a direction.
std::array<int, 2> offset_of(Direction d);
const char* to_string(Direction d);

enum class BorderMode { ZeroPad, Periodic };
const char* to_string(BorderMode m);
BorderMode border_mode_from_string(const std::string& s);

using CellId = std::size_t;

/// Cells plus directed, direction-tagged neighbor links. Immutable once built.
class MeshTopology {
 public:
  using Neighborhood = std::array<std::optional<CellId>, kDirections>;

  MeshTopology(std::vector<Neighborhood> neighbors, BorderMode border, std::size_t height = 0,
               std::size_t width = 0);

  /// Row-major H×W lattice with 8-neighborhoods.
  static MeshTopology grid(std::size_t height, std::size_t width, BorderMode border);

  std::size_t cells() const { return neighbors_.size(); }
  BorderMode border() const { return border_; }
  std::optional<CellId> neighbor(CellId cell, Direction d) const { return neighbors_.at(cell)[index_of(d)]; }
  const Neighborhood& neighborhood(CellId cell) const { return neighbors_.at(cell); }

  // Grid shape; zero for hand-built graphs.
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool is_grid() const { return height_ * width_ == cells() && height_ > 0; }
  CellId cell_at(std::size_t row, std::size_t col) const { return row * width_ + col; }

  nlohmann::json to_json() const;
  static MeshTopology from_json(const nlohmann::json& j);

 private:
  std::vector<Neighborhood> neighbors_;
  BorderMode border_;
  std::size_t height_;
  std::size_t width_;
};

struct TopologyViolation {
  enum class Kind { Range, Reciprocity };
  Kind kind;
  CellId cell;
  Direction direction;
  std::string message;
};

/// Empty result means the topology is consistent.
std::vector<TopologyViolation> validate(const MeshTopology& topology);

}  // namespace distana
