// SPDX-License-Identifier: Apache-2.0
#include "distana/mesh.hpp"

#include "distana/errors.hpp"

namespace distana {

std::array<int, 2> offset_of(Direction d) {
  static constexpr std::array<std::array<int, 2>, kDirections> kOffsets = {{
      {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}}};
  return kOffsets[index_of(d)];
}

const char* to_string(Direction d) {
  static constexpr std::array<const char*, kDirections> kNames = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};
  return kNames[index_of(d)];
}

const char* to_string(BorderMode m) { return m == BorderMode::ZeroPad ? "zero_pad" : "periodic"; }

BorderMode border_mode_from_string(const std::string& s) {
  if (s == "zero_pad") return BorderMode::ZeroPad;
  if (s == "periodic") return BorderMode::Periodic;
  throw ConfigError("unknown border mode '" + s + "'");
}

MeshTopology::MeshTopology(std::vector<Neighborhood> neighbors, BorderMode border, std::size_t height,
                           std::size_t width)
    : neighbors_(std::move(neighbors)), border_(border), height_(height), width_(width) {}

MeshTopology MeshTopology::grid(std::size_t height, std::size_t width, BorderMode border) {
  if (height == 0 || width == 0) throw ConfigError("grid must have at least one row and one column");
  const auto h = static_cast<long>(height);
  const auto w = static_cast<long>(width);
  std::vector<Neighborhood> nb(height * width);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      for (Direction d : kAllDirections) {
        auto [dr, dc] = offset_of(d);
        long nr = r + dr;
        long nc = c + dc;
        if (border == BorderMode::Periodic) {
          nr = (nr + h) % h;
          nc = (nc + w) % w;
        } else if (nr < 0 || nr >= h || nc < 0 || nc >= w) {
          continue;
        }
        nb[static_cast<std::size_t>(r * w + c)][index_of(d)] = static_cast<CellId>(nr * w + nc);
      }
    }
  }
  return MeshTopology(std::move(nb), border, height, width);
}

nlohmann::json MeshTopology::to_json() const {
  nlohmann::json edges = nlohmann::json::array();
  for (CellId a = 0; a < cells(); ++a) {
    for (Direction d : kAllDirections) {
      if (auto b = neighbors_[a][index_of(d)]) edges.push_back({a, to_string(d), *b});
    }
  }
  nlohmann::json j{{"cells", cells()}, {"border", to_string(border_)}, {"edges", edges}};
  if (is_grid()) j["grid"] = {height_, width_};
  return j;
}

MeshTopology MeshTopology::from_json(const nlohmann::json& j) {
  const auto n = j.at("cells").get<std::size_t>();
  std::vector<Neighborhood> nb(n);
  for (const auto& e : j.at("edges")) {
    const auto from = e.at(0).get<std::size_t>();
    const auto name = e.at(1).get<std::string>();
    const auto to = e.at(2).get<std::size_t>();
    if (from >= n) throw ConfigError("edge source " + std::to_string(from) + " out of range");
    std::optional<Direction> dir;
    for (Direction d : kAllDirections) {
      if (name == to_string(d)) dir = d;
    }
    if (!dir) throw ConfigError("unknown direction '" + name + "'");
    nb[from][index_of(*dir)] = to;
  }
  std::size_t h = 0, w = 0;
  if (j.contains("grid")) {
    h = j["grid"].at(0).get<std::size_t>();
    w = j["grid"].at(1).get<std::size_t>();
  }
  return MeshTopology(std::move(nb), border_mode_from_string(j.at("border").get<std::string>()), h, w);
}

std::vector<TopologyViolation> validate(const MeshTopology& topology) {
  std::vector<TopologyViolation> out;
  const std::size_t n = topology.cells();
  for (CellId a = 0; a < n; ++a) {
    for (Direction d : kAllDirections) {
      auto b = topology.neighbor(a, d);
      if (!b) continue;
      if (*b >= n) {
        out.push_back({TopologyViolation::Kind::Range, a, d,
                       "cell " + std::to_string(a) + " lists neighbor " + std::to_string(*b) + " under " +
                           to_string(d) + " but there are only " + std::to_string(n) + " cells"});
        continue;
      }
      auto back = topology.neighbor(*b, opposite(d));
      if (back != a) {
        out.push_back({TopologyViolation::Kind::Reciprocity, a, d,
                       "cell " + std::to_string(a) + " -> " + std::to_string(*b) + " under " + to_string(d) +
                           " has no reverse edge under " + to_string(opposite(d))});
      }
    }
  }
  return out;
}

}  // namespace distana
