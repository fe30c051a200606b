// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "distana/errors.hpp"
#include "distana/mesh.hpp"

using namespace distana;

TEST(Direction, OppositeIsAnInvolution) {
  for (Direction d : kAllDirections) EXPECT_EQ(opposite(opposite(d)), d);
  EXPECT_EQ(opposite(Direction::N), Direction::S);
  EXPECT_EQ(opposite(Direction::NE), Direction::SW);
  EXPECT_EQ(opposite(Direction::E), Direction::W);
  EXPECT_EQ(opposite(Direction::SE), Direction::NW);
}

TEST(Grid, ZeroPadCornerHasNoOutsideNeighbors) {
  auto g = MeshTopology::grid(16, 16, BorderMode::ZeroPad);
  const CellId corner = g.cell_at(0, 0);
  for (Direction d : {Direction::N, Direction::NW, Direction::W, Direction::SW, Direction::NE})
    EXPECT_FALSE(g.neighbor(corner, d).has_value()) << to_string(d);
  EXPECT_EQ(g.neighbor(corner, Direction::E), g.cell_at(0, 1));
  EXPECT_EQ(g.neighbor(corner, Direction::SE), g.cell_at(1, 1));
}

TEST(Grid, DirectionConvention) {
  auto g = MeshTopology::grid(16, 16, BorderMode::ZeroPad);
  EXPECT_EQ(g.neighbor(g.cell_at(5, 5), Direction::NE), g.cell_at(4, 6));
  EXPECT_EQ(g.neighbor(g.cell_at(5, 5), Direction::SW), g.cell_at(6, 4));
}

TEST(Grid, PeriodicWrapsAround) {
  auto g = MeshTopology::grid(4, 4, BorderMode::Periodic);
  EXPECT_EQ(g.neighbor(g.cell_at(0, 0), Direction::N), g.cell_at(3, 0));
  EXPECT_EQ(g.neighbor(g.cell_at(0, 0), Direction::NW), g.cell_at(3, 3));
}

TEST(Grid, ZeroSizedGridRejected) {
  EXPECT_THROW(MeshTopology::grid(0, 4, BorderMode::ZeroPad), ConfigError);
  EXPECT_THROW(MeshTopology::grid(4, 0, BorderMode::Periodic), ConfigError);
}

TEST(Validate, AllGridsAreConsistent) {
  for (std::size_t h : {1, 2, 3, 7, 16})
    for (std::size_t w : {1, 2, 5, 16})
      for (BorderMode m : {BorderMode::ZeroPad, BorderMode::Periodic})
        EXPECT_TRUE(validate(MeshTopology::grid(h, w, m)).empty()) << h << "x" << w;
}

TEST(Validate, OneWayEdgeReported) {
  std::vector<MeshTopology::Neighborhood> nb(2);
  nb[0][index_of(Direction::E)] = 1;
  auto v = validate(MeshTopology(nb, BorderMode::ZeroPad));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, TopologyViolation::Kind::Reciprocity);
  EXPECT_EQ(v[0].cell, 0u);
}

TEST(Validate, OutOfRangeNeighborReported) {
  std::vector<MeshTopology::Neighborhood> nb(2);
  nb[1][index_of(Direction::S)] = 5;
  auto v = validate(MeshTopology(nb, BorderMode::ZeroPad));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, TopologyViolation::Kind::Range);
}

TEST(Grid, PeriodicIsVertexTransitive) {
  auto g = MeshTopology::grid(5, 6, BorderMode::Periodic);
  for (CellId c = 0; c < g.cells(); ++c) {
    for (Direction d : kAllDirections) EXPECT_TRUE(g.neighbor(c, d).has_value());
  }
}

TEST(Grid, ZeroPadDegrees) {
  auto g = MeshTopology::grid(4, 4, BorderMode::ZeroPad);
  auto degree = [&](CellId c) {
    return std::count_if(kAllDirections.begin(), kAllDirections.end(),
                         [&](Direction d) { return g.neighbor(c, d).has_value(); });
  };
  EXPECT_EQ(degree(g.cell_at(0, 0)), 3);
  EXPECT_EQ(degree(g.cell_at(0, 1)), 5);
  EXPECT_EQ(degree(g.cell_at(1, 1)), 8);
}

TEST(Topology, JsonRoundTrip) {
  auto g = MeshTopology::grid(3, 4, BorderMode::ZeroPad);
  auto j = g.to_json();
  EXPECT_EQ(j["cells"], 12);
  EXPECT_EQ(j["border"], "zero_pad");
  auto back = MeshTopology::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  for (CellId c = 0; c < g.cells(); ++c) EXPECT_EQ(back.neighborhood(c), g.neighborhood(c));
}
