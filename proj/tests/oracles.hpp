// SPDX-License-Identifier: Apache-2.0
//
// Straight-loop reference implementations used by the tests. They share no
// code with the library beyond plain data types.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "distana/model.hpp"
#include "distana/wavegen.hpp"

namespace oracle {

using distana::Tensor;

inline Tensor random_tensor(distana::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// u_next = k·lap(u) + 2u − u_prev on a zero-padded grid, Δx = Δy = h.
inline std::vector<std::vector<std::vector<double>>> wave_stencil(std::size_t n_rows, std::size_t n_cols,
                                                                  std::size_t steps, double c, double dt,
                                                                  double h, double a, double var, double cx,
                                                                  double cy) {
  using Grid = std::vector<std::vector<double>>;
  std::vector<Grid> out;
  Grid u0(n_rows, std::vector<double>(n_cols));
  for (std::size_t y = 0; y < n_rows; ++y)
    for (std::size_t x = 0; x < n_cols; ++x) {
      double dx = double(x) - cx, dy = double(y) - cy;
      u0[y][x] = a * std::exp(-(dx * dx / (2 * var) + dy * dy / (2 * var)));
    }
  out.push_back(u0);
  Grid prev(n_rows, std::vector<double>(n_cols, 0.0));
  const double k = c * c * dt * dt;
  while (out.size() < steps) {
    const Grid& cur = out.back();
    Grid next(n_rows, std::vector<double>(n_cols));
    for (std::size_t y = 0; y < n_rows; ++y)
      for (std::size_t x = 0; x < n_cols; ++x) {
        double left = x > 0 ? cur[y][x - 1] : 0.0;
        double right = x + 1 < n_cols ? cur[y][x + 1] : 0.0;
        double up = y > 0 ? cur[y - 1][x] : 0.0;
        double down = y + 1 < n_rows ? cur[y + 1][x] : 0.0;
        double lap = (left - 2 * cur[y][x] + right) / (h * h) + (up - 2 * cur[y][x] + down) / (h * h);
        next[y][x] = k * lap + 2 * cur[y][x] - prev[y][x];
      }
    prev = cur;
    out.push_back(next);
  }
  return out;
}

struct CellState {
  std::vector<double> h, c, lateral;
};

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One lattice step on an H×W grid, evaluated cell by cell with scalar loops.
// Neighbor offsets: N, NE, E, SE, S, SW, W, NW; N is row − 1.
inline std::vector<CellState> lattice_step(const distana::ModelConfig& cfg, const distana::ModelParams& p,
                                           std::size_t n_rows, std::size_t n_cols, bool periodic,
                                           const std::vector<double>& frame, const std::vector<CellState>& state,
                                           std::vector<double>& prediction) {
  const auto& pk = cfg.pk;
  const std::size_t K = pk.lstm_cells;
  const int dr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  const int dc[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  std::vector<CellState> next(state.size());
  prediction.assign(state.size(), 0.0);
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t col = 0; col < n_cols; ++col) {
      const std::size_t cell = r * n_cols + col;
      std::vector<double> lat(pk.lateral_in, 0.0);
      for (int d = 0; d < 8; ++d) {
        long nr = long(r) + dr[d], nc = long(col) + dc[d];
        if (periodic) {
          nr = (nr + long(n_rows)) % long(n_rows);
          nc = (nc + long(n_cols)) % long(n_cols);
        } else if (nr < 0 || nc < 0 || nr >= long(n_rows) || nc >= long(n_cols)) {
          continue;
        }
        const auto& buf = state[std::size_t(nr) * n_cols + std::size_t(nc)].lateral;
        switch (cfg.variant) {
          case distana::Variant::Base:
          case distana::Variant::V1:
            for (std::size_t j = 0; j < pk.lateral_in; ++j)
              for (std::size_t i = 0; i < pk.lateral_out; ++i) lat[j] += buf[i] * (*p.w_tk)(i, j);
            break;
          case distana::Variant::V2:
            lat[d] = buf[0];
            break;
          case distana::Variant::V3:
            lat[d] = buf[(d + 4) % 8];
            break;
        }
      }
      std::vector<double> x{frame[cell]};
      x.insert(x.end(), lat.begin(), lat.end());
      std::vector<double> pre(pk.pre_units, 0.0);
      for (std::size_t u = 0; u < pk.pre_units; ++u)
        for (std::size_t i = 0; i < x.size(); ++i) pre[u] += x[i] * p.w_pre(i, u);
      std::vector<double> gin = pre;
      gin.insert(gin.end(), state[cell].h.begin(), state[cell].h.end());
      std::vector<double> z(4 * K);
      for (std::size_t j = 0; j < 4 * K; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < gin.size(); ++i) s += gin[i] * p.w_gates(i, j);
        z[j] = s + p.b_gates[j];
      }
      CellState& out = next[cell];
      out.h.resize(K);
      out.c.resize(K);
      for (std::size_t k = 0; k < K; ++k) {
        double ig = sig(z[k]), fg = sig(z[K + k]), gg = std::tanh(z[2 * K + k]), og = sig(z[3 * K + k]);
        out.c[k] = fg * state[cell].c[k] + ig * gg;
        out.h[k] = og * std::tanh(out.c[k]);
      }
      out.lateral.assign(pk.lateral_out, 0.0);
      for (std::size_t j = 0; j < pk.output_width(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += out.h[k] * p.w_post(k, j);
        if (j == 0)
          prediction[cell] = s;
        else
          out.lateral[j - 1] = s;
      }
    }
  }
  return next;
}

inline std::vector<CellState> zero_state(std::size_t cells, const distana::PkConfig& pk) {
  return std::vector<CellState>(cells, CellState{std::vector<double>(pk.lstm_cells, 0.0),
                                                 std::vector<double>(pk.lstm_cells, 0.0),
                                                 std::vector<double>(pk.lateral_out, 0.0)});
}

}  // namespace oracle
