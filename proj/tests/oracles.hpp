#pragma once

// Test-side reference implementations. None of these call into the library
// code they are compared against.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vinlab/gridworld.hpp"
#include "vinlab/rng.hpp"
#include "vinlab/tensor.hpp"

namespace oracle {

using vinlab::Tensor;

// Direct six-deep loop over the convolution definition.
inline Tensor<double> conv_loop(const Tensor<double>& in, const Tensor<double>& k, const Tensor<double>* bias) {
  const int cin = in.dim(0), m = in.dim(1), n = in.dim(2);
  const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  Tensor<double> out({cout, m, n});
  for (int o = 0; o < cout; ++o) {
    for (int y = 0; y < m; ++y) {
      for (int x = 0; x < n; ++x) {
        double s = bias ? (*bias)[o] : 0.0;
        for (int c = 0; c < cin; ++c) {
          for (int a = 0; a < kh; ++a) {
            for (int b = 0; b < kw; ++b) {
              const int iy = y - a + kh / 2, ix = x - b + kw / 2;
              if (iy < 0 || ix < 0 || iy >= m || ix >= n) continue;
              s += k[((static_cast<std::size_t>(o) * cin + c) * kh + a) * kw + b] * in.at(c, iy, ix);
            }
          }
        }
        out.at(o, y, x) = s;
      }
    }
  }
  return out;
}

inline Tensor<double> random_tensor(vinlab::Shape shape, vinlab::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Uniform-cost search by repeated full relaxation (Bellman-Ford) over the
// 8-neighbourhood; independent of the library's Dijkstra.
inline std::vector<double> ucs_distances(const vinlab::GridMap& map) {
  const double inf = std::numeric_limits<double>::infinity();
  const int m = map.rows, n = map.cols;
  std::vector<double> d(static_cast<std::size_t>(m) * n, inf);
  d[static_cast<std::size_t>(map.goal.i) * n + map.goal.j] = 0.0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        if (map.obstacles[static_cast<std::size_t>(i) * n + j]) continue;
        double& here = d[static_cast<std::size_t>(i) * n + j];
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            const int a = i + di, b = j + dj;
            if (a < 0 || b < 0 || a >= m || b >= n || map.obstacles[static_cast<std::size_t>(a) * n + b]) continue;
            const double c = d[static_cast<std::size_t>(a) * n + b] + ((di != 0 && dj != 0) ? std::sqrt(2.0) : 1.0);
            if (c < here - 1e-12) {
              here = c;
              changed = true;
            }
          }
        }
      }
    }
  }
  return d;
}

// Fewest 8-connected moves to the goal by layered flooding; -1 if unreachable.
inline std::vector<int> flood_steps(const vinlab::GridMap& map) {
  const int m = map.rows, n = map.cols;
  std::vector<int> d(static_cast<std::size_t>(m) * n, -1);
  d[static_cast<std::size_t>(map.goal.i) * n + map.goal.j] = 0;
  for (int layer = 0;; ++layer) {
    bool grew = false;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        if (d[static_cast<std::size_t>(i) * n + j] != layer) continue;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const int a = i + di, b = j + dj;
            if (a < 0 || b < 0 || a >= m || b >= n) continue;
            const std::size_t k = static_cast<std::size_t>(a) * n + b;
            if (map.obstacles[k] || d[k] != -1) continue;
            d[k] = layer + 1;
            grew = true;
          }
        }
      }
    }
    if (!grew) return d;
  }
}

inline int chebyshev(vinlab::Cell a, vinlab::Cell b) { return std::max(std::abs(a.i - b.i), std::abs(a.j - b.j)); }

}  // namespace oracle
