#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace pact {

/// Derivative-free Nelder-Mead minimiser over N parameters.
template <std::size_t N, typename Objective>
std::array<double, N> nelder_mead(Objective&& f, std::array<double, N> start,
                                  std::array<double, N> step, int max_iter = 2000,
                                  double ftol = 1e-14) {
  using Point = std::array<double, N>;
  std::array<Point, N + 1> simplex;
  std::array<double, N + 1> value;
  simplex[0] = start;
  for (std::size_t i = 0; i < N; ++i) {
    simplex[i + 1] = start;
    simplex[i + 1][i] += step[i];
  }
  for (std::size_t i = 0; i <= N; ++i) value[i] = f(simplex[i]);

  auto blend = [](const Point& a, const Point& b, double t) {
    Point p;
    for (std::size_t i = 0; i < N; ++i) p[i] = a[i] + t * (b[i] - a[i]);
    return p;
  };

  for (int iter = 0; iter < max_iter; ++iter) {
    std::array<std::size_t, N + 1> order;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return value[a] < value[b]; });
    const std::size_t best = order[0], worst = order[N], second = order[N - 1];
    if (std::abs(value[worst] - value[best]) <= ftol * (std::abs(value[best]) + 1e-300)) break;

    Point centroid{};
    for (std::size_t k = 0; k < N; ++k) {
      const auto& p = simplex[order[k]];
      for (std::size_t i = 0; i < N; ++i) centroid[i] += p[i] / static_cast<double>(N);
    }
    const Point reflected = blend(centroid, simplex[worst], -1.0);
    const double fr = f(reflected);
    if (fr < value[best]) {
      const Point expanded = blend(centroid, simplex[worst], -2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        value[worst] = fe;
      } else {
        simplex[worst] = reflected;
        value[worst] = fr;
      }
      continue;
    }
    if (fr < value[second]) {
      simplex[worst] = reflected;
      value[worst] = fr;
      continue;
    }
    const bool outside = fr < value[worst];
    const Point contracted = blend(centroid, outside ? reflected : simplex[worst], 0.5);
    const double fc = f(contracted);
    if (fc < std::min(fr, value[worst])) {
      simplex[worst] = contracted;
      value[worst] = fc;
      continue;
    }
    for (std::size_t k = 1; k <= N; ++k) {
      const std::size_t idx = order[k];
      simplex[idx] = blend(simplex[best], simplex[idx], 0.5);
      value[idx] = f(simplex[idx]);
    }
  }
  const auto it = std::min_element(value.begin(), value.end());
  return simplex[static_cast<std::size_t>(it - value.begin())];
}

}  // namespace pact
