#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "pact/core.hpp"
#include "pact/geometry.hpp"

namespace pact::fixtures {

/// Randomized cases per property.
inline constexpr int kCases = 100;

inline double rel_l2(std::span<const double> a, std::span<const double> ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ref[i]) * (a[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  return std::sqrt(num / den);
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

/// Small array for fast property runs.
inline SystemConfig tiny_config(std::size_t n_elements = 4, std::size_t n_views = 8) {
  SystemConfig c;
  c.n_elements = n_elements;
  c.n_views = n_views;
  return c;
}

}  // namespace pact::fixtures
