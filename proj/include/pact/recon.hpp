#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pact/core.hpp"
#include "pact/geometry.hpp"
#include "pact/tensor.hpp"

namespace pact {

/// d/dt by central differences (one-sided at the ends), scaled by 1/dt.
inline std::vector<double> time_derivative(std::span<const double> trace, double dt) {
  const std::size_t n = trace.size();
  if (n < 3) throw Error("time_derivative: trace needs at least 3 samples");
  std::vector<double> d(n);
  d[0] = (trace[1] - trace[0]) / dt;
  d[n - 1] = (trace[n - 1] - trace[n - 2]) / dt;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (trace[i + 1] - trace[i - 1]) / (2.0 * dt);
  return d;
}

/// Normalised Gaussian taps (sigma in samples), truncated at +-4 sigma.
inline std::vector<double> gaussian_taps(double sigma_samples) {
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma_samples));
  std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -half; i <= half; ++i) {
    const double u = static_cast<double>(i) / sigma_samples;
    sum += taps[static_cast<std::size_t>(i + half)] = std::exp(-0.5 * u * u);
  }
  for (double& t : taps) t /= sum;
  return taps;
}

/// Zero-extended linear convolution of `trace` with centred `taps`.
inline void convolve_centered(std::span<const double> trace, std::span<const double> taps,
                              std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(trace.size());
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    double acc = 0.0;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-half, r - n + 1);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(half, r);
    for (std::ptrdiff_t i = lo; i <= hi; ++i)
      acc += taps[static_cast<std::size_t>(i + half)] * trace[static_cast<std::size_t>(r - i)];
    out[static_cast<std::size_t>(r)] = acc;
  }
}

/// Temporal Gaussian smoothing whose spatial FWHM (c0 * temporal FWHM) equals fwhm_target mm.
inline PressureTensor presmooth(const PressureTensor& p, double fwhm_target, double c0, double dt) {
  if (!(fwhm_target > 0.0)) throw Error("presmooth: fwhm_target must be positive");
  if (fwhm_target < 2.0 * c0 * dt)
    throw Error("presmooth: fwhm_target below two samples of travel (unresolvable)");
  const double sigma_samples = fwhm_target / (c0 * kFwhmPerSigma) / dt;
  const auto taps = gaussian_taps(sigma_samples);
  PressureTensor out(p.n_elements(), p.n_views(), p.n_samples(), p.config_hash());
  parallel_for(p.n_elements() * p.n_views(), [&](std::size_t t) {
    const std::size_t e = t / p.n_views(), v = t % p.n_views();
    convolve_centered(p.trace(e, v), taps, out.trace(e, v));
  });
  return out;
}

/// UBP filtration b(t) = 2 p(t) - 2 t dp/dt with t = r dt.
inline std::vector<double> ubp_filter(std::span<const double> trace, double dt) {
  const auto deriv = time_derivative(trace, dt);
  std::vector<double> b(trace.size());
  for (std::size_t r = 0; r < trace.size(); ++r)
    b[r] = 2.0 * trace[r] - 2.0 * (static_cast<double>(r) * dt) * deriv[r];
  return b;
}

/// Universal backprojection. Each voxel averages the filtered data at its retarded
/// time over all transducers, weighted by the solid angle each element subtends,
///   dOmega_q ~ dS_q cos(theta_q) / |r - r_q|^2,
/// with weights normalised to sum to one per voxel. dS_q ~ sin(polar angle) is the
/// area an element represents on the equi-angular hemisphere sampling. Retarded
/// times outside the recorded window contribute zero. When `mask` is non-empty,
/// only voxels with mask[i] != 0 are reconstructed.
inline Volume ubp(const PressureTensor& p, std::span<const TransducerPose> poses,
                  const VoxelGrid& grid, double c0, double dt,
                  std::span<const std::uint8_t> mask = {}) {
  if (poses.empty()) throw Error("ubp: empty transducer array");
  if (!(c0 > 0.0)) throw Error("ubp: speed of sound must be positive");
  if (!(dt > 0.0)) throw Error("ubp: dt must be positive");
  grid.validate();
  const std::size_t n_r = p.n_elements(), n_v = p.n_views(), n_t = p.n_samples();
  if (poses.size() != n_r * n_v) throw Error("ubp: pose count does not match the data tensor");
  if (!mask.empty() && mask.size() != grid.size()) throw Error("ubp: mask does not match grid");

  // Filtered traces and per-transducer constants in pose order (q = v * N_r + e).
  const std::size_t nq = poses.size();
  std::vector<double> filtered(nq * n_t);
  std::vector<double> area(nq);
  parallel_for(nq, [&](std::size_t q) {
    const std::size_t v = q / n_r, e = q % n_r;
    const auto b = ubp_filter(p.trace(e, v), dt);
    std::copy(b.begin(), b.end(), filtered.begin() + static_cast<std::ptrdiff_t>(q * n_t));
    const Vec3& c = poses[q].center;
    area[q] = std::hypot(c.x, c.y) / norm(c);
  });

  Volume vol(grid);
  const double inv_step = 1.0 / (c0 * dt);
  const double last = static_cast<double>(n_t - 1);
  const std::size_t plane = grid.dims[1] * grid.dims[2];
  parallel_for(grid.dims[0], [&](std::size_t i) {
    for (std::size_t jk = 0; jk < plane; ++jk) {
      const std::size_t j = jk / grid.dims[2], k = jk % grid.dims[2];
      const std::size_t idx = grid.index(i, j, k);
      if (!mask.empty() && mask[idx] == 0) continue;
      const Vec3 r = grid.position(i, j, k);
      double acc = 0.0, wsum = 0.0;
      for (std::size_t q = 0; q < nq; ++q) {
        const TransducerPose& pose = poses[q];
        const Vec3 d = r - pose.center;
        const double dist2 = dot(d, d);
        const double proj = dot(d, pose.axis_z);
        if (proj <= 0.0) continue;
        const double dist = std::sqrt(dist2);
        const double w = area[q] * proj / (dist2 * dist);
        wsum += w;
        const double s = dist * inv_step;
        if (s > last) continue;
        const auto s0 = static_cast<std::size_t>(s);
        const double frac = s - static_cast<double>(s0);
        const double* b = filtered.data() + q * n_t;
        const double val = s0 + 1 < n_t ? b[s0] + frac * (b[s0 + 1] - b[s0]) : b[s0];
        acc += w * val;
      }
      vol.data[idx] = wsum > 0.0 ? acc / wsum : 0.0;
    }
  });
  return vol;
}

}  // namespace pact
