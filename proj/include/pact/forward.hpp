#pragma once

#include <algorithm>
#include <complex>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "pact/core.hpp"
#include "pact/fft.hpp"
#include "pact/geometry.hpp"
#include "pact/tensor.hpp"

namespace pact {

/// Uniform spherical source of initial pressure `amplitude` (AU).
struct Sphere {
  Vec3 center;
  double radius = 1.0;
  double amplitude = 1.0;

  friend bool operator==(const Sphere&, const Sphere&) = default;
};

enum class TransducerModel { point, rect };

inline TransducerModel parse_transducer_model(std::string_view name) {
  if (name == "point") return TransducerModel::point;
  if (name == "rect") return TransducerModel::rect;
  throw Error("unknown transducer model '" + std::string(name) + "' (expected point or rect)");
}

inline double sinc(double u) {
  if (std::abs(u) < 1e-4) {
    const double u2 = u * u;
    return 1.0 - u2 / 6.0 + u2 * u2 / 120.0;
  }
  return std::sin(u) / u;
}

/// out[l] = sinc(alpha * l). sin(l alpha) comes from a unit-phasor recurrence,
/// resynchronised every 128 steps to keep the rounding drift at O(128 eps).
inline void sinc_series(double alpha, std::span<double> out) {
  if (alpha == 0.0) {
    std::fill(out.begin(), out.end(), 1.0);
    return;
  }
  const std::complex<double> step(std::cos(alpha), std::sin(alpha));
  std::complex<double> z(1.0, 0.0);
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (l % 128 == 0) {
      const double u = alpha * static_cast<double>(l);
      z = {std::cos(u), std::sin(u)};
    }
    const double u = alpha * static_cast<double>(l);
    out[l] = std::abs(u) < 1e-4 ? sinc(u) : z.imag() / u;
    z *= step;
  }
}

/// Far-field rectangular-element transfer function at a source position given in the
/// element's local frame: sinc(a x pi f / (c0 |r|)) sinc(b y pi f / (c0 |r|)).
inline std::vector<double> sir_spectrum(const Vec3& local, const SystemConfig& cfg,
                                        const FrequencyGrid& freqs) {
  const double dist = norm(local);
  if (!(dist > 0.0)) throw Error("sir_spectrum: source coincides with the element centre");
  const double scale = kPi * freqs.df / (cfg.sos * dist);
  std::vector<double> h(freqs.n_bins);
  std::vector<double> hy(freqs.n_bins);
  sinc_series(cfg.elem_a * local.x * scale, h);
  sinc_series(cfg.elem_b * local.y * scale, hy);
  for (std::size_t l = 0; l < h.size(); ++l) h[l] *= hy[l];
  return h;
}

/// Adds the sampled N-wave of `s` observed at `position` into out[r], r = 0..out.size()-1,
/// sample r at t = r dt:  A (d - c0 t) / (2 d) for |d - c0 t| <= radius.
inline void add_nwave(const Sphere& s, const Vec3& position, double c0, double dt,
                      std::span<double> out) {
  const double d = norm(position - s.center);
  if (!(d > s.radius))
    throw Error("sphere contains the observation point (exterior observation required)");
  const double step = c0 * dt;
  const double lo = std::ceil((d - s.radius) / step - 1e-9);
  const double hi = std::floor((d + s.radius) / step + 1e-9);
  if (hi < 0.0 || lo >= static_cast<double>(out.size())) return;
  const auto first = static_cast<std::size_t>(std::max(lo, 0.0));
  const auto last = static_cast<std::size_t>(std::min(hi, static_cast<double>(out.size() - 1)));
  const double gain = s.amplitude / (2.0 * d);
  for (std::size_t r = first; r <= last; ++r) {
    const double path = step * static_cast<double>(r);
    if (std::abs(d - path) <= s.radius * (1.0 + 1e-12)) out[r] += gain * (d - path);
  }
}

inline std::vector<double> sphere_trace_point(const Sphere& s, const Vec3& position,
                                              const SystemConfig& cfg) {
  std::vector<double> trace(cfg.n_samples, 0.0);
  add_nwave(s, position, cfg.sos, cfg.dt, trace);
  return trace;
}

/// Point-transducer pressure trace of a single sphere (length N_t).
inline std::vector<double> sphere_trace_point(const Sphere& s, const TransducerPose& pose,
                                              const SystemConfig& cfg) {
  return sphere_trace_point(s, pose.center, cfg);
}

namespace detail {

struct RectScratch {
  std::vector<double> padded;
  std::vector<std::complex<double>> spectrum;
  std::vector<std::complex<double>> accum;
  std::vector<double> h;
  std::vector<double> hy;
  std::vector<double> out;
};

/// Rect-element trace at `pose` for all spheres, written to `trace`.
inline void rect_trace(std::span<const Sphere> spheres, const TransducerPose& pose,
                       const SystemConfig& cfg, const FrequencyGrid& freqs, const RealFft& fft,
                       RectScratch& s, std::span<double> trace) {
  s.padded.assign(freqs.n_fft, 0.0);
  s.spectrum.resize(freqs.n_bins);
  s.accum.assign(freqs.n_bins, {0.0, 0.0});
  s.h.resize(freqs.n_bins);
  s.hy.resize(freqs.n_bins);
  s.out.resize(freqs.n_fft);
  // Samples beyond N_t are simulated up to half the padding so that the
  // non-causal SIR spreads them back into the window correctly.
  const std::size_t span_len = cfg.n_samples + (freqs.n_fft - cfg.n_samples) / 2;
  std::span<double> window(s.padded.data(), span_len);
  bool any = false;
  for (const Sphere& sp : spheres) {
    const Vec3 local = global_to_local(pose, sp.center);
    const double d = norm(local);
    if (!(d > sp.radius))
      throw Error("sphere contains the observation point (exterior observation required)");
    const double step = cfg.sos * cfg.dt;
    if ((d - sp.radius) / step >= static_cast<double>(span_len)) continue;
    add_nwave(sp, pose.center, cfg.sos, cfg.dt, window);
    fft.forward(s.padded, s.spectrum);
    const double scale = kPi * freqs.df / (cfg.sos * d);
    sinc_series(cfg.elem_a * local.x * scale, s.h);
    sinc_series(cfg.elem_b * local.y * scale, s.hy);
    for (std::size_t l = 0; l < freqs.n_bins; ++l) s.accum[l] += s.spectrum[l] * (s.h[l] * s.hy[l]);
    std::fill(window.begin(), window.end(), 0.0);
    any = true;
  }
  if (!any) {
    std::fill(trace.begin(), trace.end(), 0.0);
    return;
  }
  fft.inverse(s.accum, s.out);
  std::copy_n(s.out.begin(), trace.size(), trace.begin());
}

}  // namespace detail

/// Continuous-to-discrete simulation of all transducer traces for a set of spheres.
/// `point` samples the N-waves directly; `rect` applies the far-field SIR of each
/// sphere (evaluated at its centre) on a zero-padded frequency axis.
inline PressureTensor simulate(std::span<const Sphere> spheres, const SystemConfig& cfg,
                               TransducerModel mode) {
  cfg.validate();
  const auto poses = build_array(cfg);
  PressureTensor out = PressureTensor::zeros_like(cfg);
  if (spheres.empty()) return out;
  const FrequencyGrid freqs = frequency_grid(cfg);
  const RealFft* fft = mode == TransducerModel::rect ? &fft_for(freqs.n_fft) : nullptr;

  parallel_for(poses.size(), [&](std::size_t q) {
    const std::size_t view = q / cfg.n_elements;
    const std::size_t element = q % cfg.n_elements;
    auto trace = out.trace(element, view);
    if (mode == TransducerModel::point) {
      for (const Sphere& s : spheres) add_nwave(s, poses[q].center, cfg.sos, cfg.dt, trace);
    } else {
      thread_local detail::RectScratch scratch;
      detail::rect_trace(spheres, poses[q], cfg, freqs, *fft, scratch, trace);
    }
  });
  return out;
}

inline PressureTensor simulate(const std::vector<Sphere>& spheres, const SystemConfig& cfg,
                               TransducerModel mode) {
  return simulate(std::span<const Sphere>(spheres), cfg, mode);
}

/// Linear-interpolated quantile (q in [0,1]) of |values|.
inline double abs_quantile(std::span<const double> values, double q) {
  if (values.empty()) throw Error("abs_quantile: empty input");
  std::vector<double> mag(values.size());
  std::transform(values.begin(), values.end(), mag.begin(), [](double v) { return std::abs(v); });
  const double pos = q * static_cast<double>(mag.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(lo), mag.end());
  const double a = mag[lo];
  if (frac == 0.0 || lo + 1 >= mag.size()) return a;
  const double b = *std::min_element(mag.begin() + static_cast<std::ptrdiff_t>(lo) + 1, mag.end());
  return a + frac * (b - a);
}

/// Noise standard deviation: `fraction` of the 90th percentile of |p|.
inline double noise_scale(const PressureTensor& p, double fraction) {
  const auto& d = p.data();
  if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; }))
    throw Error("noise_scale: tensor is identically zero");
  if (fraction == 0.0) return 0.0;
  return fraction * abs_quantile(d, 0.9);
}

/// Adds i.i.d. N(0, sigma^2). Each trace draws from its own stream seeded by
/// (seed, element, view), so the result does not depend on the thread count.
inline PressureTensor add_noise(const PressureTensor& p, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error("add_noise: sigma must be non-negative");
  PressureTensor out = p;
  if (sigma == 0.0) return out;
  const std::size_t n_traces = p.n_elements() * p.n_views();
  parallel_for(n_traces, [&](std::size_t t) {
    const std::size_t e = t / p.n_views();
    const std::size_t v = t % p.n_views();
    std::mt19937_64 rng(substream_seed(seed, e, v));
    std::normal_distribution<double> gauss(0.0, sigma);
    for (double& x : out.trace(e, v)) x += gauss(rng);
  });
  return out;
}

}  // namespace pact
