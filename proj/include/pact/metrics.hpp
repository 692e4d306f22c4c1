#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pact/core.hpp"
#include "pact/geometry.hpp"
#include "pact/optimize.hpp"
#include "pact/recon.hpp"
#include "pact/tensor.hpp"

namespace pact {

// ---------------------------------------------------------------------------
// FWHM from a Gaussian-blurred rectangular profile model

class FitError : public Error {
 public:
  using Error::Error;
};

/// Result of fitting A [erf((x-c+w)/(sqrt2 s)) - erf((x-c-w)/(sqrt2 s))] / 2.
struct FwhmFit {
  double fwhm = 0.0;          ///< resolution: FWHM of the fitted Gaussian blur, 2 sqrt(2 ln 2) s
  double profile_fwhm = 0.0;  ///< width of the fitted profile at half its peak
  double center = 0.0;
  double half_width = 0.0;
  double sigma = 0.0;
  double amplitude = 0.0;
  double residual = 0.0;  ///< RMS misfit divided by the profile's peak magnitude
};

struct FwhmFitOptions {
  /// Pins the rectangle half-width (e.g. to a known object radius); free when empty.
  std::optional<double> half_width;
  /// Fits whose residual exceeds this are rejected with FitError.
  double max_residual = 0.2;
};

inline double blurred_rect(double x, double center, double half_width, double sigma) {
  const double s = std::sqrt(2.0) * sigma;
  return 0.5 * (std::erf((x - center + half_width) / s) - std::erf((x - center - half_width) / s));
}

namespace detail {

struct ProfileModel {
  std::span<const double> x;
  std::span<const double> v;
  double energy = 0.0;

  /// Best amplitude and normalised squared misfit for the given shape.
  std::pair<double, double> solve(double c, double w, double sigma) const {
    double mv = 0.0, mm = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double m = blurred_rect(x[i], c, w, sigma);
      mv += m * v[i];
      mm += m * m;
    }
    if (mm <= 0.0) return {0.0, 1.0};
    const double a = mv / mm;
    return {a, (energy - a * mv) / energy};
  }
};

}  // namespace detail

/// Least-squares fit of the blurred-rect model: coarse grid over (w, sigma), then
/// Nelder-Mead refinement of (c, w, log sigma) with the amplitude solved linearly.
inline FwhmFit fit_fwhm(std::span<const double> x, std::span<const double> values,
                        const FwhmFitOptions& opt = {}) {
  if (x.size() != values.size() || x.size() < 5) throw FitError("fit_fwhm: need >= 5 samples");
  detail::ProfileModel model{x, values, 0.0};
  for (double v : values) model.energy += v * v;
  if (!(model.energy > 0.0)) throw FitError("fit_fwhm: profile is identically zero");

  const double lo = *std::min_element(x.begin(), x.end());
  const double hi = *std::max_element(x.begin(), x.end());
  const double extent = hi - lo;
  const double spacing = extent / static_cast<double>(x.size() - 1);
  const auto peak = static_cast<std::size_t>(
      std::max_element(values.begin(), values.end()) - values.begin());
  // Start from the middle of the half-maximum run around the peak; a flat top
  // would otherwise pin the start to one of its edges.
  std::size_t run_lo = peak, run_hi = peak;
  while (run_lo > 0 && values[run_lo - 1] >= 0.5 * values[peak]) --run_lo;
  while (run_hi + 1 < values.size() && values[run_hi + 1] >= 0.5 * values[peak]) ++run_hi;
  const double c0 = 0.5 * (x[run_lo] + x[run_hi]);

  const bool pinned = opt.half_width.has_value();
  double best_w = pinned ? *opt.half_width : 0.0, best_s = spacing, best_err = 2.0;
  const int nw = pinned ? 1 : 41, ns = 41;
  for (int iw = 0; iw < nw; ++iw) {
    const double w = pinned ? *opt.half_width : 0.5 * extent * iw / (nw - 1);
    for (int is = 0; is < ns; ++is) {
      const double s = 0.25 * spacing * std::pow(2.0 * extent / spacing, is / double(ns - 1));
      const double err = model.solve(c0, w, s).second;
      if (err < best_err) {
        best_err = err;
        best_w = w;
        best_s = s;
      }
    }
  }

  auto objective = [&](const std::array<double, 3>& p) {
    const double w = pinned ? *opt.half_width : std::abs(p[1]);
    return model.solve(p[0], w, std::exp(p[2])).second;
  };
  const auto p = nelder_mead<3>(objective, {c0, best_w, std::log(best_s)},
                                {spacing, std::max(spacing, 0.1 * best_w), 0.2});

  FwhmFit fit;
  fit.center = p[0];
  fit.half_width = pinned ? *opt.half_width : std::abs(p[1]);
  fit.sigma = std::exp(p[2]);
  const auto [amp, err] = model.solve(fit.center, fit.half_width, fit.sigma);
  fit.amplitude = amp;
  double peak_mag = 0.0;
  for (double v : values) peak_mag = std::max(peak_mag, std::abs(v));
  fit.residual = std::sqrt(std::max(err, 0.0) * model.energy / static_cast<double>(x.size())) /
                 peak_mag;
  fit.fwhm = kFwhmPerSigma * fit.sigma;

  // Half-maximum crossing of the (symmetric) fitted profile by bisection.
  const double top = blurred_rect(0.0, 0.0, fit.half_width, fit.sigma);
  double a = 0.0, b = fit.half_width + 10.0 * fit.sigma;
  for (int it = 0; it < 200; ++it) {
    const double m = 0.5 * (a + b);
    (blurred_rect(m, 0.0, fit.half_width, fit.sigma) > 0.5 * top ? a : b) = m;
  }
  fit.profile_fwhm = a + b;

  if (!std::isfinite(fit.residual) || fit.residual > opt.max_residual || !(fit.fwhm > 0.0))
    throw FitError("fit_fwhm: fit did not converge (relative residual " +
                   std::to_string(fit.residual) + ")");
  return fit;
}

// ---------------------------------------------------------------------------
// Depth shells

/// Voxels whose depth below the aperture surface, R - |r|, lies in [inner, outer) on the z < 0 side.
struct ShellMask {
  VoxelGrid grid;
  std::vector<std::uint8_t> mask;
  double inner = 0.0;
  double outer = 0.0;

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

inline ShellMask shell_mask(const VoxelGrid& grid, const SystemConfig& cfg, double inner,
                            double outer) {
  if (!(inner < outer)) throw Error("shell_mask: inner must be smaller than outer");
  grid.validate();
  ShellMask s{grid, std::vector<std::uint8_t>(grid.size(), 0), inner, outer};
  std::size_t n = 0;
  for (std::size_t i = 0; i < grid.dims[0]; ++i)
    for (std::size_t j = 0; j < grid.dims[1]; ++j)
      for (std::size_t k = 0; k < grid.dims[2]; ++k) {
        const Vec3 r = grid.position(i, j, k);
        const double depth = cfg.aperture_radius - norm(r);
        if (r.z < 0.0 && depth >= inner && depth < outer) {
          s.mask[grid.index(i, j, k)] = 1;
          ++n;
        }
      }
  if (n == 0) throw Error("shell_mask: no voxel of the grid lies in the shell");
  return s;
}

// ---------------------------------------------------------------------------
// Image similarity

inline void check_same_grid(const Volume& a, const Volume& b, std::span<const std::uint8_t> mask) {
  if (a.data.size() != b.data.size() || !(a.grid == b.grid))
    throw Error("metric: volumes are on different grids");
  if (mask.size() != a.data.size()) throw Error("metric: mask does not match the grid");
}

/// Relative squared error sum (v - r)^2 / sum r^2 over the mask.
inline double rse(const Volume& vol, const Volume& ref, std::span<const std::uint8_t> mask) {
  check_same_grid(vol, ref, mask);
  double num = 0.0, den = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = vol.data[i] - ref.data[i];
    num += d * d;
    den += ref.data[i] * ref.data[i];
    ++n;
  }
  if (n == 0) throw Error("rse: empty mask");
  if (!(den > 0.0)) throw Error("rse: reference is zero inside the mask");
  return num / den;
}

/// Pearson correlation over the mask.
inline double ncc(const Volume& vol, const Volume& ref, std::span<const std::uint8_t> mask) {
  check_same_grid(vol, ref, mask);
  double sa = 0.0, sb = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      sa += vol.data[i];
      sb += ref.data[i];
      ++n;
    }
  if (n == 0) throw Error("ncc: empty mask");
  const double ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double da = vol.data[i] - ma, db = ref.data[i] - mb;
    ab += da * db;
    aa += da * da;
    bb += db * db;
  }
  if (!(aa > 0.0) || !(bb > 0.0)) throw Error("ncc: zero variance inside the mask");
  return ab / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------------------
// Vesselness

/// Eigenvalues of a symmetric 3x3 matrix (closed form), unordered.
inline std::array<double, 3> symmetric_eigenvalues(double a00, double a01, double a02, double a11,
                                                   double a12, double a22) {
  const double p1 = a01 * a01 + a02 * a02 + a12 * a12;
  const double q = (a00 + a11 + a22) / 3.0;
  if (p1 <= 1e-300 * (1.0 + q * q)) return {a00, a11, a22};
  const double d0 = a00 - q, d1 = a11 - q, d2 = a22 - q;
  const double p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  const double b00 = d0 / p, b11 = d1 / p, b22 = d2 / p;
  const double b01 = a01 / p, b02 = a02 / p, b12 = a12 / p;
  const double det = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) +
                     b02 * (b01 * b12 - b11 * b02);
  const double r = std::clamp(det / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
  return {e1, 3.0 * q - e1 - e3, e3};
}

/// Separable Gaussian smoothing (sigma in voxels) with clamped borders.
inline std::vector<double> gaussian_smooth(const std::vector<double>& in,
                                           const std::array<std::size_t, 3>& dims, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  std::vector<double> a = in, b(in.size());
  const std::array<std::size_t, 3> stride{dims[1] * dims[2], dims[2], 1};
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = static_cast<std::ptrdiff_t>(dims[axis]);
    const std::size_t st = stride[axis];
    parallel_for(in.size() / dims[axis], [&](std::size_t line) {
      // Decompose the line index into the base offset of a 1D run along `axis`.
      std::size_t base;
      if (axis == 0) base = line;
      else if (axis == 1) base = (line / dims[2]) * dims[1] * dims[2] + line % dims[2];
      else base = line * dims[2];
      for (std::ptrdiff_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -half; t <= half; ++t) {
          const std::ptrdiff_t s = std::clamp<std::ptrdiff_t>(r + t, 0, n - 1);
          acc += taps[static_cast<std::size_t>(t + half)] * a[base + static_cast<std::size_t>(s) * st];
        }
        b[base + static_cast<std::size_t>(r) * st] = acc;
      }
    });
    std::swap(a, b);
  }
  return a;
}

struct FrangiParams {
  double alpha = 0.5;
  double beta = 0.5;
};

/// Single-scale bright-tube vesselness (sigma in voxels), scale-normalised Hessian.
inline std::vector<double> frangi_scale(const Volume& vol, double sigma,
                                        const FrangiParams& prm = {}) {
  const auto& dims = vol.grid.dims;
  const auto sm = gaussian_smooth(vol.data, dims, sigma);
  const std::size_t n = sm.size();
  std::vector<std::array<double, 3>> eig(n);
  const double norm2 = sigma * sigma;
  auto at = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t k) {
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(dims[0]) - 1);
    j = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(dims[1]) - 1);
    k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(dims[2]) - 1);
    return sm[(static_cast<std::size_t>(i) * dims[1] + static_cast<std::size_t>(j)) * dims[2] +
              static_cast<std::size_t>(k)];
  };
  std::vector<double> frob(n);
  parallel_for(dims[0], [&](std::size_t ii) {
    const auto i = static_cast<std::ptrdiff_t>(ii);
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(dims[1]); ++j)
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(dims[2]); ++k) {
        const double c = at(i, j, k);
        const double hxx = at(i + 1, j, k) - 2 * c + at(i - 1, j, k);
        const double hyy = at(i, j + 1, k) - 2 * c + at(i, j - 1, k);
        const double hzz = at(i, j, k + 1) - 2 * c + at(i, j, k - 1);
        const double hxy = 0.25 * (at(i + 1, j + 1, k) - at(i + 1, j - 1, k) -
                                   at(i - 1, j + 1, k) + at(i - 1, j - 1, k));
        const double hxz = 0.25 * (at(i + 1, j, k + 1) - at(i + 1, j, k - 1) -
                                   at(i - 1, j, k + 1) + at(i - 1, j, k - 1));
        const double hyz = 0.25 * (at(i, j + 1, k + 1) - at(i, j + 1, k - 1) -
                                   at(i, j - 1, k + 1) + at(i, j - 1, k - 1));
        auto e = symmetric_eigenvalues(norm2 * hxx, norm2 * hxy, norm2 * hxz, norm2 * hyy,
                                       norm2 * hyz, norm2 * hzz);
        std::sort(e.begin(), e.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
        const std::size_t idx =
            (static_cast<std::size_t>(i) * dims[1] + static_cast<std::size_t>(j)) * dims[2] +
            static_cast<std::size_t>(k);
        eig[idx] = e;
        frob[idx] = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
      }
  });
  const double c = 0.5 * *std::max_element(frob.begin(), frob.end());
  std::vector<double> out(n, 0.0);
  if (!(c > 0.0)) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = eig[i];
    if (e[1] > 0.0 || e[2] > 0.0 || e[2] == 0.0) continue;
    const double ra = std::abs(e[1]) / std::abs(e[2]);
    const double rb = std::abs(e[0]) / std::sqrt(std::abs(e[1] * e[2]));
    out[i] = (1.0 - std::exp(-ra * ra / (2 * prm.alpha * prm.alpha))) *
             std::exp(-rb * rb / (2 * prm.beta * prm.beta)) *
             (1.0 - std::exp(-frob[i] * frob[i] / (2 * c * c)));
  }
  return out;
}

/// Multi-scale maximum of the bright-tube vesselness over `sigmas` (voxels).
inline Volume frangi(const Volume& vol, std::span<const double> sigmas,
                     const FrangiParams& prm = {}) {
  if (sigmas.empty()) throw Error("frangi: no scales given");
  Volume out(vol.grid);
  for (double s : sigmas) {
    const auto r = frangi_scale(vol, s, prm);
    for (std::size_t i = 0; i < r.size(); ++i) out.data[i] = std::max(out.data[i], r[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholding and overlap

/// Triangle (Zack) threshold on a 256-bin histogram spanning [min, max].
inline double triangle_threshold(std::span<const double> values, std::size_t n_bins = 256) {
  if (values.empty()) throw Error("triangle_threshold: empty input");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) throw Error("triangle_threshold: values have no spread");
  const double width = (mx - mn) / static_cast<double>(n_bins);
  std::vector<double> hist(n_bins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - mn) / width);
    hist[std::min(b, n_bins - 1)] += 1.0;
  }
  const auto peak = static_cast<std::size_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  std::size_t first = 0, last = n_bins - 1;
  while (hist[first] == 0.0) ++first;
  while (hist[last] == 0.0) --last;
  // Tail on the side farther from the peak.
  const bool right = (last - peak) >= (peak - first);
  const std::size_t tail = right ? last : first;
  std::size_t best = peak;
  if (tail != peak) {
    const double x0 = static_cast<double>(peak), y0 = hist[peak];
    const double dx = static_cast<double>(tail) - x0, dy = hist[tail] - y0;
    const double cosine = std::abs(dx) / std::hypot(dx, dy);
    double best_d = -std::numeric_limits<double>::infinity();
    const std::size_t a = std::min(peak, tail), b = std::max(peak, tail);
    for (std::size_t i = a; i <= b; ++i) {
      // Perpendicular distance of a bin top below the peak-to-tail line.
      const double line = y0 + dy * (static_cast<double>(i) - x0) / dx;
      const double d = (line - hist[i]) * cosine;
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
  }
  return mn + (static_cast<double>(best) + 0.5) * width;
}

inline std::vector<std::uint8_t> threshold_mask(std::span<const double> values, double thr) {
  std::vector<std::uint8_t> m(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m[i] = values[i] > thr ? 1 : 0;
  return m;
}

/// 2|A n B| / (|A| + |B|), with dice(empty, empty) = 1.
inline double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw Error("dice: mask sizes differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// ---------------------------------------------------------------------------
// One-sided Mann-Whitney U

namespace detail {
inline std::vector<double> midranks(const std::vector<double>& v, double* tie_term) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  double ties = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  if (tie_term) *tie_term = ties;
  return ranks;
}
}  // namespace detail

/// p-value for "a is stochastically smaller than b". Exact enumeration of all
/// rank assignments when |a| + |b| <= 20, tie-corrected normal approximation otherwise.
inline double mann_whitney_one_sided(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error("mann_whitney_one_sided: empty sample");
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  double tie_term = 0.0;
  const auto ranks = detail::midranks(all, &tie_term);
  const std::size_t na = a.size(), n = all.size();
  double observed = 0.0;
  for (std::size_t i = 0; i < na; ++i) observed += ranks[i];

  if (n <= 20) {
    // Every size-na subset of the pooled ranks is equally likely under H0.
    std::uint64_t total = 0, hits = 0;
    std::vector<std::size_t> idx(na);
    std::iota(idx.begin(), idx.end(), 0);
    const double eps = 1e-9;
    while (true) {
      double s = 0.0;
      for (std::size_t k : idx) s += ranks[k];
      ++total;
      if (s <= observed + eps) ++hits;
      std::size_t k = na;
      while (k > 0 && idx[k - 1] == n - na + k - 1) --k;
      if (k == 0) break;
      ++idx[k - 1];
      for (std::size_t m = k; m < na; ++m) idx[m] = idx[m - 1] + 1;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  const double nb = static_cast<double>(b.size()), dna = static_cast<double>(na);
  const double dn = static_cast<double>(n);
  const double u = observed - dna * (dna + 1.0) / 2.0;
  const double mean = dna * nb / 2.0;
  const double var = dna * nb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (!(var > 0.0)) return 1.0;
  const double z = (u - mean + 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

}  // namespace pact
