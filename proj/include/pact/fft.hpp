#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "pact/core.hpp"
#include "pact/geometry.hpp"

namespace pact {

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Real-to-complex / complex-to-real transform pair of fixed length.
/// Plans are created under a global lock; execution is thread-safe.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n < 2) throw Error("RealFft: length must be >= 2");
    std::vector<double> real(n);
    std::vector<std::complex<double>> spec(bins());
    auto* c = reinterpret_cast<fftw_complex*>(spec.data());
    std::lock_guard lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), c,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), c, real.data(),
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (forward_ == nullptr || inverse_ == nullptr) throw Error("RealFft: FFTW planning failed");
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// Unnormalised forward transform: `in` has size() samples, `out` bins() values.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const {
    // FFTW's r2c never writes its input; the cast only satisfies the C signature.
    fftw_execute_dft_r2c(forward_, const_cast<double*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.data()));
  }

  /// Inverse transform scaled by 1/n. `spectrum` is used as scratch and clobbered.
  void inverse(std::span<std::complex<double>> spectrum, std::span<double> out) const {
    fftw_execute_dft_c2r(inverse_, reinterpret_cast<fftw_complex*>(spectrum.data()), out.data());
    const double s = 1.0 / static_cast<double>(n_);
    for (double& v : out) v *= s;
  }

 private:
  std::size_t n_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

/// Shared transform for length n (cached for the process lifetime).
inline const RealFft& fft_for(std::size_t n) {
  static std::mutex m;
  static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
  std::lock_guard lock(m);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

/// Smallest 2,3,5-smooth length >= n.
inline std::size_t smooth_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 2);; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

/// Frequency sampling of a zero-padded real transform: f_l = l * df, l < n_bins.
struct FrequencyGrid {
  std::size_t n_fft = 0;
  std::size_t n_bins = 0;
  double df = 0.0;  ///< MHz when dt is in µs

  double frequency(std::size_t l) const { return static_cast<double>(l) * df; }
};

/// Padding of at least 2 N_t keeps the circular wrap of a non-compact filter out of the window.
inline FrequencyGrid frequency_grid(const SystemConfig& cfg) {
  FrequencyGrid g;
  g.n_fft = smooth_size(2 * cfg.n_samples);
  g.n_bins = g.n_fft / 2 + 1;
  g.df = 1.0 / (static_cast<double>(g.n_fft) * cfg.dt);
  return g;
}

}  // namespace pact
