#pragma once

#include <span>
#include <string>
#include <vector>

#include "pact/core.hpp"
#include "pact/geometry.hpp"

namespace pact {

/// Measurement data laid out N_r x N_v x N_t (element, view, time), row-major.
class PressureTensor {
 public:
  PressureTensor() = default;
  PressureTensor(std::size_t n_elements, std::size_t n_views, std::size_t n_samples,
                 std::string config_hash = {})
      : n_elements_(n_elements),
        n_views_(n_views),
        n_samples_(n_samples),
        config_hash_(std::move(config_hash)),
        data_(n_elements * n_views * n_samples, 0.0) {}

  static PressureTensor zeros_like(const SystemConfig& cfg) {
    return PressureTensor(cfg.n_elements, cfg.n_views, cfg.n_samples, pact::config_hash(cfg));
  }

  std::size_t n_elements() const { return n_elements_; }
  std::size_t n_views() const { return n_views_; }
  std::size_t n_samples() const { return n_samples_; }
  std::size_t size() const { return data_.size(); }
  const std::string& config_hash() const { return config_hash_; }
  void set_config_hash(std::string h) { config_hash_ = std::move(h); }

  std::span<double> trace(std::size_t element, std::size_t view) {
    return {data_.data() + (element * n_views_ + view) * n_samples_, n_samples_};
  }
  std::span<const double> trace(std::size_t element, std::size_t view) const {
    return {data_.data() + (element * n_views_ + view) * n_samples_, n_samples_};
  }
  double& at(std::size_t element, std::size_t view, std::size_t sample) {
    return data_[(element * n_views_ + view) * n_samples_ + sample];
  }
  double at(std::size_t element, std::size_t view, std::size_t sample) const {
    return data_[(element * n_views_ + view) * n_samples_ + sample];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const PressureTensor& o) const {
    return n_elements_ == o.n_elements_ && n_views_ == o.n_views_ && n_samples_ == o.n_samples_;
  }
  bool matches(const SystemConfig& cfg) const {
    return n_elements_ == cfg.n_elements && n_views_ == cfg.n_views &&
           n_samples_ == cfg.n_samples;
  }

  PressureTensor& operator+=(const PressureTensor& o) {
    if (!same_shape(o)) throw Error("PressureTensor: shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  PressureTensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// Copy rotated by `shift` views: out(e, v) = in(e, v - shift mod N_v).
  PressureTensor rotated_views(std::ptrdiff_t shift) const {
    PressureTensor out(n_elements_, n_views_, n_samples_, config_hash_);
    const auto nv = static_cast<std::ptrdiff_t>(n_views_);
    for (std::size_t e = 0; e < n_elements_; ++e)
      for (std::size_t v = 0; v < n_views_; ++v) {
        const auto src = static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(v) - shift) % nv + nv) % nv);
        auto from = trace(e, src);
        std::copy(from.begin(), from.end(), out.trace(e, v).begin());
      }
    return out;
  }

 private:
  std::size_t n_elements_ = 0;
  std::size_t n_views_ = 0;
  std::size_t n_samples_ = 0;
  std::string config_hash_;
  std::vector<double> data_;
};

/// Reconstructed image on a voxel grid.
struct Volume {
  VoxelGrid grid;
  std::vector<double> data;

  Volume() = default;
  explicit Volume(const VoxelGrid& g) : grid(g), data(g.size(), 0.0) {}

  double& at(std::size_t i, std::size_t j, std::size_t k) { return data[grid.index(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data[grid.index(i, j, k)]; }
};

}  // namespace pact
