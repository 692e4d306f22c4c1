#pragma once

// Minimal layers for the synthesis subnetwork. Activations are 4D fields laid out
// [channel][element][view][time]; every layer has an explicit backward pass.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pact/core.hpp"

namespace pact::nn {

template <typename T>
struct Field {
  std::size_t channels = 0, elements = 0, views = 0, samples = 0;
  std::vector<T> data;

  Field() = default;
  Field(std::size_t c, std::size_t e, std::size_t v, std::size_t t)
      : channels(c), elements(e), views(v), samples(t), data(c * e * v * t, T(0)) {}

  std::size_t plane() const { return elements * views * samples; }
  std::size_t row(std::size_t c, std::size_t e, std::size_t v) const {
    return ((c * elements + e) * views + v) * samples;
  }
  T* row_ptr(std::size_t c, std::size_t e, std::size_t v) { return data.data() + row(c, e, v); }
  const T* row_ptr(std::size_t c, std::size_t e, std::size_t v) const {
    return data.data() + row(c, e, v);
  }
  std::span<T> channel(std::size_t c) { return {data.data() + c * plane(), plane()}; }
  std::span<const T> channel(std::size_t c) const { return {data.data() + c * plane(), plane()}; }
  std::array<std::size_t, 3> spatial() const { return {elements, views, samples}; }
  bool same_shape(const Field& o) const {
    return channels == o.channels && elements == o.elements && views == o.views &&
           samples == o.samples;
  }
};

/// Trainable tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::size_t size) : name(std::move(n)), value(size, T(0)), grad(size, T(0)) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

struct ConvShape {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 3> kernel{3, 3, 3};
  std::array<std::size_t, 3> stride{1, 1, 1};
  bool cyclic_views = true;

  std::size_t out_size(std::size_t axis, std::size_t in) const {
    const std::size_t pad = kernel[axis] / 2;
    return (in + 2 * pad - kernel[axis]) / stride[axis] + 1;
  }
  std::size_t fan_in() const { return in_channels * kernel[0] * kernel[1] * kernel[2]; }
};

namespace detail {
/// in-index for every (out, tap) along one axis; -1 marks zero padding.
inline std::vector<std::ptrdiff_t> tap_map(std::size_t n_in, std::size_t n_out, std::size_t k,
                                           std::size_t stride, bool cyclic) {
  std::vector<std::ptrdiff_t> m(n_out * k);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(n_in);
  for (std::size_t o = 0; o < n_out; ++o)
    for (std::size_t d = 0; d < k; ++d) {
      std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * stride + d) - pad;
      if (cyclic) i = ((i % n) + n) % n;
      else if (i < 0 || i >= n) i = -1;
      m[o * k + d] = i;
    }
  return m;
}
}  // namespace detail

/// 3D convolution over (element, view, time) with "same" padding: zeros in the
/// element and time axes, periodic in the view axis when cyclic_views is set.
template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, const ConvShape& shape)
      : shape_(shape),
        weight_(name + ".weight", shape.out_channels * shape.fan_in()),
        bias_(name + ".bias", shape.out_channels) {}

  const ConvShape& shape() const { return shape_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

  /// Fan-in scaled uniform initialisation (He, leaky-ReLU gain).
  void init(std::mt19937_64& rng, double gain = std::sqrt(2.0)) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(shape_.fan_in()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (T& w : weight_.value) w = static_cast<T>(u(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
  }

  Field<T> forward(const Field<T>& in) const {
    check_input(in);
    const auto& s = shape_;
    Field<T> out(s.out_channels, s.out_size(0, in.elements), s.out_size(1, in.views),
                 s.out_size(2, in.samples));
    const auto em = detail::tap_map(in.elements, out.elements, s.kernel[0], s.stride[0], false);
    const auto vm = detail::tap_map(in.views, out.views, s.kernel[1], s.stride[1], s.cyclic_views);
    const std::size_t kvol = s.kernel[0] * s.kernel[1] * s.kernel[2];
    parallel_for(s.out_channels, [&](std::size_t co) {
      T* dst = out.data.data() + co * out.plane();
      std::fill(dst, dst + out.plane(), bias_.value[co]);
      for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
        const T* w = weight_.value.data() + (co * s.in_channels + ci) * kvol;
        for (std::size_t ke = 0; ke < s.kernel[0]; ++ke)
          for (std::size_t kv = 0; kv < s.kernel[1]; ++kv)
            for (std::size_t eo = 0; eo < out.elements; ++eo) {
              const auto ei = em[eo * s.kernel[0] + ke];
              if (ei < 0) continue;
              for (std::size_t vo = 0; vo < out.views; ++vo) {
                const auto vi = vm[vo * s.kernel[1] + kv];
                if (vi < 0) continue;
                const T* src = in.row_ptr(ci, static_cast<std::size_t>(ei), static_cast<std::size_t>(vi));
                T* o = out.row_ptr(co, eo, vo);
                for (std::size_t kt = 0; kt < s.kernel[2]; ++kt)
                  axpy_time(w[(ke * s.kernel[1] + kv) * s.kernel[2] + kt], src, in.samples, o,
                            out.samples, kt);
              }
            }
      }
    });
    return out;
  }

  /// Accumulates weight/bias gradients; writes d(loss)/d(in) into grad_in when given.
  void backward(const Field<T>& in, const Field<T>& grad_out, Field<T>* grad_in) {
    const auto& s = shape_;
    const auto em = detail::tap_map(in.elements, grad_out.elements, s.kernel[0], s.stride[0], false);
    const auto vm =
        detail::tap_map(in.views, grad_out.views, s.kernel[1], s.stride[1], s.cyclic_views);
    const std::size_t kvol = s.kernel[0] * s.kernel[1] * s.kernel[2];
    parallel_for(s.out_channels, [&](std::size_t co) {
      const std::span<const T> g = grad_out.channel(co);
      T acc = T(0);
      for (T v : g) acc += v;
      bias_.grad[co] += acc;
      for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
        T* gw = weight_.grad.data() + (co * s.in_channels + ci) * kvol;
        for (std::size_t ke = 0; ke < s.kernel[0]; ++ke)
          for (std::size_t kv = 0; kv < s.kernel[1]; ++kv)
            for (std::size_t eo = 0; eo < grad_out.elements; ++eo) {
              const auto ei = em[eo * s.kernel[0] + ke];
              if (ei < 0) continue;
              for (std::size_t vo = 0; vo < grad_out.views; ++vo) {
                const auto vi = vm[vo * s.kernel[1] + kv];
                if (vi < 0) continue;
                const T* src = in.row_ptr(ci, static_cast<std::size_t>(ei), static_cast<std::size_t>(vi));
                const T* go = grad_out.row_ptr(co, eo, vo);
                for (std::size_t kt = 0; kt < s.kernel[2]; ++kt)
                  gw[(ke * s.kernel[1] + kv) * s.kernel[2] + kt] +=
                      dot_time(src, in.samples, go, grad_out.samples, kt);
              }
            }
      }
    });
    if (grad_in == nullptr) return;
    *grad_in = Field<T>(in.channels, in.elements, in.views, in.samples);
    parallel_for(s.in_channels, [&](std::size_t ci) {
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        const T* w = weight_.value.data() + (co * s.in_channels + ci) * kvol;
        for (std::size_t ke = 0; ke < s.kernel[0]; ++ke)
          for (std::size_t kv = 0; kv < s.kernel[1]; ++kv)
            for (std::size_t eo = 0; eo < grad_out.elements; ++eo) {
              const auto ei = em[eo * s.kernel[0] + ke];
              if (ei < 0) continue;
              for (std::size_t vo = 0; vo < grad_out.views; ++vo) {
                const auto vi = vm[vo * s.kernel[1] + kv];
                if (vi < 0) continue;
                T* gi = grad_in->row_ptr(ci, static_cast<std::size_t>(ei), static_cast<std::size_t>(vi));
                const T* go = grad_out.row_ptr(co, eo, vo);
                for (std::size_t kt = 0; kt < s.kernel[2]; ++kt)
                  scatter_time(w[(ke * s.kernel[1] + kv) * s.kernel[2] + kt], go, grad_out.samples,
                               gi, in.samples, kt);
              }
            }
      }
    });
  }

 private:
  void check_input(const Field<T>& in) const {
    if (in.channels != shape_.in_channels) throw Error("Conv3d: input channel mismatch");
  }

  // Valid output range [lo, hi) for time tap kt: 0 <= t*stride + kt - pad < n_in.
  std::pair<std::size_t, std::size_t> time_range(std::size_t n_in, std::size_t n_out,
                                                 std::size_t kt) const {
    const auto pad = static_cast<std::ptrdiff_t>(shape_.kernel[2] / 2);
    const auto st = static_cast<std::ptrdiff_t>(shape_.stride[2]);
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kt) - pad;
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + st - 1) / st;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(n_in) - 1 - off) / st + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n_out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max<std::ptrdiff_t>(hi, lo))};
  }

  void axpy_time(T w, const T* src, std::size_t n_in, T* out, std::size_t n_out,
                 std::size_t kt) const {
    const auto [lo, hi] = time_range(n_in, n_out, kt);
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kt) - static_cast<std::ptrdiff_t>(shape_.kernel[2] / 2);
    if (shape_.stride[2] == 1) {
      const T* s = src + off;
      for (std::size_t t = lo; t < hi; ++t) out[t] += w * s[t];
    } else {
      const std::size_t st = shape_.stride[2];
      for (std::size_t t = lo; t < hi; ++t) out[t] += w * src[static_cast<std::ptrdiff_t>(t * st) + off];
    }
  }

  T dot_time(const T* src, std::size_t n_in, const T* g, std::size_t n_out, std::size_t kt) const {
    const auto [lo, hi] = time_range(n_in, n_out, kt);
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kt) - static_cast<std::ptrdiff_t>(shape_.kernel[2] / 2);
    T acc = T(0);
    if (shape_.stride[2] == 1) {
      const T* s = src + off;
#pragma omp simd reduction(+ : acc)
      for (std::size_t t = lo; t < hi; ++t) acc += g[t] * s[t];
    } else {
      const std::size_t st = shape_.stride[2];
#pragma omp simd reduction(+ : acc)
      for (std::size_t t = lo; t < hi; ++t) acc += g[t] * src[static_cast<std::ptrdiff_t>(t * st) + off];
    }
    return acc;
  }

  void scatter_time(T w, const T* g, std::size_t n_out, T* gi, std::size_t n_in,
                    std::size_t kt) const {
    const auto [lo, hi] = time_range(n_in, n_out, kt);
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kt) - static_cast<std::ptrdiff_t>(shape_.kernel[2] / 2);
    if (shape_.stride[2] == 1) {
      T* d = gi + off;
      for (std::size_t t = lo; t < hi; ++t) d[t] += w * g[t];
    } else {
      const std::size_t st = shape_.stride[2];
      for (std::size_t t = lo; t < hi; ++t) gi[static_cast<std::ptrdiff_t>(t * st) + off] += w * g[t];
    }
  }

  ConvShape shape_;
  Param<T> weight_;
  Param<T> bias_;
};

inline constexpr double kLeakySlope = 0.01;

template <typename T>
void leaky_relu_inplace(Field<T>& f) {
  for (T& v : f.data)
    if (v < T(0)) v *= static_cast<T>(kLeakySlope);
}

/// Backward through leaky ReLU given the activation output.
template <typename T>
void leaky_relu_backward(const Field<T>& out, Field<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (out.data[i] < T(0)) grad.data[i] *= static_cast<T>(kLeakySlope);
}

/// Nearest-neighbour upsampling by 2 per axis, cropped to `target`.
template <typename T>
Field<T> upsample_to(const Field<T>& in, const std::array<std::size_t, 3>& target) {
  Field<T> out(in.channels, target[0], target[1], target[2]);
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t e = 0; e < target[0]; ++e)
      for (std::size_t v = 0; v < target[1]; ++v) {
        const T* src = in.row_ptr(c, std::min(e / 2, in.elements - 1), std::min(v / 2, in.views - 1));
        T* dst = out.row_ptr(c, e, v);
        for (std::size_t t = 0; t < target[2]; ++t) dst[t] = src[std::min(t / 2, in.samples - 1)];
      }
  return out;
}

template <typename T>
Field<T> upsample_backward(const Field<T>& grad_out, const std::array<std::size_t, 3>& in_shape) {
  Field<T> g(grad_out.channels, in_shape[0], in_shape[1], in_shape[2]);
  for (std::size_t c = 0; c < grad_out.channels; ++c)
    for (std::size_t e = 0; e < grad_out.elements; ++e)
      for (std::size_t v = 0; v < grad_out.views; ++v) {
        const T* src = grad_out.row_ptr(c, e, v);
        T* dst = g.row_ptr(c, std::min(e / 2, in_shape[0] - 1), std::min(v / 2, in_shape[1] - 1));
        for (std::size_t t = 0; t < grad_out.samples; ++t)
          dst[std::min(t / 2, in_shape[2] - 1)] += src[t];
      }
  return g;
}

/// Channel concatenation of two fields with identical spatial shape.
template <typename T>
Field<T> concat(const Field<T>& a, const Field<T>& b) {
  if (a.spatial() != b.spatial()) throw Error("concat: spatial shapes differ");
  Field<T> out(a.channels + b.channels, a.elements, a.views, a.samples);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

/// Channel-wise softmax at every (element, view, time) index.
template <typename T>
Field<T> softmax_channels(const Field<T>& logits) {
  Field<T> w(logits.channels, logits.elements, logits.views, logits.samples);
  const std::size_t plane = logits.plane(), nc = logits.channels;
  for (std::size_t i = 0; i < plane; ++i) {
    T mx = logits.data[i];
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, logits.data[c * plane + i]);
    T sum = T(0);
    for (std::size_t c = 0; c < nc; ++c) sum += w.data[c * plane + i] = std::exp(logits.data[c * plane + i] - mx);
    const T inv = T(1) / sum;
    for (std::size_t c = 0; c < nc; ++c) w.data[c * plane + i] *= inv;
  }
  return w;
}

/// d(loss)/d(logits) from d(loss)/d(weights) and the softmax output.
template <typename T>
Field<T> softmax_backward(const Field<T>& weights, const Field<T>& grad_w) {
  Field<T> g(weights.channels, weights.elements, weights.views, weights.samples);
  const std::size_t plane = weights.plane(), nc = weights.channels;
  for (std::size_t i = 0; i < plane; ++i) {
    T inner = T(0);
    for (std::size_t c = 0; c < nc; ++c) inner += weights.data[c * plane + i] * grad_w.data[c * plane + i];
    for (std::size_t c = 0; c < nc; ++c)
      g.data[c * plane + i] = weights.data[c * plane + i] * (grad_w.data[c * plane + i] - inner);
  }
  return g;
}

}  // namespace pact::nn
