#pragma once

// Deconv-Net: a bank of parameterised Wiener deconvolution kernels followed by a
// softmax-weighted synthesis network. Forward and backward passes are explicit.

#include <array>
#include <cmath>
#include <complex>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pact/core.hpp"
#include "pact/fft.hpp"
#include "pact/forward.hpp"
#include "pact/geometry.hpp"
#include "pact/nn.hpp"
#include "pact/tensor.hpp"

namespace pact {

/// One learnable SIR kernel: source position in the element frame and log(lambda).
struct SirKernel {
  Vec3 local{0.0, 0.0, 85.0};
  double log_lambda = std::log(1e-2);

  double lambda() const { return std::exp(log_lambda); }
  static SirKernel make(const Vec3& local, double lambda) { return {local, std::log(lambda)}; }
};

struct PatchSpec {
  std::size_t n_elements = 32;
  std::size_t n_views = 32;
  std::size_t stride_elements = 32;
  std::size_t stride_views = 32;

  void validate(const SystemConfig& cfg) const {
    if (n_elements < 1 || n_elements > cfg.n_elements)
      throw Error("PatchSpec: element extent must be in [1, N_r]");
    if (n_views < 1 || n_views > cfg.n_views) throw Error("PatchSpec: view extent must be in [1, N_v]");
    if (stride_elements < 1 || stride_views < 1) throw Error("PatchSpec: strides must be positive");
  }
  bool operator==(const PatchSpec&) const = default;
};

struct SynthesisNetSpec {
  std::vector<std::size_t> widths{16, 32, 64};
  std::array<std::size_t, 3> footprint{3, 3, 3};
  bool cyclic_views = true;

  std::size_t depth() const { return widths.size(); }
  void validate() const {
    if (widths.empty()) throw Error("SynthesisNetSpec: at least one level required");
    for (auto w : widths)
      if (w == 0) throw Error("SynthesisNetSpec: zero channel width");
    for (auto k : footprint)
      if (k % 2 == 0) throw Error("SynthesisNetSpec: footprint must be odd per axis");
  }
  bool operator==(const SynthesisNetSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Wiener layer

/// Sampled kernel response with what the backward pass needs.
struct KernelResponse {
  std::vector<double> h;        ///< H_l
  std::vector<double> filter;   ///< H_l / (H_l^2 + lambda)
  std::vector<double> sx, sy;   ///< sinc factors
  std::vector<double> dsx, dsy; ///< l * sinc'(alpha l)
  double lambda = 0.0;
};

namespace detail {
inline double sinc_derivative(double u) {
  if (std::abs(u) < 1e-3) return -u / 3.0 + u * u * u / 30.0;
  return (std::cos(u) - std::sin(u) / u) / u;
}
}  // namespace detail

inline KernelResponse kernel_response(const SirKernel& k, const SystemConfig& cfg,
                                      const FrequencyGrid& freqs, bool derivatives = false) {
  const double dist = norm(k.local);
  if (!(dist > 0.0)) throw Error("SirKernel: local position must be nonzero");
  KernelResponse r;
  r.lambda = k.lambda();
  const double scale = kPi * freqs.df / (cfg.sos * dist);
  const double ax = cfg.elem_a * k.local.x * scale;
  const double ay = cfg.elem_b * k.local.y * scale;
  r.sx.resize(freqs.n_bins);
  r.sy.resize(freqs.n_bins);
  sinc_series(ax, r.sx);
  sinc_series(ay, r.sy);
  r.h.resize(freqs.n_bins);
  r.filter.resize(freqs.n_bins);
  for (std::size_t l = 0; l < freqs.n_bins; ++l) {
    r.h[l] = r.sx[l] * r.sy[l];
    const double den = r.h[l] * r.h[l] + r.lambda;
    r.filter[l] = den > 0.0 ? r.h[l] / den : 0.0;
  }
  if (derivatives) {
    r.dsx.resize(freqs.n_bins);
    r.dsy.resize(freqs.n_bins);
    for (std::size_t l = 0; l < freqs.n_bins; ++l) {
      const double fl = static_cast<double>(l);
      r.dsx[l] = fl * detail::sinc_derivative(ax * fl);
      r.dsy[l] = fl * detail::sinc_derivative(ay * fl);
    }
  }
  return r;
}

/// H X / (H^2 + lambda) on the zero-padded transform, truncated back to N_t.
inline std::vector<double> wiener_deconvolve(std::span<const double> trace, const SirKernel& kernel,
                                             const SystemConfig& cfg, const FrequencyGrid& freqs) {
  if (trace.size() > freqs.n_fft) throw Error("wiener_deconvolve: trace longer than transform");
  const auto resp = kernel_response(kernel, cfg, freqs);
  const RealFft& fft = fft_for(freqs.n_fft);
  std::vector<double> buf(freqs.n_fft, 0.0);
  std::copy(trace.begin(), trace.end(), buf.begin());
  std::vector<std::complex<double>> spec(freqs.n_bins);
  fft.forward(buf, spec);
  for (std::size_t l = 0; l < freqs.n_bins; ++l) spec[l] *= resp.filter[l];
  fft.inverse(spec, buf);
  buf.resize(trace.size());
  return buf;
}

/// Applies a real frequency response to a trace (zero-padded linear filtering).
inline std::vector<double> apply_response(std::span<const double> trace, std::span<const double> h,
                                          const FrequencyGrid& freqs) {
  const RealFft& fft = fft_for(freqs.n_fft);
  std::vector<double> buf(freqs.n_fft, 0.0);
  std::copy(trace.begin(), trace.end(), buf.begin());
  std::vector<std::complex<double>> spec(freqs.n_bins);
  fft.forward(buf, spec);
  for (std::size_t l = 0; l < freqs.n_bins; ++l) spec[l] *= h[l];
  fft.inverse(spec, buf);
  buf.resize(trace.size());
  return buf;
}

/// Channel k of the result is wiener_deconvolve of every trace with kernel k.
template <typename T = double>
nn::Field<T> deconvolve_patch(const nn::Field<T>& patch, std::span<const SirKernel> bank,
                              const SystemConfig& cfg) {
  if (bank.empty()) throw Error("deconvolve_patch: empty kernel bank");
  if (patch.channels != 1) throw Error("deconvolve_patch: patch must have one channel");
  const FrequencyGrid freqs = frequency_grid(cfg);
  if (patch.samples != cfg.n_samples) throw Error("deconvolve_patch: trace length mismatch");
  std::vector<KernelResponse> resp;
  for (const auto& k : bank) resp.push_back(kernel_response(k, cfg, freqs));
  nn::Field<T> out(bank.size(), patch.elements, patch.views, patch.samples);
  const RealFft& fft = fft_for(freqs.n_fft);
  parallel_for(patch.elements * patch.views, [&](std::size_t tr) {
    const std::size_t e = tr / patch.views, v = tr % patch.views;
    std::vector<double> buf(freqs.n_fft, 0.0);
    std::vector<std::complex<double>> x(freqs.n_bins), y(freqs.n_bins);
    const T* src = patch.row_ptr(0, e, v);
    for (std::size_t t = 0; t < patch.samples; ++t) buf[t] = static_cast<double>(src[t]);
    fft.forward(buf, x);
    for (std::size_t k = 0; k < bank.size(); ++k) {
      for (std::size_t l = 0; l < freqs.n_bins; ++l) y[l] = x[l] * resp[k].filter[l];
      fft.inverse(y, buf);
      T* dst = out.row_ptr(k, e, v);
      for (std::size_t t = 0; t < patch.samples; ++t) dst[t] = static_cast<T>(buf[t]);
    }
  });
  return out;
}

/// sum_c weights_c * joint_c; weights must be a partition of unity per index.
template <typename T>
nn::Field<T> synthesize(const nn::Field<T>& joint, const nn::Field<T>& weights) {
  if (!joint.same_shape(weights)) throw Error("synthesize: joint and weights differ in shape");
  nn::Field<T> out(1, joint.elements, joint.views, joint.samples);
  const std::size_t plane = joint.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    double wsum = 0.0;
    T acc = T(0);
    for (std::size_t c = 0; c < joint.channels; ++c) {
      const T w = weights.data[c * plane + i];
      if (w < T(0)) throw Error("synthesize: negative weight");
      wsum += static_cast<double>(w);
      acc += w * joint.data[c * plane + i];
    }
    if (std::abs(wsum - 1.0) > 1e-5) throw Error("synthesize: weights do not sum to one");
    out.data[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis network: small encoder-decoder with skip connections.

template <typename T>
struct NetCache {
  nn::Field<T> input;
  nn::Field<T> stem;
  std::vector<nn::Field<T>> down;  ///< index l >= 1
  std::vector<nn::Field<T>> enc;
  std::vector<nn::Field<T>> cat;   ///< index l <= depth - 2
  std::vector<nn::Field<T>> dec;
  nn::Field<T> logits;
};

template <typename T>
class SynthesisNet {
 public:
  SynthesisNet() = default;
  SynthesisNet(const SynthesisNetSpec& spec, std::size_t channels) : spec_(spec), channels_(channels) {
    spec.validate();
    const auto& w = spec.widths;
    const std::size_t depth = w.size();
    auto conv = [&](std::string name, std::size_t in, std::size_t out, std::array<std::size_t, 3> k,
                    std::array<std::size_t, 3> stride) {
      return nn::Conv3d<T>(std::move(name), nn::ConvShape{in, out, k, stride, spec.cyclic_views});
    };
    const std::array<std::size_t, 3> one{1, 1, 1}, two{2, 2, 2};
    stem_ = conv("stem", channels, w[0], one, one);
    down_.resize(depth);
    enc_.resize(depth);
    dec_.resize(depth > 0 ? depth - 1 : 0);
    enc_[0] = conv("enc0", w[0], w[0], spec.footprint, one);
    for (std::size_t l = 1; l < depth; ++l) {
      down_[l] = conv("down" + std::to_string(l), w[l - 1], w[l], spec.footprint, two);
      enc_[l] = conv("enc" + std::to_string(l), w[l], w[l], spec.footprint, one);
    }
    for (std::size_t l = 0; l + 1 < depth; ++l)
      dec_[l] = conv("dec" + std::to_string(l), w[l + 1] + w[l], w[l], spec.footprint, one);
    head_ = conv("head", w[0], channels, one, one);
  }

  const SynthesisNetSpec& spec() const { return spec_; }
  std::size_t channels() const { return channels_; }

  std::vector<nn::Conv3d<T>*> layers() {
    std::vector<nn::Conv3d<T>*> out{&stem_, &enc_[0]};
    for (std::size_t l = 1; l < enc_.size(); ++l) {
      out.push_back(&down_[l]);
      out.push_back(&enc_[l]);
    }
    for (auto& d : dec_) out.push_back(&d);
    out.push_back(&head_);
    return out;
  }
  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for (auto* layer : layers()) {
      out.push_back(&layer->weight());
      out.push_back(&layer->bias());
    }
    return out;
  }
  std::vector<const nn::Param<T>*> params() const {
    std::vector<const nn::Param<T>*> out;
    for (auto* p : const_cast<SynthesisNet*>(this)->params()) out.push_back(p);
    return out;
  }

  void init(std::mt19937_64& rng) {
    for (auto* layer : layers()) layer->init(rng, layer == &head_ ? 1.0 : std::sqrt(2.0));
  }

  nn::Field<T> forward(const nn::Field<T>& joint, NetCache<T>* cache) const {
    NetCache<T> local;
    NetCache<T>& c = cache ? *cache : local;
    const std::size_t depth = spec_.depth();
    c.input = joint;
    c.stem = stem_.forward(joint);
    nn::leaky_relu_inplace(c.stem);
    c.enc.assign(depth, {});
    c.down.assign(depth, {});
    c.enc[0] = enc_[0].forward(c.stem);
    nn::leaky_relu_inplace(c.enc[0]);
    for (std::size_t l = 1; l < depth; ++l) {
      c.down[l] = down_[l].forward(c.enc[l - 1]);
      nn::leaky_relu_inplace(c.down[l]);
      c.enc[l] = enc_[l].forward(c.down[l]);
      nn::leaky_relu_inplace(c.enc[l]);
    }
    c.cat.assign(depth > 0 ? depth - 1 : 0, {});
    c.dec.assign(depth > 0 ? depth - 1 : 0, {});
    for (std::size_t l = depth - 1; l-- > 0;) {
      const nn::Field<T>& below = l + 2 == depth ? c.enc[l + 1] : c.dec[l + 1];
      c.cat[l] = nn::concat(nn::upsample_to(below, c.enc[l].spatial()), c.enc[l]);
      c.dec[l] = dec_[l].forward(c.cat[l]);
      nn::leaky_relu_inplace(c.dec[l]);
    }
    const nn::Field<T>& top = depth > 1 ? c.dec[0] : c.enc[0];
    nn::Field<T> logits = head_.forward(top);
    if (!cache) return logits;
    c.logits = logits;
    return logits;
  }

  /// Accumulates parameter gradients; returns d(loss)/d(joint).
  nn::Field<T> backward(const NetCache<T>& c, const nn::Field<T>& grad_logits) {
    const std::size_t depth = spec_.depth();
    const auto& w = spec_.widths;
    std::vector<nn::Field<T>> g_enc(depth);
    for (std::size_t l = 0; l < depth; ++l)
      g_enc[l] = nn::Field<T>(w[l], c.enc[l].elements, c.enc[l].views, c.enc[l].samples);

    nn::Field<T> g;
    head_.backward(depth > 1 ? c.dec[0] : c.enc[0], grad_logits, &g);
    if (depth == 1) add_into(g_enc[0], g);
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      nn::leaky_relu_backward(c.dec[l], g);
      nn::Field<T> g_cat;
      dec_[l].backward(c.cat[l], g, &g_cat);
      const nn::Field<T>& below = l + 2 == depth ? c.enc[l + 1] : c.dec[l + 1];
      nn::Field<T> g_up(w[l + 1], g_cat.elements, g_cat.views, g_cat.samples);
      const std::size_t split = g_up.data.size();
      std::copy(g_cat.data.begin(), g_cat.data.begin() + static_cast<std::ptrdiff_t>(split), g_up.data.begin());
      for (std::size_t i = 0; i < g_enc[l].data.size(); ++i) g_enc[l].data[i] += g_cat.data[split + i];
      g = nn::upsample_backward(g_up, below.spatial());
      if (l + 2 == depth) add_into(g_enc[l + 1], g);
    }
    nn::Field<T> g_input;
    for (std::size_t l = depth; l-- > 0;) {
      nn::Field<T>& ge = g_enc[l];
      nn::leaky_relu_backward(c.enc[l], ge);
      nn::Field<T> g_in;
      enc_[l].backward(l == 0 ? c.stem : c.down[l], ge, &g_in);
      if (l > 0) {
        nn::leaky_relu_backward(c.down[l], g_in);
        nn::Field<T> g_prev;
        down_[l].backward(c.enc[l - 1], g_in, &g_prev);
        add_into(g_enc[l - 1], g_prev);
      } else {
        nn::leaky_relu_backward(c.stem, g_in);
        stem_.backward(c.input, g_in, &g_input);
      }
    }
    return g_input;
  }

 private:
  static void add_into(nn::Field<T>& dst, const nn::Field<T>& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  }

  SynthesisNetSpec spec_;
  std::size_t channels_ = 0;
  nn::Conv3d<T> stem_, head_;
  std::vector<nn::Conv3d<T>> down_, enc_, dec_;
};

// ---------------------------------------------------------------------------
// Model

template <typename T = float>
struct DeconvNetModel {
  SystemConfig system;
  std::vector<SirKernel> kernels;
  PatchSpec patch;
  SynthesisNet<T> net;
  std::string config_hash;
  /// d(loss)/d(local.x, local.y, local.z, log_lambda) per kernel.
  std::vector<std::array<double, 4>> kernel_grad;

  std::size_t n_kernels() const { return kernels.size(); }
  void zero_grad() {
    kernel_grad.assign(kernels.size(), {0.0, 0.0, 0.0, 0.0});
    for (auto* p : net.params()) p->zero_grad();
  }
  bool all_finite() const {
    for (const auto& k : kernels)
      if (!std::isfinite(k.local.x) || !std::isfinite(k.local.y) || !std::isfinite(k.local.z) ||
          !std::isfinite(k.log_lambda))
        return false;
    for (const auto* p : net.params())
      for (T v : p->value)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

/// Latin-hypercube placement of kernel sources over |x|, |y| <= 60 mm, z in [25, 145] mm.
template <typename T = float>
DeconvNetModel<T> init_model(std::size_t n_kernels, const PatchSpec& patch, std::uint64_t seed,
                             const SystemConfig& cfg = {}, const SynthesisNetSpec& net = {},
                             double lambda0 = 1e-2) {
  if (n_kernels < 1) throw Error("init_model: K must be at least 1");
  cfg.validate();
  patch.validate(cfg);
  net.validate();
  std::mt19937_64 rng(substream_seed(seed, 0x6b65726e, 0));
  DeconvNetModel<T> m;
  m.system = cfg;
  m.patch = patch;
  m.config_hash = config_hash(cfg);
  const std::array<std::pair<double, double>, 3> range{{{-60.0, 60.0}, {-60.0, 60.0}, {25.0, 145.0}}};
  std::array<std::vector<double>, 3> coords;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<std::size_t> perm(n_kernels);
    for (std::size_t i = 0; i < n_kernels; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n_kernels; ++i) {
      const double frac = (static_cast<double>(perm[i]) + u(rng)) / static_cast<double>(n_kernels);
      coords[a].push_back(range[a].first + frac * (range[a].second - range[a].first));
    }
  }
  for (std::size_t k = 0; k < n_kernels; ++k)
    m.kernels.push_back(SirKernel::make({coords[0][k], coords[1][k], coords[2][k]}, lambda0));
  m.net = SynthesisNet<T>(net, n_kernels + 1);
  std::mt19937_64 net_rng(substream_seed(seed, 0x6e6574, 0));
  m.net.init(net_rng);
  m.zero_grad();
  return m;
}

/// Everything the backward pass of one patch needs.
template <typename T>
struct PatchPass {
  std::vector<KernelResponse> responses;
  std::vector<std::vector<std::complex<double>>> spectra;  ///< per trace, input transform
  nn::Field<T> joint;
  NetCache<T> net;
  nn::Field<T> weights;
  nn::Field<T> output;
};

template <typename T>
PatchPass<T> run_patch(const DeconvNetModel<T>& model, const nn::Field<T>& patch_in, bool keep_cache) {
  const PatchSpec& ps = model.patch;
  if (patch_in.channels != 1 || patch_in.elements != ps.n_elements || patch_in.views != ps.n_views ||
      patch_in.samples != model.system.n_samples)
    throw Error("forward_patch: patch shape does not match the model");
  const SystemConfig& cfg = model.system;
  const FrequencyGrid freqs = frequency_grid(cfg);
  const RealFft& fft = fft_for(freqs.n_fft);
  const std::size_t K = model.kernels.size();
  PatchPass<T> pass;
  for (const auto& k : model.kernels) pass.responses.push_back(kernel_response(k, cfg, freqs, keep_cache));
  const std::size_t n_tr = patch_in.elements * patch_in.views;
  if (keep_cache) pass.spectra.assign(n_tr, {});
  pass.joint = nn::Field<T>(K + 1, patch_in.elements, patch_in.views, patch_in.samples);
  parallel_for(n_tr, [&](std::size_t tr) {
    const std::size_t e = tr / patch_in.views, v = tr % patch_in.views;
    std::vector<double> buf(freqs.n_fft, 0.0);
    std::vector<std::complex<double>> x(freqs.n_bins), y(freqs.n_bins);
    const T* src = patch_in.row_ptr(0, e, v);
    for (std::size_t t = 0; t < patch_in.samples; ++t) buf[t] = static_cast<double>(src[t]);
    fft.forward(buf, x);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& f = pass.responses[k].filter;
      for (std::size_t l = 0; l < freqs.n_bins; ++l) y[l] = x[l] * f[l];
      fft.inverse(y, buf);
      T* dst = pass.joint.row_ptr(k, e, v);
      for (std::size_t t = 0; t < patch_in.samples; ++t) dst[t] = static_cast<T>(buf[t]);
    }
    std::copy(src, src + patch_in.samples, pass.joint.row_ptr(K, e, v));
    if (keep_cache) pass.spectra[tr] = std::move(x);
  });
  const nn::Field<T> logits = model.net.forward(pass.joint, keep_cache ? &pass.net : nullptr);
  pass.weights = nn::softmax_channels(logits);
  pass.output = synthesize(pass.joint, pass.weights);
  return pass;
}

template <typename T>
nn::Field<T> forward_patch(const DeconvNetModel<T>& model, const nn::Field<T>& patch_in) {
  return run_patch(model, patch_in, false).output;
}

/// Accumulates all parameter gradients of the model for d(loss)/d(output) = grad_out.
template <typename T>
void backward_patch(DeconvNetModel<T>& model, const PatchPass<T>& pass, const nn::Field<T>& grad_out) {
  const std::size_t K = model.kernels.size();
  const nn::Field<T>& joint = pass.joint;
  const std::size_t plane = joint.plane();
  if (grad_out.data.size() != plane) throw Error("backward_patch: gradient shape mismatch");
  if (pass.spectra.empty()) throw Error("backward_patch: forward pass ran without cache");

  // Synthesis: d/dW_c = g J_c, direct d/dJ_c = g W_c.
  nn::Field<T> g_w(joint.channels, joint.elements, joint.views, joint.samples);
  nn::Field<T> g_joint(joint.channels, joint.elements, joint.views, joint.samples);
  for (std::size_t c = 0; c < joint.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      g_w.data[c * plane + i] = grad_out.data[i] * joint.data[c * plane + i];
      g_joint.data[c * plane + i] = grad_out.data[i] * pass.weights.data[c * plane + i];
    }
  const nn::Field<T> g_logits = nn::softmax_backward(pass.weights, g_w);
  const nn::Field<T> g_net_in = model.net.backward(pass.net, g_logits);
  for (std::size_t i = 0; i < g_joint.data.size(); ++i) g_joint.data[i] += g_net_in.data[i];

  // Wiener layer: y = irfft(M X) truncated; dL/dM_l = c_l Re(conj(G_l) X_l) / N.
  const SystemConfig& cfg = model.system;
  const FrequencyGrid freqs = frequency_grid(cfg);
  const RealFft& fft = fft_for(freqs.n_fft);
  const double inv_n = 1.0 / static_cast<double>(freqs.n_fft);
  if (model.kernel_grad.size() != K) model.kernel_grad.assign(K, {0.0, 0.0, 0.0, 0.0});
  parallel_for(K, [&](std::size_t k) {
    std::vector<double> buf(freqs.n_fft, 0.0);
    std::vector<std::complex<double>> gs(freqs.n_bins);
    std::vector<double> dm(freqs.n_bins, 0.0);
    for (std::size_t tr = 0; tr < pass.spectra.size(); ++tr) {
      const std::size_t e = tr / joint.views, v = tr % joint.views;
      const T* g = g_joint.row_ptr(k, e, v);
      for (std::size_t t = 0; t < joint.samples; ++t) buf[t] = static_cast<double>(g[t]);
      std::fill(buf.begin() + static_cast<std::ptrdiff_t>(joint.samples), buf.end(), 0.0);
      fft.forward(buf, gs);
      const auto& x = pass.spectra[tr];
      for (std::size_t l = 0; l < freqs.n_bins; ++l)
        dm[l] += gs[l].real() * x[l].real() + gs[l].imag() * x[l].imag();
    }
    const KernelResponse& r = pass.responses[k];
    const bool even = freqs.n_fft % 2 == 0;
    double d_lambda = 0.0, a_x = 0.0, a_y = 0.0;
    for (std::size_t l = 0; l < freqs.n_bins; ++l) {
      const double mult = (l == 0 || (even && l + 1 == freqs.n_bins)) ? 1.0 : 2.0;
      const double dl_dm = mult * inv_n * dm[l];
      const double h2 = r.h[l] * r.h[l];
      const double den = h2 + r.lambda;
      const double dl_dh = dl_dm * (r.lambda - h2) / (den * den);
      d_lambda += dl_dm * (-r.h[l] / (den * den));
      a_x += dl_dh * r.dsx[l] * r.sy[l];
      a_y += dl_dh * r.sx[l] * r.dsy[l];
    }
    const Vec3& p = model.kernels[k].local;
    const double rho = norm(p);
    const double cx = cfg.elem_a * kPi * freqs.df / cfg.sos;
    const double cy = cfg.elem_b * kPi * freqs.df / cfg.sos;
    const double r3 = rho * rho * rho;
    // grad(x / rho) and grad(y / rho)
    const Vec3 gx{1.0 / rho - p.x * p.x / r3, -p.x * p.y / r3, -p.x * p.z / r3};
    const Vec3 gy{-p.y * p.x / r3, 1.0 / rho - p.y * p.y / r3, -p.y * p.z / r3};
    auto& kg = model.kernel_grad[k];
    kg[0] += a_x * cx * gx.x + a_y * cy * gy.x;
    kg[1] += a_x * cx * gx.y + a_y * cy * gy.y;
    kg[2] += a_x * cx * gx.z + a_y * cy * gy.z;
    kg[3] += d_lambda * r.lambda;
  });
}

// ---------------------------------------------------------------------------
// Patches and full-array inference

/// Patch with corner (e0, v0); views wrap cyclically.
template <typename T>
nn::Field<T> extract_patch(const PressureTensor& p, std::size_t e0, std::size_t v0, const PatchSpec& ps) {
  if (e0 + ps.n_elements > p.n_elements()) throw Error("extract_patch: element range out of bounds");
  nn::Field<T> out(1, ps.n_elements, ps.n_views, p.n_samples());
  for (std::size_t e = 0; e < ps.n_elements; ++e)
    for (std::size_t v = 0; v < ps.n_views; ++v) {
      const auto src = p.trace(e0 + e, (v0 + v) % p.n_views());
      T* dst = out.row_ptr(0, e, v);
      for (std::size_t t = 0; t < src.size(); ++t) dst[t] = static_cast<T>(src[t]);
    }
  return out;
}

/// Corners along one axis at multiples of the stride (capped at the extent so
/// nothing is skipped). The cyclic view axis stops once the wrap closes the
/// circle; the element axis ends with a corner clamped to the last element.
inline std::vector<std::size_t> patch_corners(std::size_t n, std::size_t extent, std::size_t stride,
                                              bool cyclic) {
  const std::size_t step = std::min(stride, extent);
  std::vector<std::size_t> c;
  if (cyclic) {
    for (std::size_t s = 0; s < n; s += step) {
      c.push_back(s);
      if (s + extent >= n) break;
    }
    return c;
  }
  for (std::size_t s = 0; s + extent < n; s += step) c.push_back(s);
  c.push_back(n - extent);
  return c;
}

/// Sliding-window inference with uniform averaging of overlapping patches.
template <typename T>
PressureTensor infer_full(const DeconvNetModel<T>& model, const PressureTensor& full) {
  const PatchSpec& ps = model.patch;
  if (ps.n_elements > full.n_elements())
    throw Error("infer_full: patch larger than the array in the element axis");
  if (ps.n_views > full.n_views()) throw Error("infer_full: patch larger than the array in the view axis");
  if (full.n_samples() != model.system.n_samples) throw Error("infer_full: trace length mismatch");
  const auto ec = patch_corners(full.n_elements(), ps.n_elements, ps.stride_elements, false);
  const auto vc = patch_corners(full.n_views(), ps.n_views, ps.stride_views, true);
  PressureTensor out(full.n_elements(), full.n_views(), full.n_samples(), full.config_hash());
  std::vector<std::size_t> count(full.n_elements() * full.n_views(), 0);
  std::mutex m;
  parallel_for(ec.size() * vc.size(), [&](std::size_t idx) {
    const std::size_t e0 = ec[idx / vc.size()], v0 = vc[idx % vc.size()];
    const auto patch = extract_patch<T>(full, e0, v0, ps);
    const auto res = forward_patch(model, patch);
    std::lock_guard lock(m);
    for (std::size_t e = 0; e < ps.n_elements; ++e)
      for (std::size_t v = 0; v < ps.n_views; ++v) {
        const std::size_t vv = (v0 + v) % full.n_views();
        auto dst = out.trace(e0 + e, vv);
        const T* src = res.row_ptr(0, e, v);
        for (std::size_t t = 0; t < dst.size(); ++t) dst[t] += static_cast<double>(src[t]);
        ++count[(e0 + e) * full.n_views() + vv];
      }
  });
  for (std::size_t e = 0; e < full.n_elements(); ++e)
    for (std::size_t v = 0; v < full.n_views(); ++v) {
      const std::size_t c = count[e * full.n_views() + v];
      if (c == 0) throw Error("infer_full: trace not covered by any patch");
      if (c > 1)
        for (double& x : out.trace(e, v)) x /= static_cast<double>(c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
double mae_loss(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw Error("mae_loss: shape mismatch");
  if (pred.empty()) throw Error("mae_loss: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  return acc / static_cast<double>(pred.size());
}

inline double mae_loss(const PressureTensor& pred, const PressureTensor& target) {
  if (!pred.same_shape(target)) throw Error("mae_loss: shape mismatch");
  return mae_loss<double>(pred.data(), target.data());
}

template <typename T>
double mae_loss(const nn::Field<T>& pred, const nn::Field<T>& target) {
  if (!pred.same_shape(target)) throw Error("mae_loss: shape mismatch");
  return mae_loss<T>(pred.data, target.data);
}

/// d(mae)/d(pred); zero at ties.
template <typename T>
nn::Field<T> mae_grad(const nn::Field<T>& pred, const nn::Field<T>& target, double scale = 1.0) {
  nn::Field<T> g(pred.channels, pred.elements, pred.views, pred.samples);
  const T s = static_cast<T>(scale / static_cast<double>(pred.data.size()));
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    const T d = pred.data[i] - target.data[i];
    g.data[i] = d > T(0) ? s : (d < T(0) ? -s : T(0));
  }
  return g;
}

}  // namespace pact
