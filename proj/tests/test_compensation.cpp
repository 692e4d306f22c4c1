#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>

#include "pact/compensation.hpp"
#include "pact/train.hpp"
#include "support.hpp"

using namespace pact;
using pact::fixtures::kCases;
using pact::fixtures::rel_l2;

namespace {

SystemConfig short_config(std::size_t n_e = 4, std::size_t n_v = 8, std::size_t n_t = 256) {
  SystemConfig c = fixtures::tiny_config(n_e, n_v);
  c.n_samples = n_t;
  return c;
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Sum of random sinusoids below f_max under a centred Gaussian envelope.
std::vector<double> band_limited(std::mt19937_64& rng, const SystemConfig& cfg, double f_max) {
  std::uniform_real_distribution<double> f(0.05, f_max), ph(0.0, 2.0 * kPi), a(-1.0, 1.0);
  const double t_mid = 0.5 * cfg.dt * static_cast<double>(cfg.n_samples);
  const double width = 0.08 * cfg.dt * static_cast<double>(cfg.n_samples);
  std::vector<double> out(cfg.n_samples, 0.0);
  for (int k = 0; k < 8; ++k) {
    const double fk = f(rng), pk = ph(rng), ak = a(rng);
    for (std::size_t t = 0; t < out.size(); ++t) {
      const double tt = cfg.dt * static_cast<double>(t);
      const double env = std::exp(-0.5 * (tt - t_mid) * (tt - t_mid) / (width * width));
      out[t] += ak * env * std::cos(2.0 * kPi * fk * tt + pk);
    }
  }
  return out;
}

// Lowest null of the kernel's sinc product, MHz.
double first_null(const SirKernel& k, const SystemConfig& cfg) {
  const double d = norm(k.local);
  const double fx = std::abs(k.local.x) > 0 ? cfg.sos * d / (cfg.elem_a * std::abs(k.local.x)) : 1e30;
  const double fy = std::abs(k.local.y) > 0 ? cfg.sos * d / (cfg.elem_b * std::abs(k.local.y)) : 1e30;
  return std::min(fx, fy);
}

nn::Field<double> random_field(std::mt19937_64& rng, std::size_t c, std::size_t e, std::size_t v,
                               std::size_t t, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nn::Field<double> f(c, e, v, t);
  for (double& x : f.data) x = u(rng);
  return f;
}

PressureTensor random_pressure(std::mt19937_64& rng, const SystemConfig& cfg) {
  std::normal_distribution<double> n(0.0, 1.0);
  PressureTensor p(cfg.n_elements, cfg.n_views, cfg.n_samples, config_hash(cfg));
  for (double& x : p.data()) x = n(rng);
  return p;
}

// Head that puts (almost) all weight on the raw-input channel.
template <typename T>
void make_identity(DeconvNetModel<T>& m) {
  auto* head = m.net.layers().back();
  std::fill(head->weight().value.begin(), head->weight().value.end(), T(0));
  std::fill(head->bias().value.begin(), head->bias().value.end(), T(0));
  head->bias().value[m.n_kernels()] = T(60);
}

SynthesisNetSpec small_net() {
  SynthesisNetSpec s;
  s.widths = {3, 4};
  return s;
}

}  // namespace

TEST(Wiener, FlatKernelScalesByOneOverOnePlusLambda) {
  const SystemConfig cfg = short_config();
  const auto freqs = frequency_grid(cfg);
  std::mt19937_64 rng(1);
  const auto x = band_limited(rng, cfg, 4.0);
  const auto y = wiener_deconvolve(x, SirKernel::make({0, 0, 70}, 0.25), cfg, freqs);
  for (std::size_t t = 0; t < x.size(); ++t) ASSERT_NEAR(y[t], x[t] / 1.25, 1e-12);
}

TEST(Wiener, PropertyRoundTripWithTrueKernel) {
  const SystemConfig cfg = short_config(1, 1, 512);
  const auto freqs = frequency_grid(cfg);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> xy(-8.0, 8.0), z(40.0, 120.0);
  for (int i = 0; i < kCases; ++i) {
    const SirKernel k = SirKernel::make({xy(rng), xy(rng), z(rng)}, 1e-8);
    const double f_max = std::min(0.6 * first_null(k, cfg), 0.4 / cfg.dt);
    const auto x = band_limited(rng, cfg, f_max);
    const auto h = kernel_response(k, cfg, freqs).h;
    const auto back = wiener_deconvolve(apply_response(x, h, freqs), k, cfg, freqs);
    ASSERT_LE(rel_l2(back, x), 1e-3) << "case " << i;
  }
}

TEST(Wiener, PropertyGainBounds) {
  const SystemConfig cfg = short_config(1, 1, 300);
  const auto freqs = frequency_grid(cfg);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> xy(-60.0, 60.0), z(25.0, 145.0), ll(-12.0, 6.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < kCases; ++i) {
    const SirKernel k{{xy(rng), xy(rng), z(rng)}, ll(rng)};
    std::vector<double> x(cfg.n_samples);
    for (double& v : x) v = n(rng);
    const auto y = wiener_deconvolve(x, k, cfg, freqs);
    // |H/(H^2 + lambda)| <= 1/(2 sqrt(lambda)) and <= 1/lambda (|H| <= 1)
    ASSERT_LE(l2(y), l2(x) / (2.0 * std::sqrt(k.lambda())) * (1.0 + 1e-9));
    ASSERT_LE(l2(y), l2(x) / k.lambda() * (1.0 + 1e-9));
  }
}

TEST(Wiener, HugeLambdaVanishes) {
  const SystemConfig cfg = short_config();
  const auto freqs = frequency_grid(cfg);
  std::mt19937_64 rng(4);
  const auto x = band_limited(rng, cfg, 3.0);
  const auto y = wiener_deconvolve(x, SirKernel::make({10, -4, 60}, 1e12), cfg, freqs);
  EXPECT_LE(l2(y), 1e-12 * l2(x));
}

TEST(DeconvolvePatch, MatchesPerTraceAndIsHomogeneous) {
  const SystemConfig cfg = short_config();
  const auto freqs = frequency_grid(cfg);
  std::mt19937_64 rng(5);
  const std::vector<SirKernel> bank{SirKernel::make({3, 1, 50}, 1e-2), SirKernel::make({-20, 9, 90}, 1e-3),
                                    SirKernel::make({0, -30, 120}, 0.5)};
  const auto patch = random_field(rng, 1, 2, 3, cfg.n_samples);
  const auto out = deconvolve_patch(patch, bank, cfg);
  ASSERT_EQ(out.channels, 3u);
  for (std::size_t k = 0; k < bank.size(); ++k)
    for (std::size_t e = 0; e < 2; ++e)
      for (std::size_t v = 0; v < 3; ++v) {
        const auto ref = wiener_deconvolve({patch.row_ptr(0, e, v), cfg.n_samples}, bank[k], cfg, freqs);
        for (std::size_t t = 0; t < cfg.n_samples; ++t) ASSERT_NEAR(out.row_ptr(k, e, v)[t], ref[t], 1e-12);
      }
  auto scaled = patch;
  for (double& x : scaled.data) x *= -3.5;
  const auto out2 = deconvolve_patch(scaled, bank, cfg);
  for (std::size_t i = 0; i < out.data.size(); ++i) ASSERT_NEAR(out2.data[i], -3.5 * out.data[i], 1e-11);
  EXPECT_THROW(deconvolve_patch(patch, std::span<const SirKernel>{}, cfg), Error);
}

TEST(Synthesize, OneHotUniformAndConvex) {
  std::mt19937_64 rng(6);
  const auto joint = random_field(rng, 4, 2, 3, 10);
  nn::Field<double> onehot(4, 2, 3, 10), uniform(4, 2, 3, 10);
  std::fill(onehot.channel(2).begin(), onehot.channel(2).end(), 1.0);
  std::fill(uniform.data.begin(), uniform.data.end(), 0.25);
  const auto a = synthesize(joint, onehot), b = synthesize(joint, uniform);
  const std::size_t plane = joint.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    EXPECT_EQ(a.data[i], joint.data[2 * plane + i]);
    double mean = 0.0;
    for (std::size_t c = 0; c < 4; ++c) mean += 0.25 * joint.data[c * plane + i];
    EXPECT_NEAR(b.data[i], mean, 1e-15);
  }
  for (int n = 0; n < kCases; ++n) {
    const auto w = nn::softmax_channels(random_field(rng, 4, 2, 3, 10, -5.0, 5.0));
    const auto s = synthesize(joint, w);
    for (std::size_t i = 0; i < plane; ++i) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t c = 0; c < 4; ++c) {
        lo = std::min(lo, joint.data[c * plane + i]);
        hi = std::max(hi, joint.data[c * plane + i]);
      }
      ASSERT_GE(s.data[i], lo - 1e-12);
      ASSERT_LE(s.data[i], hi + 1e-12);
    }
  }
  auto bad = uniform;
  bad.data[0] = 0.5;
  EXPECT_THROW(synthesize(joint, bad), Error);
  bad.data[0] = -0.25;
  bad.data[plane] = 0.75;
  EXPECT_THROW(synthesize(joint, bad), Error);
}

TEST(Softmax, PropertySumsToOne) {
  std::mt19937_64 rng(7);
  for (int n = 0; n < kCases; ++n) {
    const auto logits = random_field(rng, 5, 2, 2, 6, -30.0, 30.0);
    const auto w = nn::softmax_channels(logits);
    for (std::size_t i = 0; i < w.plane(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        ASSERT_GE(w.data[c * w.plane() + i], 0.0);
        s += w.data[c * w.plane() + i];
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
    auto shifted = logits;
    for (std::size_t i = 0; i < shifted.plane(); ++i)
      for (std::size_t c = 0; c < 5; ++c) shifted.data[c * shifted.plane() + i] += 100.0 * (i % 3);
    const auto w2 = nn::softmax_channels(shifted);
    for (std::size_t i = 0; i < w.data.size(); ++i) ASSERT_NEAR(w2.data[i], w.data[i], 1e-12);
  }
}

TEST(Softmax, ConstantLogitsAverage) {
  nn::Field<double> logits(4, 1, 2, 3);
  std::fill(logits.data.begin(), logits.data.end(), 7.0);
  for (double w : nn::softmax_channels(logits).data) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(Model, InitIsDeterministicAndStratified) {
  const SystemConfig cfg = short_config();
  const PatchSpec ps{2, 4, 2, 4};
  const auto a = init_model<double>(8, ps, 11, cfg, small_net());
  const auto b = init_model<double>(8, ps, 11, cfg, small_net());
  const auto c = init_model<double>(8, ps, 12, cfg, small_net());
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(a.kernels[k].local, b.kernels[k].local);
    EXPECT_DOUBLE_EQ(a.kernels[k].lambda(), 1e-2);
  }
  EXPECT_NE(a.kernels[0].local, c.kernels[0].local);
  const auto pa = a.net.params(), pb = b.net.params();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);

  // one source per stratum along each axis
  std::array<std::vector<int>, 3> seen;
  for (const auto& k : a.kernels) {
    seen[0].push_back(static_cast<int>((k.local.x + 60.0) / 15.0));
    seen[1].push_back(static_cast<int>((k.local.y + 60.0) / 15.0));
    seen[2].push_back(static_cast<int>((k.local.z - 25.0) / 15.0));
  }
  for (auto& s : seen) {
    std::sort(s.begin(), s.end());
    for (int i = 0; i < 8; ++i) EXPECT_EQ(s[static_cast<std::size_t>(i)], i);
  }
  EXPECT_THROW(init_model<double>(0, ps, 1, cfg), Error);
  EXPECT_THROW(init_model<double>(2, PatchSpec{5, 4, 1, 1}, 1, cfg), Error);
}

TEST(Model, IdentityHeadReturnsInput) {
  const SystemConfig cfg = short_config();
  auto m = init_model<double>(3, PatchSpec{2, 4, 2, 4}, 1, cfg, small_net());
  make_identity(m);
  std::mt19937_64 rng(8);
  const auto x = random_field(rng, 1, 2, 4, cfg.n_samples);
  const auto y = forward_patch(m, x);
  for (std::size_t i = 0; i < x.data.size(); ++i) ASSERT_NEAR(y.data[i], x.data[i], 1e-20 + 1e-20 * std::abs(x.data[i]));
}

TEST(Model, GradientsMatchCentralDifferences) {
  const SystemConfig cfg = short_config(2, 4, 128);
  auto m = init_model<double>(3, PatchSpec{2, 4, 2, 4}, 21, cfg, small_net(), 1e-2);
  std::mt19937_64 rng(9);
  const auto x = random_field(rng, 1, 2, 4, cfg.n_samples);
  const auto w = random_field(rng, 1, 2, 4, cfg.n_samples);
  auto loss = [&](const DeconvNetModel<double>& mm) {
    const auto y = forward_patch(mm, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += w.data[i] * y.data[i];
    return s;
  };
  m.zero_grad();
  backward_patch(m, run_patch(m, x, true), w);
  auto check = [](double analytic, double fd, const std::string& what) {
    const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-8});
    EXPECT_LE(std::abs(analytic - fd) / scale, 1e-3) << what << ": " << analytic << " vs " << fd;
  };
  for (std::size_t k = 0; k < m.n_kernels(); ++k) {
    for (int axis = 0; axis < 4; ++axis) {
      const double h = 1e-4;
      auto up = m, dn = m;
      auto bump = [&](DeconvNetModel<double>& mm, double d) {
        auto& kk = mm.kernels[k];
        if (axis == 0) kk.local.x += d;
        if (axis == 1) kk.local.y += d;
        if (axis == 2) kk.local.z += d;
        if (axis == 3) kk.log_lambda += d;
      };
      bump(up, h);
      bump(dn, -h);
      check(m.kernel_grad[k][static_cast<std::size_t>(axis)], (loss(up) - loss(dn)) / (2.0 * h),
            "kernel " + std::to_string(k) + " axis " + std::to_string(axis));
    }
  }
  const auto params = m.net.params();
  std::uniform_int_distribution<std::size_t> pick_p(0, params.size() - 1);
  for (int n = 0; n < 10; ++n) {
    const std::size_t pi = pick_p(rng);
    std::uniform_int_distribution<std::size_t> pick_i(0, params[pi]->value.size() - 1);
    const std::size_t ii = pick_i(rng);
    const double h = 1e-5;
    auto up = m, dn = m;
    up.net.params()[pi]->value[ii] += h;
    dn.net.params()[pi]->value[ii] -= h;
    check(params[pi]->grad[ii], (loss(up) - loss(dn)) / (2.0 * h), params[pi]->name + "[" + std::to_string(ii) + "]");
  }
}

TEST(Patches, PropertyCornersCoverEveryIndex) {
  std::mt19937_64 rng(10);
  for (int n = 0; n < kCases; ++n) {
    const std::size_t len = 1 + rng() % 40;
    const std::size_t extent = 1 + rng() % len;
    const std::size_t stride = 1 + rng() % (2 * extent);
    for (bool cyclic : {false, true}) {
      std::vector<int> hit(len, 0);
      for (auto c : patch_corners(len, extent, stride, cyclic)) {
        if (!cyclic) {
          ASSERT_LE(c + extent, len);
        }
        for (std::size_t i = 0; i < extent; ++i) ++hit[(c + i) % len];
      }
      for (int h : hit) ASSERT_GE(h, 1);
    }
  }
}

TEST(InferFull, IdentityModelAndTilingAverage) {
  const SystemConfig cfg = short_config(5, 8, 64);
  std::mt19937_64 rng(11);
  const auto p = random_pressure(rng, cfg);
  auto m = init_model<double>(2, PatchSpec{2, 4, 1, 3}, 3, cfg, small_net());
  make_identity(m);
  const auto out = infer_full(m, p);
  for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(out.data()[i], p.data()[i], 1e-12);
  EXPECT_EQ(out.config_hash(), p.config_hash());

  // exact tiling: every trace is produced by exactly one patch
  auto r = init_model<double>(2, PatchSpec{1, 4, 1, 4}, 3, cfg, small_net());
  const auto tiled = infer_full(r, p);
  for (std::size_t e = 0; e < cfg.n_elements; ++e)
    for (std::size_t v0 : {0u, 4u}) {
      const auto res = forward_patch(r, extract_patch<double>(p, e, v0, r.patch));
      for (std::size_t v = 0; v < 4; ++v)
        for (std::size_t t = 0; t < cfg.n_samples; ++t)
          ASSERT_EQ(tiled.trace(e, v0 + v)[t], res.row_ptr(0, 0, v)[t]);
    }
}

TEST(InferFull, OneViewRotationCommutesWithConstantLogits) {
  const SystemConfig cfg = short_config(3, 8, 64);
  std::mt19937_64 rng(12);
  const auto p = random_pressure(rng, cfg);
  // uneven view coverage (corners 0, 2, 4) so the blend weights differ between views
  auto m = init_model<double>(3, PatchSpec{2, 4, 1, 2}, 5, cfg, small_net());
  auto* head = m.net.layers().back();
  std::fill(head->weight().value.begin(), head->weight().value.end(), 0.0);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (double& b : head->bias().value) b = u(rng);
  PressureTensor rot(p.n_elements(), p.n_views(), p.n_samples(), p.config_hash());
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t v = 0; v < 8; ++v) {
      const auto src = p.trace(e, v);
      std::copy(src.begin(), src.end(), rot.trace(e, (v + 1) % 8).begin());
    }
  const auto a = infer_full(m, p), b = infer_full(m, rot);
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t v = 0; v < 8; ++v)
      for (std::size_t t = 0; t < cfg.n_samples; ++t) ASSERT_NEAR(b.trace(e, (v + 1) % 8)[t], a.trace(e, v)[t], 1e-6);
  EXPECT_THROW(infer_full(init_model<double>(1, PatchSpec{2, 4, 1, 1}, 1, cfg), PressureTensor(3, 8, 65)), Error);
  auto big = init_model<double>(1, PatchSpec{3, 4, 1, 1}, 1, cfg);
  EXPECT_THROW(infer_full(big, random_pressure(rng, short_config(2, 8, 64))), Error);
}

TEST(Model, ConstantLogitsGiveChannelMean) {
  const SystemConfig cfg = short_config(2, 4, 64);
  auto m = init_model<double>(3, PatchSpec{2, 4, 2, 4}, 7, cfg, small_net());
  auto* head = m.net.layers().back();
  std::fill(head->weight().value.begin(), head->weight().value.end(), 0.0);
  std::fill(head->bias().value.begin(), head->bias().value.end(), 0.3);
  std::mt19937_64 rng(13);
  const auto x = random_field(rng, 1, 2, 4, cfg.n_samples);
  const auto joint = deconvolve_patch(x, std::span<const SirKernel>(m.kernels), cfg);
  const auto y = forward_patch(m, x);
  const std::size_t plane = x.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    double mean = x.data[i];
    for (std::size_t k = 0; k < 3; ++k) mean += joint.data[k * plane + i];
    ASSERT_NEAR(y.data[i], mean / 4.0, 1e-12);
  }
  // one on-axis kernel with lambda = 0: both channels equal the input
  auto id = init_model<double>(1, PatchSpec{2, 4, 2, 4}, 7, cfg, small_net());
  id.kernels[0] = {{0, 0, 60}, -std::numeric_limits<double>::infinity()};
  const auto z = forward_patch(id, x);
  for (std::size_t i = 0; i < plane; ++i) ASSERT_NEAR(z.data[i], x.data[i], 1e-12);
}

TEST(DeconvolvePatch, IdenticalKernelsGiveIdenticalChannels) {
  const SystemConfig cfg = short_config(2, 2, 64);
  std::mt19937_64 rng(14);
  const auto x = random_field(rng, 1, 2, 2, cfg.n_samples);
  const std::vector<SirKernel> bank(4, SirKernel::make({12, -7, 80}, 3e-3));
  const auto out = deconvolve_patch(x, bank, cfg);
  for (std::size_t k = 1; k < 4; ++k)
    for (std::size_t i = 0; i < out.plane(); ++i) ASSERT_EQ(out.data[k * out.plane() + i], out.data[i]);
}

TEST(Loss, MaeAndGradient) {
  nn::Field<double> a(1, 1, 1, 4), b(1, 1, 1, 4);
  a.data = {1.0, -2.0, 3.0, 0.5};
  b.data = {0.0, 1.0, 3.0, 1.0};
  EXPECT_DOUBLE_EQ(mae_loss(a, b), (1.0 + 3.0 + 0.0 + 0.5) / 4.0);
  EXPECT_EQ(mae_grad(a, b, 2.0).data, (std::vector<double>{0.5, -0.5, 0.0, -0.5}));
  EXPECT_THROW(mae_loss(a, nn::Field<double>(1, 1, 1, 3)), Error);
}

namespace {

PairSource memory_source(const SystemConfig& cfg, std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<PressureTensor, PressureTensor>> data;
  for (std::size_t i = 0; i < n_train + n_val; ++i) {
    auto tgt = random_pressure(rng, cfg);
    auto in = tgt;
    const auto freqs = frequency_grid(cfg);
    const auto h = kernel_response(SirKernel::make({20, 10, 60}, 1.0), cfg, freqs).h;
    for (std::size_t e = 0; e < cfg.n_elements; ++e)
      for (std::size_t v = 0; v < cfg.n_views; ++v) {
        const auto blurred = apply_response(tgt.trace(e, v), h, freqs);
        std::copy(blurred.begin(), blurred.end(), in.trace(e, v).begin());
      }
    data.emplace_back(std::move(in), std::move(tgt));
  }
  PairSource s;
  s.n_train = n_train;
  s.n_val = n_val;
  s.load = [data, n_train](bool val, std::size_t i) { return data.at(val ? n_train + i : i); };
  return s;
}

}  // namespace

TEST(Train, ZeroLearningRateKeepsHistoryFlat) {
  const SystemConfig cfg = short_config(2, 4, 64);
  const auto src = memory_source(cfg, 3, 1, 1);
  TrainParams hp;
  hp.lr = hp.kernel_lr = 0.0;
  hp.max_epochs = 3;
  hp.steps_per_epoch = 2;
  hp.monitor_patches = 2;
  hp.stop_patience = 10;
  const auto m = init_model<double>(2, PatchSpec{2, 4, 2, 4}, 1, cfg, small_net());
  const auto r = train(m, src, hp);
  ASSERT_EQ(r.history.size(), 4u);
  for (const auto& h : r.history) {
    EXPECT_DOUBLE_EQ(h.val_mae, r.history[0].val_mae);
    EXPECT_DOUBLE_EQ(h.train_mae, r.history[0].train_mae);
  }
  EXPECT_EQ(r.best_epoch, 0u);
}

TEST(Train, BestModelNeverWorseThanStart) {
  const SystemConfig cfg = short_config(2, 4, 64);
  const auto src = memory_source(cfg, 4, 2, 2);
  TrainParams hp;
  hp.lr = 3e-3;
  hp.kernel_lr = 3e-2;
  hp.max_epochs = 4;
  hp.steps_per_epoch = 5;
  hp.monitor_patches = 3;
  const auto r = train(init_model<double>(2, PatchSpec{2, 4, 2, 4}, 1, cfg, small_net()), src, hp);
  double best = r.history[0].val_mae;
  for (const auto& h : r.history) best = std::min(best, h.val_mae);
  EXPECT_LE(best, r.history[0].val_mae);
  EXPECT_DOUBLE_EQ(r.history[r.best_epoch].val_mae, best);
  EXPECT_GT(r.identity_val_mae, 0.0);
  hp.batch = 0;
  EXPECT_THROW(train(init_model<double>(2, PatchSpec{2, 4, 2, 4}, 1, cfg, small_net()), src, hp), Error);
}
