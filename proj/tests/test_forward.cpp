#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pact/forward.hpp"
#include "support.hpp"

using namespace pact;
using pact::fixtures::kCases;
using pact::fixtures::rel_l2;

namespace {

// Sphere 45 mm in front of a desk element: both N-wave edges fall on samples
// (45 mm and 1.2 mm are 600 and 16 steps of c0 dt).
struct OnAxis {
  SystemConfig cfg = desk_config("desk");
  TransducerPose pose = build_array(cfg)[pose_index(cfg, 10, 3)];
  Sphere sphere{pose.center + 45.0 * pose.axis_z, 1.2, 0.7};
};

std::vector<Sphere> random_spheres(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-30.0, 30.0), r(0.2, 3.0), a(0.0, 2.0);
  std::vector<Sphere> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back({{u(rng), u(rng), u(rng) - 20.0}, r(rng), a(rng)});
  return s;
}

}  // namespace

TEST(NWave, EndpointAndZeroCrossing) {
  OnAxis c;
  const auto tr = sphere_trace_point(c.sphere, c.pose, c.cfg);
  EXPECT_NEAR(tr[584], 0.7 * 1.2 / (2.0 * 45.0), 1e-12);
  EXPECT_NEAR(tr[600], 0.0, 1e-12);
  EXPECT_NEAR(tr[616], -0.7 * 1.2 / (2.0 * 45.0), 1e-12);
  EXPECT_EQ(tr[583], 0.0);
  EXPECT_EQ(tr[617], 0.0);
}

TEST(NWave, MatchesVolumeIntegralQuadrature) {
  OnAxis c;
  const auto tr = sphere_trace_point(c.sphere, c.pose, c.cfg);
  std::vector<double> times;
  for (double t = 27.0; t <= 33.0; t += 0.01) times.push_back(t);
  const double sigma = 0.1;
  const auto ref = oracle::volume_integral_trace(c.sphere, c.pose.center, c.cfg.sos, times, sigma, 48);
  const auto got = oracle::smooth_interpolant(tr, c.cfg.dt, times, sigma);
  EXPECT_LE(rel_l2(got, ref), 1e-3);
}

TEST(NWave, InteriorObservationRejected) {
  const SystemConfig cfg = desk_config("desk");
  const Sphere s{{0, 0, 0}, 2.0, 1.0};
  EXPECT_THROW(sphere_trace_point(s, Vec3{0.5, 0, 0}, cfg), Error);
}

TEST(Sir, TrivialValues) {
  const SystemConfig cfg = desk_config("desk");
  const auto freqs = frequency_grid(cfg);
  for (double v : sir_spectrum({0, 0, 40}, cfg, freqs)) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(sir_spectrum({7, -3, 40}, cfg, freqs)[0], 1.0);
  EXPECT_THROW(sir_spectrum({0, 0, 0}, cfg, freqs), Error);

  // first null of the a-side sinc: a x pi f / (c0 |r|) = pi at bin l
  const std::size_t l = 400;
  const double f = freqs.frequency(l);
  const double z = 40.0;
  // solve a x f = c0 sqrt(x^2 + z^2) for x
  const double k = cfg.elem_a * f / cfg.sos;
  const double x = z / std::sqrt(k * k - 1.0);
  EXPECT_NEAR(sir_spectrum({x, 0, z}, cfg, freqs)[l], 0.0, 1e-9);
}

TEST(Sir, PropertyMagnitudeAtMostOne) {
  const SystemConfig cfg = desk_config("desk");
  const auto freqs = frequency_grid(cfg);
  std::mt19937_64 rng(3);
  for (int i = 0; i < kCases; ++i) {
    const Vec3 local = fixtures::random_vec(rng, -60.0, 60.0) + Vec3{0, 0, 90.0};
    for (double v : sir_spectrum(local, cfg, freqs)) ASSERT_LE(std::abs(v), 1.0 + 1e-12);
  }
}

TEST(Sir, SeriesMatchesDirectSinc) {
  std::vector<double> out(4000);
  sinc_series(0.0123, out);
  for (std::size_t l = 0; l < out.size(); ++l) ASSERT_NEAR(out[l], sinc(0.0123 * static_cast<double>(l)), 1e-13);
}

TEST(Simulate, ZeroSpheresGiveZeros) {
  const SystemConfig cfg = fixtures::tiny_config();
  for (auto mode : {TransducerModel::point, TransducerModel::rect}) {
    const auto p = simulate(std::vector<Sphere>{}, cfg, mode);
    for (double v : p.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Simulate, PointModeIsTheNWaveAtEachPose) {
  const SystemConfig cfg = fixtures::tiny_config();
  const Sphere s{{4, -3, -20}, 1.5, 0.9};
  const auto p = simulate(std::vector<Sphere>{s}, cfg, TransducerModel::point);
  const auto poses = build_array(cfg);
  for (std::size_t e = 0; e < cfg.n_elements; ++e)
    for (std::size_t v = 0; v < cfg.n_views; ++v) {
      const auto ref = sphere_trace_point(s, poses[pose_index(cfg, e, v)], cfg);
      const auto tr = p.trace(e, v);
      for (std::size_t t = 0; t < ref.size(); ++t) ASSERT_EQ(tr[t], ref[t]);
    }
}

TEST(Simulate, OnAxisRectEqualsPoint) {
  OnAxis c;
  SystemConfig one = c.cfg;
  const auto freqs = frequency_grid(one);
  std::vector<double> rect(one.n_samples);
  detail::RectScratch scratch;
  const std::vector<Sphere> s{c.sphere};
  detail::rect_trace(s, c.pose, one, freqs, fft_for(freqs.n_fft), scratch, rect);
  EXPECT_LE(rel_l2(rect, sphere_trace_point(c.sphere, c.pose, one)), 1e-6);
}

TEST(Simulate, PropertySuperposition) {
  const SystemConfig cfg = fixtures::tiny_config(2, 4);
  std::mt19937_64 rng(5);
  for (int i = 0; i < kCases; ++i) {
    const auto a = random_spheres(rng, 3), b = random_spheres(rng, 2);
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    for (auto mode : {TransducerModel::point, TransducerModel::rect}) {
      const auto pa = simulate(a, cfg, mode), pb = simulate(b, cfg, mode), pab = simulate(ab, cfg, mode);
      for (std::size_t k = 0; k < pab.size(); ++k)
        ASSERT_NEAR(pab.data()[k], pa.data()[k] + pb.data()[k], 1e-9);
    }
  }
}

TEST(Simulate, AmplitudeDoublingIsExact) {
  const SystemConfig cfg = fixtures::tiny_config();
  std::mt19937_64 rng(9);
  auto s = random_spheres(rng, 4);
  auto s2 = s;
  for (auto& x : s2) x.amplitude *= 2.0;
  for (auto mode : {TransducerModel::point, TransducerModel::rect}) {
    const auto p = simulate(s, cfg, mode), p2 = simulate(s2, cfg, mode);
    for (std::size_t k = 0; k < p.size(); ++k) ASSERT_EQ(p2.data()[k], 2.0 * p.data()[k]);
  }
}

TEST(Simulate, RadialShiftDelaysArrival) {
  OnAxis c;
  const double step = c.cfg.sos * c.cfg.dt;
  for (int k : {1, 3, 10}) {
    Sphere moved = c.sphere;
    moved.center = moved.center + (k * step) * c.pose.axis_z;
    const auto a = sphere_trace_point(c.sphere, c.pose, c.cfg);
    const auto b = sphere_trace_point(moved, c.pose, c.cfg);
    // same N-wave shape up to the 1/d amplitude factor, k samples later
    const double gain = 45.0 / (45.0 + k * step);
    for (std::size_t t = 0; t + static_cast<std::size_t>(k) < a.size(); ++t)
      ASSERT_NEAR(b[t + static_cast<std::size_t>(k)], gain * a[t], 1e-9);
  }
}

TEST(Noise, ScaleValues) {
  PressureTensor p(10, 10, 1000);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : p.data()) v = u(rng);
  EXPECT_NEAR(noise_scale(p, 0.0267), 0.0267 * 0.9, 0.0267 * 0.9 * 0.01);
  for (double& v : p.data()) v = -2.5;
  EXPECT_DOUBLE_EQ(noise_scale(p, 0.1), 0.25);
  EXPECT_EQ(noise_scale(p, 0.0), 0.0);
  PressureTensor zero(2, 2, 10);
  EXPECT_THROW(noise_scale(zero, 0.1), Error);
}

TEST(Noise, StatisticsAndDeterminism) {
  PressureTensor p(10, 100, 1000);
  EXPECT_EQ(add_noise(p, 0.0, 4).data(), p.data());
  const auto n = add_noise(p, 1.0, 4);
  double m = 0.0, s = 0.0;
  for (double v : n.data()) m += v;
  m /= static_cast<double>(n.size());
  for (double v : n.data()) s += (v - m) * (v - m);
  const double sd = std::sqrt(s / static_cast<double>(n.size() - 1));
  EXPECT_GE(sd, 0.995);
  EXPECT_LE(sd, 1.005);
  EXPECT_EQ(add_noise(p, 1.0, 4).data(), n.data());
  EXPECT_NE(add_noise(p, 1.0, 5).data(), n.data());
  EXPECT_THROW(add_noise(p, -1.0, 4), Error);
}

TEST(Noise, IndependentOfThreadCount) {
  PressureTensor p(6, 16, 300);
  set_max_threads(1);
  const auto a = add_noise(p, 0.3, 77);
  set_max_threads(4);
  const auto b = add_noise(p, 0.3, 77);
  set_max_threads(0);
  EXPECT_EQ(a.data(), b.data());
}
