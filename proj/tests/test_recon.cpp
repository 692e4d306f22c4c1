#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "pact/forward.hpp"
#include "pact/metrics.hpp"
#include "pact/recon.hpp"
#include "support.hpp"

using namespace pact;
using pact::fixtures::kCases;
using pact::fixtures::rel_l2;

namespace {

// Trilinear sample of a volume at an arbitrary point (zero outside).
double trilinear(const Volume& v, const Vec3& p) {
  const auto& g = v.grid;
  const double fx = (p.x - g.origin.x) / g.spacing, fy = (p.y - g.origin.y) / g.spacing,
               fz = (p.z - g.origin.z) / g.spacing;
  const double f[3] = {fx, fy, fz};
  std::size_t i0[3];
  double w[3];
  for (int a = 0; a < 3; ++a) {
    if (f[a] < 0.0 || f[a] > static_cast<double>(g.dims[a] - 1)) return 0.0;
    i0[a] = std::min(static_cast<std::size_t>(f[a]), g.dims[a] - 2);
    w[a] = f[a] - static_cast<double>(i0[a]);
  }
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const std::size_t di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    acc += (di ? w[0] : 1 - w[0]) * (dj ? w[1] : 1 - w[1]) * (dk ? w[2] : 1 - w[2]) *
           v.at(i0[0] + di, i0[1] + dj, i0[2] + dk);
  }
  return acc;
}

Vec3 rotate_z(const Vec3& p, double rad) {
  return {std::cos(rad) * p.x - std::sin(rad) * p.y, std::sin(rad) * p.x + std::cos(rad) * p.y, p.z};
}

double y_fwhm(const PressureTensor& p, const SystemConfig& cfg, const Sphere& s) {
  const VoxelGrid line = VoxelGrid::centered(s.center, 0.05, {1, 161, 1});
  const auto vol = ubp(p, build_array(cfg), line, cfg.sos, cfg.dt);
  std::vector<double> y(161);
  for (std::size_t j = 0; j < 161; ++j) y[j] = line.position(0, j, 0).y;
  return fit_fwhm(y, vol.data, {.half_width = s.radius}).fwhm;
}

}  // namespace

TEST(TimeDerivative, RampConstantAndErrors) {
  std::vector<double> ramp(50), flat(50, 3.0);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = 0.7 * 0.05 * static_cast<double>(i) - 2.0;
  for (double d : time_derivative(ramp, 0.05)) EXPECT_NEAR(d, 0.7, 1e-12);
  for (double d : time_derivative(flat, 0.05)) EXPECT_EQ(d, 0.0);
  EXPECT_THROW(time_derivative(std::vector<double>{1.0, 2.0}, 0.05), Error);
}

TEST(TimeDerivative, PropertySineAgainstCosine) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uf(0.1, 5.0), up(0.0, 2.0 * kPi);
  const double dt = 0.05;
  for (int n = 0; n < kCases; ++n) {
    const double f = uf(rng), ph = up(rng), w = 2.0 * kPi * f;
    std::vector<double> s(400);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sin(w * dt * static_cast<double>(i) + ph);
    const auto d = time_derivative(s, dt);
    // central difference: sin(w dt)/dt vs w, error <= w (w dt)^2 / 6
    const double bound = w * (w * dt) * (w * dt) / 6.0 + 1e-9;
    for (std::size_t i = 1; i + 1 < s.size(); ++i)
      ASSERT_LE(std::abs(d[i] - w * std::cos(w * dt * static_cast<double>(i) + ph)), bound);
  }
}

TEST(Presmooth, DeltaBecomesGaussianOfTargetWidth) {
  const SystemConfig cfg = fixtures::tiny_config(1, 1);
  PressureTensor p(1, 1, 400);
  p.trace(0, 0)[200] = 1.0;
  const double fwhm_mm = 0.5;
  const auto s = presmooth(p, fwhm_mm, cfg.sos, cfg.dt);
  const auto tr = s.trace(0, 0);
  double sum = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    sum += tr[i];
    const double u = static_cast<double>(i) - 200.0;
    m2 += u * u * tr[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  const double sigma_t = std::sqrt(m2) * cfg.dt;  // µs
  EXPECT_NEAR(kFwhmPerSigma * sigma_t * cfg.sos, fwhm_mm, 0.01 * fwhm_mm);
  EXPECT_EQ(*std::max_element(tr.begin(), tr.end()), tr[200]);
}

TEST(Presmooth, PropertyLinearityAndErrors) {
  const SystemConfig cfg = fixtures::tiny_config(2, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> uw(0.2, 3.0);
  for (int c = 0; c < kCases; ++c) {
    PressureTensor a(2, 3, 120), b(2, 3, 120), ab(2, 3, 120);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a.data()[i] = n(rng);
      b.data()[i] = n(rng);
      ab.data()[i] = a.data()[i] + b.data()[i];
    }
    const double w = uw(rng);
    const auto sa = presmooth(a, w, cfg.sos, cfg.dt), sb = presmooth(b, w, cfg.sos, cfg.dt),
               sab = presmooth(ab, w, cfg.sos, cfg.dt);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(sab.data()[i], sa.data()[i] + sb.data()[i], 1e-12);
  }
  PressureTensor p(1, 1, 10);
  EXPECT_THROW(presmooth(p, 0.0, cfg.sos, cfg.dt), Error);
  EXPECT_THROW(presmooth(p, 1.9 * cfg.sos * cfg.dt, cfg.sos, cfg.dt), Error);
}

TEST(Presmooth, WideKernelSuppressesHighFrequencies) {
  const SystemConfig cfg = fixtures::tiny_config(1, 1);
  PressureTensor p(1, 1, 2000);
  for (std::size_t i = 0; i < 2000; ++i) p.trace(0, 0)[i] = 1.0 + std::sin(2.0 * kPi * 2.0 * cfg.dt * static_cast<double>(i));
  const auto s = presmooth(p, 5.0, cfg.sos, cfg.dt);
  // the +-4 sigma truncation leaks at most the clipped tail mass (about 6e-5)
  for (std::size_t i = 500; i < 1500; ++i) ASSERT_NEAR(s.trace(0, 0)[i], 1.0, 1e-4);
}

TEST(Ubp, ZeroDataAndErrors) {
  const SystemConfig cfg = fixtures::tiny_config();
  const auto poses = build_array(cfg);
  const VoxelGrid g = VoxelGrid::centered({0, 0, -20}, 1.0, {5, 5, 5});
  PressureTensor p(cfg.n_elements, cfg.n_views, cfg.n_samples);
  for (double v : ubp(p, poses, g, cfg.sos, cfg.dt).data) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(ubp(p, std::span<const TransducerPose>{}, g, cfg.sos, cfg.dt), Error);
  EXPECT_THROW(ubp(p, poses, g, 0.0, cfg.dt), Error);
  EXPECT_THROW(ubp(p, std::span(poses).first(3), g, cfg.sos, cfg.dt), Error);
}

TEST(Ubp, PropertyLinearity) {
  const SystemConfig cfg = fixtures::tiny_config(3, 4);
  const auto poses = build_array(cfg);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int c = 0; c < kCases; ++c) {
    const VoxelGrid g = VoxelGrid::centered(fixtures::random_vec(rng, -30.0, 30.0) + Vec3{0, 0, -25.0}, 0.7, {3, 3, 3});
    PressureTensor a(3, 4, cfg.n_samples), b(3, 4, cfg.n_samples), ab(3, 4, cfg.n_samples);
    const double alpha = n(rng);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a.data()[i] = n(rng);
      b.data()[i] = n(rng);
      ab.data()[i] = a.data()[i] + alpha * b.data()[i];
    }
    const auto va = ubp(a, poses, g, cfg.sos, cfg.dt), vb = ubp(b, poses, g, cfg.sos, cfg.dt),
               vab = ubp(ab, poses, g, cfg.sos, cfg.dt);
    for (std::size_t i = 0; i < va.data.size(); ++i) {
      const double ref = va.data[i] + alpha * vb.data[i];
      ASSERT_NEAR(vab.data[i], ref, 1e-6 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(Ubp, SphereReconstructedAroundItsCentre) {
  const SystemConfig cfg = desk_config("desk");
  const Sphere s{{5, 0, -2}, 1.2, 1.0};
  const auto p = simulate(std::vector<Sphere>{s}, cfg, TransducerModel::point);
  const auto poses = build_array(cfg);
  const VoxelGrid g = VoxelGrid::centered(s.center, 0.25, {25, 25, 25});

  // the uniform ball comes back as a plateau at its amplitude
  const auto vol = ubp(p, poses, g, cfg.sos, cfg.dt);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = norm(g.position(i / 625, (i / 25) % 25, i % 25) - s.center);
    if (d < s.radius - 0.3) {
      ASSERT_NEAR(vol.data[i], 1.0, 0.05);
    } else if (d > s.radius + 0.5) {
      ASSERT_LT(std::abs(vol.data[i]), 0.15);
    }
  }
  // with the plateau rounded off the maximum sits on the centre voxel
  const auto sm = ubp(presmooth(p, 0.5, cfg.sos, cfg.dt), poses, g, cfg.sos, cfg.dt);
  const auto idx = static_cast<std::size_t>(std::max_element(sm.data.begin(), sm.data.end()) - sm.data.begin());
  EXPECT_LE(norm(g.position(idx / 625, (idx / 25) % 25, idx % 25) - s.center), 0.25 + 1e-9);
}

TEST(Ubp, RotationByOneViewCommutes) {
  const SystemConfig cfg = desk_config("desk");
  const auto poses = build_array(cfg);
  const Sphere s{{20, 10, -30}, 1.5, 1.0};
  // smoothed so that trilinear resampling of the reference is accurate
  const auto p = presmooth(simulate(std::vector<Sphere>{s}, cfg, TransducerModel::point), 0.5, cfg.sos, cfg.dt);
  PressureTensor shifted(p.n_elements(), p.n_views(), p.n_samples());
  for (std::size_t e = 0; e < cfg.n_elements; ++e)
    for (std::size_t v = 0; v < cfg.n_views; ++v) {
      const auto src = p.trace(e, v);
      std::copy(src.begin(), src.end(), shifted.trace(e, (v + 1) % cfg.n_views).begin());
    }
  const double step = 2.0 * kPi / static_cast<double>(cfg.n_views);
  const VoxelGrid ga = VoxelGrid::centered(s.center, 0.1, {49, 49, 49});
  const VoxelGrid gb = VoxelGrid::centered(rotate_z(s.center, step), 0.2, {17, 17, 17});
  const auto a = ubp(p, poses, ga, cfg.sos, cfg.dt);
  const auto b = ubp(shifted, poses, gb, cfg.sos, cfg.dt);
  std::vector<double> ref(b.data.size());
  for (std::size_t i = 0; i < 17; ++i)
    for (std::size_t j = 0; j < 17; ++j)
      for (std::size_t k = 0; k < 17; ++k) ref[gb.index(i, j, k)] = trilinear(a, rotate_z(gb.position(i, j, k), -step));
  EXPECT_LE(rel_l2(b.data, ref), 0.02);
}

TEST(Ubp, RectDataBlursMoreThanPointOffAxis) {
  SystemConfig cfg = desk_config("desk");
  const Sphere s{{45, 0, -2}, 1.2, 1.0};
  const std::vector<Sphere> obj{s};
  const double point = y_fwhm(simulate(obj, cfg, TransducerModel::point), cfg, s);
  const double rect = y_fwhm(simulate(obj, cfg, TransducerModel::rect), cfg, s);
  EXPECT_GT(rect, point);
}

TEST(Ubp, PresmoothedPointDataResolvesHalfMillimetre) {
  const SystemConfig cfg = desk_config("desk");
  const Sphere s{{5, 0, -2}, 1.2, 1.0};
  const auto p = simulate(std::vector<Sphere>{s}, cfg, TransducerModel::point);
  EXPECT_NEAR(y_fwhm(presmooth(p, 0.5, cfg.sos, cfg.dt), cfg, s), 0.505, 0.05);
}
