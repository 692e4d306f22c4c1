#pragma once

// End-to-end studies built from the modules: the deterministic-spheres resolution
// study and the per-sample image-quality evaluation of a dataset split.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pact/compensation.hpp"
#include "pact/dataset.hpp"
#include "pact/forward.hpp"
#include "pact/geometry.hpp"
#include "pact/metrics.hpp"
#include "pact/recon.hpp"

namespace pact {

/// Sample range [first, last] in which a sphere's echo can reach the element: the
/// span of distances from the sphere to the element rectangle, widened by the radius.
inline std::pair<double, double> echo_support(const TransducerPose& pose, const Sphere& s,
                                              const SystemConfig& cfg) {
  const Vec3 local = global_to_local(pose, s.center);
  const double ha = 0.5 * cfg.elem_a, hb = 0.5 * cfg.elem_b;
  const double cx = std::clamp(local.x, -ha, ha), cy = std::clamp(local.y, -hb, hb);
  const double near = std::hypot(local.x - cx, local.y - cy, local.z);
  double far = 0.0;
  for (double u : {-ha, ha})
    for (double w : {-hb, hb}) far = std::max(far, std::hypot(local.x - u, local.y - w, local.z));
  const double step = cfg.sos * cfg.dt;
  return {(near - s.radius) / step, (far + s.radius) / step};
}

/// Wiener deconvolution with the true SIR of each known sphere. Each sphere's kernel
/// acts only on the samples its echo can occupy and samples no echo reaches pass
/// through. Where echoes overlap the samples are shared equally, unless one of them
/// belongs to `focus`, which then takes them whole: on a real array about half the
/// traces see overlapping echoes, and measuring one sphere needs its own echo intact.
inline PressureTensor oracle_compensate(const PressureTensor& p, std::span<const Sphere> spheres,
                                        const SystemConfig& cfg, double lambda,
                                        std::optional<std::size_t> focus = std::nullopt) {
  if (!p.matches(cfg)) throw Error("oracle_compensate: data tensor does not match the config");
  if (!(lambda >= 0.0)) throw Error("oracle_compensate: lambda must be >= 0");
  if (spheres.empty()) return p;
  const auto poses = build_array(cfg);
  const FrequencyGrid freqs = frequency_grid(cfg);
  PressureTensor out(p.n_elements(), p.n_views(), p.n_samples(), p.config_hash());
  parallel_for(poses.size(), [&](std::size_t q) {
    const std::size_t v = q / cfg.n_elements, e = q % cfg.n_elements;
    const auto trace = p.trace(e, v);
    const std::size_t n = trace.size();
    std::vector<std::pair<double, double>> support;
    std::vector<double> cover(n, 0.0);
    for (const Sphere& s : spheres) {
      support.push_back(echo_support(poses[q], s, cfg));
      for (std::size_t r = 0; r < n; ++r)
        if (r >= support.back().first - 1.0 && r <= support.back().second + 1.0) cover[r] += 1.0;
    }
    auto dst = out.trace(e, v);
    for (std::size_t r = 0; r < n; ++r)
      if (cover[r] == 0.0) dst[r] = trace[r];
    std::vector<double> segment(n);
    for (std::size_t k = 0; k < spheres.size(); ++k) {
      bool any = false;
      for (std::size_t r = 0; r < n; ++r) {
        auto inside = [&](std::size_t j) {
          return r >= support[j].first - 1.0 && r <= support[j].second + 1.0;
        };
        const bool in = inside(k);
        double share = in ? 1.0 / cover[r] : 0.0;
        if (focus && in && inside(*focus)) share = k == *focus ? 1.0 : 0.0;
        segment[r] = share * trace[r];
        any = any || in;
      }
      if (!any) continue;
      const auto h = sir_spectrum(global_to_local(poses[q], spheres[k].center), cfg, freqs);
      std::vector<double> filter(h.size());
      for (std::size_t l = 0; l < h.size(); ++l) {
        const double den = h[l] * h[l] + lambda;
        filter[l] = den > 0.0 ? h[l] / den : 0.0;
      }
      const auto y = apply_response(segment, filter, freqs);
      for (std::size_t r = 0; r < n; ++r) dst[r] += y[r];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Resolution study

struct ResolutionOptions {
  double presmooth_fwhm = 0.5;
  double oracle_lambda = 1e-3;
  double profile_half_extent = 4.0;  ///< mm either side of the sphere centre
  double profile_spacing = 0.05;
  std::uint64_t seed = 0;
};

struct ResolutionRow {
  std::string variant;
  std::size_t sphere = 0;
  double x = 0.0;
  std::string method;
  std::optional<FwhmFit> fit;  ///< empty when the method is unavailable or the fit failed
  std::string note;
};

struct ProfilePoint {
  std::string variant;
  std::string method;
  std::size_t sphere = 0;
  double y = 0.0;
  double value = 0.0;
};

struct ResolutionResult {
  std::vector<ResolutionRow> rows;
  std::vector<ProfilePoint> profiles;
};

inline const std::array<std::string_view, 4>& resolution_methods() {
  static const std::array<std::string_view, 4> m{"rect", "compensated", "oracle", "point"};
  return m;
}

/// Reconstructs y-profiles through every sphere centre for each method and fits the
/// blurred-rect model with the half-width pinned to the sphere radius. The
/// compensated method needs a model; without one its rows carry no fit.
inline ResolutionResult resolution_study(std::string_view variant, const SystemConfig& base,
                                         const DeconvNetModel<float>* model,
                                         const ResolutionOptions& opt = {}) {
  const DeterministicCase dc = deterministic_spheres(variant, base);
  const SystemConfig& cfg = dc.config;
  const auto poses = build_array(cfg);
  const PressureTensor point = simulate(dc.spheres, cfg, TransducerModel::point);
  PressureTensor rect = simulate(dc.spheres, cfg, TransducerModel::rect);
  if (dc.noise_fraction > 0.0)
    rect = add_noise(rect, noise_scale(rect, dc.noise_fraction), substream_seed(opt.seed, 0x7265736f));

  const auto n_profile = static_cast<std::size_t>(std::llround(2.0 * opt.profile_half_extent / opt.profile_spacing)) + 1;
  ResolutionResult res;
  for (std::string_view method : resolution_methods()) {
    std::optional<PressureTensor> data;
    std::string note;
    if (method == "rect") data = rect;
    else if (method == "point") data = point;
    else if (method == "oracle") {}  // per sphere below
    else if (model != nullptr) data = infer_full(*model, rect);
    else note = "no checkpoint";
    if (data && opt.presmooth_fwhm > 0.0) data = presmooth(*data, opt.presmooth_fwhm, cfg.sos, cfg.dt);
    for (std::size_t n = 0; n < dc.spheres.size(); ++n) {
      const Sphere& s = dc.spheres[n];
      ResolutionRow row{std::string(variant), n + 1, s.center.x, std::string(method), std::nullopt, note};
      if (method == "oracle") {
        data = oracle_compensate(rect, dc.spheres, cfg, opt.oracle_lambda, n);
        if (opt.presmooth_fwhm > 0.0) data = presmooth(*data, opt.presmooth_fwhm, cfg.sos, cfg.dt);
      }
      if (data) {
        const VoxelGrid grid = VoxelGrid::centered(s.center, opt.profile_spacing, {1, n_profile, 1});
        const Volume vol = ubp(*data, poses, grid, cfg.sos, cfg.dt);
        std::vector<double> y(n_profile), v(n_profile);
        for (std::size_t j = 0; j < n_profile; ++j) {
          y[j] = grid.position(0, j, 0).y;
          v[j] = vol.at(0, j, 0);
          res.profiles.push_back({row.variant, row.method, row.sphere, y[j], v[j]});
        }
        try {
          row.fit = fit_fwhm(y, v, {.half_width = s.radius});
        } catch (const FitError& e) {
          row.note = e.what();
        }
      }
      res.rows.push_back(std::move(row));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Image-quality evaluation in depth shells

struct EvalRow {
  std::string sample;
  double inner = 0.0;
  double outer = 0.0;
  std::string method;
  double rse = 0.0;
  double ncc = 0.0;
  double dice = std::numeric_limits<double>::quiet_NaN();
};

/// Vessel map inside `mask`: Frangi response above its triangle threshold.
inline std::vector<std::uint8_t> vessel_map(const Volume& vol, std::span<const double> sigmas,
                                            std::span<const std::uint8_t> mask) {
  const Volume v = frangi(vol, sigmas);
  std::vector<double> inside;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) inside.push_back(v.data[i]);
  std::vector<std::uint8_t> out(mask.size(), 0);
  if (inside.empty()) return out;
  const auto [mn, mx] = std::minmax_element(inside.begin(), inside.end());
  if (!(*mx > *mn)) return out;
  const double thr = triangle_threshold(inside);
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] && v.data[i] > thr ? 1 : 0;
  return out;
}

struct EvalOptions {
  VoxelGrid grid;
  std::vector<std::pair<double, double>> shells{{25.0, 35.0}, {35.0, 45.0}};
  double presmooth_fwhm = 0.0;
  std::vector<double> frangi_sigmas{1.0, 2.0, 3.0, 4.0, 5.0};
  bool with_dice = true;
};

/// Reconstructs the reference (point) and each candidate, then scores every
/// candidate against the reference in every shell.
inline std::vector<EvalRow> evaluate_sample(const std::string& id, const PressureTensor& reference,
                                            const std::vector<std::pair<std::string, PressureTensor>>& candidates,
                                            const SystemConfig& cfg, const EvalOptions& opt) {
  const auto poses = build_array(cfg);
  std::vector<ShellMask> shells;
  std::vector<std::uint8_t> any(opt.grid.size(), 0);
  for (auto [inner, outer] : opt.shells) {
    shells.push_back(shell_mask(opt.grid, cfg, inner, outer));
    for (std::size_t i = 0; i < any.size(); ++i) any[i] |= shells.back().mask[i];
  }
  // Frangi needs the neighbourhood of the shells as well, so DICE runs reconstruct everything.
  const std::span<const std::uint8_t> recon_mask = opt.with_dice ? std::span<const std::uint8_t>{} : any;
  auto reconstruct = [&](const PressureTensor& p) {
    const PressureTensor d = opt.presmooth_fwhm > 0.0 ? presmooth(p, opt.presmooth_fwhm, cfg.sos, cfg.dt) : p;
    return ubp(d, poses, opt.grid, cfg.sos, cfg.dt, recon_mask);
  };
  const Volume ref = reconstruct(reference);
  std::vector<std::vector<std::uint8_t>> ref_maps;
  if (opt.with_dice)
    for (const auto& s : shells) ref_maps.push_back(vessel_map(ref, opt.frangi_sigmas, s.mask));
  std::vector<EvalRow> rows;
  for (const auto& [name, data] : candidates) {
    const Volume vol = reconstruct(data);
    for (std::size_t s = 0; s < shells.size(); ++s) {
      EvalRow row{id, shells[s].inner, shells[s].outer, name, rse(vol, ref, shells[s].mask),
                  ncc(vol, ref, shells[s].mask)};
      if (opt.with_dice) row.dice = dice(vessel_map(vol, opt.frangi_sigmas, shells[s].mask), ref_maps[s]);
      rows.push_back(row);
    }
  }
  return rows;
}

struct ShellComparison {
  double inner = 0.0, outer = 0.0;
  std::string metric;
  double mean_baseline = 0.0, mean_candidate = 0.0;
  std::size_t wins = 0, count = 0;  ///< samples where the candidate is better
  double p_value = 1.0;             ///< one-sided U test that the candidate is better
};

/// Candidate vs. baseline per shell and metric (lower RSE, higher NCC and DICE are better).
inline std::vector<ShellComparison> compare_methods(const std::vector<EvalRow>& rows,
                                                    const std::string& baseline, const std::string& candidate) {
  std::vector<ShellComparison> out;
  std::vector<std::pair<double, double>> shells;
  for (const auto& r : rows)
    if (std::find(shells.begin(), shells.end(), std::make_pair(r.inner, r.outer)) == shells.end())
      shells.emplace_back(r.inner, r.outer);
  for (auto [inner, outer] : shells)
    for (std::string metric : {"rse", "ncc", "dice"}) {
      std::vector<double> a, b;
      std::map<std::string, double> base_by_sample;
      for (const auto& r : rows) {
        if (r.inner != inner || r.outer != outer) continue;
        const double v = metric == "rse" ? r.rse : metric == "ncc" ? r.ncc : r.dice;
        if (!std::isfinite(v)) continue;
        if (r.method == baseline) {
          a.push_back(v);
          base_by_sample[r.sample] = v;
        }
      }
      ShellComparison c{inner, outer, metric};
      for (const auto& r : rows) {
        if (r.inner != inner || r.outer != outer || r.method != candidate) continue;
        const double v = metric == "rse" ? r.rse : metric == "ncc" ? r.ncc : r.dice;
        if (!std::isfinite(v) || !base_by_sample.contains(r.sample)) continue;
        b.push_back(v);
        ++c.count;
        const double base = base_by_sample[r.sample];
        if (metric == "rse" ? v < base : v > base) ++c.wins;
      }
      if (a.empty() || b.empty()) continue;
      for (double v : a) c.mean_baseline += v / static_cast<double>(a.size());
      for (double v : b) c.mean_candidate += v / static_cast<double>(b.size());
      c.p_value = metric == "rse" ? mann_whitney_one_sided(b, a) : mann_whitney_one_sided(a, b);
      out.push_back(c);
    }
  return out;
}

}  // namespace pact
