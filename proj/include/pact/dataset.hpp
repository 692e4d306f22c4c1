#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pact/core.hpp"
#include "pact/forward.hpp"
#include "pact/geometry.hpp"
#include "pact/io.hpp"
#include "pact/tensor.hpp"

namespace pact {

struct SphereDistribution {
  std::size_t n_spheres = 200;
  double radius_mean = 0.375;  ///< mean of the log-normal variate, mm
  double radius_std = 1.0;     ///< standard deviation of the log-normal variate, mm
  double radius_min = 0.125;
  double radius_max = 5.0;
  double region_radius = 60.0;
  double amplitude_min = 0.0;
  double amplitude_max = 0.02;

  /// Parameters (mu, sigma) of the underlying normal.
  std::pair<double, double> normal_params() const {
    const double m2 = radius_mean * radius_mean, s2 = radius_std * radius_std;
    return {std::log(m2 / std::sqrt(m2 + s2)), std::sqrt(std::log1p(s2 / m2))};
  }

  /// Probability mass of the truncation window under the untruncated log-normal.
  double acceptance() const {
    const auto [mu, sigma] = normal_params();
    auto cdf = [&](double r) { return 0.5 * std::erfc(-(std::log(r) - mu) / (sigma * std::sqrt(2.0))); };
    return cdf(radius_max) - cdf(radius_min);
  }

  void validate() const {
    if (!(radius_min > 0.0 && radius_min < radius_max))
      throw Error("SphereDistribution: require 0 < radius_min < radius_max");
    if (!(radius_mean > 0.0 && radius_std > 0.0))
      throw Error("SphereDistribution: log-normal mean and std must be positive");
    if (!(amplitude_min <= amplitude_max)) throw Error("SphereDistribution: amplitude_min > amplitude_max");
    if (!(region_radius > 0.0)) throw Error("SphereDistribution: region radius must be positive");
    if (!(acceptance() > 1e-9))
      throw Error("SphereDistribution: truncation window has no probability mass");
  }
};

inline std::vector<Sphere> sample_object(const SphereDistribution& dist, std::uint64_t seed) {
  dist.validate();
  std::mt19937_64 rng(seed);
  const auto [mu, sigma] = dist.normal_params();
  std::lognormal_distribution<double> radius(mu, sigma);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> amp(dist.amplitude_min, dist.amplitude_max);
  std::vector<Sphere> out;
  out.reserve(dist.n_spheres);
  for (std::size_t i = 0; i < dist.n_spheres; ++i) {
    double r;
    do r = radius(rng);
    while (r < dist.radius_min || r > dist.radius_max);
    Vec3 c;
    do c = {unit(rng), unit(rng), -std::abs(unit(rng))};
    while (!(dot(c, c) < 1.0 && c.z < 0.0));
    const double a = dist.amplitude_min == dist.amplitude_max ? dist.amplitude_min : amp(rng);
    out.push_back({dist.region_radius * c, r, a});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sphere lists: one sphere per line "x y z radius amplitude", '#' comments.

inline void write_spheres(const std::filesystem::path& path, const std::vector<Sphere>& spheres) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "# x_mm\ty_mm\tz_mm\tradius_mm\tamplitude\n";
  char buf[160];
  for (const auto& s : spheres) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", s.center.x, s.center.y,
                  s.center.z, s.radius, s.amplitude);
    os << buf;
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline std::vector<Sphere> read_spheres(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open sphere list '" + path.string() + "'");
  std::vector<Sphere> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    Sphere s;
    if (!(ss >> s.center.x)) continue;
    if (!(ss >> s.center.y >> s.center.z >> s.radius >> s.amplitude))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected x y z radius amplitude");
    if (!(s.radius > 0.0)) throw Error(path.string() + ":" + std::to_string(lineno) + ": radius must be positive");
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string id;
  std::string split;        ///< train | val | test
  std::string input_path;   ///< relative to the manifest directory
  std::string target_path;
};

struct Manifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  SystemConfig config;
  std::vector<std::pair<std::string, std::string>> header;  ///< extra key = value notes
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(std::string_view name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == name) out.push_back(e);
    return out;
  }
  std::filesystem::path input(const ManifestEntry& e) const { return root / e.input_path; }
  std::filesystem::path target(const ManifestEntry& e) const { return root / e.target_path; }
};

/// Split sizes for fractions 0.7 / 0.1 / 0.2 with cumulative rounding.
inline std::array<std::size_t, 3> split_counts(std::size_t n) {
  const auto train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto upto_val = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  return {train, upto_val - train, n - upto_val};
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "# seed=" << m.seed << "\n";
  os << "# config=" << m.config.canonical() << "\n";
  os << "# config_hash=" << config_hash(m.config) << "\n";
  for (const auto& [k, v] : m.header) os << "# " << k << "=" << v << "\n";
  for (const auto& e : m.entries)
    os << e.id << '\t' << e.split << '\t' << e.input_path << '\t' << e.target_path << '\n';
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest '" + path.string() + "'");
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const std::string value = line.substr(eq + 1);
      if (key == "seed") m.seed = std::stoull(value);
      else if (key == "config") m.config = parse_canonical(value);
      else if (key != "config_hash") m.header.emplace_back(key, value);
      continue;
    }
    std::istringstream ss(line);
    ManifestEntry e;
    if (!std::getline(ss, e.id, '\t') || !std::getline(ss, e.split, '\t') ||
        !std::getline(ss, e.input_path, '\t') || !std::getline(ss, e.target_path, '\t'))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw Error(path.string() + ":" + std::to_string(lineno) + ": unknown split '" + e.split + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Generation

struct SamplePair {
  std::string id;
  PressureTensor input;   ///< rect, noisy
  PressureTensor target;  ///< point, noiseless
  std::vector<Sphere> spheres;
};

/// Rect input with additive noise and point target for one object.
inline SamplePair make_sample(const std::string& id, const std::vector<Sphere>& spheres,
                              const SystemConfig& cfg, double noise_fraction, std::uint64_t noise_seed) {
  SamplePair s;
  s.id = id;
  s.spheres = spheres;
  s.target = simulate(spheres, cfg, TransducerModel::point);
  s.input = simulate(spheres, cfg, TransducerModel::rect);
  if (noise_fraction > 0.0) s.input = add_noise(s.input, noise_scale(s.input, noise_fraction), noise_seed);
  return s;
}

inline std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

/// Writes n pairs plus manifest.tsv under `out`. Sample i uses seeds derived from (seed, i).
template <typename Progress = std::nullptr_t>
Manifest generate_dataset(std::size_t n, const SystemConfig& cfg, const SphereDistribution& dist,
                          double noise_fraction, std::uint64_t seed, const std::filesystem::path& out,
                          Progress progress = nullptr) {
  if (n == 0) throw Error("generate_dataset: n must be at least 1");
  if (!(noise_fraction >= 0.0)) throw Error("generate_dataset: noise fraction must be >= 0");
  cfg.validate();
  dist.validate();
  std::filesystem::create_directories(out);
  Manifest m;
  m.root = out;
  m.seed = seed;
  m.config = cfg;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "n_spheres=%zu,radius_mean=%.17g,radius_std=%.17g,radius_min=%.17g,radius_max=%.17g,"
                "region_radius=%.17g,amplitude_min=%.17g,amplitude_max=%.17g",
                dist.n_spheres, dist.radius_mean, dist.radius_std, dist.radius_min, dist.radius_max,
                dist.region_radius, dist.amplitude_min, dist.amplitude_max);
  m.header.emplace_back("distribution", buf);
  std::snprintf(buf, sizeof buf, "%.17g", noise_fraction);
  m.header.emplace_back("noise_fraction", buf);
  const auto counts = split_counts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = sample_id(i);
    const auto spheres = sample_object(dist, substream_seed(seed, i, 1));
    const SamplePair s = make_sample(id, spheres, cfg, noise_fraction, substream_seed(seed, i, 2));
    ManifestEntry e;
    e.id = id;
    e.split = i < counts[0] ? "train" : (i < counts[0] + counts[1] ? "val" : "test");
    e.input_path = id + "_rect.pact";
    e.target_path = id + "_point.pact";
    save_pressure(out / e.input_path, s.input, {{"id", id}, {"model", "rect"}});
    save_pressure(out / e.target_path, s.target, {{"id", id}, {"model", "point"}});
    write_spheres(out / (id + "_spheres.tsv"), spheres);
    m.entries.push_back(e);
    if constexpr (!std::is_same_v<Progress, std::nullptr_t>) progress(i + 1, n);
  }
  write_manifest(out / "manifest.tsv", m);
  return m;
}

// ---------------------------------------------------------------------------
// Deterministic spheres (resolution study)

struct DeterministicCase {
  std::vector<Sphere> spheres;
  SystemConfig config;
  double noise_fraction = 0.0;
};

inline constexpr double kBaselineNoise = 0.0267;

inline DeterministicCase deterministic_spheres(std::string_view variant, SystemConfig base = {}) {
  DeterministicCase c;
  for (int n = 1; n <= 6; ++n) c.spheres.push_back({{10.0 * n - 5.0, 0.0, -2.0}, 1.2, 1.0});
  c.config = with_sos(base, 1.5);
  c.noise_fraction = kBaselineNoise;
  if (variant == "baseline") return c;
  if (variant == "high_noise") {
    c.noise_fraction = 10.0 * kBaselineNoise;
    return c;
  }
  if (variant == "low_sos") {
    c.config.sos = 1.447;
    return c;
  }
  if (variant == "high_sos") {
    c.config.sos = 1.555;
    return c;
  }
  throw Error("unknown deterministic-spheres variant '" + std::string(variant) +
              "' (expected baseline, high_noise, low_sos or high_sos)");
}

inline const std::array<std::string_view, 4>& deterministic_variants() {
  static const std::array<std::string_view, 4> v{"baseline", "high_noise", "low_sos", "high_sos"};
  return v;
}

}  // namespace pact
