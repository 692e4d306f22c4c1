#pragma once

// key = value configuration with [section] headers and '#' comments.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pact/compensation.hpp"
#include "pact/core.hpp"
#include "pact/dataset.hpp"
#include "pact/geometry.hpp"
#include "pact/train.hpp"

namespace pact {

struct ReconSettings {
  VoxelGrid grid;
  double presmooth_fwhm = 0.0;  ///< 0 disables pre-smoothing
};

struct EvalSettings {
  std::vector<std::pair<double, double>> shells{{25.0, 35.0}, {35.0, 45.0}};
  std::vector<double> frangi_sigmas{1.0, 2.0, 3.0, 4.0, 5.0};
};

struct ModelSettings {
  std::size_t kernels = 127;
  PatchSpec patch;
  SynthesisNetSpec net;
  double lambda_init = 1e-2;
};

struct DatasetSettings {
  std::size_t count = 64;
  SphereDistribution distribution;
  double noise_fraction = kBaselineNoise;
};

class RunConfig {
 public:
  static const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"system",
         {"preset", "aperture_radius", "polar_start", "polar_end", "n_elements", "n_views", "n_samples",
          "dt", "sos", "elem_a", "elem_b"}},
        {"dataset",
         {"count", "n_spheres", "radius_mean", "radius_std", "radius_min", "radius_max", "region_radius",
          "amplitude_min", "amplitude_max", "noise_fraction"}},
        {"model",
         {"kernels", "patch_elements", "patch_views", "stride_elements", "stride_views", "widths",
          "footprint", "lambda_init"}},
        {"train",
         {"lr", "kernel_lr", "batch", "max_epochs", "steps_per_epoch", "lr_patience", "stop_patience",
          "monitor_patches", "max_seconds"}},
        {"recon", {"origin", "spacing", "dims", "presmooth_fwhm"}},
        {"eval", {"shells", "frangi_sigmas"}},
    };
    return s;
  }

  static RunConfig parse(std::string_view text, const std::string& source = "<config>") {
    RunConfig cfg;
    std::istringstream is{std::string(text)};
    std::string line, section;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& msg) {
      throw Error(source + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail("malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        if (!schema().contains(section)) fail("unknown section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail("expected key = value");
      if (section.empty()) fail("key outside of any section");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (!schema().at(section).contains(key)) fail("unknown key '" + key + "' in [" + section + "]");
      if (!cfg.values_.emplace(section + "." + key, value).second) fail("duplicate key '" + key + "'");
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.contains(section + "." + key);
  }

  /// Keys that fell back to defaults, as "section.key=value".
  const std::vector<std::string>& defaulted() const { return defaulted_; }

  /// Preset values first, then individual overrides. Keys covered by an explicit
  /// preset are not reported as defaulted.
  SystemConfig system() {
    const bool preset = has("system", "preset");
    SystemConfig c = desk_config(get_string("system", "preset", "full"));
    const std::size_t noted = defaulted_.size();
    c.aperture_radius = get("system", "aperture_radius", c.aperture_radius);
    c.polar_start = get("system", "polar_start", c.polar_start);
    c.polar_end = get("system", "polar_end", c.polar_end);
    c.n_elements = get_count("system", "n_elements", c.n_elements);
    c.n_views = get_count("system", "n_views", c.n_views);
    c.n_samples = get_count("system", "n_samples", c.n_samples);
    c.dt = get("system", "dt", c.dt);
    c.sos = get("system", "sos", c.sos);
    c.elem_a = get("system", "elem_a", c.elem_a);
    c.elem_b = get("system", "elem_b", c.elem_b);
    if (preset) defaulted_.resize(noted);
    c.validate();
    return c;
  }

  DatasetSettings dataset() {
    DatasetSettings d;
    auto& s = d.distribution;
    d.count = get_count("dataset", "count", d.count);
    s.n_spheres = get_count("dataset", "n_spheres", s.n_spheres);
    s.radius_mean = get("dataset", "radius_mean", s.radius_mean);
    s.radius_std = get("dataset", "radius_std", s.radius_std);
    s.radius_min = get("dataset", "radius_min", s.radius_min);
    s.radius_max = get("dataset", "radius_max", s.radius_max);
    s.region_radius = get("dataset", "region_radius", s.region_radius);
    s.amplitude_min = get("dataset", "amplitude_min", s.amplitude_min);
    s.amplitude_max = get("dataset", "amplitude_max", s.amplitude_max);
    d.noise_fraction = get("dataset", "noise_fraction", d.noise_fraction);
    s.validate();
    return d;
  }

  ModelSettings model() {
    ModelSettings m;
    m.kernels = get_count("model", "kernels", m.kernels);
    m.patch.n_elements = get_count("model", "patch_elements", m.patch.n_elements);
    m.patch.n_views = get_count("model", "patch_views", m.patch.n_views);
    m.patch.stride_elements = get_count("model", "stride_elements", m.patch.n_elements);
    m.patch.stride_views = get_count("model", "stride_views", m.patch.n_views);
    m.net.widths = get_counts("model", "widths", m.net.widths);
    const auto fp = get_counts("model", "footprint", {m.net.footprint.begin(), m.net.footprint.end()});
    if (fp.size() != 3) throw Error("[model] footprint needs three values");
    std::copy(fp.begin(), fp.end(), m.net.footprint.begin());
    m.lambda_init = get("model", "lambda_init", m.lambda_init);
    if (!(m.lambda_init > 0.0)) throw Error("[model] lambda_init must be positive");
    m.net.validate();
    return m;
  }

  TrainParams train() {
    TrainParams t;
    t.lr = get("train", "lr", t.lr);
    t.kernel_lr = get("train", "kernel_lr", t.lr);
    t.batch = get_count("train", "batch", t.batch);
    t.max_epochs = get_count("train", "max_epochs", t.max_epochs);
    t.steps_per_epoch = get_count("train", "steps_per_epoch", t.steps_per_epoch);
    t.lr_patience = get_count("train", "lr_patience", t.lr_patience);
    t.stop_patience = get_count("train", "stop_patience", t.stop_patience);
    t.monitor_patches = get_count("train", "monitor_patches", t.monitor_patches);
    t.max_seconds = get("train", "max_seconds", t.max_seconds);
    return t;
  }

  ReconSettings recon() {
    ReconSettings r;
    const auto o = get_list("recon", "origin", {r.grid.origin.x, r.grid.origin.y, r.grid.origin.z});
    if (o.size() != 3) throw Error("[recon] origin needs three values");
    r.grid.origin = {o[0], o[1], o[2]};
    r.grid.spacing = get("recon", "spacing", r.grid.spacing);
    const auto d = get_counts("recon", "dims", {r.grid.dims.begin(), r.grid.dims.end()});
    if (d.size() != 3) throw Error("[recon] dims needs three values");
    std::copy(d.begin(), d.end(), r.grid.dims.begin());
    r.presmooth_fwhm = get("recon", "presmooth_fwhm", r.presmooth_fwhm);
    r.grid.validate();
    return r;
  }

  EvalSettings eval() {
    EvalSettings e;
    std::vector<double> flat;
    for (auto [a, b] : e.shells) flat.insert(flat.end(), {a, b});
    flat = get_list("eval", "shells", flat);
    if (flat.empty() || flat.size() % 2 != 0) throw Error("[eval] shells needs inner,outer pairs");
    e.shells.clear();
    for (std::size_t i = 0; i < flat.size(); i += 2) e.shells.emplace_back(flat[i], flat[i + 1]);
    e.frangi_sigmas = get_list("eval", "frangi_sigmas", e.frangi_sigmas);
    if (e.frangi_sigmas.empty()) throw Error("[eval] frangi_sigmas must not be empty");
    return e;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  const std::string* raw(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section + "." + key);
    return it == values_.end() ? nullptr : &it->second;
  }

  template <typename V>
  void note_default(const std::string& section, const std::string& key, const V& value) {
    std::ostringstream ss;
    ss << section << "." << key << "=" << value;
    defaulted_.push_back(ss.str());
  }

  double get(const std::string& section, const std::string& key, double fallback) {
    const std::string* v = raw(section, key);
    if (!v) {
      note_default(section, key, fallback);
      return fallback;
    }
    std::size_t pos = 0;
    double out = 0.0;
    try {
      out = std::stod(*v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v->size()) throw Error("[" + section + "] " + key + ": '" + *v + "' is not a number");
    return out;
  }

  std::size_t get_count(const std::string& section, const std::string& key, std::size_t fallback) {
    const std::string* v = raw(section, key);
    if (!v) {
      note_default(section, key, fallback);
      return fallback;
    }
    return parse_count(section, key, *v);
  }

  static std::size_t parse_count(const std::string& section, const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long out = 0;
    try {
      if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size())
      throw Error("[" + section + "] " + key + ": '" + v + "' is not a non-negative integer");
    return static_cast<std::size_t>(out);
  }

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) {
    const std::string* v = raw(section, key);
    if (!v) {
      note_default(section, key, fallback);
      return fallback;
    }
    return *v;
  }

  static std::vector<std::string> split(const std::string& v) {
    std::vector<std::string> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
  }

  std::vector<double> get_list(const std::string& section, const std::string& key, std::vector<double> fallback) {
    const std::string* v = raw(section, key);
    if (!v) {
      std::ostringstream ss;
      for (std::size_t i = 0; i < fallback.size(); ++i) ss << (i ? "," : "") << fallback[i];
      note_default(section, key, ss.str());
      return fallback;
    }
    std::vector<double> out;
    for (const auto& item : split(*v)) {
      std::size_t pos = 0;
      try {
        out.push_back(std::stod(item, &pos));
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != item.size())
        throw Error("[" + section + "] " + key + ": '" + item + "' is not a number");
    }
    return out;
  }

  std::vector<std::size_t> get_counts(const std::string& section, const std::string& key,
                                      std::vector<std::size_t> fallback) {
    const std::string* v = raw(section, key);
    if (!v) {
      std::ostringstream ss;
      for (std::size_t i = 0; i < fallback.size(); ++i) ss << (i ? "," : "") << fallback[i];
      note_default(section, key, ss.str());
      return fallback;
    }
    std::vector<std::size_t> out;
    for (const auto& item : split(*v)) out.push_back(parse_count(section, key, item));
    return out;
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> defaulted_;
};

}  // namespace pact
