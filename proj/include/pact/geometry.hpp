#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pact/core.hpp"

namespace pact {

/// Hemispherical acquisition system. Lengths in mm, times in µs, angles in degrees.
struct SystemConfig {
  double aperture_radius = 85.0;
  double polar_start = 90.25;
  double polar_end = 170.25;
  std::size_t n_elements = 96;
  std::size_t n_views = 320;
  std::size_t n_samples = 2267;
  double dt = 0.05;
  double sos = 1.5;
  double elem_a = 1.2;  ///< short side, along the arc (polar tangent)
  double elem_b = 6.0;  ///< long side, along the view (azimuthal tangent)

  std::size_t n_transducers() const { return n_elements * n_views; }

  void validate() const {
    if (!(aperture_radius > 0.0)) throw Error("SystemConfig: aperture_radius must be positive");
    if (!(polar_start > 0.0 && polar_start < polar_end && polar_end <= 180.0))
      throw Error("SystemConfig: require 0 < polar_start < polar_end <= 180 degrees");
    if (n_elements == 0 || n_views == 0 || n_samples == 0)
      throw Error("SystemConfig: n_elements, n_views and n_samples must be >= 1");
    if (!(dt > 0.0)) throw Error("SystemConfig: dt must be positive");
    if (!(sos > 0.0)) throw Error("SystemConfig: sos must be positive");
    if (!(elem_a > 0.0 && elem_b > 0.0)) throw Error("SystemConfig: element sides must be positive");
  }

  /// Canonical text form; the basis of config_hash and of file metadata.
  std::string canonical() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "radius=%.17g;polar_start=%.17g;polar_end=%.17g;n_elements=%zu;n_views=%zu;"
                  "n_samples=%zu;dt=%.17g;sos=%.17g;elem_a=%.17g;elem_b=%.17g",
                  aperture_radius, polar_start, polar_end, n_elements, n_views, n_samples, dt,
                  sos, elem_a, elem_b);
    return buf;
  }

  friend bool operator==(const SystemConfig&, const SystemConfig&) = default;
};

/// 64-bit FNV-1a of the canonical config text, rendered as 16 hex digits.
inline std::string config_hash(const SystemConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : cfg.canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Inverse of SystemConfig::canonical.
inline SystemConfig parse_canonical(const std::string& text) {
  SystemConfig cfg;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error("malformed config snapshot '" + text + "'");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    if (k == "radius") cfg.aperture_radius = std::stod(v);
    else if (k == "polar_start") cfg.polar_start = std::stod(v);
    else if (k == "polar_end") cfg.polar_end = std::stod(v);
    else if (k == "n_elements") cfg.n_elements = std::stoul(v);
    else if (k == "n_views") cfg.n_views = std::stoul(v);
    else if (k == "n_samples") cfg.n_samples = std::stoul(v);
    else if (k == "dt") cfg.dt = std::stod(v);
    else if (k == "sos") cfg.sos = std::stod(v);
    else if (k == "elem_a") cfg.elem_a = std::stod(v);
    else if (k == "elem_b") cfg.elem_b = std::stod(v);
    else throw Error("unknown key '" + k + "' in config snapshot");
  }
  cfg.validate();
  return cfg;
}

/// Same acquisition geometry with a different speed of sound (used for the SOS variants).
inline SystemConfig with_sos(SystemConfig cfg, double sos) {
  cfg.sos = sos;
  return cfg;
}

/// Named presets: "full" is the reference system, "desk" a reduced array for CPU runs.
inline SystemConfig desk_config(std::string_view preset) {
  SystemConfig cfg;
  if (preset == "full") return cfg;
  if (preset == "desk") {
    cfg.n_elements = 24;
    cfg.n_views = 64;
    // The full time window is kept: 2267 samples at 20 MHz cover ~170 mm of travel,
    // and sources sit 25-145 mm from the aperture.
    cfg.n_samples = 2267;
    return cfg;
  }
  throw Error("unknown system preset '" + std::string(preset) + "' (expected full or desk)");
}

/// Transducer position and local frame. axis_x runs along the short side a,
/// axis_y along the long side b, axis_z is the inward normal.
struct TransducerPose {
  Vec3 center;
  Vec3 axis_x;
  Vec3 axis_y;
  Vec3 axis_z;
};

inline Vec3 global_to_local(const TransducerPose& pose, const Vec3& r) {
  const Vec3 d = r - pose.center;
  return {dot(d, pose.axis_x), dot(d, pose.axis_y), dot(d, pose.axis_z)};
}

inline Vec3 local_to_global(const TransducerPose& pose, const Vec3& local) {
  return pose.center + local.x * pose.axis_x + local.y * pose.axis_y + local.z * pose.axis_z;
}

/// Polar angle (degrees) of element `e`. Both endpoint angles are occupied.
inline double element_polar_deg(const SystemConfig& cfg, std::size_t e) {
  if (cfg.n_elements <= 1) return cfg.polar_start;
  return cfg.polar_start +
         static_cast<double>(e) * (cfg.polar_end - cfg.polar_start) /
             static_cast<double>(cfg.n_elements - 1);
}

inline double view_azimuth_deg(const SystemConfig& cfg, std::size_t v) {
  return static_cast<double>(v) * 360.0 / static_cast<double>(cfg.n_views);
}

inline TransducerPose make_pose(double radius, double polar_deg, double azimuth_deg) {
  const double th = polar_deg * kDegree;
  const double ph = azimuth_deg * kDegree;
  const double st = std::sin(th), ct = std::cos(th);
  const double sp = std::sin(ph), cp = std::cos(ph);
  const Vec3 e_r{st * cp, st * sp, ct};
  const Vec3 e_theta{ct * cp, ct * sp, -st};
  const Vec3 e_phi{-sp, cp, 0.0};
  // e_theta x (-e_phi) = -e_r, so the frame is right-handed with an inward z.
  return TransducerPose{radius * e_r, e_theta, -e_phi, -e_r};
}

/// Index of (element, view) in the list returned by build_array.
inline std::size_t pose_index(const SystemConfig& cfg, std::size_t element, std::size_t view) {
  return view * cfg.n_elements + element;
}

/// All transducer poses, view-major: pose_index(cfg, e, v) = v * N_r + e.
inline std::vector<TransducerPose> build_array(const SystemConfig& cfg) {
  if (cfg.n_elements == 0 || cfg.n_views == 0) throw Error("build_array: empty array");
  cfg.validate();
  std::vector<TransducerPose> poses;
  poses.reserve(cfg.n_transducers());
  for (std::size_t v = 0; v < cfg.n_views; ++v) {
    for (std::size_t e = 0; e < cfg.n_elements; ++e) {
      poses.push_back(
          make_pose(cfg.aperture_radius, element_polar_deg(cfg, e), view_azimuth_deg(cfg, v)));
    }
  }
  return poses;
}

/// Regular isotropic voxel grid; voxel (i, j, k) sits at origin + spacing * (i, j, k).
struct VoxelGrid {
  Vec3 origin{-59.875, -59.875, -59.875};
  double spacing = 0.25;
  std::array<std::size_t, 3> dims{480, 480, 240};

  void validate() const {
    if (!(spacing > 0.0)) throw Error("VoxelGrid: spacing must be positive");
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw Error("VoxelGrid: empty dimension");
  }
  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * dims[1] + j) * dims[2] + k;
  }
  Vec3 position(std::size_t i, std::size_t j, std::size_t k) const {
    return origin + Vec3{spacing * static_cast<double>(i), spacing * static_cast<double>(j),
                         spacing * static_cast<double>(k)};
  }

  /// Grid of the given dims and spacing whose voxel centres are symmetric about `center`.
  static VoxelGrid centered(const Vec3& center, double spacing, std::array<std::size_t, 3> dims) {
    VoxelGrid g;
    g.spacing = spacing;
    g.dims = dims;
    g.origin = center - 0.5 * spacing *
                            Vec3{static_cast<double>(dims[0] - 1), static_cast<double>(dims[1] - 1),
                                 static_cast<double>(dims[2] - 1)};
    return g;
  }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

}  // namespace pact
