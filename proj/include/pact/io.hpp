#pragma once

// Binary tensor container ("PACTTNS1"): magic, u32 ndim, u64 dims[ndim], u32 dtype
// (1 = float32), row-major little-endian payload, then optionally a u64 byte length
// followed by a UTF-8 metadata block (JSON here).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pact/core.hpp"
#include "pact/geometry.hpp"
#include "pact/tensor.hpp"

namespace pact {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

inline constexpr char kTensorMagic[8] = {'P', 'A', 'C', 'T', 'T', 'N', 'S', '1'};
inline constexpr std::uint32_t kDtypeFloat32 = 1;

struct TensorFile {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
  std::string metadata;

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {
template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename U>
bool get(std::istream& is, U& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}
}  // namespace detail

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& tf) {
  if (tf.count() != tf.data.size()) throw Error("tensor file: dims do not match payload size");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(kTensorMagic, sizeof kTensorMagic);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(tf.dims.size()));
  for (auto d : tf.dims) detail::put<std::uint64_t>(os, d);
  detail::put<std::uint32_t>(os, kDtypeFloat32);
  os.write(reinterpret_cast<const char*>(tf.data.data()),
           static_cast<std::streamsize>(tf.data.size() * sizeof(float)));
  if (!tf.metadata.empty()) {
    detail::put<std::uint64_t>(os, tf.metadata.size());
    os.write(tf.metadata.data(), static_cast<std::streamsize>(tf.metadata.size()));
  }
  os.flush();
  if (!os) {
    os.close();
    std::filesystem::remove(path);
    throw Error("write failed for '" + path.string() + "'");
  }
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kTensorMagic, sizeof magic) != 0)
    throw Error("'" + path.string() + "' is not a tensor file (bad magic)");
  TensorFile tf;
  std::uint32_t ndim = 0;
  if (!detail::get(is, ndim) || ndim > 16) throw Error("'" + path.string() + "': corrupt header");
  tf.dims.resize(ndim);
  for (auto& d : tf.dims)
    if (!detail::get(is, d)) throw Error("'" + path.string() + "': truncated header");
  std::uint32_t dtype = 0;
  if (!detail::get(is, dtype)) throw Error("'" + path.string() + "': truncated header");
  if (dtype != kDtypeFloat32) throw Error("'" + path.string() + "': unsupported dtype code");
  const std::uint64_t n = tf.count();
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto avail = static_cast<std::uint64_t>(is.tellg() - here);
  is.seekg(here);
  if (n > avail / sizeof(float))
    throw Error("'" + path.string() + "': truncated payload (" + std::to_string(avail) + " of " +
                std::to_string(n * sizeof(float)) + " bytes)");
  tf.data.resize(n);
  is.read(reinterpret_cast<char*>(tf.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  std::uint64_t meta_len = 0;
  if (detail::get(is, meta_len)) {
    if (meta_len > avail - n * sizeof(float) - sizeof meta_len)
      throw Error("'" + path.string() + "': truncated metadata block");
    tf.metadata.resize(meta_len);
    is.read(tf.metadata.data(), static_cast<std::streamsize>(meta_len));
  }
  return tf;
}

inline void save_pressure(const std::filesystem::path& path, const PressureTensor& p,
                          const nlohmann::json& extra = nlohmann::json::object()) {
  TensorFile tf;
  tf.dims = {p.n_elements(), p.n_views(), p.n_samples()};
  tf.data.assign(p.data().begin(), p.data().end());
  nlohmann::json meta = extra;
  meta["kind"] = "pressure";
  meta["config_hash"] = p.config_hash();
  tf.metadata = meta.dump();
  write_tensor_file(path, tf);
}

inline PressureTensor load_pressure(const std::filesystem::path& path) {
  const TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 3) throw Error("'" + path.string() + "': expected a 3D pressure tensor");
  std::string hash;
  if (!tf.metadata.empty()) {
    const auto meta = nlohmann::json::parse(tf.metadata, nullptr, false);
    if (meta.is_object() && meta.contains("config_hash")) hash = meta["config_hash"].get<std::string>();
  }
  PressureTensor p(tf.dims[0], tf.dims[1], tf.dims[2], hash);
  std::copy(tf.data.begin(), tf.data.end(), p.data().begin());
  return p;
}

inline void save_volume(const std::filesystem::path& path, const Volume& v) {
  TensorFile tf;
  tf.dims = {v.grid.dims[0], v.grid.dims[1], v.grid.dims[2]};
  tf.data.assign(v.data.begin(), v.data.end());
  nlohmann::json meta;
  meta["kind"] = "volume";
  meta["origin"] = {v.grid.origin.x, v.grid.origin.y, v.grid.origin.z};
  meta["spacing"] = v.grid.spacing;
  tf.metadata = meta.dump();
  write_tensor_file(path, tf);
}

inline Volume load_volume(const std::filesystem::path& path) {
  const TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 3) throw Error("'" + path.string() + "': expected a 3D volume");
  const auto meta = nlohmann::json::parse(tf.metadata.empty() ? "{}" : tf.metadata, nullptr, false);
  if (!meta.is_object() || !meta.contains("origin") || !meta.contains("spacing"))
    throw Error("'" + path.string() + "': volume file lacks a grid header");
  VoxelGrid g;
  g.origin = {meta["origin"][0].get<double>(), meta["origin"][1].get<double>(),
              meta["origin"][2].get<double>()};
  g.spacing = meta["spacing"].get<double>();
  g.dims = {tf.dims[0], tf.dims[1], tf.dims[2]};
  Volume v(g);
  std::copy(tf.data.begin(), tf.data.end(), v.data.begin());
  return v;
}

}  // namespace pact
