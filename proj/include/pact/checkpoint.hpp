#pragma once

// Model checkpoints: one tensor file whose flat float payload concatenates the
// named parameter tensors; the metadata block records names, shapes, offsets and
// the model structure.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pact/compensation.hpp"
#include "pact/io.hpp"

namespace pact {

template <typename T>
void save_model(const std::filesystem::path& path, DeconvNetModel<T>& model) {
  TensorFile tf;
  nlohmann::json tensors = nlohmann::json::array();
  auto add = [&](const std::string& name, std::vector<std::size_t> shape, auto&& values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", tf.data.size()}});
    for (auto v : values) tf.data.push_back(static_cast<float>(v));
  };
  std::vector<double> kernels;
  for (const auto& k : model.kernels) {
    kernels.insert(kernels.end(), {k.local.x, k.local.y, k.local.z, k.log_lambda});
  }
  add("kernels", {model.kernels.size(), 4}, kernels);
  for (auto* layer : model.net.layers()) {
    const auto& s = layer->shape();
    add(layer->weight().name, {s.out_channels, s.in_channels, s.kernel[0], s.kernel[1], s.kernel[2]},
        layer->weight().value);
    add(layer->bias().name, {s.out_channels}, layer->bias().value);
  }
  tf.dims = {tf.data.size()};
  const auto& sys = model.system;
  const auto& net = model.net.spec();
  nlohmann::json meta;
  meta["kind"] = "deconv_net";
  meta["K"] = model.kernels.size();
  meta["patch"] = {{"n_elements", model.patch.n_elements},
                   {"n_views", model.patch.n_views},
                   {"stride_elements", model.patch.stride_elements},
                   {"stride_views", model.patch.stride_views}};
  meta["net"] = {{"widths", net.widths}, {"footprint", net.footprint}, {"cyclic_views", net.cyclic_views}};
  meta["system"] = sys.canonical();
  meta["config_hash"] = model.config_hash;
  meta["tensors"] = tensors;
  tf.metadata = meta.dump();
  write_tensor_file(path, tf);
}

template <typename T = float>
DeconvNetModel<T> load_model(const std::filesystem::path& path) {
  const TensorFile tf = read_tensor_file(path);
  const auto meta = nlohmann::json::parse(tf.metadata.empty() ? "{}" : tf.metadata, nullptr, false);
  if (!meta.is_object() || meta.value("kind", "") != "deconv_net")
    throw Error("'" + path.string() + "' is not a Deconv-Net checkpoint");
  DeconvNetModel<T> m;
  m.system = parse_canonical(meta["system"].get<std::string>());
  const auto& p = meta["patch"];
  m.patch = {p["n_elements"].get<std::size_t>(), p["n_views"].get<std::size_t>(),
             p["stride_elements"].get<std::size_t>(), p["stride_views"].get<std::size_t>()};
  SynthesisNetSpec spec;
  spec.widths = meta["net"]["widths"].get<std::vector<std::size_t>>();
  spec.footprint = meta["net"]["footprint"].get<std::array<std::size_t, 3>>();
  spec.cyclic_views = meta["net"]["cyclic_views"].get<bool>();
  const auto K = meta["K"].get<std::size_t>();
  m.config_hash = meta["config_hash"].get<std::string>();
  m.net = SynthesisNet<T>(spec, K + 1);

  auto find = [&](const std::string& name, std::size_t count) -> const float* {
    for (const auto& t : meta["tensors"]) {
      if (t["name"] != name) continue;
      std::size_t n = 1;
      for (auto d : t["shape"]) n *= d.get<std::size_t>();
      const auto off = t["offset"].get<std::size_t>();
      if (n != count || off + n > tf.data.size())
        throw Error("checkpoint tensor '" + name + "' has an unexpected shape");
      return tf.data.data() + off;
    }
    throw Error("checkpoint lacks tensor '" + name + "'");
  };
  const float* k = find("kernels", K * 4);
  for (std::size_t i = 0; i < K; ++i)
    m.kernels.push_back({{k[4 * i], k[4 * i + 1], k[4 * i + 2]}, static_cast<double>(k[4 * i + 3])});
  for (auto* param : m.net.params()) {
    const float* src = find(param->name, param->value.size());
    for (std::size_t i = 0; i < param->value.size(); ++i) param->value[i] = static_cast<T>(src[i]);
  }
  m.zero_grad();
  if (!m.all_finite()) throw Error("'" + path.string() + "': checkpoint holds non-finite parameters");
  return m;
}

}  // namespace pact
