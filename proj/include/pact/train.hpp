#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pact/compensation.hpp"
#include "pact/dataset.hpp"
#include "pact/io.hpp"

namespace pact {

struct TrainParams {
  double lr = 3e-4;
  double kernel_lr = 3e-4;  ///< step size for kernel positions and log-lambda
  std::size_t batch = 2;
  std::size_t max_epochs = 100;
  std::size_t steps_per_epoch = 200;  ///< optimizer updates per epoch
  std::size_t lr_patience = 2;
  std::size_t stop_patience = 5;
  std::size_t monitor_patches = 16;   ///< fixed patches per split used for the MAE history
  double max_seconds = 0.0;           ///< wall-clock budget, 0 = none
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

template <typename T>
struct TrainResult {
  DeconvNetModel<T> model;
  std::vector<EpochRecord> history;
  double identity_val_mae = 0.0;  ///< mae(input, target) on the validation monitor patches
  std::size_t best_epoch = 0;
};

/// Paired tensors by split position; lets training run from disk or from memory.
struct PairSource {
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::function<std::pair<PressureTensor, PressureTensor>(bool val, std::size_t i)> load;

  static PairSource from_manifest(const Manifest& m) {
    PairSource s;
    const auto train = m.split("train"), val = m.split("val");
    s.n_train = train.size();
    s.n_val = val.size();
    s.load = [m, train, val](bool is_val, std::size_t i) {
      const ManifestEntry& e = is_val ? val.at(i) : train.at(i);
      return std::make_pair(load_pressure(m.input(e)), load_pressure(m.target(e)));
    };
    return s;
  }
};

namespace detail {

template <typename T>
struct PatchPair {
  nn::Field<T> input, target;
};

template <typename T>
std::vector<PatchPair<T>> monitor_patches(const PairSource& src, bool val, std::size_t count,
                                          const PatchSpec& ps, std::uint64_t seed) {
  const std::size_t n = val ? src.n_val : src.n_train;
  std::vector<PatchPair<T>> out;
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < n && out.size() < count; ++s) {
    const auto [in, tgt] = src.load(val, s);
    const std::size_t per = (count - out.size() + (n - s) - 1) / (n - s);
    std::uniform_int_distribution<std::size_t> ue(0, in.n_elements() - ps.n_elements);
    std::uniform_int_distribution<std::size_t> uv(0, in.n_views() - 1);
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t e0 = ue(rng), v0 = uv(rng);
      out.push_back({extract_patch<T>(in, e0, v0, ps), extract_patch<T>(tgt, e0, v0, ps)});
    }
  }
  return out;
}

template <typename T>
double mean_mae(const DeconvNetModel<T>& model, const std::vector<PatchPair<T>>& patches) {
  double acc = 0.0;
  for (const auto& p : patches) acc += mae_loss(forward_patch(model, p.input), p.target);
  return acc / static_cast<double>(patches.size());
}

/// Adam moments for every trainable scalar of a model.
template <typename T>
struct AdamState {
  std::vector<std::array<double, 4>> m_kernel, v_kernel;
  std::vector<std::vector<double>> m_net, v_net;
  std::size_t step = 0;

  explicit AdamState(DeconvNetModel<T>& model) {
    m_kernel.assign(model.kernels.size(), {0.0, 0.0, 0.0, 0.0});
    v_kernel = m_kernel;
    for (auto* p : model.net.params()) {
      m_net.emplace_back(p->value.size(), 0.0);
      v_net.emplace_back(p->value.size(), 0.0);
    }
  }

  void apply(DeconvNetModel<T>& model, const TrainParams& hp, double lr, double kernel_lr) {
    ++step;
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
    auto update = [&](double& value, double g, double& m, double& v, double rate) {
      m = hp.beta1 * m + (1.0 - hp.beta1) * g;
      v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
      value -= rate * (m / c1) / (std::sqrt(v / c2) + hp.eps);
    };
    for (std::size_t k = 0; k < model.kernels.size(); ++k) {
      auto& kr = model.kernels[k];
      std::array<double, 4> val{kr.local.x, kr.local.y, kr.local.z, kr.log_lambda};
      for (std::size_t i = 0; i < 4; ++i)
        update(val[i], model.kernel_grad[k][i], m_kernel[k][i], v_kernel[k][i], kernel_lr);
      kr = {{val[0], val[1], val[2]}, val[3]};
    }
    const auto params = model.net.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& prm = *params[p];
      for (std::size_t i = 0; i < prm.value.size(); ++i) {
        double value = static_cast<double>(prm.value[i]);
        update(value, static_cast<double>(prm.grad[i]), m_net[p][i], v_net[p][i], lr);
        prm.value[i] = static_cast<T>(value);
      }
    }
  }
};

}  // namespace detail

/// Adam on random patch pairs with plateau halving and early stopping; returns the
/// best-validation model. `log` receives each epoch record as it completes.
template <typename T>
TrainResult<T> train(DeconvNetModel<T> model, const PairSource& src, const TrainParams& hp,
                     const std::function<void(const EpochRecord&)>& log = {}) {
  if (src.n_train == 0 || src.n_val == 0) throw Error("train: train and val splits must be nonempty");
  if (hp.batch == 0 || hp.steps_per_epoch == 0 || hp.monitor_patches == 0)
    throw Error("train: batch, steps_per_epoch and monitor_patches must be positive");
  if (!(hp.lr >= 0.0 && hp.kernel_lr >= 0.0)) throw Error("train: learning rates must be >= 0");
  const PatchSpec& ps = model.patch;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const auto val_set = detail::monitor_patches<T>(src, true, hp.monitor_patches, ps, substream_seed(hp.seed, 11));
  const auto train_set =
      detail::monitor_patches<T>(src, false, hp.monitor_patches, ps, substream_seed(hp.seed, 12));

  TrainResult<T> result;
  double id_acc = 0.0;
  for (const auto& p : val_set) id_acc += mae_loss(p.input, p.target);
  result.identity_val_mae = id_acc / static_cast<double>(val_set.size());

  double lr = hp.lr, kernel_lr = hp.kernel_lr;
  auto record = [&](std::size_t epoch) {
    EpochRecord r{epoch, detail::mean_mae(model, train_set), detail::mean_mae(model, val_set), lr, elapsed()};
    if (!std::isfinite(r.val_mae) || !std::isfinite(r.train_mae))
      throw Error("train: non-finite monitor loss at epoch " + std::to_string(epoch));
    result.history.push_back(r);
    if (log) log(r);
    return r.val_mae;
  };

  double best = record(0);
  result.model = model;
  std::size_t since_best = 0;
  detail::AdamState<T> adam(model);
  std::mt19937_64 rng(substream_seed(hp.seed, 13));
  std::uniform_int_distribution<std::size_t> pick(0, src.n_train - 1);

  for (std::size_t epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    for (std::size_t step = 0; step < hp.steps_per_epoch; ++step) {
      model.zero_grad();
      for (std::size_t b = 0; b < hp.batch; ++b) {
        const auto [in, tgt] = src.load(false, pick(rng));
        std::uniform_int_distribution<std::size_t> ue(0, in.n_elements() - ps.n_elements);
        std::uniform_int_distribution<std::size_t> uv(0, in.n_views() - 1);
        const std::size_t e0 = ue(rng), v0 = uv(rng);
        const auto x = extract_patch<T>(in, e0, v0, ps);
        const auto y = extract_patch<T>(tgt, e0, v0, ps);
        const auto pass = run_patch(model, x, true);
        const double loss = mae_loss(pass.output, y);
        if (!std::isfinite(loss))
          throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                      std::to_string(step) + " (sample draw " + std::to_string(b) + ")");
        backward_patch(model, pass, mae_grad(pass.output, y, 1.0 / static_cast<double>(hp.batch)));
      }
      adam.apply(model, hp, lr, kernel_lr);
      if (!model.all_finite())
        throw Error("train: parameters became non-finite at epoch " + std::to_string(epoch));
    }
    const double val = record(epoch);
    if (val < best) {
      best = val;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= hp.stop_patience) break;
      if (since_best % hp.lr_patience == 0) {
        lr *= 0.5;
        kernel_lr *= 0.5;
      }
    }
    if (hp.max_seconds > 0.0 && elapsed() >= hp.max_seconds) break;
  }
  result.model.zero_grad();
  return result;
}

}  // namespace pact
