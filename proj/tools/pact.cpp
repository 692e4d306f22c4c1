// pact: command-line front end for the photoacoustic toolkit.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pact/checkpoint.hpp"
#include "pact/compensation.hpp"
#include "pact/dataset.hpp"
#include "pact/forward.hpp"
#include "pact/io.hpp"
#include "pact/recon.hpp"
#include "pact/run_config.hpp"
#include "pact/study.hpp"
#include "pact/train.hpp"

namespace fs = std::filesystem;
using namespace pact;

namespace {

struct Globals {
  unsigned threads = 0;
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
};

/// Files a command creates; removed again unless the command reaches commit().
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : files_) fs::remove(p, ec);
    if (created_dir_) fs::remove(dir_, ec);  // only succeeds if empty
  }

  fs::path add(const std::string& name) {
    if (!fs::exists(dir_)) created_dir_ = fs::create_directories(dir_);
    files_.push_back(dir_ / name);
    return files_.back();
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

RunConfig load_config(const Globals& g) {
  return g.config.empty() ? RunConfig{} : RunConfig::load(g.config);
}

void report_defaults(const RunConfig& cfg) {
  if (cfg.defaulted().empty()) return;
  std::cerr << "note: defaults used for";
  for (const auto& d : cfg.defaulted()) std::cerr << ' ' << d;
  std::cerr << '\n';
}

std::ofstream open_table(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << std::setprecision(9);
  return os;
}

void close_table(std::ofstream& os, const fs::path& path) {
  os.flush();
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// ---------------------------------------------------------------------------

void gen_data(const Globals& g, std::optional<std::size_t> count) {
  RunConfig rc = load_config(g);
  const SystemConfig sys = rc.system();
  DatasetSettings ds = rc.dataset();
  report_defaults(rc);
  if (count) ds.count = *count;
  Outputs out(g.out);
  for (std::size_t i = 0; i < ds.count; ++i) {
    const std::string id = sample_id(i);
    for (const char* suffix : {"_rect.pact", "_point.pact", "_spheres.tsv"}) out.add(id + suffix);
  }
  out.add("manifest.tsv");
  generate_dataset(ds.count, sys, ds.distribution, ds.noise_fraction, g.seed, g.out,
                   [](std::size_t done, std::size_t n) { std::cerr << "\rgenerated " << done << '/' << n << std::flush; });
  std::cerr << '\n';
  out.commit();
}

void simulate_cmd(const Globals& g, const std::string& spheres_path, double noise) {
  RunConfig rc = load_config(g);
  const SystemConfig sys = rc.system();
  report_defaults(rc);
  const auto spheres = read_spheres(spheres_path);
  Outputs out(g.out);
  const auto point_path = out.add("point.pact");
  const auto rect_path = out.add("rect.pact");
  const PressureTensor point = simulate(spheres, sys, TransducerModel::point);
  PressureTensor rect = simulate(spheres, sys, TransducerModel::rect);
  if (noise > 0.0 && !spheres.empty()) rect = add_noise(rect, noise_scale(rect, noise), g.seed);
  save_pressure(point_path, point, {{"model", "point"}});
  save_pressure(rect_path, rect, {{"model", "rect"}, {"noise_fraction", noise}});
  out.commit();
}

void train_cmd(const Globals& g, const std::string& manifest_path, const std::string& init) {
  RunConfig rc = load_config(g);
  const ModelSettings ms = rc.model();
  TrainParams hp = rc.train();
  report_defaults(rc);
  hp.seed = g.seed;
  const Manifest m = read_manifest(manifest_path);
  DeconvNetModel<float> model = init.empty()
                                    ? init_model<float>(ms.kernels, ms.patch, g.seed, m.config, ms.net, ms.lambda_init)
                                    : load_model<float>(init);
  if (model.config_hash != config_hash(m.config))
    throw Error("checkpoint system does not match the dataset system");

  Outputs out(g.out);
  const auto ckpt = out.add("model.pact");
  const auto hist_path = out.add("history.tsv");
  auto hist = open_table(hist_path);
  hist << "epoch\ttrain_mae\tval_mae\tlr\tseconds\n";
  const auto result = train(model, PairSource::from_manifest(m), hp, [&](const EpochRecord& r) {
    hist << r.epoch << '\t' << r.train_mae << '\t' << r.val_mae << '\t' << r.lr << '\t' << r.seconds << '\n';
    std::cerr << "epoch " << r.epoch << "  train " << r.train_mae << "  val " << r.val_mae << "  lr " << r.lr
              << "  " << std::fixed << std::setprecision(0) << r.seconds << " s" << std::defaultfloat
              << std::setprecision(6) << '\n';
  });
  close_table(hist, hist_path);
  auto best = result.model;
  save_model(ckpt, best);
  std::cerr << "best epoch " << result.best_epoch << ", val mae " << result.history[result.best_epoch].val_mae
            << " (identity " << result.identity_val_mae << ")\n";
  out.commit();
}

void compensate_cmd(const Globals& g, const std::string& checkpoint, const std::string& input) {
  const auto model = load_model<float>(checkpoint);
  const PressureTensor p = load_pressure(input);
  if (!p.config_hash().empty() && p.config_hash() != model.config_hash)
    std::cerr << "note: input was simulated with a different system than the model was trained on\n";
  Outputs out(g.out);
  const auto path = out.add(stem_of(input) + "_compensated.pact");
  save_pressure(path, infer_full(model, p), {{"model", "compensated"}, {"checkpoint", checkpoint}});
  out.commit();
}

void reconstruct_cmd(const Globals& g, const std::string& input, std::optional<double> presmooth_fwhm) {
  RunConfig rc = load_config(g);
  const SystemConfig sys = rc.system();
  const ReconSettings rs = rc.recon();
  report_defaults(rc);
  PressureTensor p = load_pressure(input);
  if (!p.matches(sys)) throw Error("'" + input + "' does not match the configured system");
  const double fwhm = presmooth_fwhm.value_or(rs.presmooth_fwhm);
  if (fwhm > 0.0) p = presmooth(p, fwhm, sys.sos, sys.dt);
  Outputs out(g.out);
  const auto path = out.add(stem_of(input) + "_ubp.pact");
  save_volume(path, ubp(p, build_array(sys), rs.grid, sys.sos, sys.dt));
  out.commit();
}

void evaluate_cmd(const Globals& g, const std::string& manifest_path, const std::string& checkpoint,
                  const std::string& split, bool with_dice) {
  RunConfig rc = load_config(g);
  const ReconSettings rs = rc.recon();
  const EvalSettings es = rc.eval();
  report_defaults(rc);
  const Manifest m = read_manifest(manifest_path);
  std::optional<DeconvNetModel<float>> model;
  if (!checkpoint.empty()) model = load_model<float>(checkpoint);
  EvalOptions opt;
  opt.grid = rs.grid;
  opt.shells = es.shells;
  opt.presmooth_fwhm = rs.presmooth_fwhm;
  opt.frangi_sigmas = es.frangi_sigmas;
  opt.with_dice = with_dice;

  const auto entries = m.split(split);
  if (entries.empty()) throw Error("manifest has no '" + split + "' samples");
  std::vector<EvalRow> rows;
  for (const auto& e : entries) {
    std::vector<std::pair<std::string, PressureTensor>> cand;
    cand.emplace_back("rect", load_pressure(m.input(e)));
    if (model) cand.emplace_back("compensated", infer_full(*model, cand.front().second));
    const auto r = evaluate_sample(e.id, load_pressure(m.target(e)), cand, m.config, opt);
    rows.insert(rows.end(), r.begin(), r.end());
    std::cerr << "evaluated " << e.id << '\n';
  }

  Outputs out(g.out);
  const auto metrics_path = out.add("metrics.tsv");
  auto os = open_table(metrics_path);
  os << "sample\tshell_inner\tshell_outer\tmethod\trse\tncc\tdice\n";
  for (const auto& r : rows)
    os << r.sample << '\t' << r.inner << '\t' << r.outer << '\t' << r.method << '\t' << r.rse << '\t' << r.ncc
       << '\t' << r.dice << '\n';
  close_table(os, metrics_path);
  if (model) {
    const auto cmp_path = out.add("comparison.tsv");
    auto cs = open_table(cmp_path);
    cs << "shell_inner\tshell_outer\tmetric\tmean_rect\tmean_compensated\twins\tcount\tp_value\n";
    for (const auto& c : compare_methods(rows, "rect", "compensated"))
      cs << c.inner << '\t' << c.outer << '\t' << c.metric << '\t' << c.mean_baseline << '\t' << c.mean_candidate
         << '\t' << c.wins << '\t' << c.count << '\t' << c.p_value << '\n';
    close_table(cs, cmp_path);
  }
  out.commit();
}

void resolution_cmd(const Globals& g, const std::string& checkpoint, std::vector<std::string> variants,
                    double oracle_lambda) {
  RunConfig rc = load_config(g);
  const SystemConfig sys = rc.system();
  report_defaults(rc);
  std::optional<DeconvNetModel<float>> model;
  if (!checkpoint.empty()) model = load_model<float>(checkpoint);
  else std::cerr << "note: no --checkpoint given; the compensated column is NaN\n";
  if (variants.empty())
    for (auto v : deterministic_variants()) variants.emplace_back(v);
  ResolutionOptions opt;
  opt.oracle_lambda = oracle_lambda;
  opt.seed = g.seed;

  Outputs out(g.out);
  const auto table_path = out.add("resolution.tsv");
  const auto profile_path = out.add("profiles.tsv");
  auto table = open_table(table_path);
  auto prof = open_table(profile_path);
  table << "variant\tsphere\tx_mm\tmethod\tfwhm_mm\tprofile_fwhm_mm\tresidual\tnote\n";
  prof << "variant\tmethod\tsphere\ty_mm\tvalue\n";
  const double nan = std::nan("");
  for (const auto& v : variants) {
    const auto res = resolution_study(v, sys, model ? &*model : nullptr, opt);
    for (const auto& r : res.rows)
      table << r.variant << '\t' << r.sphere << '\t' << r.x << '\t' << r.method << '\t'
            << (r.fit ? r.fit->fwhm : nan) << '\t' << (r.fit ? r.fit->profile_fwhm : nan) << '\t'
            << (r.fit ? r.fit->residual : nan) << '\t' << (r.note.empty() ? "-" : r.note) << '\n';
    for (const auto& p : res.profiles)
      prof << p.variant << '\t' << p.method << '\t' << p.sphere << '\t' << p.y << '\t' << p.value << '\n';
    std::cerr << "variant " << v << " done\n";
  }
  close_table(table, table_path);
  close_table(prof, profile_path);
  out.commit();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photoacoustic tomography toolkit: simulation, SIR compensation, reconstruction"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "Run configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory");

  std::optional<std::size_t> count;
  auto* gen = app.add_subcommand("gen-data", "Generate a paired Stochastic Spheres dataset");
  gen->add_option("--count", count, "Number of samples (overrides [dataset] count)");

  std::string spheres;
  double noise = 0.0;
  auto* sim = app.add_subcommand("simulate", "Simulate point and rect data for a sphere list");
  sim->add_option("--spheres", spheres, "Sphere list (x y z radius amplitude per line)")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--noise", noise, "Noise as a fraction of the 90th-percentile amplitude")
      ->check(CLI::NonNegativeNumber);

  std::string manifest, init;
  auto* tr = app.add_subcommand("train", "Train a Deconv-Net on a dataset");
  tr->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--init", init, "Continue from this checkpoint")->check(CLI::ExistingFile);

  std::string checkpoint, input;
  auto* comp = app.add_subcommand("compensate", "Apply a trained model to a data tensor");
  comp->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  comp->add_option("--input", input, "Input pressure tensor")->required()->check(CLI::ExistingFile);

  std::optional<double> presmooth_fwhm;
  auto* rec = app.add_subcommand("reconstruct", "Universal back-projection of a data tensor");
  rec->add_option("--input", input, "Input pressure tensor")->required()->check(CLI::ExistingFile);
  rec->add_option("--presmooth-fwhm", presmooth_fwhm, "Gaussian pre-smoothing FWHM in mm (0 = off)");

  std::string split = "test";
  bool no_dice = false;
  auto* ev = app.add_subcommand("evaluate", "RSE / NCC / DICE of rect and compensated reconstructions");
  ev->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--split", split, "Manifest split to score")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--no-dice", no_dice, "Skip the vessel segmentation (reconstructs only the shells)");

  std::vector<std::string> variants;
  double oracle_lambda = ResolutionOptions{}.oracle_lambda;
  auto* res = app.add_subcommand("resolution-study", "FWHM versus position on the Deterministic Spheres object");
  res->add_option("--checkpoint", checkpoint, "Model checkpoint for the compensated column")
      ->check(CLI::ExistingFile);
  res->add_option("--variant", variants, "Variants to run (default: all four)")
      ->check(CLI::IsMember({"baseline", "high_noise", "low_sos", "high_sos"}));
  res->add_option("--oracle-lambda", oracle_lambda, "Wiener regulariser of the oracle-kernel method")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  set_max_threads(g.threads);
  try {
    if (*gen) gen_data(g, count);
    else if (*sim) simulate_cmd(g, spheres, noise);
    else if (*tr) train_cmd(g, manifest, init);
    else if (*comp) compensate_cmd(g, checkpoint, input);
    else if (*rec) reconstruct_cmd(g, input, presmooth_fwhm);
    else if (*ev) evaluate_cmd(g, manifest, checkpoint, split, !no_dice);
    else if (*res) resolution_cmd(g, checkpoint, variants, oracle_lambda);
  } catch (const std::exception& e) {
    std::cerr << "pact: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
