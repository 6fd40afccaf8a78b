// afflow: simulate paired data, train the conditional flow, restore and
// evaluate. Run `afflow --help` or `afflow <subcommand> --help`.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "afflow/alloc.hpp"
#include "afflow/checkpoint.hpp"
#include "afflow/config.hpp"
#include "afflow/dataset.hpp"
#include "afflow/log.hpp"
#include "afflow/metrics.hpp"
#include "afflow/pgm.hpp"
#include "afflow/rng.hpp"
#include "afflow/selftest.hpp"
#include "afflow/tensor_io.hpp"
#include "afflow/train.hpp"

namespace fs = std::filesystem;
using namespace afflow;

namespace {

// Configuration problems are usage errors (exit 2); everything after the
// configuration is resolved is a runtime failure (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::vector<std::pair<CLI::Option*, std::string>> options;  // option -> config key
  std::map<std::string, std::string> values;                  // storage per key

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(app->add_option(flag, values[key], help), key);
  }
};

void write_resolved(const fs::path& out, const RunConfig& cfg) {
  fs::create_directories(out);
  std::ofstream(out / "config.resolved", std::ios::binary | std::ios::trunc) << cfg.to_text();
}

std::vector<Pair> load_or_empty(const std::string& dir) { return dir.empty() ? std::vector<Pair>{} : load_pairs(dir); }

int cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  SimConfig sim = cfg.sim;
  sim.seed = cfg.seed;
  const auto records = make_dataset(cfg.sim_input, sim, out);
  write_resolved(out, cfg);
  logging::info(fmt::format("wrote {} pairs to {}", records.size(), out.string()));
  return 0;
}

int cmd_train(RunConfig& cfg, const fs::path& out, const std::string& resume) {
  if (cfg.train.data.empty()) throw UsageError("train needs --data (or train.data in the config)");
  const auto data = load_pairs(cfg.train.data);
  const auto heldout = load_or_empty(cfg.train.heldout);
  if (!resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume);
    if (!ck.state) throw std::runtime_error(resume + " holds no training state");
    if (ck.model.config() != cfg.model) throw std::runtime_error("checkpoint/config mismatch in model settings");
    write_resolved(out, cfg);
    run_training(ck.model, *ck.state, cfg.train, data, heldout, out);
    return 0;
  }
  Model model(cfg.model, cfg.seed);
  TrainState state = initial_state(cfg.train, cfg.seed);
  write_resolved(out, cfg);
  logging::info(fmt::format("training {} parameters on {} pairs", model.params().element_count(), data.size()));
  run_training(model, state, cfg.train, data, heldout, out);
  return 0;
}

// Pairs (id, corrupted image) to restore: a dataset directory uses its
// manifest, otherwise every .aft / .pgm file is taken.
std::vector<std::pair<std::string, Tensor>> restore_inputs(const fs::path& dir) {
  std::vector<std::pair<std::string, Tensor>> out;
  if (fs::exists(dir / "manifest.tsv")) {
    for (const auto& r : read_manifest(dir)) out.emplace_back(r.id, load_aft(dir / (r.id + "_corrupt.aft")));
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".aft" || ext == ".pgm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.emplace_back(f.stem().string(), f.extension() == ".pgm" ? read_pgm(f) : load_aft(f));
  if (out.empty()) throw std::runtime_error("no images to restore in " + dir.string());
  return out;
}

int cmd_restore(RunConfig& cfg, const std::set<std::string>& explicit_keys, const fs::path& out) {
  if (cfg.restore.checkpoint.empty()) throw UsageError("restore needs --checkpoint");
  if (cfg.restore.input.empty()) throw UsageError("restore needs --input");
  LoadedCheckpoint ck = load_checkpoint(cfg.restore.checkpoint);
  const auto stored = model_config_values(ck.model.config());
  for (const auto& key : explicit_keys) {
    if (stored.count(key) && stored.at(key) != cfg.get(key)) {
      throw std::runtime_error(fmt::format("checkpoint/config mismatch: {} is {} in the checkpoint but {} here", key,
                                           stored.at(key), cfg.get(key)));
    }
  }
  cfg.model = ck.model.config();
  write_resolved(out, cfg);
  const auto inputs = restore_inputs(cfg.restore.input);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& [id, img] = inputs[i];
    const Shape& s = img.shape();
    if (s.size() != 3 || s[0] != 1) throw std::runtime_error(id + ": expected a 1 x H x W image");
    const Tensor x(Shape{1, 1, s[1], s[2]}, std::vector<double>(img.values().begin(), img.values().end()));
    const Tensor y = ck.model.restore(x, cfg.restore.tau, derive_seed(cfg.seed, i));
    const Tensor restored(s, std::vector<double>(y.values().begin(), y.values().end()));
    save_aft(out / (id + "_restored.aft"), restored);
    write_pgm(out / (id + "_restored.pgm"), restored);
  }
  logging::info(fmt::format("restored {} images into {}", inputs.size(), out.string()));
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out) {
  if (cfg.eval.data.empty()) throw UsageError("eval needs --data");
  std::vector<ImageScore> scores;
  for (const auto& r : read_manifest(cfg.eval.data)) {
    const Tensor clean = load_aft(fs::path(cfg.eval.data) / (r.id + "_clean.aft"));
    const Tensor test = cfg.eval.restored.empty() ? load_aft(fs::path(cfg.eval.data) / (r.id + "_corrupt.aft"))
                                                  : load_aft(fs::path(cfg.eval.restored) / (r.id + "_restored.aft"));
    scores.push_back(score_image(r.id, test, clean));
  }
  const MetricReport report = summarize(std::move(scores));
  write_resolved(out, cfg);
  write_report(out / "metrics.csv", report);
  std::cout << fmt::format("mean psnr {:.4f} ssim {:.6f} uqi {:.6f} over {} images\n", report.mean.psnr,
                           report.mean.ssim, report.mean.uqi, report.images.size());
  return 0;
}

int cmd_selftest() {
  const auto results = run_selftest();
  std::size_t passed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "\n";
    passed += r.passed;
  }
  std::cout << fmt::format("{} passed, {} failed\n", passed, results.size() - passed);
  return passed == results.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  keep_freed_memory();
  CLI::App app{"afflow: motion-artifact simulation and conditional-flow restoration"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir, seed;
  bool quiet = false;
  app.add_option("--config", config_path, "section.key = value file; flags override it");
  app.add_option("--seed", seed, "run seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("-q,--quiet", quiet, "only print warnings");

  Overrides ov;
  auto* sim = app.add_subcommand("simulate", "generate a paired corrupted/clean dataset");
  ov.add(sim, "--amplitude", "sim.amplitude", "fixed motion amplitude A in pixels");
  ov.add(sim, "--input", "sim.input", "directory of clean P5 PGM images (default: phantoms)");
  ov.add(sim, "--phantoms", "sim.phantoms", "number of synthetic phantoms");
  ov.add(sim, "--variants", "sim.variants", "corrupted variants per clean image");
  ov.add(sim, "--side", "sim.side", "output side length (power of two)");
  ov.add(sim, "--fraction", "sim.fraction", "fraction of phase-encode lines corrupted");
  ov.add(sim, "--kind", "sim.kind", "sinusoidal or rigid");

  auto* train = app.add_subcommand("train", "train the flow on a simulated dataset");
  std::string resume;
  ov.add(train, "--data", "train.data", "training dataset directory");
  ov.add(train, "--heldout", "train.heldout", "held-out dataset directory");
  ov.add(train, "--iters", "train.iters", "total optimisation steps");
  ov.add(train, "--batch", "train.batch", "minibatch size");
  ov.add(train, "--lr", "train.lr", "Adam learning rate");
  ov.add(train, "--eval-interval", "train.eval_interval", "steps between checkpoints");
  ov.add(train, "--lambda0", "flow.lambda0", "base coupling coefficient");
  ov.add(train, "--decay-a", "flow.decay", "lambda decay factor a");
  ov.add(train, "--levels", "flow.levels", "flow levels L");
  ov.add(train, "--steps", "flow.steps", "flow steps per level K");
  ov.add(train, "--hidden", "flow.hidden", "coupling subnet width");
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* restore = app.add_subcommand("restore", "restore corrupted images with a trained checkpoint");
  ov.add(restore, "--checkpoint", "restore.checkpoint", "AFCK checkpoint");
  ov.add(restore, "--input", "restore.input", "dataset directory or directory of .aft/.pgm images");
  ov.add(restore, "--tau", "restore.tau", "latent temperature (0 = prior mean)");
  ov.add(restore, "--lambda0", "flow.lambda0", "must match the checkpoint");
  ov.add(restore, "--decay-a", "flow.decay", "must match the checkpoint");
  ov.add(restore, "--levels", "flow.levels", "must match the checkpoint");
  ov.add(restore, "--steps", "flow.steps", "must match the checkpoint");
  ov.add(restore, "--hidden", "flow.hidden", "must match the checkpoint");

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM/UQI report against the clean images");
  ov.add(eval, "--data", "eval.data", "dataset directory");
  ov.add(eval, "--restored", "eval.restored", "restore output (default: score the corrupted inputs)");

  auto* selftest = app.add_subcommand("selftest", "run the invertibility / log-det / gradient property suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  logging::set_quiet(quiet);

  if (selftest->parsed()) return cmd_selftest();

  RunConfig cfg;
  std::set<std::string> explicit_keys;
  try {
    if (!config_path.empty()) {
      for (const auto& key : cfg.load_file(config_path)) explicit_keys.insert(key);
    }
    if (!seed.empty()) cfg.set("run.seed", seed);
    for (const auto& [opt, key] : ov.options) {
      if (opt->count() == 0) continue;
      if (key == "sim.amplitude") {
        cfg.set("sim.amplitude_min", ov.values[key]);
        cfg.set("sim.amplitude_max", ov.values[key]);
        continue;
      }
      cfg.set(key, ov.values[key]);
      explicit_keys.insert(key);
    }
    cfg.model.validate();
    cfg.train.validate();
    if (out_dir.empty()) throw UsageError("--out is required");
  } catch (const std::exception& e) {
    std::cerr << "afflow: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const fs::path out(out_dir);
    if (sim->parsed()) return cmd_simulate(cfg, out);
    if (train->parsed()) return cmd_train(cfg, out, resume);
    if (restore->parsed()) return cmd_restore(cfg, explicit_keys, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
  } catch (const UsageError& e) {
    std::cerr << "afflow: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "afflow: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
