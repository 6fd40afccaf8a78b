#include "afflow/train.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "afflow/checkpoint.hpp"
#include "afflow/flow_layers.hpp"
#include "afflow/log.hpp"
#include "afflow/metrics.hpp"
#include "afflow/ops.hpp"
#include "afflow/rng.hpp"

namespace afflow {

void TrainConfig::validate() const {
  const auto fail = [](const std::string& w) { throw std::invalid_argument("invalid config: " + w); };
  if (!(lr > 0.0)) fail("train.lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("train.beta1/beta2 must lie in [0, 1)");
  if (batch == 0) fail("train.batch must be >= 1");
  if (eval_interval == 0) fail("train.eval_interval must be >= 1");
  if (max_skips == 0) fail("train.max_skips must be >= 1");
}

TrainState initial_state(const TrainConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.seed = seed;
  s.adam.config.lr = cfg.lr;
  s.adam.config.beta1 = cfg.beta1;
  s.adam.config.beta2 = cfg.beta2;
  return s;
}

namespace {

// Indices of the minibatch used at a step: epochs are independent seeded
// permutations and a trailing partial batch is dropped.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::size_t n, std::size_t batch) {
  const std::size_t per_epoch = n / batch;
  const std::uint64_t epoch = step / per_epoch, pos = step % per_epoch;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 0x65706f6368000000ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return {perm.begin() + static_cast<std::ptrdiff_t>(pos * batch),
          perm.begin() + static_cast<std::ptrdiff_t>((pos + 1) * batch)};
}

}  // namespace

Tensor stack_images(const std::vector<Pair>& pairs, const std::vector<std::size_t>& idx, bool clean) {
  if (idx.empty()) throw std::invalid_argument("empty batch");
  const Tensor& first = clean ? pairs[idx[0]].clean : pairs[idx[0]].corrupt;
  const Shape& s = first.shape();
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  std::vector<double> data;
  data.reserve(idx.size() * H * W);
  for (std::size_t i : idx) {
    const Tensor& t = clean ? pairs[i].clean : pairs[i].corrupt;
    if (t.numel() != H * W) throw std::invalid_argument("batch images differ in size");
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(Shape{idx.size(), 1, H, W}, std::move(data));
}

StepResult train_step(Model& model, TrainState& state, const TrainConfig& cfg, const std::vector<Pair>& data) {
  if (cfg.batch > data.size()) {
    throw std::invalid_argument(fmt::format("batch size {} exceeds dataset size {}", cfg.batch, data.size()));
  }
  const std::uint64_t step = state.step++;
  const auto idx = batch_indices(state.seed, step, data.size(), cfg.batch);
  Tensor y = stack_images(data, idx, true);
  const Tensor x = stack_images(data, idx, false);
  if (cfg.dequantize) {
    Rng rng(derive_seed(state.seed, step));
    for (double& v : y.mutable_values()) v += rng.uniform() / 256.0;
  }

  StepResult r;
  model.params().zero_grad();
  try {
    const Tensor loss = model.nll(y, x);
    r.loss = loss.item();
    if (std::isfinite(r.loss)) {
      backward(loss);
      r.applied = adam_step(model.params(), state.adam);
    } else {
      logging::warn(fmt::format("step {}: non-finite loss; step skipped", step + 1));
    }
  } catch (const NumericalError& e) {
    r.loss = std::numeric_limits<double>::quiet_NaN();
    logging::warn(fmt::format("step {}: {}; step skipped", step + 1, e.what()));
  }
  model.params().zero_grad();
  state.consecutive_skips = r.applied ? 0 : state.consecutive_skips + 1;
  if (state.consecutive_skips >= cfg.max_skips) {
    throw std::runtime_error(fmt::format("aborting: {} consecutive steps rejected (last at step {})",
                                         state.consecutive_skips, step + 1));
  }
  return r;
}

double evaluate_nll(Model& model, const std::vector<Pair>& pairs, std::size_t batch) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); i += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(pairs.size(), i + batch); ++j) idx.push_back(j);
    total += model.nll(stack_images(pairs, idx, true), stack_images(pairs, idx, false)).item() * idx.size();
  }
  return total / static_cast<double>(pairs.size());
}

HeldoutScore evaluate_heldout(Model& model, const std::vector<Pair>& pairs, std::size_t batch, double tau) {
  HeldoutScore s;
  s.nll = evaluate_nll(model, pairs, batch);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor x = stack_images(pairs, {i}, false);
    const Tensor restored = model.restore(x, tau, i);
    const Tensor y(pairs[i].clean.shape(), std::vector<double>(restored.values().begin(), restored.values().end()));
    s.psnr += psnr(y, pairs[i].clean);
    s.ssim += ssim(y, pairs[i].clean);
    s.corrupt_psnr += psnr(pairs[i].corrupt, pairs[i].clean);
    s.corrupt_ssim += ssim(pairs[i].corrupt, pairs[i].clean);
  }
  const double n = static_cast<double>(pairs.size());
  s.psnr /= n;
  s.ssim /= n;
  s.corrupt_psnr /= n;
  s.corrupt_ssim /= n;
  return s;
}

namespace {

// Keeps the rows of an existing loss log up to and including `step` so a
// resumed run continues the same file.
void truncate_log(const std::filesystem::path& path, std::uint64_t step, const std::string& header) {
  std::string kept = header + "\n";
  if (std::ifstream is{path}) {
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      if (std::stoull(line.substr(0, comma)) <= step) kept += line + "\n";
    }
  }
  std::ofstream(path, std::ios::binary | std::ios::trunc) << kept;
}

}  // namespace

void run_training(Model& model, TrainState& state, const TrainConfig& cfg, const std::vector<Pair>& data,
                  const std::vector<Pair>& heldout, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  const bool files = !out_dir.empty();
  std::ofstream loss_log, heldout_log;
  if (files) {
    std::filesystem::create_directories(out_dir);
    truncate_log(out_dir / "loss.csv", state.step, "step,nll,lr");
    loss_log.open(out_dir / "loss.csv", std::ios::binary | std::ios::app);
    if (!heldout.empty()) {
      truncate_log(out_dir / "heldout.csv", state.step, "step,nll,psnr,ssim,corrupt_psnr,corrupt_ssim");
      heldout_log.open(out_dir / "heldout.csv", std::ios::binary | std::ios::app);
    }
  }
  while (state.step < cfg.iters) {
    const StepResult r = train_step(model, state, cfg, data);
    if (files) loss_log << fmt::format("{},{},{}\n", state.step, r.loss, state.adam.config.lr) << std::flush;
    const bool last = state.step == cfg.iters;
    if (state.step % cfg.eval_interval == 0 || last) {
      std::string msg = fmt::format("step {}/{} nll {:.5f}", state.step, cfg.iters, r.loss);
      if (!heldout.empty()) {
        const HeldoutScore h = evaluate_heldout(model, heldout, cfg.batch);
        msg += fmt::format(" | held-out nll {:.5f} psnr {:.3f} (corrupted {:.3f})", h.nll, h.psnr, h.corrupt_psnr);
        if (files) {
          heldout_log << fmt::format("{},{},{},{},{},{}\n", state.step, h.nll, h.psnr, h.ssim, h.corrupt_psnr,
                                     h.corrupt_ssim)
                      << std::flush;
        }
      }
      logging::info(msg);
      if (files) save_checkpoint(out_dir / "checkpoint.afck", model, &state);
    }
  }
}

}  // namespace afflow
