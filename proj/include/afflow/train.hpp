#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "afflow/adam.hpp"
#include "afflow/dataset.hpp"
#include "afflow/model.hpp"

namespace afflow {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t batch = 8;
  std::size_t iters = 2000;
  std::size_t eval_interval = 500;
  std::size_t max_skips = 50;  // consecutive rejected steps before aborting
  bool dequantize = true;      // add U[0, 1/256) noise to clean targets
  std::string data;
  std::string heldout;

  void validate() const;
};

struct TrainState {
  std::uint64_t seed = 1;
  std::uint64_t step = 0;  // completed (attempted) steps
  std::size_t consecutive_skips = 0;
  AdamState adam;
};

TrainState initial_state(const TrainConfig& cfg, std::uint64_t seed);

struct StepResult {
  bool applied = false;
  double loss = 0.0;  // NaN when the forward pass itself failed
};

// One optimisation step on the minibatch assigned to state.step. The batch
// order and dequantisation noise depend only on (seed, step), so a resumed
// run replays an uninterrupted one exactly. Throws std::runtime_error after
// max_skips consecutive rejected steps.
StepResult train_step(Model& model, TrainState& state, const TrainConfig& cfg, const std::vector<Pair>& data);

// Stacks images into an N x 1 x H x W batch.
Tensor stack_images(const std::vector<Pair>& pairs, const std::vector<std::size_t>& idx, bool clean);

// Mean per-dimension NLL over pairs without gradients or noise.
double evaluate_nll(Model& model, const std::vector<Pair>& pairs, std::size_t batch);

struct HeldoutScore {
  double nll = 0, psnr = 0, ssim = 0, corrupt_psnr = 0, corrupt_ssim = 0;
};
HeldoutScore evaluate_heldout(Model& model, const std::vector<Pair>& pairs, std::size_t batch, double tau = 0.0);

// Runs until state.step == cfg.iters. With a non-empty out_dir, appends
// "step,nll,lr" rows to loss.csv and writes checkpoint.afck every
// eval_interval steps and at the end; when heldout is non-empty also logs
// heldout.csv.
void run_training(Model& model, TrainState& state, const TrainConfig& cfg, const std::vector<Pair>& data,
                  const std::vector<Pair>& heldout, const std::filesystem::path& out_dir);

}  // namespace afflow
