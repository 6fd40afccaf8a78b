#pragma once

// Conditional flow for artifact removal: an encoder turns the corrupted
// image x into multi-level features, and an invertible multi-scale flow maps
// the clean image y to latents conditioned on those features.
//
// Flow level l runs at H / 2^(l+1) and is conditioned on squeeze2 of encoder
// level l (which runs at H / 2^l), giving 4 * features channels.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "afflow/params.hpp"
#include "afflow/tensor.hpp"

namespace afflow {

class Rng;

struct FlowConfig {
  std::size_t levels = 3;     // L
  std::size_t steps = 12;     // K per level
  std::size_t hidden = 64;    // coupling subnet width
  double lambda0 = 0.2;
  double decay = 1.0;         // a in lambda_k = a^k lambda0
  double eps_inv = 0.05;
  std::size_t in_channels = 1;

  bool operator==(const FlowConfig&) const = default;
};

struct EncoderConfig {
  std::size_t blocks = 4;     // residual blocks in the trunk
  std::size_t features = 16;  // channels of every feature level

  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  FlowConfig flow;
  EncoderConfig encoder;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  // lambda for global step index k = level * steps + step.
  double lambda_at(std::size_t k) const;
  bool operator==(const ModelConfig&) const = default;
};

// Latents ordered by level: split-off halves of levels 0..L-2, then the
// final latent.
using LatentCode = std::vector<Tensor>;

struct FlowOutput {
  LatentCode z;
  Tensor logdet;  // [N]
  Tensor logp;    // [N]
};

class Model {
 public:
  // Random initialisation from seed. Coupling output convs and prior heads
  // start at zero; mixing matrices are random rotations.
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  bool actnorm_initialized() const { return actnorm_ready_; }
  void set_actnorm_initialized(bool on) { actnorm_ready_ = on; }

  // Sets every flow layer to the identity: s = 1, b = 0, W = I, zero
  // coupling output conv, zero prior heads. Marks actnorm initialised.
  void set_identity();

  // x: N x 1 x H x W. Returns one N x F x H/2^l x W/2^l tensor per level.
  std::vector<Tensor> encode(const Tensor& x) const;

  // Per-level flow conditioning derived from encoder features.
  std::vector<Tensor> conditioning(const Tensor& x) const;

  // If actnorm is not yet initialised, initialises it from this batch first.
  FlowOutput forward(const Tensor& y, const std::vector<Tensor>& cond);

  // Exact inverse of forward for the given latents.
  Tensor inverse(const LatentCode& z, const std::vector<Tensor>& cond) const;

  // Draws every latent from its conditional prior as mean + tau sigma eps;
  // tau = 0 uses the means and needs no generator.
  Tensor sample(const std::vector<Tensor>& cond, double tau, Rng* rng) const;

  // Mean over the batch of -(logp + logdet) / (C H W).
  Tensor nll(const Tensor& y, const Tensor& x);

  // Restoration of x (N x 1 x H x W), clamped to [0, 1].
  Tensor restore(const Tensor& x, double tau, std::uint64_t seed) const;

  // Shape of every latent for an H x W input with batch n.
  std::vector<Shape> latent_shapes(std::size_t n, std::size_t h, std::size_t w) const;

  void require_extents(std::size_t h, std::size_t w) const;

 private:
  std::string step_prefix(std::size_t level, std::size_t step) const;
  std::string level_prefix(std::size_t level) const;
  Tensor inverse_impl(const LatentCode* z, const std::vector<Tensor>& cond, double tau, Rng* rng) const;

  ModelConfig config_;
  ParamStore params_;
  bool actnorm_ready_ = false;
};

// Moves every flow parameter away from its initial value (actnorm scales into
// [0.5, 1.5], zero-initialised heads to N(0, scale^2)), so that property
// checks exercise non-trivial layers.
void jitter_parameters(Model& model, std::uint64_t seed, double scale = 0.1);

}  // namespace afflow
