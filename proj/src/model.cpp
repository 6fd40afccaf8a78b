#include "afflow/model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "afflow/flow_layers.hpp"
#include "afflow/linalg.hpp"
#include "afflow/ops.hpp"
#include "afflow/rng.hpp"

namespace afflow {

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) { throw std::invalid_argument("invalid config: " + what); };
  if (flow.levels < 1) fail("flow.levels must be >= 1");
  if (flow.steps < 1) fail("flow.steps must be >= 1");
  if (flow.hidden < 1) fail("flow.hidden must be >= 1");
  if (flow.in_channels < 1) fail("input channel count must be >= 1");
  if (!(flow.eps_inv > 0.0 && flow.eps_inv < 0.5)) fail("flow.eps_inv must lie in (0, 0.5)");
  if (!(flow.decay > 0.0 && flow.decay <= 1.0)) fail("flow.decay must lie in (0, 1]");
  if (!(flow.lambda0 >= 0.0)) fail("flow.lambda0 must be >= 0");
  if (!(flow.lambda0 < nac_lambda_limit(flow.eps_inv))) {
    fail(fmt::format("flow.lambda0 = {} breaks invertibility; it must stay below 1/(1 - eps_inv) = {}", flow.lambda0,
                     nac_lambda_limit(flow.eps_inv)));
  }
  if (encoder.blocks > 64) fail("encoder.blocks must be <= 64");
  if (encoder.features < 1) fail("encoder.features must be >= 1");
}

double ModelConfig::lambda_at(std::size_t k) const {
  return std::pow(flow.decay, static_cast<double>(k)) * flow.lambda0;
}

namespace {

Tensor conv_weight(std::size_t out, std::size_t in, std::size_t k, double gain, Rng& rng) {
  return Tensor::randn({out, in, k, k}, rng, gain / std::sqrt(static_cast<double>(in * k * k)));
}

std::size_t level_channels(const FlowConfig& f, std::size_t level) { return 4 * f.in_channels << level; }

}  // namespace

std::string Model::level_prefix(std::size_t level) const { return fmt::format("flow/L{}/", level); }

std::string Model::step_prefix(std::size_t level, std::size_t step) const {
  return fmt::format("flow/L{}/S{:02}/", level, step);
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const FlowConfig& f = config_.flow;
  const std::size_t F = config_.encoder.features;
  Rng rng(derive_seed(seed, 0x696e6974));

  params_.add("enc/in/w", conv_weight(F, f.in_channels, 3, std::sqrt(2.0), rng));
  params_.add("enc/in/b", Tensor({F}));
  for (std::size_t i = 0; i < config_.encoder.blocks; ++i) {
    const std::string p = fmt::format("enc/block{:02}/", i);
    params_.add(p + "c1/w", conv_weight(F, F, 3, std::sqrt(2.0), rng));
    params_.add(p + "c1/b", Tensor({F}));
    params_.add(p + "c2/w", conv_weight(F, F, 3, 0.1, rng));
    params_.add(p + "c2/b", Tensor({F}));
  }
  for (std::size_t l = 0; l < f.levels; ++l) {
    params_.add(fmt::format("enc/level{}/w", l), conv_weight(F, F, 3, 1.0, rng));
    params_.add(fmt::format("enc/level{}/b", l), Tensor({F}));
  }

  const std::size_t cond = 4 * F;
  for (std::size_t l = 0; l < f.levels; ++l) {
    const std::size_t C = level_channels(f, l);
    for (std::size_t k = 0; k < f.steps; ++k) {
      const std::string p = step_prefix(l, k);
      params_.add(p + "actnorm/s", Tensor({C}, 1.0));
      params_.add(p + "actnorm/b", Tensor({C}));
      params_.add(p + "invconv/w", Tensor({C, C}, random_orthogonal(C, rng)));
      params_.add(p + "coupling/w1", conv_weight(f.hidden, C / 2 + cond, 3, std::sqrt(2.0), rng));
      params_.add(p + "coupling/b1", Tensor({f.hidden}));
      params_.add(p + "coupling/w2", conv_weight(f.hidden, f.hidden, 1, std::sqrt(2.0), rng));
      params_.add(p + "coupling/b2", Tensor({f.hidden}));
      params_.add(p + "coupling/w3", Tensor({C, f.hidden, 3, 3}));
      params_.add(p + "coupling/b3", Tensor({C}));
    }
    if (l + 1 < f.levels) {
      params_.add(level_prefix(l) + "prior/w", Tensor({C, C / 2}));
      params_.add(level_prefix(l) + "prior/b", Tensor({C}));
    }
  }
  const std::size_t top = level_channels(f, f.levels - 1);
  params_.add("flow/top/w", Tensor({2 * top, cond}));
  params_.add("flow/top/b", Tensor({2 * top}));
}

void Model::set_identity() {
  for (const auto& [name, t] : params_) {
    if (!name.starts_with("flow/")) continue;
    Tensor p = t;
    auto v = p.mutable_values();
    if (name.ends_with("actnorm/s")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (name.ends_with("invconv/w")) {
      const std::size_t C = p.size(0);
      std::fill(v.begin(), v.end(), 0.0);
      for (std::size_t i = 0; i < C; ++i) v[i * C + i] = 1.0;
    } else if (name.ends_with("actnorm/b") || name.ends_with("coupling/w3") || name.ends_with("coupling/b3") ||
               name.find("prior/") != std::string::npos || name.starts_with("flow/top/")) {
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
  actnorm_ready_ = true;
}

void Model::require_extents(std::size_t h, std::size_t w) const {
  const std::size_t m = std::size_t{1} << config_.flow.levels;
  if (h == 0 || w == 0 || h % m || w % m) {
    throw std::invalid_argument(fmt::format("image {}x{} is not divisible by 2^L = {}", h, w, m));
  }
}

std::vector<Tensor> Model::encode(const Tensor& x) const {
  if (x.rank() != 4 || x.size(1) != config_.flow.in_channels) {
    throw std::invalid_argument("encode: expected N x " + std::to_string(config_.flow.in_channels) +
                                " x H x W, got " + shape_str(x.shape()));
  }
  require_extents(x.size(2), x.size(3));
  const auto P = [this](const std::string& n) { return params_.get(n); };
  Tensor h = leaky_relu(conv2d(x, P("enc/in/w"), P("enc/in/b")));
  for (std::size_t i = 0; i < config_.encoder.blocks; ++i) {
    const std::string p = fmt::format("enc/block{:02}/", i);
    const Tensor r = conv2d(leaky_relu(conv2d(h, P(p + "c1/w"), P(p + "c1/b"))), P(p + "c2/w"), P(p + "c2/b"));
    h = add(h, r);
  }
  std::vector<Tensor> levels;
  for (std::size_t l = 0; l < config_.flow.levels; ++l) {
    if (l > 0) h = avg_pool2(h);
    levels.push_back(conv2d(h, P(fmt::format("enc/level{}/w", l)), P(fmt::format("enc/level{}/b", l))));
  }
  return levels;
}

std::vector<Tensor> Model::conditioning(const Tensor& x) const {
  std::vector<Tensor> cond;
  for (const Tensor& f : encode(x)) cond.push_back(squeeze2(f));
  return cond;
}

FlowOutput Model::forward(const Tensor& y, const std::vector<Tensor>& cond) {
  const FlowConfig& f = config_.flow;
  if (y.rank() != 4 || y.size(1) != f.in_channels) {
    throw std::invalid_argument("flow: expected N x " + std::to_string(f.in_channels) + " x H x W, got " +
                                shape_str(y.shape()));
  }
  require_extents(y.size(2), y.size(3));
  if (cond.size() != f.levels) throw std::invalid_argument("flow: need one conditioning tensor per level");
  const std::size_t N = y.size(0);
  const auto P = [this](const std::string& n) { return params_.get(n); };

  FlowOutput out;
  out.logdet = Tensor(Shape{N}, 0.0);
  out.logp = Tensor(Shape{N}, 0.0);
  const bool init = !actnorm_ready_;
  Tensor x = y;
  for (std::size_t l = 0; l < f.levels; ++l) {
    x = squeeze2(x);
    for (std::size_t k = 0; k < f.steps; ++k) {
      const std::string p = step_prefix(l, k);
      Tensor s = P(p + "actnorm/s"), b = P(p + "actnorm/b");
      if (init) actnorm_data_init(x, s, b);
      LayerOut a = actnorm_forward(x, s, b);
      LayerOut c = invconv_forward(a.y, P(p + "invconv/w"));
      const CouplingParams cp{P(p + "coupling/w1"), P(p + "coupling/b1"), P(p + "coupling/w2"),
                              P(p + "coupling/b2"), P(p + "coupling/w3"), P(p + "coupling/b3")};
      LayerOut n = nac_forward(c.y, cond[l], cp, config_.lambda_at(l * f.steps + k), f.eps_inv);
      out.logdet = add(out.logdet, add(add(a.logdet, c.logdet), n.logdet));
      x = n.y;
    }
    if (l + 1 < f.levels) {
      SplitOut sp = split_forward(x, P(level_prefix(l) + "prior/w"), P(level_prefix(l) + "prior/b"));
      out.logp = add(out.logp, sp.logp);
      out.z.push_back(sp.z);
      x = sp.keep;
    }
  }
  const Prior top = prior_head(cond.back(), P("flow/top/w"), P("flow/top/b"));
  out.logp = add(out.logp, gaussian_logp(x, top.mean, top.log_sigma));
  out.z.push_back(x);
  if (init) actnorm_ready_ = true;
  return out;
}

std::vector<Shape> Model::latent_shapes(std::size_t n, std::size_t h, std::size_t w) const {
  require_extents(h, w);
  const FlowConfig& f = config_.flow;
  std::vector<Shape> shapes;
  for (std::size_t l = 0; l < f.levels; ++l) {
    const std::size_t C = level_channels(f, l), hh = h >> (l + 1), ww = w >> (l + 1);
    shapes.push_back({n, l + 1 < f.levels ? C / 2 : C, hh, ww});
  }
  return shapes;
}

namespace {

Tensor draw(const Prior& pr, double tau, Rng* rng) {
  if (tau == 0.0) return pr.mean.detach();
  if (!rng) throw std::invalid_argument("sampling with tau > 0 needs a generator");
  Tensor eps = Tensor::randn(pr.mean.shape(), *rng);
  return add(pr.mean, mul(scale(eps, tau), exp(pr.log_sigma)));
}

}  // namespace

Tensor Model::inverse_impl(const LatentCode* z, const std::vector<Tensor>& cond, double tau, Rng* rng) const {
  const FlowConfig& f = config_.flow;
  if (cond.size() != f.levels) throw std::invalid_argument("flow: need one conditioning tensor per level");
  const auto P = [this](const std::string& n) { return params_.get(n); };
  if (z) {
    if (z->size() != f.levels) {
      throw std::invalid_argument(fmt::format("latent code has {} parts, expected {}", z->size(), f.levels));
    }
    const Tensor& c0 = cond.front();
    const auto shapes = latent_shapes(c0.size(0), 2 * c0.size(2), 2 * c0.size(3));
    for (std::size_t l = 0; l < f.levels; ++l) {
      if ((*z)[l].shape() != shapes[l]) {
        throw std::invalid_argument(fmt::format("latent {} has shape {}, expected {}", l, shape_str((*z)[l].shape()),
                                                shape_str(shapes[l])));
      }
    }
  }
  Tensor x = z ? z->back() : draw(prior_head(cond.back(), P("flow/top/w"), P("flow/top/b")), tau, rng);
  for (std::size_t l = f.levels; l-- > 0;) {
    if (l + 1 < f.levels) {
      const Tensor zl =
          z ? (*z)[l] : draw(prior_head(x, P(level_prefix(l) + "prior/w"), P(level_prefix(l) + "prior/b")), tau, rng);
      x = split_inverse(x, zl);
    }
    for (std::size_t k = f.steps; k-- > 0;) {
      const std::string p = step_prefix(l, k);
      const CouplingParams cp{P(p + "coupling/w1"), P(p + "coupling/b1"), P(p + "coupling/w2"),
                              P(p + "coupling/b2"), P(p + "coupling/w3"), P(p + "coupling/b3")};
      x = nac_inverse(x, cond[l], cp, config_.lambda_at(l * f.steps + k), f.eps_inv);
      x = invconv_inverse(x, P(p + "invconv/w"));
      x = actnorm_inverse(x, P(p + "actnorm/s"), P(p + "actnorm/b"));
    }
    x = unsqueeze2(x);
  }
  return x;
}

Tensor Model::inverse(const LatentCode& z, const std::vector<Tensor>& cond) const {
  return inverse_impl(&z, cond, 0.0, nullptr);
}

Tensor Model::sample(const std::vector<Tensor>& cond, double tau, Rng* rng) const {
  return inverse_impl(nullptr, cond, tau, rng);
}

Tensor Model::nll(const Tensor& y, const Tensor& x) {
  if (y.shape() != x.shape()) {
    throw std::invalid_argument("nll: clean " + shape_str(y.shape()) + " and corrupted " + shape_str(x.shape()) +
                                " differ in shape");
  }
  const FlowOutput out = forward(y, conditioning(x));
  const double dims = static_cast<double>(y.size(1) * y.size(2) * y.size(3));
  const Tensor per_sample = add(out.logp, out.logdet);
  return scale(mean(per_sample), -1.0 / dims);
}

Tensor Model::restore(const Tensor& x, double tau, std::uint64_t seed) const {
  NoGradGuard no_grad;
  Rng rng(derive_seed(seed, 0x72657374));
  const Tensor y = sample(conditioning(x), tau, &rng);
  std::vector<double> v(y.values().begin(), y.values().end());
  for (double& e : v) e = std::isfinite(e) ? std::clamp(e, 0.0, 1.0) : 0.0;
  return Tensor(y.shape(), std::move(v));
}

void jitter_parameters(Model& model, std::uint64_t seed, double scale) {
  Rng rng(derive_seed(seed, 0x6a6974));
  for (const auto& [name, t] : model.params()) {
    if (!name.starts_with("flow/")) continue;
    Tensor p = t;
    for (double& v : p.mutable_values()) {
      if (name.ends_with("actnorm/s")) {
        v = rng.uniform(0.5, 1.5);
      } else if (!name.ends_with("invconv/w")) {
        v += scale * rng.normal();
      }
    }
  }
  model.set_actnorm_initialized(true);
}

}  // namespace afflow
