#include "afflow/flow_layers.hpp"

#include <cmath>
#include <numbers>

#include "afflow/linalg.hpp"
#include "afflow/ops.hpp"

namespace afflow {

namespace {

void require_nchw(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(who) + ": expected N x C x H x W, got " + shape_str(x.shape()));
}

Tensor channel_view(const Tensor& v) { return reshape(v, {1, v.numel(), 1, 1}); }

void require_channels(const Tensor& x, const Tensor& v, const char* who) {
  if (v.rank() != 1 || v.size(0) != x.size(1)) {
    throw std::invalid_argument(std::string(who) + ": parameter " + shape_str(v.shape()) + " does not match " +
                                std::to_string(x.size(1)) + " channels");
  }
}

Tensor per_sample(const Tensor& scalar, std::size_t n) { return add(Tensor(Shape{n}, 0.0), scalar); }

Tensor as_matrix_kernel(const Tensor& w) { return reshape(w, {w.size(0), w.size(1), 1, 1}); }

void require_finite(const Tensor& t, const char* who) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(who) + ": non-finite value");
  }
}

std::pair<Tensor, Tensor> halves(const Tensor& x, const char* who) {
  require_nchw(x, who);
  const std::size_t C = x.size(1);
  if (C % 2) throw std::invalid_argument(std::string(who) + ": channel count must be even, got " + std::to_string(C));
  return {narrow(x, 1, 0, C / 2), narrow(x, 1, C / 2, C / 2)};
}

// Returns (m, g) for the coupling given the conditioning half.
std::pair<Tensor, Tensor> coupling_terms(const Tensor& xa, const Tensor& cond, const CouplingParams& p, double eps) {
  const Tensor in = cond.defined() ? concat({xa, cond}, 1) : xa;
  Tensor h = leaky_relu(conv2d(in, p.w1, p.b1));
  h = leaky_relu(conv2d(h, p.w2, p.b2));
  const Tensor o = conv2d(h, p.w3, p.b3);
  require_finite(o, "coupling subnet");
  const std::size_t half = o.size(1) / 2;
  const Tensor m = narrow(o, 1, 0, half);
  const Tensor g = add_scalar(scale(sigmoid(narrow(o, 1, half, half)), 1.0 - 2.0 * eps), eps);
  return {m, g};
}

}  // namespace

LayerOut actnorm_forward(const Tensor& x, const Tensor& s, const Tensor& b) {
  require_nchw(x, "actnorm");
  require_channels(x, s, "actnorm");
  require_channels(x, b, "actnorm");
  for (double v : s.values()) {
    if (v == 0.0) throw NumericalError("actnorm: zero scale");
  }
  const Tensor y = mul(add(x, channel_view(b)), channel_view(s));
  const double hw = static_cast<double>(x.size(2) * x.size(3));
  return {y, per_sample(scale(sum(log(abs(s))), hw), x.size(0))};
}

Tensor actnorm_inverse(const Tensor& y, const Tensor& s, const Tensor& b) {
  require_nchw(y, "actnorm");
  require_channels(y, s, "actnorm");
  return sub(div(y, channel_view(s)), channel_view(b));
}

void actnorm_data_init(const Tensor& x, Tensor& s, Tensor& b) {
  require_nchw(x, "actnorm init");
  require_channels(x, s, "actnorm init");
  const std::size_t N = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
  const auto v = x.values();
  auto sv = s.mutable_values(), bv = b.mutable_values();
  const double count = static_cast<double>(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) mean += v[(n * C + c) * HW + i];
    mean /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = v[(n * C + c) * HW + i] - mean;
        var += d * d;
      }
    var /= count;
    bv[c] = -mean;
    sv[c] = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }
}

LayerOut invconv_forward(const Tensor& x, const Tensor& w) {
  require_nchw(x, "invconv");
  if (w.rank() != 2 || w.size(0) != x.size(1) || w.size(1) != x.size(1)) {
    throw std::invalid_argument("invconv: weight " + shape_str(w.shape()) + " does not match " +
                                std::to_string(x.size(1)) + " channels");
  }
  Tensor lad;
  try {
    lad = logabsdet(w);
  } catch (const std::domain_error&) {
    throw NumericalError("invconv: singular mixing matrix");
  }
  if (!(lad.item() >= std::log(1e-12))) throw NumericalError("invconv: |det W| below 1e-12");
  const double hw = static_cast<double>(x.size(2) * x.size(3));
  return {conv2d(x, as_matrix_kernel(w)), per_sample(scale(lad, hw), x.size(0))};
}

Tensor invconv_inverse(const Tensor& y, const Tensor& w) {
  const std::size_t C = w.size(0);
  const LuDecomposition lu = lu_decompose(w.values(), C);
  return conv2d(y, Tensor(Shape{C, C, 1, 1}, lu.inverse()));
}

double nac_lambda_limit(double eps) { return 1.0 / (1.0 - eps); }

LayerOut nac_forward(const Tensor& x, const Tensor& cond, const CouplingParams& p, double lambda, double eps) {
  const auto [xa, xb] = halves(x, "coupling");
  const auto [m, g] = coupling_terms(xa, cond, p, eps);
  // 1 - lambda g, bounded below by 1 - lambda (1 - eps) > 0.
  const Tensor factor = add_scalar(scale(g, -lambda), 1.0);
  const Tensor yb = add(m, mul(xb, factor));
  return {concat({xa, yb}, 1), sum(log(factor), {1, 2, 3})};
}

Tensor nac_inverse(const Tensor& y, const Tensor& cond, const CouplingParams& p, double lambda, double eps) {
  const auto [ya, yb] = halves(y, "coupling");
  const auto [m, g] = coupling_terms(ya, cond, p, eps);
  const Tensor xb = div(sub(yb, m), add_scalar(scale(g, -lambda), 1.0));
  return concat({ya, xb}, 1);
}

Tensor gaussian_logp(const Tensor& z, const Tensor& mean, const Tensor& log_sigma) {
  const Tensor u = mul(sub(z, mean), exp(neg(log_sigma)));
  const Tensor elem = add_scalar(add(scale(mul(u, u), -0.5), neg(log_sigma)), -0.5 * std::log(2.0 * std::numbers::pi));
  std::vector<std::size_t> axes;
  for (std::size_t d = 1; d < z.rank(); ++d) axes.push_back(d);
  return sum(elem, axes);
}

Prior prior_head(const Tensor& features, const Tensor& w, const Tensor& b) {
  const Tensor o = conv2d(features, as_matrix_kernel(w), b);
  const std::size_t half = o.size(1) / 2;
  return {narrow(o, 1, 0, half), narrow(o, 1, half, half)};
}

SplitOut split_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto [keep, z] = halves(x, "split");
  const Prior pr = prior_head(keep, w, b);
  return {keep, z, gaussian_logp(z, pr.mean, pr.log_sigma)};
}

Tensor split_inverse(const Tensor& keep, const Tensor& z) { return concat({keep, z}, 1); }

}  // namespace afflow
