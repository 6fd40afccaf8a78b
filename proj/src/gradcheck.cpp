#include "afflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace afflow {

GradCheckResult gradient_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step) {
  std::vector<Tensor> leaves;
  for (const Tensor& in : inputs) {
    Tensor leaf = in.detach();
    leaf.set_requires_grad(true);
    leaves.push_back(leaf);
  }
  Tensor loss = f(leaves);
  backward(loss);

  GradCheckResult result;
  NoGradGuard no_grad;
  for (Tensor& leaf : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    std::vector<double> numeric(leaf.numel());
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f(leaves).item();
      values[i] = saved - step;
      const double down = f(leaves).item();
      values[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
      result.evaluations += 2;
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff) / denom);
  }
  return result;
}

std::vector<double> numerical_jacobian(const VectorFn& f, const std::vector<double>& x, double step) {
  const std::size_t n = x.size();
  std::vector<double> probe = x;
  std::vector<double> jac;
  std::size_t m = 0;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = x[j] + step;
    const std::vector<double> up = f(probe);
    probe[j] = x[j] - step;
    const std::vector<double> down = f(probe);
    probe[j] = x[j];
    if (j == 0) {
      m = up.size();
      jac.assign(m * n, 0.0);
    }
    if (up.size() != m || down.size() != m) throw std::logic_error("numerical_jacobian: output size changed");
    for (std::size_t i = 0; i < m; ++i) jac[i * n + j] = (up[i] - down[i]) / (2.0 * step);
  }
  return jac;
}

}  // namespace afflow
