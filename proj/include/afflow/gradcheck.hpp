#pragma once

// Central finite-difference checks of reverse-mode gradients and dense
// numerical Jacobians; the independent oracles behind the property suite.

#include <functional>
#include <vector>

#include "afflow/tensor.hpp"

namespace afflow {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // over inputs, ||analytic - numeric|| / max(||.||, ||.||)
  std::size_t evaluations = 0;
};

// f must return a scalar. Inputs are perturbed in place and restored.
GradCheckResult gradient_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                               double step = 1e-5);

using VectorFn = std::function<std::vector<double>(const std::vector<double>&)>;

// Row-major m x n Jacobian of f at x by central differences.
std::vector<double> numerical_jacobian(const VectorFn& f, const std::vector<double>& x,
                                       double step = 1e-6);

}  // namespace afflow
