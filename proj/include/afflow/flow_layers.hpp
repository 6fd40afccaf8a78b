#pragma once

// Invertible layers of the conditional flow. Tensors are N x C x H x W and
// every forward returns a per-sample log-determinant of shape [N].

#include <stdexcept>
#include <string>

#include "afflow/tensor.hpp"

namespace afflow {

// A numerical condition that makes a training step unusable (singular
// mixing matrix, non-finite activations). Trainers skip the step.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LayerOut {
  Tensor y;
  Tensor logdet;  // [N]
};

// y = s * (x + b) per channel; s, b have shape [C].
LayerOut actnorm_forward(const Tensor& x, const Tensor& s, const Tensor& b);
Tensor actnorm_inverse(const Tensor& y, const Tensor& s, const Tensor& b);
// Writes b = -mean, s = 1 / std over (N, H, W) so that the output of x is
// standardised per channel. A flat channel keeps s = 1.
void actnorm_data_init(const Tensor& x, Tensor& s, Tensor& b);

// y = W x at every pixel; W is C x C. |det W| < 1e-12 throws NumericalError.
LayerOut invconv_forward(const Tensor& x, const Tensor& w);
Tensor invconv_inverse(const Tensor& y, const Tensor& w);

struct CouplingParams {
  // conv3x3 (C/2 + Ccond -> Ch), conv1x1 (Ch -> Ch), conv3x3 (Ch -> C).
  Tensor w1, b1, w2, b2, w3, b3;
};

// Nonlinear artifact coupling. With x = (xa, xb) split by channel halves and
// (m, t) = subnet(concat(xa, cond)):
//   g  = eps + (1 - 2 eps) sigmoid(t)
//   yb = m + xb - lambda * xb * g
// so the Jacobian is diagonal in xb with entries 1 - lambda g > 0 whenever
// 0 <= lambda < 1 / (1 - eps). cond may be undefined.
LayerOut nac_forward(const Tensor& x, const Tensor& cond, const CouplingParams& p, double lambda, double eps);
Tensor nac_inverse(const Tensor& y, const Tensor& cond, const CouplingParams& p, double lambda, double eps);

// Largest lambda for which the coupling stays a bijection.
double nac_lambda_limit(double eps);

// Diagonal Gaussian log-density summed per sample, log_sigma elementwise.
Tensor gaussian_logp(const Tensor& z, const Tensor& mean, const Tensor& log_sigma);

struct Prior {
  Tensor mean, log_sigma;
};

// 1x1 conv head producing (mean, log_sigma), each half of its 2Cz outputs.
Prior prior_head(const Tensor& features, const Tensor& w, const Tensor& b);

struct SplitOut {
  Tensor keep;
  Tensor z;
  Tensor logp;  // [N]
};

// keep = first C/2 channels, z = the rest, scored under prior_head(keep).
SplitOut split_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor split_inverse(const Tensor& keep, const Tensor& z);

}  // namespace afflow
