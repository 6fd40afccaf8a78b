#pragma once

// Differentiable operations on Tensor. Image tensors are NCHW.

#include <cstddef>
#include <vector>

#include "afflow/tensor.hpp"

namespace afflow {

// Elementwise with numpy-style broadcasting over singleton (or missing
// leading) axes. Incompatible shapes throw std::invalid_argument naming both.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Rejects any zero entry in b.
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor exp(const Tensor& x);
// Rejects non-positive entries.
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
inline constexpr double kLeakySlope = 0.2;
Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);

// x: N x Cin x H x W, w: Cout x Cin x k x k (k odd), bias: Cout or undefined.
// Zero "same" padding; output N x Cout x H x W.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& x);

// Space-to-channel: N x C x H x W -> N x 4C x H/2 x W/2. Output channel
// 4c + 2dy + dx holds pixel (2i + dy, 2j + dx) of input channel c, i.e. the
// 2x2 block is read top-left, top-right, bottom-left, bottom-right.
Tensor squeeze2(const Tensor& x);
Tensor unsqueeze2(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// log|det W| of a square matrix via partially pivoted LU. Gradient W^{-T}.
Tensor logabsdet(const Tensor& w);

}  // namespace afflow
