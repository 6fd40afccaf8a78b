#include "afflow/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "afflow/kernels.hpp"
#include "afflow/linalg.hpp"
#include "afflow/parallel.hpp"

namespace afflow {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

const kernels::KernelTable& K() { return kernels::active(); }

// ---------------------------------------------------------------------------
// Strided iteration over a broadcast index space.
//
// Every operand is viewed through the output shape with stride 0 on its
// broadcast axes. Adjacent axes are coalesced whenever all operands agree,
// so the innermost run is as long as possible and every operand is either
// contiguous (stride 1) or constant (stride 0) along it.

template <std::size_t N>
struct RunPlan {
  std::vector<std::size_t> extents;
  std::array<std::vector<std::size_t>, N> strides;
};

template <std::size_t N>
RunPlan<N> plan_runs(const Shape& out, const std::array<const Shape*, N>& operands) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> ext;
  std::array<std::vector<std::size_t>, N> str;
  std::array<std::vector<std::size_t>, N> full;
  for (std::size_t i = 0; i < N; ++i) {
    const Shape& s = *operands[i];
    full[i].assign(rank, 0);
    std::size_t stride = 1;
    for (std::size_t d = rank; d-- > 0;) {
      const std::size_t od = d + s.size();
      const std::size_t extent = od >= rank ? s[od - rank] : 1;
      full[i][d] = (extent == 1) ? 0 : stride;
      stride *= extent;
    }
  }
  for (std::size_t d = 0; d < rank; ++d) {
    if (out[d] == 1) continue;
    ext.push_back(out[d]);
    for (std::size_t i = 0; i < N; ++i) str[i].push_back(full[i][d]);
  }
  // Coalesce from the innermost axis outwards.
  RunPlan<N> plan;
  for (std::size_t d = ext.size(); d-- > 0;) {
    if (!plan.extents.empty()) {
      bool mergeable = true;
      for (std::size_t i = 0; i < N; ++i) {
        if (str[i][d] != plan.strides[i].front() * plan.extents.front()) mergeable = false;
      }
      if (mergeable) {
        plan.extents.front() *= ext[d];
        continue;
      }
    }
    plan.extents.insert(plan.extents.begin(), ext[d]);
    for (std::size_t i = 0; i < N; ++i) plan.strides[i].insert(plan.strides[i].begin(), str[i][d]);
  }
  if (plan.extents.empty()) {
    plan.extents.push_back(1);
    for (std::size_t i = 0; i < N; ++i) plan.strides[i].push_back(0);
  }
  return plan;
}

// fn(offsets, run_length, contiguous) per innermost run.
template <std::size_t N, typename Fn>
void for_each_run(const Shape& out, const std::array<const Shape*, N>& operands, Fn&& fn) {
  const RunPlan<N> plan = plan_runs<N>(out, operands);
  const std::size_t depth = plan.extents.size();
  const std::size_t len = plan.extents.back();
  std::array<bool, N> contiguous{};
  for (std::size_t i = 0; i < N; ++i) contiguous[i] = plan.strides[i].back() != 0;
  std::size_t outer = 1;
  for (std::size_t d = 0; d + 1 < depth; ++d) outer *= plan.extents[d];

  std::vector<std::size_t> idx(depth, 0);
  std::array<std::size_t, N> off{};
  for (std::size_t r = 0; r < outer; ++r) {
    fn(off, len, contiguous);
    for (std::size_t d = depth - 1; d-- > 0;) {
      ++idx[d];
      for (std::size_t i = 0; i < N; ++i) off[i] += plan.strides[i][d];
      if (idx[d] < plan.extents[d]) break;
      for (std::size_t i = 0; i < N; ++i) off[i] -= plan.strides[i][d] * plan.extents[d];
      idx[d] = 0;
    }
  }
}

enum class Reduce { Plain, Negated, Product };

// dst (broadcastable to out) += reduction of g (shape out), optionally
// weighted by `other` (broadcastable to out).
void accumulate_reduced(const double* g, const Shape& out, double* dst, const Shape& dst_shape,
                        Reduce mode, const double* other = nullptr,
                        const Shape* other_shape = nullptr) {
  const Shape& os = other_shape ? *other_shape : out;
  for_each_run<3>(out, {&out, &dst_shape, &os},
                  [&](const std::array<std::size_t, 3>& off, std::size_t len,
                      const std::array<bool, 3>& c) {
                    const double* gp = g + off[0];
                    double* dp = dst + off[1];
                    switch (mode) {
                      case Reduce::Plain:
                        if (c[1]) K().add(dp, gp, dp, len);
                        else *dp += K().sum(gp, len);
                        break;
                      case Reduce::Negated:
                        if (c[1]) K().axpy(-1.0, gp, dp, len);
                        else *dp -= K().sum(gp, len);
                        break;
                      case Reduce::Product: {
                        const double* op = other + off[2];
                        if (c[1] && c[2]) K().mul_acc(gp, op, dp, len);
                        else if (c[1]) K().axpy(*op, gp, dp, len);
                        else if (c[2]) *dp += K().dot(gp, op, len);
                        else *dp += *op * K().sum(gp, len);
                        break;
                      }
                    }
                  });
}

std::vector<double> broadcast_to(const std::vector<double>& src, const Shape& src_shape,
                                 const Shape& out) {
  std::vector<double> res(shape_numel(out));
  for_each_run<2>(out, {&out, &src_shape},
                  [&](const std::array<std::size_t, 2>& off, std::size_t len,
                      const std::array<bool, 2>& c) {
                    double* o = res.data() + off[0];
                    const double* s = src.data() + off[1];
                    if (c[1]) std::copy(s, s + len, o);
                    else std::fill(o, o + len, *s);
                  });
  return res;
}

enum class BinOp { Add, Sub, Mul, Div };

double apply(BinOp op, double a, double b) {
  switch (op) {
    case BinOp::Add: return a + b;
    case BinOp::Sub: return a - b;
    case BinOp::Mul: return a * b;
    case BinOp::Div: return a / b;
  }
  return 0.0;
}

std::vector<double> binary_values(BinOp op, const Tensor& a, const Tensor& b, const Shape& out) {
  std::vector<double> res(shape_numel(out));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for_each_run<3>(out, {&out, &a.shape(), &b.shape()},
                  [&](const std::array<std::size_t, 3>& off, std::size_t len,
                      const std::array<bool, 3>& c) {
                    double* o = res.data() + off[0];
                    const double* x = pa + off[1];
                    const double* y = pb + off[2];
                    if (c[1] && c[2]) {
                      switch (op) {
                        case BinOp::Add: K().add(x, y, o, len); break;
                        case BinOp::Sub: K().sub(x, y, o, len); break;
                        case BinOp::Mul: K().mul(x, y, o, len); break;
                        case BinOp::Div: K().div(x, y, o, len); break;
                      }
                    } else if (c[1] && op == BinOp::Add) {
                      K().add_scalar(x, *y, o, len);
                    } else if (c[1] && op == BinOp::Mul) {
                      K().scale(x, *y, o, len);
                    } else if (c[2] && op == BinOp::Add) {
                      K().add_scalar(y, *x, o, len);
                    } else if (c[2] && op == BinOp::Mul) {
                      K().scale(y, *x, o, len);
                    } else {
                      for (std::size_t i = 0; i < len; ++i) {
                        o[i] = apply(op, x[c[1] ? i : 0], y[c[2] ? i : 0]);
                      }
                    }
                  });
  return res;
}

Tensor binary(BinOp op, const Tensor& a, const Tensor& b, const char* tag) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  if (op == BinOp::Div) {
    const auto bv = b.values();
    if (std::any_of(bv.begin(), bv.end(), [](double v) { return v == 0.0; })) {
      throw std::domain_error("div: divisor has zero entries");
    }
  }
  std::vector<double> values = binary_values(op, a, b, out);
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return detail::make_result(
      out, std::move(values), tag, {a, b}, [op, ai, bi, out](const TensorImpl& res) {
        const double* g = res.grad.data();
        switch (op) {
          case BinOp::Add:
          case BinOp::Sub:
            if (ai->requires_grad) {
              accumulate_reduced(g, out, ai->grad_buffer().data(), ai->shape, Reduce::Plain);
            }
            if (bi->requires_grad) {
              accumulate_reduced(g, out, bi->grad_buffer().data(), bi->shape,
                                 op == BinOp::Add ? Reduce::Plain : Reduce::Negated);
            }
            break;
          case BinOp::Mul:
            if (ai->requires_grad) {
              accumulate_reduced(g, out, ai->grad_buffer().data(), ai->shape, Reduce::Product,
                                 bi->data.data(), &bi->shape);
            }
            if (bi->requires_grad) {
              accumulate_reduced(g, out, bi->grad_buffer().data(), bi->shape, Reduce::Product,
                                 ai->data.data(), &ai->shape);
            }
            break;
          case BinOp::Div: {
            if (ai->requires_grad) {
              std::vector<double> recip(bi->data.size());
              for (std::size_t i = 0; i < recip.size(); ++i) recip[i] = 1.0 / bi->data[i];
              accumulate_reduced(g, out, ai->grad_buffer().data(), ai->shape, Reduce::Product,
                                 recip.data(), &bi->shape);
            }
            if (bi->requires_grad) {
              // d(a/b)/db = -(a/b)/b
              std::vector<double> w = broadcast_to(bi->data, bi->shape, out);
              for (std::size_t i = 0; i < w.size(); ++i) w[i] = -res.data[i] / w[i];
              accumulate_reduced(g, out, bi->grad_buffer().data(), bi->shape, Reduce::Product,
                                 w.data(), &out);
            }
            break;
          }
        }
      });
}

// Elementwise unary op with a derivative expressed through (x, y).
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* tag, F f, D dfdx) {
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  ImplPtr xi = x.impl();
  return detail::make_result(x.shape(), std::move(y), tag, {x}, [xi, dfdx](const TensorImpl& res) {
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += res.grad[i] * dfdx(xi->data[i], res.data[i]);
    }
  });
}

Shape reduced_shape(const Shape& s, const std::vector<std::size_t>& axes, bool keepdim,
                    Shape* kept) {
  std::vector<bool> hit(s.size(), false);
  for (std::size_t a : axes) {
    if (a >= s.size()) {
      throw std::invalid_argument("reduction axis " + std::to_string(a) + " invalid for shape " +
                                  shape_str(s));
    }
    hit[a] = true;
  }
  Shape keep(s);
  Shape out;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (hit[d]) keep[d] = 1;
    if (!hit[d]) out.push_back(s[d]);
  }
  *kept = keep;
  return keepdim ? keep : out;
}

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) {
    throw std::invalid_argument(std::string(who) + ": expected NCHW tensor, got " +
                                shape_str(x.shape()));
  }
}

// col[(c*k*k + ky*k + kx) * H*W + y*W + x] = img[c, y + ky - p, x + kx - p]
void im2col(const double* img, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            double* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col + ((c * k + ky) * k + kx) * HW;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          double* row = dst + y * W;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(row, row + W, 0.0);
            continue;
          }
          const double* src = img + (c * H + static_cast<std::size_t>(sy)) * W;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
          std::fill(row, row + x0, 0.0);
          std::copy(src + x0 + dx, src + x1 + dx, row + x0);
          std::fill(row + x1, row + W, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = col + ((c * k + ky) * k + kx) * HW;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
          double* dst = img + (c * H + static_cast<std::size_t>(sy)) * W;
          const double* row = src + y * W;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
          if (x1 > x0) K().add(dst + x0 + dx, row + x0, dst + x0 + dx, x1 - x0);
        }
      }
    }
  }
}

// Per-thread scratch that keeps its capacity across calls. Contents are
// left over from earlier use.
double* scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<double> bufs[3];
  if (bufs[slot].size() < n) bufs[slot].resize(n);
  return bufs[slot].data();
}

// Cache-blocked transpose of a rows x cols matrix.
void transpose_into(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  constexpr std::size_t kB = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kB)
    for (std::size_t c0 = 0; c0 < cols; c0 += kB)
      for (std::size_t r = r0; r < std::min(rows, r0 + kB); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + kB); ++c) dst[c * rows + r] = src[r * cols + c];
}

// Applies a fixed gather permutation: out[i] = in[perm[i]].
Tensor permuted(const Tensor& x, Shape out_shape, std::vector<std::size_t> perm, const char* tag) {
  const auto xv = x.values();
  std::vector<double> y(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) y[i] = xv[perm[i]];
  ImplPtr xi = x.impl();
  return detail::make_result(std::move(out_shape), std::move(y), tag, {x},
                             [xi, perm = std::move(perm)](const TensorImpl& res) {
                               if (!xi->requires_grad) return;
                               auto& gx = xi->grad_buffer();
                               for (std::size_t i = 0; i < perm.size(); ++i) gx[perm[i]] += res.grad[i];
                             });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t ea = d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    const std::size_t eb = d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
    }
    out[d] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::Add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::Sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::Mul, a, b, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinOp::Div, a, b, "div"); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
  std::vector<double> y(x.numel());
  K().scale(x.values().data(), c, y.data(), y.size());
  ImplPtr xi = x.impl();
  return detail::make_result(x.shape(), std::move(y), "scale", {x}, [xi, c](const TensorImpl& res) {
    if (!xi->requires_grad) return;
    K().axpy(c, res.grad.data(), xi->grad_buffer().data(), res.grad.size());
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> y(x.numel());
  K().add_scalar(x.values().data(), c, y.data(), y.size());
  ImplPtr xi = x.impl();
  return detail::make_result(x.shape(), std::move(y), "add_scalar", {x}, [xi](const TensorImpl& res) {
    if (xi->requires_grad) xi->accumulate_grad(res.grad.data());
  });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  const auto xv = x.values();
  const auto bad = std::count_if(xv.begin(), xv.end(), [](double v) { return !(v > 0.0); });
  if (bad > 0) {
    throw std::domain_error("log: " + std::to_string(bad) + " non-positive entries");
  }
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return sum(x, axes, false);
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  Shape kept;
  Shape out = reduced_shape(x.shape(), axes, keepdim, &kept);
  std::vector<double> y(shape_numel(kept), 0.0);
  accumulate_reduced(x.values().data(), x.shape(), y.data(), kept, Reduce::Plain);
  ImplPtr xi = x.impl();
  return detail::make_result(
      std::move(out), std::move(y), "sum", {x}, [xi, kept](const TensorImpl& res) {
        if (!xi->requires_grad) return;
        auto& gx = xi->grad_buffer();
        const double* g = res.grad.data();
        for_each_run<2>(xi->shape, {&xi->shape, &kept},
                        [&](const std::array<std::size_t, 2>& off, std::size_t len,
                            const std::array<bool, 2>& c) {
                          double* d = gx.data() + off[0];
                          if (c[1]) K().add(d, g + off[1], d, len);
                          else K().add_scalar(d, g[off[1]], d, len);
                        });
      });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  Tensor s = sum(x, axes, keepdim);
  return scale(s, static_cast<double>(s.numel()) / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  }
  const auto xv = x.values();
  ImplPtr xi = x.impl();
  return detail::make_result(std::move(shape), std::vector<double>(xv.begin(), xv.end()), "reshape",
                             {x}, [xi](const TensorImpl& res) {
                               if (xi->requires_grad) xi->accumulate_grad(res.grad.data());
                             });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank4(x, "conv2d");
  if (w.rank() != 4 || w.size(2) != w.size(3) || w.size(2) % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel must be Cout x Cin x k x k with odd k, got " +
                                shape_str(w.shape()));
  }
  const std::size_t N = x.size(0), Ci = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t Co = w.size(0), k = w.size(2);
  if (w.size(1) != Ci) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(Ci) +
                                " channels but kernel expects " + std::to_string(w.size(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != Co)) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                " does not match " + std::to_string(Co) + " output channels");
  }
  const std::size_t HW = H * W, CKK = Ci * k * k;
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  std::vector<double> y(N * Co * HW, 0.0);

  parallel_for(0, N, [&](std::size_t n) {
    double* out = y.data() + n * Co * HW;
    if (bias.defined()) {
      for (std::size_t o = 0; o < Co; ++o) std::fill(out + o * HW, out + (o + 1) * HW, bias.at(o));
    }
    const double* img = xv + n * Ci * HW;
    if (k == 1) {
      K().gemm_nn(Co, HW, Ci, wv, Ci, img, HW, out, HW);
    } else {
      double* col = scratch(0, CKK * HW);
      im2col(img, Ci, H, W, k, col);
      K().gemm_nn(Co, HW, CKK, wv, CKK, col, HW, out, HW);
    }
  });

  ImplPtr xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result(
      {N, Co, H, W}, std::move(y), "conv2d", {x, w, bias},
      [xi, wi, bi, N, Ci, H, W, Co, k, HW, CKK](const TensorImpl& res) {
        const double* g = res.grad.data();
        const bool need_x = xi->requires_grad;
        const bool need_w = wi->requires_grad;
        const bool need_b = bi && bi->requires_grad;
        std::vector<double> wt;
        if (need_x) wt = transpose(wi->data, Co, CKK);
        std::vector<double> dw_parts(need_w ? N * Co * CKK : 0, 0.0);
        double* gx = need_x ? xi->grad_buffer().data() : nullptr;

        parallel_for(0, N, [&](std::size_t n) {
          const double* gn = g + n * Co * HW;
          const double* img = xi->data.data() + n * Ci * HW;
          const double* colp = img;
          if (k != 1 && need_w) {
            double* col = scratch(0, CKK * HW);
            im2col(img, Ci, H, W, k, col);
            colp = col;
          }
          if (need_w) {
            // dW = G col^T, run as G (col^T) through gemm_nn, which blocks
            // far better than a dot-product formulation.
            double* colt = scratch(1, HW * CKK);
            transpose_into(colp, CKK, HW, colt);
            K().gemm_nn(Co, CKK, HW, gn, HW, colt, CKK, dw_parts.data() + n * Co * CKK, CKK);
          }
          if (need_x) {
            double* gxn = gx + n * Ci * HW;
            if (k == 1) {
              K().gemm_nn(Ci, HW, Co, wt.data(), Co, gn, HW, gxn, HW);
            } else {
              double* dcol = scratch(2, CKK * HW);
              std::fill(dcol, dcol + CKK * HW, 0.0);
              K().gemm_nn(CKK, HW, Co, wt.data(), Co, gn, HW, dcol, HW);
              col2im_add(dcol, Ci, H, W, k, gxn);
            }
          }
        });
        if (need_w) {
          auto& gw = wi->grad_buffer();
          for (std::size_t n = 0; n < N; ++n) K().add(gw.data(), dw_parts.data() + n * Co * CKK, gw.data(), gw.size());
        }
        if (need_b) {
          auto& gb = bi->grad_buffer();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t o = 0; o < Co; ++o) gb[o] += K().sum(g + (n * Co + o) * HW, HW);
          }
        }
      });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank4(x, "avg_pool2");
  const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  if (H % 2 || W % 2) {
    throw std::invalid_argument("avg_pool2: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t h = H / 2, w = W / 2;
  const auto xv = x.values();
  std::vector<double> y(N * C * h * w);
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = y.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double* s = src + 2 * i * W + 2 * j;
        dst[i * w + j] = 0.25 * ((s[0] + s[1]) + (s[W] + s[W + 1]));
      }
    }
  }
  ImplPtr xi = x.impl();
  return detail::make_result(
      {N, C, h, w}, std::move(y), "avg_pool2", {x}, [xi, N, C, H, W, h, w](const TensorImpl& res) {
        if (!xi->requires_grad) return;
        auto& gx = xi->grad_buffer();
        for (std::size_t p = 0; p < N * C; ++p) {
          const double* g = res.grad.data() + p * h * w;
          double* d = gx.data() + p * H * W;
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const double v = 0.25 * g[i * w + j];
              double* s = d + 2 * i * W + 2 * j;
              s[0] += v;
              s[1] += v;
              s[W] += v;
              s[W + 1] += v;
            }
          }
        }
      });
}

Tensor squeeze2(const Tensor& x) {
  require_rank4(x, "squeeze2");
  const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  if (H % 2 || W % 2) {
    throw std::invalid_argument("squeeze2: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t h = H / 2, w = W / 2;
  std::vector<std::size_t> perm(x.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              perm[i++] = ((n * C + c) * H + 2 * y + dy) * W + 2 * xx + dx;
  return permuted(x, {N, 4 * C, h, w}, std::move(perm), "squeeze2");
}

Tensor unsqueeze2(const Tensor& x) {
  require_rank4(x, "unsqueeze2");
  const std::size_t N = x.size(0), C4 = x.size(1), h = x.size(2), w = x.size(3);
  if (C4 % 4) {
    throw std::invalid_argument("unsqueeze2: channel count must be a multiple of 4, got " +
                                shape_str(x.shape()));
  }
  const std::size_t C = C4 / 4, H = 2 * h, W = 2 * w;
  std::vector<std::size_t> perm(x.numel());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              perm[((n * C + c) * H + 2 * y + dy) * W + 2 * xx + dx] =
                  ((n * C4 + 4 * c + 2 * dy + dx) * h + y) * w + xx;
  return permuted(x, {N, C, H, W}, std::move(perm), "unsqueeze2");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw std::invalid_argument("concat: axis out of range");
  Shape out = first;
  out[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = (d == axis) || s[d] == first[d];
    if (!ok) {
      throw std::invalid_argument("concat: shape " + shape_str(s) + " incompatible with " +
                                  shape_str(first) + " along axis " + std::to_string(axis));
    }
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_block = out[axis] * inner;
  std::vector<double> y(shape_numel(out));
  std::vector<ImplPtr> impls;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t block = p.size(axis) * inner;
    const double* src = p.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, y.data() + o * out_block + offset);
    }
    impls.push_back(p.impl());
    offsets.push_back(offset);
    offset += block;
  }
  return detail::make_result(
      std::move(out), std::move(y), "concat", parts,
      [impls, offsets, outer, out_block](const TensorImpl& res) {
        for (std::size_t i = 0; i < impls.size(); ++i) {
          if (!impls[i]->requires_grad) continue;
          auto& g = impls[i]->grad_buffer();
          const std::size_t block = g.size() / outer;
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = res.grad.data() + o * out_block + offsets[i];
            K().add(g.data() + o * block, src, g.data() + o * block, block);
          }
        }
      });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + length > s[axis] || length == 0) {
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") invalid for axis " +
                                std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out = s;
  out[axis] = length;
  const std::size_t in_block = s[axis] * inner, block = length * inner, off = start * inner;
  const double* src = x.values().data();
  std::vector<double> y(outer * block);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * in_block + off, src + o * in_block + off + block, y.data() + o * block);
  }
  ImplPtr xi = x.impl();
  return detail::make_result(std::move(out), std::move(y), "narrow", {x},
                             [xi, outer, in_block, block, off](const TensorImpl& res) {
                               if (!xi->requires_grad) return;
                               auto& g = xi->grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 double* d = g.data() + o * in_block + off;
                                 K().add(d, res.grad.data() + o * block, d, block);
                               }
                             });
}

Tensor logabsdet(const Tensor& w) {
  if (w.rank() != 2 || w.size(0) != w.size(1)) {
    throw std::invalid_argument("logabsdet: expected a square matrix, got " + shape_str(w.shape()));
  }
  const std::size_t n = w.size(0);
  const LuDecomposition lu = lu_decompose(w.values(), n);
  ImplPtr wi = w.impl();
  return detail::make_result(Shape{}, {lu.log_abs_det()}, "logabsdet", {w},
                             [wi, lu, n](const TensorImpl& res) {
                               if (!wi->requires_grad) return;
                               const std::vector<double> inv = lu.inverse();
                               auto& g = wi->grad_buffer();
                               const double s = res.grad[0];
                               for (std::size_t r = 0; r < n; ++r)
                                 for (std::size_t c = 0; c < n; ++c) g[r * n + c] += s * inv[c * n + r];
                             });
}

}  // namespace afflow
