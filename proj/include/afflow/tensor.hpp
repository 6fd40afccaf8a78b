#pragma once

// Dense row-major float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, as with most
// array libraries. Use detach() for an independent copy. Operations that see
// at least one input with requires_grad() record a node holding their inputs
// and a backward rule; node ids increase monotonically, so sorting reachable
// nodes by id gives a topological order for backward().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace afflow {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

struct GradNode {
  std::uint64_t id = 0;
  const char* tag = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives the output whose grad is fully accumulated; adds into inputs.
  std::function<void(const TensorImpl& out)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;  // null for leaves

  // grad += g (allocating on first use).
  void accumulate_grad(const double* g);
  // Returns grad storage, zero-filled on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // In-place access for initialisation and optimiser updates. Do not use on
  // tensors that are inputs to a recorded graph awaiting backward().
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;

  // Engine internals.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Propagates d(loss)/d(leaf) into every reachable requires_grad leaf.
// Gradients accumulate additively. Each recorded node may be traversed once;
// a second backward over the same graph throws std::logic_error.
void backward(const Tensor& loss);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Creates an output tensor and, when any input participates in gradients,
// attaches a node with the given backward rule.
Tensor make_result(Shape shape, std::vector<double> data, const char* tag,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_rule);

bool any_requires_grad(std::initializer_list<const Tensor*> ts);

}  // namespace detail

}  // namespace afflow
