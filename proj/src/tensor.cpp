#include "afflow/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "afflow/kernels.hpp"
#include "afflow/rng.hpp"

namespace afflow {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local bool t_grad_enabled = true;

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw std::logic_error("use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

void TensorImpl::accumulate_grad(const double* g) {
  if (grad.empty()) {
    grad.assign(g, g + data.size());
  } else {
    kernels::active().add(grad.data(), g, grad.data(), grad.size());
  }
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (!t_grad_enabled) return false;
  return std::any_of(ts.begin(), ts.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> data, const char* tag,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_rule) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const Tensor& in : inputs) needs_grad = needs_grad || (in.defined() && in.requires_grad());
  }
  if (needs_grad) {
    auto node = std::make_shared<GradNode>();
    node->id = g_next_node_id.fetch_add(1);
    node->tag = tag;
    for (const Tensor& in : inputs) {
      if (in.defined()) node->inputs.push_back(in.impl());
    }
    node->backward = std::move(backward_rule);
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = stddev * rng.normal();
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::values() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_values() { return checked(impl_).data; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& impl = checked(impl_);
  if (impl.node) throw std::logic_error("requires_grad can only be set on leaf tensors");
  impl.requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return checked(impl_).node == nullptr; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::zero_grad() { checked(impl_).grad.clear(); }

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return Tensor(impl.shape, impl.data);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  const auto& root = checked(loss.impl());
  if (root.data.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  // Owning pointers: clearing a node's inputs may drop the last other owner
  // of an intermediate that is still queued.
  using ImplPtr = std::shared_ptr<detail::TensorImpl>;
  std::vector<ImplPtr> order;
  std::unordered_set<const detail::GradNode*> seen;
  std::vector<ImplPtr> stack{loss.impl()};
  while (!stack.empty()) {
    ImplPtr t = stack.back();
    stack.pop_back();
    if (!t->node || !seen.insert(t->node.get()).second) continue;
    if (t->node->consumed) {
      throw std::logic_error("backward() called twice over the same graph");
    }
    order.push_back(t);
    for (const auto& in : t->node->inputs) stack.push_back(in);
  }
  std::sort(order.begin(), order.end(), [](const ImplPtr& a, const ImplPtr& b) {
    return a->node->id > b->node->id;
  });

  const double one = 1.0;
  loss.impl()->accumulate_grad(&one);
  for (const ImplPtr& t : order) {
    auto& node = *t->node;
    if (!t->grad.empty() && node.backward) node.backward(*t);
    node.consumed = true;
    node.backward = nullptr;
    node.inputs.clear();
    t->grad.clear();
    t->grad.shrink_to_fit();
  }
}

}  // namespace afflow
