#include <cmath>
#include <stdexcept>

#include "afflow/adam.hpp"
#include "afflow/log.hpp"
#include "afflow/params.hpp"

namespace afflow {

Tensor ParamStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  init.set_requires_grad(true);
  params_.emplace(name, init);
  return init;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (const auto& [name, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

bool adam_step(const ParamStore& params, AdamState& state) {
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        logging::warn("adam: non-finite gradient in " + name + "; step rejected");
        return false;
      }
    }
  }
  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, p] : params) {
    Tensor handle = p;
    auto values = handle.mutable_values();
    const auto grad = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != values.size()) m.assign(values.size(), 0.0);
    if (v.size() != values.size()) v.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
  return true;
}

}  // namespace afflow
