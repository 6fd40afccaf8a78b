#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "afflow/tensor.hpp"

namespace afflow {

// Learnable tensors addressed by hierarchical '/'-separated names. Iteration
// order is lexicographic, which fixes the on-disk and optimiser order.
class ParamStore {
 public:
  // Registers a leaf with requires_grad set. Duplicate names throw.
  Tensor add(const std::string& name, Tensor init);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;
  void zero_grad();

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace afflow
