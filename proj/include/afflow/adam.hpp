#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "afflow/params.hpp"

namespace afflow {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// Bias-corrected Adam update of every parameter from its accumulated
// gradient (absent gradient counts as zero). If any gradient entry is
// non-finite nothing is modified, the incident is logged and false returned.
bool adam_step(const ParamStore& params, AdamState& state);

}  // namespace afflow
