#pragma once

#include <string>
#include <vector>

namespace afflow {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Invertibility, log-determinant, gradient, Fourier and metric properties
// on small random instances. Takes a few seconds.
std::vector<SelfTestResult> run_selftest();

}  // namespace afflow
