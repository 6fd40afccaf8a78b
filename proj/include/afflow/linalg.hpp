#pragma once

// Small dense linear algebra for channel-mixing matrices (C <= a few dozen).

#include <cstddef>
#include <span>
#include <vector>

namespace afflow {

class Rng;

struct LuDecomposition {
  std::size_t n = 0;
  std::vector<double> lu;          // packed L (unit diagonal) and U, row-major
  std::vector<std::size_t> perm;   // row i of PA is row perm[i] of A
  int sign = 1;                    // sign of the permutation

  double log_abs_det() const;
  double det() const;
  double min_abs_pivot() const;
  std::vector<double> solve(std::span<const double> b) const;
  std::vector<double> inverse() const;
};

// Partial pivoting. Throws std::domain_error on an exactly zero pivot.
LuDecomposition lu_decompose(std::span<const double> a, std::size_t n);

// Orthogonalised Gaussian matrix (modified Gram-Schmidt), row-major n x n.
std::vector<double> random_orthogonal(std::size_t n, Rng& rng);

std::vector<double> transpose(std::span<const double> a, std::size_t rows, std::size_t cols);

}  // namespace afflow
