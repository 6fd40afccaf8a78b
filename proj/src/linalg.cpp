#include "afflow/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "afflow/rng.hpp"

namespace afflow {

LuDecomposition lu_decompose(std::span<const double> a, std::size_t n) {
  if (a.size() != n * n) throw std::invalid_argument("lu_decompose: matrix is not square");
  LuDecomposition d;
  d.n = n;
  d.lu.assign(a.begin(), a.end());
  d.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.perm[i] = i;
  auto at = [&](std::size_t r, std::size_t c) -> double& { return d.lu[r * n + c]; };

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t r = k + 1; r < n; ++r) {
      if (std::abs(at(r, k)) > std::abs(at(p, k))) p = r;
    }
    if (at(p, k) == 0.0) throw std::domain_error("lu_decompose: matrix is singular");
    if (p != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(at(p, c), at(k, c));
      std::swap(d.perm[p], d.perm[k]);
      d.sign = -d.sign;
    }
    const double pivot = at(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = at(r, k) / pivot;
      at(r, k) = f;
      for (std::size_t c = k + 1; c < n; ++c) at(r, c) -= f * at(k, c);
    }
  }
  return d;
}

double LuDecomposition::log_abs_det() const {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::log(std::abs(lu[i * n + i]));
  return s;
}

double LuDecomposition::det() const {
  double p = sign;
  for (std::size_t i = 0; i < n; ++i) p *= lu[i * n + i];
  return p;
}

double LuDecomposition::min_abs_pivot() const {
  double m = n ? std::abs(lu[0]) : 0.0;
  for (std::size_t i = 1; i < n; ++i) m = std::min(m, std::abs(lu[i * n + i]));
  return m;
}

std::vector<double> LuDecomposition::solve(std::span<const double> b) const {
  if (b.size() != n) throw std::invalid_argument("LuDecomposition::solve: size mismatch");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[perm[i]];
    for (std::size_t j = 0; j < i; ++j) s -= lu[i * n + j] * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= lu[i * n + j] * x[j];
    x[i] = s / lu[i * n + i];
  }
  return x;
}

std::vector<double> LuDecomposition::inverse() const {
  std::vector<double> inv(n * n);
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    e[c] = 1.0;
    const std::vector<double> col = solve(e);
    for (std::size_t r = 0; r < n; ++r) inv[r * n + c] = col[r];
    e[c] = 0.0;
  }
  return inv;
}

std::vector<double> random_orthogonal(std::size_t n, Rng& rng) {
  for (;;) {
    std::vector<double> q(n * n);
    for (double& v : q) v = rng.normal();
    bool degenerate = false;
    for (std::size_t i = 0; i < n && !degenerate; ++i) {
      double* row = &q[i * n];
      for (std::size_t j = 0; j < i; ++j) {
        const double* prev = &q[j * n];
        double d = 0.0;
        for (std::size_t k = 0; k < n; ++k) d += row[k] * prev[k];
        for (std::size_t k = 0; k < n; ++k) row[k] -= d * prev[k];
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < n; ++k) norm += row[k] * row[k];
      norm = std::sqrt(norm);
      if (norm < 1e-8) {
        degenerate = true;
        break;
      }
      for (std::size_t k = 0; k < n; ++k) row[k] /= norm;
    }
    if (!degenerate) return q;
  }
}

std::vector<double> transpose(std::span<const double> a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  }
  return t;
}

}  // namespace afflow
