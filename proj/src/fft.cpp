#include "afflow/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace afflow {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft1d(std::complex<double>* a, std::size_t n, int sign) {
  if (n <= 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    // Twiddles from the angle directly; the recurrence w *= w_len drifts.
    std::vector<std::complex<double>> tw(half);
    for (std::size_t k = 0; k < half; ++k) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      tw[k] = {std::cos(ang), std::sin(ang)};
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

namespace {

ComplexGrid transform(const ComplexGrid& g, int sign, Domain out_domain) {
  if (!is_power_of_two(g.height) || !is_power_of_two(g.width)) {
    throw std::invalid_argument("fft2: extents " + std::to_string(g.height) + "x" +
                                std::to_string(g.width) + " are not powers of two");
  }
  if (g.data.size() != g.height * g.width) throw std::invalid_argument("fft2: data size mismatch");
  ComplexGrid out = g;
  out.domain = out_domain;
  const std::size_t H = g.height, W = g.width;
  for (std::size_t y = 0; y < H; ++y) fft1d(out.data.data() + y * W, W, sign);
  std::vector<std::complex<double>> col(H);
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) col[y] = out.data[y * W + x];
    fft1d(col.data(), H, sign);
    for (std::size_t y = 0; y < H; ++y) out.data[y * W + x] = col[y];
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(H * W));
  for (auto& v : out.data) v *= norm;
  return out;
}

}  // namespace

ComplexGrid fft2(const ComplexGrid& g) { return transform(g, -1, Domain::KSpace); }
ComplexGrid ifft2(const ComplexGrid& g) { return transform(g, +1, Domain::Image); }

}  // namespace afflow
