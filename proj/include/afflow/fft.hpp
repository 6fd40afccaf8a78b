#pragma once

// Radix-2 2-D FFT on complex grids with unitary normalisation.

#include <complex>
#include <cstddef>
#include <vector>

namespace afflow {

enum class Domain { Image, KSpace };

// H x W complex samples, row-major. std::complex<double> is laid out as an
// interleaved (re, im) pair.
struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  Domain domain = Domain::Image;
  std::vector<std::complex<double>> data;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h, std::size_t w, Domain d = Domain::Image)
      : height(h), width(w), domain(d), data(h * w) {}

  std::complex<double>& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  const std::complex<double>& at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

bool is_power_of_two(std::size_t n);

// In-place 1-D transform of n = 2^m points, sign -1 forward, +1 inverse,
// unnormalised.
void fft1d(std::complex<double>* a, std::size_t n, int sign);

// Both scale by 1/sqrt(HW), so fft2 is unitary and ifft2 its exact inverse.
// Non-power-of-two extents throw std::invalid_argument.
ComplexGrid fft2(const ComplexGrid& g);
ComplexGrid ifft2(const ComplexGrid& g);

}  // namespace afflow
