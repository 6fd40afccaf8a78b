#pragma once

// Data-parallel inner loops used by the tensor engine.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The active table is chosen once at startup from CPUID;
// setting AFFLOW_SIMD=scalar forces the reference path.
//
// Elementwise kernels are bit-identical across variants. Reductions and GEMM
// reassociate sums, so variants agree only to rounding.

#include <cstddef>
#include <string_view>

namespace afflow::kernels {

struct KernelTable {
  std::string_view name;

  // out[i] = a[i] op b[i]
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*div)(const double* a, const double* b, double* out, std::size_t n);

  // out[i] = a[i] * s
  void (*scale)(const double* a, double s, double* out, std::size_t n);
  // out[i] = a[i] + s
  void (*add_scalar)(const double* a, double s, double* out, std::size_t n);
  // y[i] += alpha * x[i]   (multiply then add, never fused)
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += a[i] * b[i]    (multiply then add, never fused)
  void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);

  double (*sum)(const double* a, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);

  // C[M x N] += A[M x K] * B[K x N], row-major with leading dimensions.
  void (*gemm_nn)(std::size_t M, std::size_t N, std::size_t K,
                  const double* A, std::size_t lda,
                  const double* B, std::size_t ldb,
                  double* C, std::size_t ldc);
  // C[M x N] += A[M x K] * B[N x K]^T
  void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K,
                  const double* A, std::size_t lda,
                  const double* B, std::size_t ldb,
                  double* C, std::size_t ldc);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

// Table selected for this process.
const KernelTable& active();

}  // namespace afflow::kernels
