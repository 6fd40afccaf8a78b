#pragma once

#include <cstddef>

#define AFFLOW_KERNEL_DECLS                                                                   \
  void add(const double* a, const double* b, double* out, std::size_t n);                    \
  void sub(const double* a, const double* b, double* out, std::size_t n);                    \
  void mul(const double* a, const double* b, double* out, std::size_t n);                    \
  void div(const double* a, const double* b, double* out, std::size_t n);                    \
  void scale(const double* a, double s, double* out, std::size_t n);                         \
  void add_scalar(const double* a, double s, double* out, std::size_t n);                    \
  void axpy(double alpha, const double* x, double* y, std::size_t n);                        \
  void mul_acc(const double* a, const double* b, double* y, std::size_t n);                  \
  double sum(const double* a, std::size_t n);                                                \
  double dot(const double* a, const double* b, std::size_t n);                               \
  void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, \
               const double* B, std::size_t ldb, double* C, std::size_t ldc);                \
  void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, \
               const double* B, std::size_t ldb, double* C, std::size_t ldc);

namespace afflow::kernels::scalar {
AFFLOW_KERNEL_DECLS
}

#if defined(__x86_64__) || defined(_M_X64)
#define AFFLOW_HAVE_AVX2_KERNELS 1
namespace afflow::kernels::avx2 {
AFFLOW_KERNEL_DECLS
}
#else
#define AFFLOW_HAVE_AVX2_KERNELS 0
#endif
