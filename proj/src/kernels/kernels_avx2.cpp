// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check, so nothing here may be called from generic code directly.
// Keep this translation unit free of standard-library templates: inline
// instantiations built with AVX2 enabled could be merged into generic callers.

#include "kernels_impl.hpp"

#if AFFLOW_HAVE_AVX2_KERNELS

#include <immintrin.h>

#include <type_traits>

namespace afflow::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

template <typename VecOp, typename ScalarOp>
inline void binary(const double* a, const double* b, double* out, std::size_t n, VecOp vop,
                   ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d x0 = _mm256_loadu_pd(a + i);
    __m256d x1 = _mm256_loadu_pd(a + i + 4);
    __m256d y0 = _mm256_loadu_pd(b + i);
    __m256d y1 = _mm256_loadu_pd(b + i + 4);
    _mm256_storeu_pd(out + i, vop(x0, y0));
    _mm256_storeu_pd(out + i + 4, vop(x1, y1));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

// Rows [0, MR) of C, columns [j, j + 8).
template <int MR>
inline void gemm_nn_tile8(std::size_t K, const double* A, std::size_t lda, const double* B,
                          std::size_t ldb, double* C, std::size_t ldc) {
  __m256d acc0[MR];
  __m256d acc1[MR];
  for (int r = 0; r < MR; ++r) {
    acc0[r] = _mm256_setzero_pd();
    acc1[r] = _mm256_setzero_pd();
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double* brow = B + k * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    for (int r = 0; r < MR; ++r) {
      const __m256d a = _mm256_broadcast_sd(A + r * lda + k);
      acc0[r] = _mm256_fmadd_pd(a, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_pd(a, b1, acc1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* c = C + r * ldc;
    _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), acc0[r]));
    _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), acc1[r]));
  }
}

template <int MR>
inline void gemm_nn_tile4(std::size_t K, const double* A, std::size_t lda, const double* B,
                          std::size_t ldb, double* C, std::size_t ldc) {
  __m256d acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = _mm256_setzero_pd();
  for (std::size_t k = 0; k < K; ++k) {
    const __m256d b0 = _mm256_loadu_pd(B + k * ldb);
    for (int r = 0; r < MR; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(A + r * lda + k), b0, acc[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* c = C + r * ldc;
    _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), acc[r]));
  }
}

// All row blocks against one column strip [j, j + width), so the strip of B
// stays in L1 while A streams past it.
template <int Width>
inline void gemm_nn_strip(std::size_t M, std::size_t K, const double* A, std::size_t lda, const double* B,
                          std::size_t ldb, double* C, std::size_t ldc) {
  std::size_t i = 0;
  const auto tile = [&](auto mr) {
    constexpr int MR = decltype(mr)::value;
    if constexpr (Width == 8) {
      gemm_nn_tile8<MR>(K, A + i * lda, lda, B, ldb, C + i * ldc, ldc);
    } else {
      gemm_nn_tile4<MR>(K, A + i * lda, lda, B, ldb, C + i * ldc, ldc);
    }
  };
  for (; i + 6 <= M; i += 6) tile(std::integral_constant<int, 6>{});
  switch (M - i) {
    case 5: tile(std::integral_constant<int, 5>{}); break;
    case 4: tile(std::integral_constant<int, 4>{}); break;
    case 3: tile(std::integral_constant<int, 3>{}); break;
    case 2: tile(std::integral_constant<int, 2>{}); break;
    case 1: tile(std::integral_constant<int, 1>{}); break;
    default: break;
  }
}

}  // namespace

void add(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); },
         [](double x, double y) { return x + y; });
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); },
         [](double x, double y) { return x - y; });
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); },
         [](double x, double y) { return x * y; });
}

void div(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_div_pd(x, y); },
         [](double x, double y) { return x / y; });
}

void scale(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void add_scalar(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] + s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
  }
  for (; i < n; ++i) {
    const double t = alpha * x[i];
    y[i] += t;
  }
}

void mul_acc(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
  }
  for (; i < n; ++i) {
    const double t = a[i] * b[i];
    y[i] += t;
  }
}

double sum(const double* a, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_add_pd(s0, _mm256_loadu_pd(a + i));
    s1 = _mm256_add_pd(s1, _mm256_loadu_pd(a + i + 4));
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i];
  return s;
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc) {
  // K is blocked so a K x 8 strip of B (16 KiB) fits in L1.
  constexpr std::size_t kKc = 256;
  for (std::size_t k0 = 0; k0 < K; k0 += kKc) {
    const std::size_t kc = K - k0 < kKc ? K - k0 : kKc;
    const double* Ak = A + k0;
    const double* Bk = B + k0 * ldb;
    std::size_t j = 0;
    for (; j + 8 <= N; j += 8) gemm_nn_strip<8>(M, kc, Ak, lda, Bk + j, ldb, C + j, ldc);
    for (; j + 4 <= N; j += 4) gemm_nn_strip<4>(M, kc, Ak, lda, Bk + j, ldb, C + j, ldc);
    for (; j < N; ++j) {
      for (std::size_t r = 0; r < M; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < kc; ++k) acc += Ak[r * lda + k] * Bk[k * ldb + j];
        C[r * ldc + j] += acc;
      }
    }
  }
}

// Each output is a dot product of two contiguous rows; four rows of B share
// one pass over a row of A.
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * lda;
    double* c = C + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= N; j += 4) {
      const double* b0 = B + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      __m256d s0 = _mm256_setzero_pd();
      __m256d s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd();
      __m256d s3 = _mm256_setzero_pd();
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const __m256d va = _mm256_loadu_pd(a + k);
        s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + k), s0);
        s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + k), s1);
        s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + k), s2);
        s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + k), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; k < K; ++k) {
        r0 += a[k] * b0[k];
        r1 += a[k] * b1[k];
        r2 += a[k] * b2[k];
        r3 += a[k] * b3[k];
      }
      c[j] += r0;
      c[j + 1] += r1;
      c[j + 2] += r2;
      c[j + 3] += r3;
    }
    for (; j < N; ++j) c[j] += dot(a, B + j * ldb, K);
  }
}

}  // namespace afflow::kernels::avx2

#endif
