#include "afflow/kernels.hpp"

#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace afflow::kernels {

namespace {

#define AFFLOW_TABLE(ns, label)                                                          \
  KernelTable {                                                                          \
    label, ns::add, ns::sub, ns::mul, ns::div, ns::scale, ns::add_scalar, ns::axpy,      \
        ns::mul_acc, ns::sum, ns::dot, ns::gemm_nn, ns::gemm_nt                          \
  }

const KernelTable kScalar = AFFLOW_TABLE(scalar, "scalar");
#if AFFLOW_HAVE_AVX2_KERNELS
const KernelTable kAvx2 = AFFLOW_TABLE(avx2, "avx2");
#endif

bool cpu_has_avx2() {
#if AFFLOW_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* env = std::getenv("AFFLOW_SIMD"); env && std::string_view(env) == "scalar") {
    return kScalar;
  }
  if (const KernelTable* t = avx2_table()) return *t;
  return kScalar;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if AFFLOW_HAVE_AVX2_KERNELS
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace afflow::kernels
