#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "xedit/kernels/gemm.hpp"

namespace xedit::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(XEDIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const char* env = std::getenv("XEDIT_KERNEL");
  if (env != nullptr) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::avx2;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA '" + std::string(isa_name(isa)) +
                                "' is not available on this machine");
  }
  current().store(isa, std::memory_order_relaxed);
}

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
#if defined(XEDIT_HAVE_AVX2)
  if (active_isa() == Isa::avx2) return avx2::gemm_nn(m, n, k, a, b, c, accumulate);
#endif
  scalar::gemm_nn(m, n, k, a, b, c, accumulate);
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
#if defined(XEDIT_HAVE_AVX2)
  if (active_isa() == Isa::avx2) return avx2::gemm_nt(m, n, k, a, b, c, accumulate);
#endif
  scalar::gemm_nt(m, n, k, a, b, c, accumulate);
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
#if defined(XEDIT_HAVE_AVX2)
  if (active_isa() == Isa::avx2) return avx2::gemm_tn(m, n, k, a, b, c, accumulate);
#endif
  scalar::gemm_tn(m, n, k, a, b, c, accumulate);
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                             float*, bool);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*,
                              const double*, double*, bool);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                             float*, bool);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*,
                              const double*, double*, bool);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                             float*, bool);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*,
                              const double*, double*, bool);

}  // namespace xedit::kernels
