#pragma once
// Dense row-major GEMM kernels used by the autodiff engine.
//
// Every entry point exists as a portable scalar reference and, on x86-64
// builds, an AVX2/FMA variant. The variant is picked once at startup from
// CPUID and can be overridden with set_isa() or the XEDIT_KERNEL environment
// variable ("scalar", "avx2", "auto"). Results are deterministic for a fixed
// ISA; the two ISAs agree to rounding (FMA contraction and summation order
// differ).

#include <cstddef>
#include <string_view>

namespace xedit::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

/// ISA currently used by the dispatching entry points below.
Isa active_isa();

/// Throws std::invalid_argument when the ISA is not available on this CPU
/// or was not compiled in.
void set_isa(Isa isa);

// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

// C[m x n] (+)= A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

// Explicit per-ISA entry points, used by the equivalence tests.
namespace scalar {
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
}  // namespace scalar

#if defined(XEDIT_HAVE_AVX2)
namespace avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
             float* c, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
             float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
             float* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
}  // namespace avx2
#endif

}  // namespace xedit::kernels
