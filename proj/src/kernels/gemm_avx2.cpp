// AVX2/FMA GEMM variants. This translation unit is the only one compiled
// with -mavx2 -mfma; nothing here may be called before the dispatcher has
// confirmed CPU support.

#include <immintrin.h>

#include <algorithm>

#include "xedit/kernels/gemm.hpp"

namespace xedit::kernels::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

// Lane traits so the three loop nests are written once per precision.
struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t lanes = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V bcast(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T sum(V v) { return hsum(v); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t lanes = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V bcast(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T sum(V v) { return hsum(v); }
};

// Row update: crow[0..n) += sum_p coef(p) * brow(p)[0..n), with coef read
// through a stride so nn (stride 1) and tn (stride m) share the kernel.
template <class L>
void axpy_rows(std::size_t n, std::size_t k, const typename L::T* coef, std::size_t coef_stride,
               const typename L::T* b, typename L::T* crow) {
  using T = typename L::T;
  using V = typename L::V;
  constexpr std::size_t W = L::lanes;
  std::size_t j = 0;
  for (; j + 4 * W <= n; j += 4 * W) {
    V c0 = L::load(crow + j);
    V c1 = L::load(crow + j + W);
    V c2 = L::load(crow + j + 2 * W);
    V c3 = L::load(crow + j + 3 * W);
    for (std::size_t p = 0; p < k; ++p) {
      const V a = L::bcast(coef[p * coef_stride]);
      const T* brow = b + p * n + j;
      c0 = L::fma(a, L::load(brow), c0);
      c1 = L::fma(a, L::load(brow + W), c1);
      c2 = L::fma(a, L::load(brow + 2 * W), c2);
      c3 = L::fma(a, L::load(brow + 3 * W), c3);
    }
    L::store(crow + j, c0);
    L::store(crow + j + W, c1);
    L::store(crow + j + 2 * W, c2);
    L::store(crow + j + 3 * W, c3);
  }
  for (; j + W <= n; j += W) {
    V c0 = L::load(crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = L::fma(L::bcast(coef[p * coef_stride]), L::load(b + p * n + j), c0);
    }
    L::store(crow + j, c0);
  }
  for (; j < n; ++j) {
    T acc = crow[j];
    for (std::size_t p = 0; p < k; ++p) acc += coef[p * coef_stride] * b[p * n + j];
    crow[j] = acc;
  }
}

template <class L>
void nn(std::size_t m, std::size_t n, std::size_t k, const typename L::T* a,
        const typename L::T* b, typename L::T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, typename L::T(0));
  for (std::size_t i = 0; i < m; ++i) axpy_rows<L>(n, k, a + i * k, 1, b, c + i * n);
}

template <class L>
void tn(std::size_t m, std::size_t n, std::size_t k, const typename L::T* a,
        const typename L::T* b, typename L::T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, typename L::T(0));
  for (std::size_t i = 0; i < m; ++i) axpy_rows<L>(n, k, a + i, m, b, c + i * n);
}

template <class L>
void nt(std::size_t m, std::size_t n, std::size_t k, const typename L::T* a,
        const typename L::T* b, typename L::T* c, bool accumulate) {
  using T = typename L::T;
  using V = typename L::V;
  constexpr std::size_t W = L::lanes;
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      V acc0 = L::zero();
      V acc1 = L::zero();
      std::size_t p = 0;
      for (; p + 2 * W <= k; p += 2 * W) {
        acc0 = L::fma(L::load(arow + p), L::load(brow + p), acc0);
        acc1 = L::fma(L::load(arow + p + W), L::load(brow + p + W), acc1);
      }
      for (; p + W <= k; p += W) acc0 = L::fma(L::load(arow + p), L::load(brow + p), acc0);
      T sum = L::sum(L::add(acc0, acc1));
      for (; p < k; ++p) sum += arow[p] * brow[p];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
             float* c, bool accumulate) {
  nn<F32>(m, n, k, a, b, c, accumulate);
}
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  nn<F64>(m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
             float* c, bool accumulate) {
  nt<F32>(m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  nt<F64>(m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
             float* c, bool accumulate) {
  tn<F32>(m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  tn<F64>(m, n, k, a, b, c, accumulate);
}

}  // namespace xedit::kernels::avx2
