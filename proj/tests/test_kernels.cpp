#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "xedit/kernels/gemm.hpp"
#include "xedit/rng.hpp"

using namespace xedit;

namespace {

template <class T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

// Plain triple loop in long double, independent of both kernels.
template <class T>
std::vector<T> reference(char mode, std::size_t m, std::size_t n, std::size_t k,
                         const std::vector<T>& a, const std::vector<T>& b, const std::vector<T>& c0,
                         bool acc) {
  std::vector<T> c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = acc ? c0[i * n + j] : 0.0L;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = mode == 't' ? a[p * m + i] : a[i * k + p];
        const T bv = mode == 'n' ? b[j * k + p] : b[p * n + j];
        s += static_cast<long double>(av) * bv;
      }
      c[i * n + j] = static_cast<T>(s);
    }
  return c;
}

template <class T>
double max_rel(const std::vector<T>& x, const std::vector<T>& y) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(double(x[i]) - double(y[i]));
    worst = std::max(worst, d / std::max(1.0, std::abs(double(y[i]))));
  }
  return worst;
}

template <class T>
void check_all_variants(double tol) {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 1 + rng.below(37), n = 1 + rng.below(41), k = 1 + rng.below(70);
    const bool acc = rng.below(2) == 1;
    const auto b_nn = random_vec<T>(rng, k * n);
    const auto b_nt = random_vec<T>(rng, n * k);
    const auto a = random_vec<T>(rng, m * k);
    const auto at = random_vec<T>(rng, k * m);
    const auto c0 = random_vec<T>(rng, m * n);
    CAPTURE(m);
    CAPTURE(n);
    CAPTURE(k);

    auto run = [&](auto fn, const std::vector<T>& lhs, const std::vector<T>& rhs) {
      auto c = c0;
      fn(m, n, k, lhs.data(), rhs.data(), c.data(), acc);
      return c;
    };
    const auto ref_nn = reference<T>('x', m, n, k, a, b_nn, c0, acc);
    const auto ref_nt = reference<T>('n', m, n, k, a, b_nt, c0, acc);
    const auto ref_tn = reference<T>('t', m, n, k, at, b_nn, c0, acc);

    CHECK(max_rel(run(kernels::scalar::gemm_nn<T>, a, b_nn), ref_nn) < tol);
    CHECK(max_rel(run(kernels::scalar::gemm_nt<T>, a, b_nt), ref_nt) < tol);
    CHECK(max_rel(run(kernels::scalar::gemm_tn<T>, at, b_nn), ref_tn) < tol);
#if defined(XEDIT_HAVE_AVX2)
    if (kernels::isa_supported(kernels::Isa::avx2)) {
      using Fn = void (*)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);
      CHECK(max_rel(run(static_cast<Fn>(kernels::avx2::gemm_nn), a, b_nn), ref_nn) < tol);
      CHECK(max_rel(run(static_cast<Fn>(kernels::avx2::gemm_nt), a, b_nt), ref_nt) < tol);
      CHECK(max_rel(run(static_cast<Fn>(kernels::avx2::gemm_tn), at, b_nn), ref_tn) < tol);
    }
#endif
  }
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar and AVX2 GEMM agree with a long-double reference (float)") {
    check_all_variants<float>(5e-5);
  }

  TEST_CASE("scalar and AVX2 GEMM agree with a long-double reference (double)") {
    check_all_variants<double>(1e-12);
  }

  TEST_CASE("runtime ISA selection") {
    CHECK(kernels::isa_supported(kernels::Isa::scalar));
    const auto before = kernels::active_isa();
    kernels::set_isa(kernels::Isa::scalar);
    CHECK(kernels::active_isa() == kernels::Isa::scalar);
    const std::vector<float> a{1, 2}, b{3, 4};
    std::vector<float> c(1);
    kernels::gemm_nn<float>(1, 1, 2, a.data(), b.data(), c.data(), false);
    CHECK(c[0] == 11.0f);
    if (!kernels::isa_supported(kernels::Isa::avx2)) {
      CHECK_THROWS_AS(kernels::set_isa(kernels::Isa::avx2), std::invalid_argument);
    }
    kernels::set_isa(before);
  }

  TEST_CASE("dispatched accumulate adds onto existing output") {
    const std::vector<double> a{1, 2, 3, 4}, b{1, 0, 0, 1};
    std::vector<double> c{10, 10, 10, 10};
    kernels::gemm_nn<double>(2, 2, 2, a.data(), b.data(), c.data(), true);
    CHECK(c == std::vector<double>{11, 12, 13, 14});
  }
}
