#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "xedit/autodiff/gradcheck.hpp"
#include "xedit/autodiff/ops.hpp"
#include "xedit/autodiff/optim.hpp"
#include "xedit/harness/gradcheck_suite.hpp"

using namespace xedit;
using namespace xedit::ad;
using namespace testutil;
using TD = Tensor<double>;

TEST_SUITE("autodiff") {
  TEST_CASE("matmul hand examples") {
    auto eye = TD::from({2, 2}, {1, 0, 0, 1});
    auto b = TD::from({2, 2}, {5, 6, 7, 8});
    auto c = matmul(eye, b);
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{5, 6, 7, 8});
    auto d = matmul(TD::from({1, 2}, {1, 2}), TD::from({2, 1}, {3, 4}));
    CHECK(d.shape() == Shape{1, 1});
    CHECK(d[0] == 11.0);
    CHECK_THROWS_AS(matmul(TD::zeros({2, 3}), TD::zeros({2, 3})), ShapeError);
  }

  TEST_CASE("matmul gradient on random 3x4 by 4x2") {
    Rng rng(3);
    auto r = grad_check(
        "matmul", [](const std::vector<TD>& in) { return sum(mul(matmul(in[0], in[1]), in[2])); },
        {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2}), random_tensor(rng, {3, 2})});
    CHECK(r.passed);
    CHECK(r.worst < 1e-4);
  }

  TEST_CASE("softmax examples") {
    auto s = softmax(TD::from({4}, {0, 0, 0, 0}));
    for (double v : s.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    auto big = softmax(TD::from({2}, {1000, 0}));
    CHECK(std::abs(big[0] - 1.0) < 1e-12);
    CHECK(std::abs(big[1]) < 1e-12);
    auto x = softmax(TD::from({3}, {1, 2, 3}));
    // direct evaluation of exp(i) / sum exp
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(x[i] - std::exp(i + 1.0) / z) < 1e-12);
    CHECK(std::abs(x[0] - 0.0900) < 1e-4);
    CHECK(std::abs(x[1] - 0.2447) < 1e-4);
    CHECK(std::abs(x[2] - 0.6652) < 1e-4);
  }

  TEST_CASE("layer_norm examples") {
    auto one = TD::full({2}, 1.0), zero = TD::zeros({2});
    auto c = layer_norm(TD::from({1, 2}, {4, 4}), one, zero);
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
    auto y = layer_norm(TD::from({1, 2}, {1, 3}), one, zero);
    CHECK(std::abs(y[0] + 1.0) < 1e-3);
    CHECK(std::abs(y[1] - 1.0) < 1e-3);
    Rng rng(5);
    auto r = grad_check(
        "layer_norm",
        [](const std::vector<TD>& in) { return sum(mul(layer_norm(in[0], in[1], in[2]), in[3])); },
        {random_tensor(rng, {2, 4}), random_tensor(rng, {4}), random_tensor(rng, {4}),
         random_tensor(rng, {2, 4})});
    CHECK(r.passed);
  }

  TEST_CASE("backward examples") {
    auto x = TD::from({1}, {3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 6.0);

    Rng rng(11);
    auto r = grad_check(
        "mse(Wx, y)",
        [](const std::vector<TD>& in) { return mse_loss(matmul_bt(in[1], in[0]), in[2]); },
        {random_tensor(rng, {2, 2}), random_tensor(rng, {1, 2}), random_tensor(rng, {1, 2})});
    CHECK(r.passed);

    auto w = random_tensor(rng, {3, 3});
    const auto u = random_tensor(rng, {3, 3});
    w.set_requires_grad(true);
    auto loss = [&] { return sum(gelu(matmul(w, u))); };
    backward(loss());
    const std::vector<double> once(w.grad().begin(), w.grad().end());
    backward(loss());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
  }

  TEST_CASE("backward requires a scalar and rejects non-finite values") {
    auto x = TD::from({2}, {1, 2}, true);
    CHECK_THROWS(backward(mul(x, x)));
    auto big = TD::from({1}, {1e300}, true);
    CHECK_THROWS_AS(mul(big, big), NumericError);
  }

  TEST_CASE("no-grad guard records no graph") {
    auto x = TD::from({1}, {2}, true);
    {
      NoGradGuard g;
      CHECK(NoGradGuard::active());
      auto y = mul(x, x);
      CHECK_FALSE(y.requires_grad());
    }
    CHECK_FALSE(NoGradGuard::active());
    CHECK(mul(x, x).requires_grad());
  }

  TEST_CASE("adam examples") {
    std::vector<TD> p{TD::from({3}, {1, -2, 3}, true)};
    auto st = AdamState<double>::for_params(p);
    p[0].mutable_grad();
    adam_step(p, st, AdamConfig{});
    CHECK(std::vector<double>(p[0].data().begin(), p[0].data().end()) == std::vector<double>{1, -2, 3});

    std::vector<TD> q{TD::from({1}, {0.5}, true)};
    auto sq = AdamState<double>::for_params(q);
    q[0].mutable_grad()[0] = 1.0;
    AdamConfig cfg;
    cfg.lr = 1e-3;
    adam_step(q, sq, cfg);
    // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    CHECK(std::abs((0.5 - q[0][0]) - 1e-3 / (1.0 + 1e-8)) < 1e-15);

    std::vector<TD> w{TD::from({1}, {0.0}, true)};
    auto sw = AdamState<double>::for_params(w);
    cfg.lr = 0.1;
    for (int i = 0; i < 500; ++i) {
      zero_grads(w);
      auto d = add(w[0], TD::from({1}, {-5.0}));
      backward(sum(mul(d, d)));
      adam_step(w, sw, cfg);
    }
    CHECK(std::abs(w[0][0] - 5.0) < 0.05);
  }

  TEST_CASE("grad_check examples") {
    Rng rng(2);
    auto chain = grad_check(
        "matmul chain",
        [](const std::vector<TD>& in) { return sum(matmul(matmul(in[0], in[1]), in[2])); },
        {random_tensor(rng, {2, 3}), random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})});
    CHECK(chain.passed);
    auto sm = grad_check(
        "softmax of matmul",
        [](const std::vector<TD>& in) { return sum(mul(softmax(matmul(in[0], in[1])), in[2])); },
        {random_tensor(rng, {2, 3}), random_tensor(rng, {3, 4}), random_tensor(rng, {2, 4})});
    CHECK(sm.passed);
  }

  TEST_CASE("gradient suite over every primitive, negative control fails") {
    harness::GradSuiteOptions opts;
    opts.seeds = 10;
    opts.include_model = false;
    for (const auto& r : harness::run_gradient_suite(opts)) {
      CAPTURE(r.name);
      CHECK(r.passed);
    }
    opts.seeds = 2;
    opts.inject_fault = true;
    std::size_t faulty = 0;
    for (const auto& r : harness::run_gradient_suite(opts)) {
      if (r.name.rfind("faulty_scale", 0) == 0) {
        ++faulty;
        CHECK_FALSE(r.passed);
      }
    }
    CHECK(faulty == 2);
  }
}
