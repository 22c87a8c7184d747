#include <doctest.h>

#include "test_util.hpp"
#include "xedit/autodiff/ops.hpp"

using namespace xedit;
using namespace testutil;
using TD = Tensor<double>;

TEST_SUITE("relation-adapter") {
  TEST_CASE("encode_prompt_pair shares weights and keeps pair order") {
    auto cfg = tiny_config();
    cfg.adapter.n_adapter = 8;
    const auto model = EditModel<double>::init(cfg, 1);
    Rng rng(3);
    const auto a = random_image(rng, 8, 8), b = random_image(rng, 8, 8);
    const auto same = to_mat(encode_prompt_pair(model.adapter.encoder, a, a));
    CHECK(same.size() == 16);
    for (std::size_t i = 0; i < 8; ++i) CHECK(same[i] == same[i + 8]);
    const auto ab = to_mat(encode_prompt_pair(model.adapter.encoder, a, b));
    const auto ba = to_mat(encode_prompt_pair(model.adapter.encoder, b, a));
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(ab[i] == ba[i + 8]);
      CHECK(ab[i + 8] == ba[i]);
    }
    CHECK_THROWS_AS(model.adapter.encoder(random_image(rng, 4, 8)), std::invalid_argument);
  }

  TEST_CASE("adapter_attention examples") {
    auto cfg = tiny_config();
    auto model = EditModel<double>::init(cfg, 2);
    const std::size_t d = cfg.backbone.d_model;
    Rng rng(4);
    const auto q = random_mat(rng, 5, d);

    // W_v' = 0 at init: Z_V vanishes for any query
    const auto z0 = adapter_attention(model.adapter, from_mat(q), from_mat(random_mat(rng, 3, d)), 0, 2);
    for (double v : z0.data()) CHECK(v == 0.0);

    randomize(model, 5);
    const auto single = random_mat(rng, 1, d);
    const auto z1 = to_mat(adapter_attention(model.adapter, from_mat(q), from_mat(single), 1, 2));
    const auto vrow = naive_linear(single, model.adapter.value_proj[1]);
    for (const auto& row : z1)
      for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(row[c] - vrow[0][c]) < 1e-12);

    const auto q2 = random_mat(rng, 2, d), p2 = random_mat(rng, 2, d);
    const auto z2 = to_mat(adapter_attention(model.adapter, from_mat(q2), from_mat(p2), 0, 2));
    const auto direct = naive_attention(q2, naive_linear(p2, model.adapter.key_proj[0]),
                                        naive_linear(p2, model.adapter.value_proj[0]), 2);
    CHECK(max_abs_diff(z2, direct) < 1e-6);
    CHECK_THROWS_AS(adapter_attention(model.adapter, from_mat(q2), from_mat(p2), 7, 2),
                    std::out_of_range);
  }

  TEST_CASE("fuse examples") {
    Rng rng(6);
    const auto zb = from_mat(random_mat(rng, 3, 4)), zv = from_mat(random_mat(rng, 3, 4));
    const auto f0 = fuse(zb, zv, 0.0);
    CHECK(std::equal(f0.data().begin(), f0.data().end(), zb.data().begin()));
    const auto cancel = fuse(zb, ad::scale(zb, -1.0), 1.0);
    for (double v : cancel.data()) CHECK(v == 0.0);
    const auto f2 = fuse(zb, zv, 2.0), f1 = fuse(zb, zv, 1.0);
    for (std::size_t i = 0; i < zv.size(); ++i) CHECK(std::abs((f2[i] - f1[i]) - zv[i]) < 1e-12);
    CHECK_THROWS_AS(fuse(zb, from_mat(random_mat(rng, 2, 4)), 1.0), ad::ShapeError);
  }

  TEST_CASE("redux concat attention examples") {
    auto cfg = tiny_config(Conditioning::concat);
    auto model = EditModel<double>::init(cfg, 7);
    randomize(model, 8);
    const auto& blk = model.backbone.blocks[0];
    const std::size_t d = cfg.backbone.d_model;
    Rng rng(9);
    const auto base = random_mat(rng, 3, d);
    const auto plain = redux_concat_attention<double>(from_mat(base), {}, blk);
    const auto self = mm_attention(from_mat(base), blk).output;
    CHECK(std::equal(plain.data().begin(), plain.data().end(), self.data().begin()));

    const auto b1 = random_mat(rng, 1, d), p1 = random_mat(rng, 1, d);
    const auto joint = to_mat(redux_concat_attention(from_mat(b1), from_mat(p1), blk));
    Mat both = b1;
    both.push_back(p1[0]);
    const auto direct = naive_attention(naive_linear(both, blk.q), naive_linear(both, blk.k),
                                        naive_linear(both, blk.v), blk.heads);
    CHECK(max_abs_diff(joint, direct) < 1e-6);

    std::vector<TD> w;
    redux_concat_attention(from_mat(base), from_mat(random_mat(rng, 4, d)), blk, &w);
    REQUIRE(!w.empty());
    CHECK(w[0].cols() == 7);
    for (std::size_t i = 0; i < w[0].rows(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += w[0][i * 7 + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}
