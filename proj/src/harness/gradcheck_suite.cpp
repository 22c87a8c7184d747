#include "xedit/harness/gradcheck_suite.hpp"

#include <functional>
#include <string>

#include "xedit/autodiff/ops.hpp"
#include "xedit/editor.hpp"
#include "xedit/rng.hpp"

namespace xedit::harness {

using namespace xedit::ad;
using TD = Tensor<double>;

namespace {

TD randn(Rng& rng, Shape shape, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * sd;
  return TD::from(std::move(shape), std::move(v));
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Contracts the output against fixed random weights so every output element
// carries a distinct sensitivity (a plain sum would hide softmax errors).
TD project(const TD& out, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "gradcheck.projection");
  return sum(mul(out, randn(rng, out.shape())));
}

TD faulty_scale(const TD& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= 2.0;
  return make_op<double>("faulty_scale", a.shape(), std::move(out), {a.node_ptr()},
                         [](Node<double>& self) {
                           auto& p = self.parents[0];
                           // Wrong on purpose: the true derivative is 2.
                           for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += 2.5 * self.grad[i];
                         });
}

struct Case {
  std::string name;
  std::function<std::pair<std::vector<TD>, std::function<TD(const std::vector<TD>&)>>(Rng&)> make;
};

std::vector<Case> primitive_cases(bool inject_fault) {
  std::vector<Case> cases = {
      {"matmul",
       [](Rng& r) {
         const auto m = dim(r, 1, 4), k = dim(r, 1, 4), n = dim(r, 1, 4);
         return std::pair{std::vector<TD>{randn(r, {m, k}), randn(r, {k, n})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return matmul(x[0], x[1]); })};
       }},
      {"matmul_bt",
       [](Rng& r) {
         const auto m = dim(r, 1, 4), k = dim(r, 1, 4), n = dim(r, 1, 4);
         return std::pair{std::vector<TD>{randn(r, {m, k}), randn(r, {n, k})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return matmul_bt(x[0], x[1]); })};
       }},
      {"add",
       [](Rng& r) {
         const Shape s{dim(r, 1, 4), dim(r, 1, 4)};
         return std::pair{std::vector<TD>{randn(r, s), randn(r, s)},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return add(x[0], x[1]); })};
       }},
      {"sub",
       [](Rng& r) {
         const Shape s{dim(r, 1, 4), dim(r, 1, 4)};
         return std::pair{std::vector<TD>{randn(r, s), randn(r, s)},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return sub(x[0], x[1]); })};
       }},
      {"mul",
       [](Rng& r) {
         const Shape s{dim(r, 1, 4), dim(r, 1, 4)};
         return std::pair{std::vector<TD>{randn(r, s), randn(r, s)},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return mul(x[0], x[1]); })};
       }},
      {"scale",
       [](Rng& r) {
         const double f = r.uniform(-2.0, 2.0);
         return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 4), dim(r, 1, 4)})},
                          std::function<TD(const std::vector<TD>&)>(
                              [f](const std::vector<TD>& x) { return scale(x[0], f); })};
       }},
      {"add_row",
       [](Rng& r) {
         const auto rows = dim(r, 1, 4), c = dim(r, 1, 4);
         return std::pair{std::vector<TD>{randn(r, {rows, c}), randn(r, {c})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return add_row(x[0], x[1]); })};
       }},
      {"mul_row",
       [](Rng& r) {
         const auto rows = dim(r, 1, 4), c = dim(r, 1, 4);
         return std::pair{std::vector<TD>{randn(r, {rows, c}), randn(r, {c})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return mul_row(x[0], x[1]); })};
       }},
      {"gelu",
       [](Rng& r) {
         return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 4), dim(r, 1, 4)}, 2.0)},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return gelu(x[0]); })};
       }},
      {"softmax",
       [](Rng& r) {
         return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 4), dim(r, 1, 5)}, 2.0)},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return softmax(x[0]); })};
       }},
      {"layer_norm",
       [](Rng& r) {
         const auto rows = dim(r, 1, 4), d = dim(r, 2, 5);
         return std::pair{std::vector<TD>{randn(r, {rows, d}), randn(r, {d}), randn(r, {d})},
                          std::function<TD(const std::vector<TD>&)>([](const std::vector<TD>& x) {
                            return layer_norm(x[0], x[1], x[2]);
                          })};
       }},
      {"concat_rows",
       [](Rng& r) {
         const auto c = dim(r, 1, 4);
         return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 3), c}), randn(r, {dim(r, 1, 3), c})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return concat(x, 0); })};
       }},
      {"concat_cols",
       [](Rng& r) {
         const auto rows = dim(r, 1, 4);
         return std::pair{std::vector<TD>{randn(r, {rows, dim(r, 1, 3)}), randn(r, {rows, dim(r, 1, 3)})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return concat(x, 1); })};
       }},
      {"slice_rows",
       [](Rng& r) {
         const auto rows = dim(r, 2, 5), c = dim(r, 1, 4);
         const auto b = r.below(rows - 1);
         const auto e = b + 1 + r.below(rows - b - 1);
         return std::pair{std::vector<TD>{randn(r, {rows, c})},
                          std::function<TD(const std::vector<TD>&)>(
                              [b, e](const std::vector<TD>& x) { return slice(x[0], 0, b, e); })};
       }},
      {"slice_cols",
       [](Rng& r) {
         const auto rows = dim(r, 1, 4), c = dim(r, 2, 5);
         const auto b = r.below(c - 1);
         const auto e = b + 1 + r.below(c - b - 1);
         return std::pair{std::vector<TD>{randn(r, {rows, c})},
                          std::function<TD(const std::vector<TD>&)>(
                              [b, e](const std::vector<TD>& x) { return slice(x[0], 1, b, e); })};
       }},
      {"reshape",
       [](Rng& r) {
         const auto a = dim(r, 1, 3), b = dim(r, 1, 3), c = dim(r, 1, 3);
         return std::pair{std::vector<TD>{randn(r, {a, b * c})},
                          std::function<TD(const std::vector<TD>&)>([a, b, c](const std::vector<TD>& x) {
                            return reshape(x[0], {a * b, c});
                          })};
       }},
      {"transpose",
       [](Rng& r) {
         return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 4), dim(r, 1, 4)})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return transpose(x[0]); })};
       }},
      {"embedding",
       [](Rng& r) {
         const auto vocab = dim(r, 1, 5), d = dim(r, 1, 4), n = dim(r, 1, 6);
         std::vector<std::size_t> ids(n);
         for (auto& i : ids) i = r.below(vocab);
         return std::pair{std::vector<TD>{randn(r, {vocab, d})},
                          std::function<TD(const std::vector<TD>&)>(
                              [ids](const std::vector<TD>& x) { return embedding(x[0], ids); })};
       }},
      {"mse_loss",
       [](Rng& r) {
         const Shape s{dim(r, 1, 4), dim(r, 1, 4)};
         return std::pair{std::vector<TD>{randn(r, s), randn(r, s)},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return mse_loss(x[0], x[1]); })};
       }},
      {"sum",
       [](Rng& r) {
         return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 4), dim(r, 1, 4)})},
                          std::function<TD(const std::vector<TD>&)>(
                              [](const std::vector<TD>& x) { return sum(x[0]); })};
       }},
  };
  if (inject_fault) {
    cases.push_back({"faulty_scale", [](Rng& r) {
                       return std::pair{std::vector<TD>{randn(r, {dim(r, 1, 4), dim(r, 1, 4)})},
                                        std::function<TD(const std::vector<TD>&)>(
                                            [](const std::vector<TD>& x) { return faulty_scale(x[0]); })};
                     }});
  }
  return cases;
}

Image random_image(Rng& rng, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

ad::GradCheckReport micro_model_check(Conditioning cond, bool lora, std::uint64_t seed) {
  ModelConfig mc;
  mc.backbone.d_model = 8;
  mc.backbone.blocks = 2;
  mc.backbone.heads = 2;
  mc.backbone.patch = 2;
  mc.backbone.height = 4;
  mc.backbone.width = 4;
  mc.backbone.mlp_ratio = 2;
  mc.backbone.freq_dim = 8;
  mc.backbone.vocab = 3;
  mc.backbone.text_modulation = true;
  mc.adapter.n_adapter = 2;
  mc.conditioning = cond;
  auto model = std::make_shared<EditModel<double>>(EditModel<double>::init(mc, seed));
  if (lora) model->apply_lora(2, 1.0, seed);
  // Random weights everywhere: the zero-initialised gates and LoRA B would
  // otherwise block most gradient paths.
  Rng rng = Rng::stream(seed, "gradcheck.model");
  std::vector<TD> inputs;
  for (auto& p : model->parameters()) {
    for (auto& v : p.tensor.mutable_data()) v = 0.3 * rng.normal();
    inputs.push_back(p.tensor);
  }
  auto sample = std::make_shared<EditSample>();
  sample->prompt = random_image(rng, 4, 4);
  sample->reference = random_image(rng, 4, 4);
  sample->source = random_image(rng, 4, 4);
  sample->target = random_image(rng, 4, 4);
  sample->instruction = 2;
  const std::string name = std::string("micro_model[") + conditioning_name(cond) +
                           (lora ? "+lora" : "") + "]";
  return grad_check(
      name,
      [model, sample, seed](const std::vector<TD>&) {
        Rng r = Rng::stream(seed, "gradcheck.flow");
        TrainOptions opts;
        opts.p_drop = 0.0;
        return training_loss(*model, *sample, r, opts).loss;
      },
      inputs);
}

}  // namespace

std::vector<ad::GradCheckReport> run_gradient_suite(const GradSuiteOptions& opts) {
  std::vector<ad::GradCheckReport> out;
  for (const auto& c : primitive_cases(opts.inject_fault)) {
    for (std::size_t s = 0; s < opts.seeds; ++s) {
      const std::uint64_t seed = opts.base_seed + s;
      Rng rng = Rng::stream(seed, "gradcheck." + c.name);
      auto [inputs, f] = c.make(rng);
      auto report = grad_check(
          c.name + "#" + std::to_string(seed),
          [f = f, seed](const std::vector<TD>& x) { return project(f(x), seed); }, inputs);
      out.push_back(std::move(report));
    }
  }
  if (opts.include_model) {
    out.push_back(micro_model_check(Conditioning::adapter, true, opts.base_seed));
    out.push_back(micro_model_check(Conditioning::concat, false, opts.base_seed + 1));
  }
  return out;
}

}  // namespace xedit::harness
