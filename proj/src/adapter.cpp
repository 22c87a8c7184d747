#include "xedit/adapter.hpp"

#include <stdexcept>
#include <string>

#include "xedit/autodiff/ops.hpp"

namespace xedit {

using namespace xedit::ad;

template <class T>
PromptEncoder<T> PromptEncoder<T>::init(const BackboneConfig& cfg, std::size_t n_tokens,
                                        std::uint64_t seed) {
  if (n_tokens == 0) throw std::invalid_argument("n_adapter must be at least 1");
  Rng rng = Rng::stream(seed, "init.encoder");
  const std::size_t d = cfg.d_model;
  PromptEncoder e;
  e.patch = cfg.patch;
  e.height = cfg.height;
  e.width = cfg.width;
  e.heads = cfg.heads;
  e.tokens = n_tokens;
  e.patch_proj = Linear<T>::xavier(cfg.payload_dim(), d, true, rng);
  e.ln1_gain = Tensor<T>::full({d}, T(1), true);
  e.ln1_bias = Tensor<T>::zeros({d}, true);
  e.ln2_gain = Tensor<T>::full({d}, T(1), true);
  e.ln2_bias = Tensor<T>::zeros({d}, true);
  e.q = Linear<T>::xavier(d, d, false, rng);
  e.k = Linear<T>::xavier(d, d, false, rng);
  e.v = Linear<T>::xavier(d, d, false, rng);
  e.o = Linear<T>::xavier(d, d, true, rng);
  e.fc1 = Linear<T>::xavier(d, cfg.mlp_ratio * d, true, rng);
  e.fc2 = Linear<T>::xavier(cfg.mlp_ratio * d, d, true, rng);
  const std::size_t n = cfg.tokens_per_image();
  std::vector<T> mix(n_tokens * n);
  // Near-uniform pooling, perturbed so the output tokens start distinct.
  for (auto& m : mix) m = T((1.0 + 0.5 * rng.normal()) / static_cast<double>(n));
  e.token_mix = Tensor<T>::from({n_tokens, n}, std::move(mix), true);
  e.head1 = Linear<T>::xavier(d, d, true, rng);
  e.head2 = Linear<T>::xavier(d, d, true, rng);
  return e;
}

template <class T>
Tensor<T> PromptEncoder<T>::operator()(const Image& image) const {
  if (image.height != height || image.width != width) {
    throw std::invalid_argument("prompt encoder expects " + std::to_string(height) + "x" +
                                std::to_string(width) + " images, got " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const auto grid = patchify(image, patch);
  const std::size_t d = patch_proj.proj.out_features();
  std::vector<T> payload(grid.payload.begin(), grid.payload.end());
  auto x = patch_proj(Tensor<T>::from({grid.count(), grid.payload_dim()}, std::move(payload)));
  x = add(x, position_encoding<T>(grid.coords, d));
  const auto h = layer_norm(x, ln1_gain, ln1_bias);
  x = add(x, o(multi_head_attention(q(h), k(h), v(h), heads)));
  x = add(x, fc2(gelu(fc1(layer_norm(x, ln2_gain, ln2_bias)))));
  return head2(head1(matmul(token_mix, x)));
}

template <class T>
std::vector<double> PromptEncoder<T>::pooled_features(const Image& image) const {
  const auto tok = (*this)(image);
  std::vector<double> f(tok.cols(), 0.0);
  for (std::size_t i = 0; i < tok.rows(); ++i)
    for (std::size_t j = 0; j < tok.cols(); ++j) f[j] += tok[i * tok.cols() + j];
  for (auto& v : f) v /= static_cast<double>(tok.rows());
  return f;
}

template <class T>
void PromptEncoder<T>::collect(ParamList<T>& out) const {
  patch_proj.collect("encoder.patch_proj", out);
  out.push_back({"encoder.ln1.gain", ln1_gain});
  out.push_back({"encoder.ln1.bias", ln1_bias});
  out.push_back({"encoder.ln2.gain", ln2_gain});
  out.push_back({"encoder.ln2.bias", ln2_bias});
  q.collect("encoder.attn.q", out);
  k.collect("encoder.attn.k", out);
  v.collect("encoder.attn.v", out);
  o.collect("encoder.attn.o", out);
  fc1.collect("encoder.mlp.fc1", out);
  fc2.collect("encoder.mlp.fc2", out);
  out.push_back({"encoder.token_mix", token_mix});
  head1.collect("encoder.head.fc1", out);
  head2.collect("encoder.head.fc2", out);
}

template <class T>
AdapterState<T> AdapterState<T>::init(const BackboneConfig& cfg, const AdapterConfig& acfg,
                                      bool with_projections, std::uint64_t seed) {
  if (acfg.alpha < 0.0) throw std::invalid_argument("adapter alpha must be non-negative");
  AdapterState a;
  a.alpha = T(acfg.alpha);
  a.encoder = PromptEncoder<T>::init(cfg, acfg.n_adapter, seed);
  Rng rng = Rng::stream(seed, "init.adapter");
  const std::size_t d = cfg.d_model;
  if (with_projections) {
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      std::vector<T> wk(d * d);
      for (auto& w : wk) w = T(0.02 * rng.normal());
      Linear<T> key;
      key.proj.base = Tensor<T>::from({d, d}, std::move(wk), true);
      a.key_proj.push_back(std::move(key));
      a.value_proj.push_back(Linear<T>::zero(d, d, false));
    }
  }
  std::vector<T> null(2 * acfg.n_adapter * d);
  for (auto& v : null) v = T(0.02 * rng.normal());
  a.null_prompt = Tensor<T>::from({2 * acfg.n_adapter, d}, std::move(null), true);
  return a;
}

template <class T>
void AdapterState<T>::collect(ParamList<T>& out) const {
  for (std::size_t b = 0; b < key_proj.size(); ++b) {
    key_proj[b].collect("adapter.blocks." + std::to_string(b) + ".key", out);
    value_proj[b].collect("adapter.blocks." + std::to_string(b) + ".value", out);
  }
  out.push_back({"adapter.null_prompt", null_prompt});
  encoder.collect(out);
}

template <class T>
Tensor<T> encode_prompt_pair(const PromptEncoder<T>& encoder, const Image& prompt,
                             const Image& reference) {
  return concat<T>({encoder(prompt), encoder(reference)}, 0);
}

template <class T>
Tensor<T> adapter_attention(const AdapterState<T>& adapter, const Tensor<T>& query,
                            const Tensor<T>& prompt_tokens, std::size_t block_index,
                            std::size_t heads, std::vector<Tensor<T>>* weights) {
  if (block_index >= adapter.key_proj.size()) {
    throw std::out_of_range("adapter_attention: block index " + std::to_string(block_index) +
                            " out of range (" + std::to_string(adapter.key_proj.size()) +
                            " adapter blocks)");
  }
  const auto keys = adapter.key_proj[block_index](prompt_tokens);
  const auto values = adapter.value_proj[block_index](prompt_tokens);
  return multi_head_attention(query, keys, values, heads, weights);
}

template <class T>
Tensor<T> fuse(const Tensor<T>& backbone_out, const Tensor<T>& adapter_out, T alpha) {
  if (backbone_out.shape() != adapter_out.shape()) {
    throw ShapeError("fuse: Z_B " + shape_str(backbone_out.shape()) + " and Z_V " +
                     shape_str(adapter_out.shape()) + " differ in shape");
  }
  // Exactly Z_B: adding 0 * Z_V could still flip the sign of a zero.
  if (alpha == T(0)) return backbone_out;
  return add(backbone_out, scale(adapter_out, alpha));
}

template <class T>
Tensor<T> redux_concat_attention(const Tensor<T>& base_tokens, const Tensor<T>& prompt_tokens,
                                 const DiTBlock<T>& block, std::vector<Tensor<T>>* weights) {
  const auto joint =
      prompt_tokens.defined() ? concat<T>({base_tokens, prompt_tokens}, 0) : base_tokens;
  return mm_attention(joint, block, weights).output;
}

#define XEDIT_INSTANTIATE_ADAPTER(T)                                                          \
  template struct PromptEncoder<T>;                                                           \
  template struct AdapterState<T>;                                                            \
  template Tensor<T> encode_prompt_pair<T>(const PromptEncoder<T>&, const Image&,             \
                                           const Image&);                                     \
  template Tensor<T> adapter_attention<T>(const AdapterState<T>&, const Tensor<T>&,           \
                                          const Tensor<T>&, std::size_t, std::size_t,         \
                                          std::vector<Tensor<T>>*);                           \
  template Tensor<T> fuse<T>(const Tensor<T>&, const Tensor<T>&, T);                          \
  template Tensor<T> redux_concat_attention<T>(const Tensor<T>&, const Tensor<T>&,            \
                                               const DiTBlock<T>&, std::vector<Tensor<T>>*);

XEDIT_INSTANTIATE_ADAPTER(float)
XEDIT_INSTANTIATE_ADAPTER(double)

}  // namespace xedit
