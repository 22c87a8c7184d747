#pragma once
// Exemplar-pair conditioning: a shared prompt encoder turns (I_prm, I_ref)
// into visual prompt tokens c_V, and per-block decoupled key/value
// projections let every block attend to c_V with its own query.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xedit/backbone.hpp"

namespace xedit {

struct AdapterConfig {
  std::size_t n_adapter = 8;  // prompt tokens per image
  double alpha = 1.0;
};

/// Shared-weight image encoder used for both halves of the exemplar pair.
/// Patch projection + 2-D position encoding, one pre-LN transformer block,
/// a learned token mixer (N patches -> n_adapter tokens) and a two-layer
/// linear projection head.
template <class T>
struct PromptEncoder {
  std::size_t patch = 0, height = 0, width = 0, heads = 1, tokens = 0;
  Linear<T> patch_proj;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Linear<T> q, k, v, o, fc1, fc2;
  Tensor<T> token_mix;  // tokens x N
  Linear<T> head1, head2;

  static PromptEncoder init(const BackboneConfig& cfg, std::size_t n_tokens, std::uint64_t seed);

  /// n_adapter x d_model. Throws std::invalid_argument on a resolution mismatch.
  Tensor<T> operator()(const Image& image) const;

  /// Mean over the encoder's output tokens.
  std::vector<double> pooled_features(const Image& image) const;

  void collect(ParamList<T>& out) const;
};

template <class T>
struct AdapterState {
  std::vector<Linear<T>> key_proj;    // W_k' per block
  std::vector<Linear<T>> value_proj;  // W_v' per block
  PromptEncoder<T> encoder;
  Tensor<T> null_prompt;  // 2 n_adapter x d, used when the pair is dropped
  T alpha = T(1);

  /// W_v' = 0 and W_k' ~ N(0, 0.02^2), so a fresh adapter contributes
  /// nothing. `with_projections` is false for variants that consume c_V
  /// without the decoupled path.
  static AdapterState init(const BackboneConfig& cfg, const AdapterConfig& acfg,
                           bool with_projections, std::uint64_t seed);

  bool has_projections() const { return !key_proj.empty(); }
  void collect(ParamList<T>& out) const;
};

/// c_V = [c_P; c_R], 2 n_adapter x d.
template <class T>
Tensor<T> encode_prompt_pair(const PromptEncoder<T>& encoder, const Image& prompt,
                             const Image& reference);

/// Z_V = softmax(Q K'^T / sqrt(d_head)) V' with K' = c_V W_k', V' = c_V W_v'.
template <class T>
Tensor<T> adapter_attention(const AdapterState<T>& adapter, const Tensor<T>& query,
                            const Tensor<T>& prompt_tokens, std::size_t block_index,
                            std::size_t heads, std::vector<Tensor<T>>* weights = nullptr);

/// Z_B + alpha * Z_V.
template <class T>
Tensor<T> fuse(const Tensor<T>& backbone_out, const Tensor<T>& adapter_out, T alpha);

/// Joint self-attention over [c_B; c_V] with the block's own W_q, W_k, W_v.
/// An undefined `prompt_tokens` reduces to plain self-attention over c_B.
/// Returns one row per input row.
template <class T>
Tensor<T> redux_concat_attention(const Tensor<T>& base_tokens, const Tensor<T>& prompt_tokens,
                                 const DiTBlock<T>& block,
                                 std::vector<Tensor<T>>* weights = nullptr);

}  // namespace xedit
