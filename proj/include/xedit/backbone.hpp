#pragma once
// Miniature diffusion transformer over pixel patches.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xedit/autodiff/tensor.hpp"
#include "xedit/image.hpp"
#include "xedit/lora.hpp"
#include "xedit/rng.hpp"

namespace xedit {

using ad::Tensor;

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

/// Projection stored as [out x in] with optional bias and optional low-rank
/// branch.
template <class T>
struct Linear {
  lora::LoraLinear<T> proj;
  Tensor<T> bias;  // [out], undefined for bias-free projections

  static Linear xavier(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  static Linear zero(std::size_t in, std::size_t out, bool with_bias);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

struct BackboneConfig {
  std::size_t d_model = 64;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t patch = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t mlp_ratio = 4;
  std::size_t freq_dim = 64;  // sinusoidal timestep features
  std::size_t vocab = 1;      // instruction ids, 0 = EMPTY
  bool text_modulation = false;  // pooled TEXT rows also drive AdaLN

  std::size_t grid_rows() const { return height / patch; }
  std::size_t grid_cols() const { return width / patch; }
  std::size_t tokens_per_image() const { return grid_rows() * grid_cols(); }
  std::size_t payload_dim() const { return patch * patch * 3; }
  std::size_t head_dim() const { return d_model / heads; }
  /// Throws std::invalid_argument naming the first inconsistency.
  void validate() const;
};

enum class Segment : std::uint8_t { noisy = 0, cond = 1, text = 2, prompt = 3 };
inline constexpr std::size_t kSegmentKinds = 4;

struct GridCoord {
  int row = 0;
  int col = 0;
  bool operator==(const GridCoord&) const = default;
};
inline constexpr GridCoord kTextCoord{-1, -1};

template <class T>
struct TokenSequence {
  Tensor<T> tokens;                // S x d_model
  std::vector<GridCoord> coords;   // S
  std::vector<Segment> segments;   // S
  Tensor<T> positional;            // S x d_model, the positional rows that were added

  std::size_t size() const { return segments.size(); }
  std::size_t count(Segment s) const;
};

/// Raw patch grid: N = (H/p)(W/p) rows of p*p*3 values, (dy, dx, channel)
/// order within a patch, patches in row-major grid order.
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch = 0;
  std::vector<float> payload;
  std::vector<GridCoord> coords;

  std::size_t count() const { return rows * cols; }
  std::size_t payload_dim() const { return patch * patch * 3; }
};

PatchGrid patchify(const Image& image, std::size_t patch);
Image unpatchify(std::span<const float> payload, std::size_t grid_rows, std::size_t grid_cols,
                 std::size_t patch);

/// 2-D sinusoidal encoding: channels [0, d/2) encode the row and [d/2, d) the
/// column; within each half the first quarter holds sin and the second cos
/// of coord * 10000^(-i / (d/4)).
template <class T>
Tensor<T> position_encoding(const std::vector<GridCoord>& coords, std::size_t d_model);

/// Sinusoidal features of t * 1000 (cos half, then sin half).
template <class T>
Tensor<T> timestep_features(double t, std::size_t dim);

template <class T>
struct TimestepEmbedder {
  Linear<T> fc1;
  Linear<T> fc2;
  std::size_t freq_dim = 0;

  Tensor<T> operator()(double t) const;  // [1 x d_model]
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <class T>
struct DiTBlock {
  Linear<T> q, k, v, o;
  Linear<T> fc1, fc2;
  Linear<T> modulation;  // d -> 6d: shift1, scale1, gate1, shift2, scale2, gate2
  std::size_t heads = 1;

  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <class T>
struct FinalLayer {
  Linear<T> modulation;  // d -> 2d: shift, scale
  Linear<T> proj;        // d -> payload
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <class T>
struct Backbone {
  BackboneConfig config;
  Linear<T> patch_embed;
  Tensor<T> segment_table;  // kSegmentKinds x d
  Tensor<T> text_table;     // vocab x d
  Tensor<T> text_position;  // 1 x d, learned vector for the sentinel coord
  TimestepEmbedder<T> time;
  Linear<T> text_modulation;  // d -> d, added to the timestep vector; unset when disabled
  std::vector<DiTBlock<T>> blocks;
  FinalLayer<T> final;

  static Backbone init(const BackboneConfig& cfg, std::uint64_t seed);
  void collect(ParamList<T>& out) const;
};

/// Multi-head scaled dot-product attention softmax(Q K^T / sqrt(d_head)) V.
/// When `weights` is non-null the per-head attention matrices are appended.
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, std::vector<Tensor<T>>* weights = nullptr);

template <class T>
struct AttentionResult {
  Tensor<T> query;   // Q = h W_q, shared with the adapter branch
  Tensor<T> output;  // Z_B, before the output projection
};

/// Joint bidirectional attention over every row of `h` (no masking).
template <class T>
AttentionResult<T> mm_attention(const Tensor<T>& h, const DiTBlock<T>& block,
                                std::vector<Tensor<T>>* weights = nullptr);

/// Produces the adapter branch Z_V from the block's query and block index.
template <class T>
using QueryInjection = std::function<Tensor<T>(const Tensor<T>& query, std::size_t block_index)>;

/// Per-block intermediates exposed for tests.
template <class T>
struct BlockTrace {
  Tensor<T> query;
  Tensor<T> backbone_attention;  // Z_B
  Tensor<T> adapter_attention;   // Z_V (undefined without injection)
  Tensor<T> fused;               // Z_new
};

/// AdaLN-modulated attention (+ optional adapter fusion before the output
/// projection), gated residual, AdaLN-modulated MLP, gated residual.
/// `conditioning` is the [1 x d] timestep vector after its nonlinearity.
template <class T>
Tensor<T> dit_block_forward(const Tensor<T>& x, const DiTBlock<T>& block,
                            const Tensor<T>& conditioning, std::size_t block_index,
                            const QueryInjection<T>& injection, T alpha,
                            BlockTrace<T>* trace = nullptr);

/// Runs every block and the final layer; returns the velocity prediction for
/// the NOISY rows (which must lead the sequence), N x payload. The AdaLN
/// conditioning is gelu(time(t)), plus the projected mean of the TEXT rows
/// when text modulation is enabled.
template <class T>
Tensor<T> backbone_forward(const Backbone<T>& net, const TokenSequence<T>& seq, double t,
                           const QueryInjection<T>& injection, T alpha,
                           std::vector<BlockTrace<T>>* traces = nullptr);

}  // namespace xedit
