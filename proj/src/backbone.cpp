#include "xedit/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "xedit/adapter.hpp"
#include "xedit/autodiff/ops.hpp"

namespace xedit {

using namespace xedit::ad;

template <class T>
Linear<T> Linear<T>::xavier(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> w(in * out);
  for (auto& v : w) v = T(rng.uniform(-bound, bound));
  Linear l;
  l.proj.base = Tensor<T>::from({out, in}, std::move(w), true);
  if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
  return l;
}

template <class T>
Linear<T> Linear<T>::zero(std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.proj.base = Tensor<T>::zeros({out, in}, true);
  if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
  return l;
}

template <class T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  auto y = lora::lora_forward(x, proj);
  return bias.defined() ? add_row(y, bias) : y;
}

template <class T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", proj.base});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
  if (proj.wrapped()) {
    out.push_back({"lora." + prefix + ".a", proj.a});
    out.push_back({"lora." + prefix + ".b", proj.b});
  }
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (d_model == 0 || d_model % 4 != 0) fail("d_model must be a positive multiple of 4");
  if (heads == 0 || d_model % heads != 0) {
    fail("heads (" + std::to_string(heads) + ") must divide d_model (" + std::to_string(d_model) +
         ")");
  }
  if (blocks == 0) fail("blocks must be at least 1");
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    fail("patch size " + std::to_string(patch) + " must divide the resolution " +
         std::to_string(height) + "x" + std::to_string(width));
  }
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (freq_dim == 0 || freq_dim % 2 != 0) fail("freq_dim must be a positive even number");
  if (vocab == 0) fail("instruction vocabulary must contain the EMPTY id");
}

template <class T>
std::size_t TokenSequence<T>::count(Segment s) const {
  std::size_t n = 0;
  for (auto seg : segments) n += seg == s;
  return n;
}

PatchGrid patchify(const Image& image, std::size_t patch) {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw std::invalid_argument("patch size " + std::to_string(patch) + " does not divide " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  PatchGrid g;
  g.rows = image.height / patch;
  g.cols = image.width / patch;
  g.patch = patch;
  g.payload.reserve(image.pixels.size());
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      g.coords.push_back({static_cast<int>(r), static_cast<int>(c)});
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch)
            g.payload.push_back(image.at(r * patch + dy, c * patch + dx, ch));
    }
  return g;
}

Image unpatchify(std::span<const float> payload, std::size_t grid_rows, std::size_t grid_cols,
                 std::size_t patch) {
  if (payload.size() != grid_rows * grid_cols * patch * patch * 3) {
    throw std::invalid_argument("unpatchify: payload size does not match the patch grid");
  }
  Image img(grid_rows * patch, grid_cols * patch);
  std::size_t i = 0;
  for (std::size_t r = 0; r < grid_rows; ++r)
    for (std::size_t c = 0; c < grid_cols; ++c)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch)
            img.at(r * patch + dy, c * patch + dx, ch) = payload[i++];
  return img;
}

template <class T>
Tensor<T> position_encoding(const std::vector<GridCoord>& coords, std::size_t d_model) {
  if (d_model == 0 || d_model % 4 != 0) {
    throw std::invalid_argument("position_encoding: d_model " + std::to_string(d_model) +
                                " is not divisible by 4");
  }
  if (coords.empty()) throw std::invalid_argument("position_encoding: no coordinates");
  const std::size_t quarter = d_model / 4;
  std::vector<T> out(coords.size() * d_model);
  for (std::size_t s = 0; s < coords.size(); ++s) {
    T* row = out.data() + s * d_model;
    const double axis_value[2] = {static_cast<double>(coords[s].row),
                                  static_cast<double>(coords[s].col)};
    for (std::size_t axis = 0; axis < 2; ++axis) {
      T* half = row + axis * 2 * quarter;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double freq =
            std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
        half[i] = T(std::sin(axis_value[axis] * freq));
        half[quarter + i] = T(std::cos(axis_value[axis] * freq));
      }
    }
  }
  return Tensor<T>::from({coords.size(), d_model}, std::move(out));
}

template <class T>
Tensor<T> timestep_features(double t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<T> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = T(std::cos(1000.0 * t * freq));
    out[half + i] = T(std::sin(1000.0 * t * freq));
  }
  return Tensor<T>::from({1, dim}, std::move(out));
}

template <class T>
Tensor<T> TimestepEmbedder<T>::operator()(double t) const {
  return fc2(gelu(fc1(timestep_features<T>(t, freq_dim))));
}

template <class T>
void TimestepEmbedder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

template <class T>
void DiTBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  q.collect(prefix + ".attn.q", out);
  k.collect(prefix + ".attn.k", out);
  v.collect(prefix + ".attn.v", out);
  o.collect(prefix + ".attn.o", out);
  fc1.collect(prefix + ".mlp.fc1", out);
  fc2.collect(prefix + ".mlp.fc2", out);
  modulation.collect(prefix + ".modulation", out);
}

template <class T>
void FinalLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  modulation.collect(prefix + ".modulation", out);
  proj.collect(prefix + ".proj", out);
}

namespace {

template <class T>
Tensor<T> gaussian(Shape shape, double sd, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = T(rng.normal() * sd);
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <class T>
Backbone<T> Backbone<T>::init(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::stream(seed, "init.backbone");
  const std::size_t d = cfg.d_model;
  Backbone net;
  net.config = cfg;
  net.patch_embed = Linear<T>::xavier(cfg.payload_dim(), d, true, rng);
  net.segment_table = gaussian<T>({kSegmentKinds, d}, 0.02, rng);
  net.text_table = gaussian<T>({cfg.vocab, d}, 0.02, rng);
  net.text_position = gaussian<T>({1, d}, 0.02, rng);
  net.time.freq_dim = cfg.freq_dim;
  net.time.fc1 = Linear<T>::xavier(cfg.freq_dim, d, true, rng);
  net.time.fc2 = Linear<T>::xavier(d, d, true, rng);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    DiTBlock<T> blk;
    blk.heads = cfg.heads;
    blk.q = Linear<T>::xavier(d, d, false, rng);
    blk.k = Linear<T>::xavier(d, d, false, rng);
    blk.v = Linear<T>::xavier(d, d, false, rng);
    blk.o = Linear<T>::xavier(d, d, true, rng);
    blk.fc1 = Linear<T>::xavier(d, cfg.mlp_ratio * d, true, rng);
    blk.fc2 = Linear<T>::xavier(cfg.mlp_ratio * d, d, true, rng);
    // Zero modulation: every gate starts at 0, so each block is an identity.
    blk.modulation = Linear<T>::zero(d, 6 * d, true);
    net.blocks.push_back(std::move(blk));
  }
  net.final.modulation = Linear<T>::zero(d, 2 * d, true);
  net.final.proj = Linear<T>::zero(d, cfg.payload_dim(), true);
  if (cfg.text_modulation) net.text_modulation = Linear<T>::xavier(d, d, false, rng);
  return net;
}

template <class T>
void Backbone<T>::collect(ParamList<T>& out) const {
  patch_embed.collect("backbone.patch_embed", out);
  out.push_back({"backbone.segment_table", segment_table});
  out.push_back({"text.table", text_table});
  out.push_back({"backbone.text_position", text_position});
  time.collect("backbone.time", out);
  if (text_modulation.proj.base.defined()) text_modulation.collect("text.modulation", out);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].collect("backbone.blocks." + std::to_string(b), out);
  }
  final.collect("backbone.final", out);
}

template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, std::vector<Tensor<T>>* weights) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " +
                     std::to_string(d));
  }
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw ShapeError("attention: incompatible Q/K/V shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t dh = d / heads;
  const T inv_scale = T(1) / std::sqrt(T(dh));
  std::vector<Tensor<T>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    auto kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    auto vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    auto p = softmax(scale(matmul_bt(qh, kh), inv_scale));
    if (weights) weights->push_back(p);
    outs.push_back(matmul(p, vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

template <class T>
AttentionResult<T> mm_attention(const Tensor<T>& h, const DiTBlock<T>& block,
                                std::vector<Tensor<T>>* weights) {
  AttentionResult<T> r;
  r.query = block.q(h);
  r.output = multi_head_attention(r.query, block.k(h), block.v(h), block.heads, weights);
  return r;
}

namespace {

template <class T>
Tensor<T> chunk(const Tensor<T>& mod, std::size_t i, std::size_t d) {
  return slice(mod, 1, i * d, (i + 1) * d);
}

template <class T>
Tensor<T> normalize(const Tensor<T>& x) {
  const std::size_t d = x.cols();
  return layer_norm(x, Tensor<T>::full({d}, T(1)), Tensor<T>::zeros({d}), T(1e-6));
}

// h * (1 + scale) + shift, with shift/scale broadcast over rows.
template <class T>
Tensor<T> modulate(const Tensor<T>& h, const Tensor<T>& shift, const Tensor<T>& scl) {
  return add_row(add(h, mul_row(h, scl)), shift);
}

}  // namespace

template <class T>
Tensor<T> dit_block_forward(const Tensor<T>& x, const DiTBlock<T>& block,
                            const Tensor<T>& conditioning, std::size_t block_index,
                            const QueryInjection<T>& injection, T alpha, BlockTrace<T>* trace) {
  const std::size_t d = x.cols();
  const auto mod = block.modulation(conditioning);
  const auto h = modulate(normalize(x), chunk(mod, 0, d), chunk(mod, 1, d));
  auto att = mm_attention(h, block);
  Tensor<T> z = att.output;
  Tensor<T> zv;
  if (injection) {
    zv = injection(att.query, block_index);
    z = fuse(att.output, zv, alpha);
  }
  if (trace) *trace = {att.query, att.output, zv, z};
  auto out = add(x, mul_row(block.o(z), chunk(mod, 2, d)));
  const auto h2 = modulate(normalize(out), chunk(mod, 3, d), chunk(mod, 4, d));
  auto mlp = block.fc2(gelu(block.fc1(h2)));
  return add(out, mul_row(mlp, chunk(mod, 5, d)));
}

template <class T>
Tensor<T> backbone_forward(const Backbone<T>& net, const TokenSequence<T>& seq, double t,
                           const QueryInjection<T>& injection, T alpha,
                           std::vector<BlockTrace<T>>* traces) {
  const std::size_t n_noisy = seq.count(Segment::noisy);
  if (n_noisy == 0) throw std::invalid_argument("backbone_forward: sequence has no NOISY tokens");
  for (std::size_t i = 0; i < n_noisy; ++i) {
    if (seq.segments[i] != Segment::noisy) {
      throw std::invalid_argument("backbone_forward: NOISY tokens must lead the sequence");
    }
  }
  auto time_vec = net.time(t);
  if (net.text_modulation.proj.base.defined()) {
    std::size_t first = seq.size(), count = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq.segments[i] != Segment::text) continue;
      first = std::min(first, i);
      ++count;
    }
    if (count == 0) throw std::invalid_argument("backbone_forward: text modulation needs a TEXT row");
    const auto pool = Tensor<T>::full({1, count}, T(1) / T(count));
    const auto text = matmul(pool, slice(seq.tokens, 0, first, first + count));
    time_vec = add(time_vec, net.text_modulation(text));
  }
  const auto cond = gelu(time_vec);
  auto x = seq.tokens;
  if (traces) traces->assign(net.blocks.size(), {});
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    x = dit_block_forward(x, net.blocks[b], cond, b, injection, alpha,
                          traces ? &(*traces)[b] : nullptr);
  }
  // Only NOISY rows carry a prediction; the final layer is row-wise.
  const auto noisy = n_noisy == x.rows() ? x : slice(x, 0, 0, n_noisy);
  const std::size_t d = x.cols();
  const auto mod = net.final.modulation(cond);
  const auto h = modulate(normalize(noisy), chunk(mod, 0, d), chunk(mod, 1, d));
  return net.final.proj(h);
}

#define XEDIT_INSTANTIATE_BACKBONE(T)                                                          \
  template struct Linear<T>;                                                                   \
  template struct TokenSequence<T>;                                                            \
  template struct TimestepEmbedder<T>;                                                         \
  template struct DiTBlock<T>;                                                                 \
  template struct FinalLayer<T>;                                                               \
  template struct Backbone<T>;                                                                 \
  template Tensor<T> position_encoding<T>(const std::vector<GridCoord>&, std::size_t);         \
  template Tensor<T> timestep_features<T>(double, std::size_t);                                \
  template Tensor<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&, std::size_t,                    \
                                             std::vector<Tensor<T>>*);                         \
  template AttentionResult<T> mm_attention<T>(const Tensor<T>&, const DiTBlock<T>&,            \
                                              std::vector<Tensor<T>>*);                        \
  template Tensor<T> dit_block_forward<T>(const Tensor<T>&, const DiTBlock<T>&,                \
                                          const Tensor<T>&, std::size_t,                       \
                                          const QueryInjection<T>&, T, BlockTrace<T>*);        \
  template Tensor<T> backbone_forward<T>(const Backbone<T>&, const TokenSequence<T>&, double,  \
                                         const QueryInjection<T>&, T,                          \
                                         std::vector<BlockTrace<T>>*);

XEDIT_INSTANTIATE_BACKBONE(float)
XEDIT_INSTANTIATE_BACKBONE(double)

}  // namespace xedit
