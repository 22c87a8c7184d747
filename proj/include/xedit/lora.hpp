#pragma once
// Low-rank adaptation of a linear projection.
//
// Storage follows the usual [out x in] convention: base W0 is d x k, A is
// r x k and B is d x r, and the layer computes y = x W0^T + s (x A^T) B^T,
// i.e. W0 x + s B (A x) per row. A layer with rank 0 is a plain projection.

#include <cstddef>

#include "xedit/autodiff/tensor.hpp"
#include "xedit/rng.hpp"

namespace xedit::lora {

template <class T>
struct LoraLinear {
  ad::Tensor<T> base;  // W0, d x k
  ad::Tensor<T> a;     // r x k; undefined when not wrapped
  ad::Tensor<T> b;     // d x r
  T scale = T(1);

  bool wrapped() const { return a.defined(); }
  std::size_t rank() const { return wrapped() ? a.dim(0) : 0; }
  std::size_t out_features() const { return base.dim(0); }
  std::size_t in_features() const { return base.dim(1); }
};

/// Freezes `layer.base` and attaches A ~ N(0, 1/r), B = 0.
/// Requires 1 <= rank <= min(d, k).
template <class T>
void wrap(LoraLinear<T>& layer, std::size_t rank, T scale, Rng& rng);

template <class T>
ad::Tensor<T> lora_forward(const ad::Tensor<T>& x, const LoraLinear<T>& layer);

/// W0 + s B A as a constant d x k tensor.
template <class T>
ad::Tensor<T> lora_merge(const LoraLinear<T>& layer);

}  // namespace xedit::lora
