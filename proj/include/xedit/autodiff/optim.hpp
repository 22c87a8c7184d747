#pragma once

#include <cstdint>
#include <vector>

#include "xedit/autodiff/tensor.hpp"

namespace xedit::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

/// First/second moment buffers, one per parameter, in parameter order.
template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;

  static AdamState for_params(const std::vector<Tensor<T>>& params);
};

/// One bias-corrected AdamW update applied in place to `params` using their
/// accumulated gradients. Parameters without a gradient buffer are treated as
/// having a zero gradient. Throws ShapeError when the state does not match.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg);

template <class T>
void zero_grads(std::vector<Tensor<T>>& params);

}  // namespace xedit::ad
