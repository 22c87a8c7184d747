#include "xedit/lora.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "xedit/autodiff/ops.hpp"
#include "xedit/kernels/gemm.hpp"

namespace xedit::lora {

template <class T>
void wrap(LoraLinear<T>& layer, std::size_t rank, T scale, Rng& rng) {
  const std::size_t d = layer.out_features(), k = layer.in_features();
  if (rank < 1 || rank > std::min(d, k)) {
    throw ad::ShapeError("lora rank " + std::to_string(rank) + " invalid for a " +
                         std::to_string(d) + "x" + std::to_string(k) + " projection");
  }
  if (layer.wrapped()) throw std::invalid_argument("lora: projection is already wrapped");
  const double sd = 1.0 / std::sqrt(static_cast<double>(rank));
  std::vector<T> a(rank * k);
  for (auto& v : a) v = T(rng.normal() * sd);
  layer.base.set_requires_grad(false);
  layer.a = ad::Tensor<T>::from({rank, k}, std::move(a), true);
  layer.b = ad::Tensor<T>::zeros({d, rank}, true);
  layer.scale = scale;
}

template <class T>
ad::Tensor<T> lora_forward(const ad::Tensor<T>& x, const LoraLinear<T>& layer) {
  auto y = ad::matmul_bt(x, layer.base);
  if (!layer.wrapped()) return y;
  auto low = ad::matmul_bt(ad::matmul_bt(x, layer.a), layer.b);
  return ad::add(y, ad::scale(low, layer.scale));
}

template <class T>
ad::Tensor<T> lora_merge(const LoraLinear<T>& layer) {
  std::vector<T> merged(layer.base.data().begin(), layer.base.data().end());
  if (layer.wrapped()) {
    const std::size_t d = layer.out_features(), k = layer.in_features(), r = layer.rank();
    std::vector<T> delta(d * k);
    kernels::gemm_nn(d, k, r, layer.b.data().data(), layer.a.data().data(), delta.data(), false);
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += layer.scale * delta[i];
  }
  return ad::Tensor<T>::from(layer.base.shape(), std::move(merged), false);
}

template void wrap<float>(LoraLinear<float>&, std::size_t, float, Rng&);
template void wrap<double>(LoraLinear<double>&, std::size_t, double, Rng&);
template ad::Tensor<float> lora_forward<float>(const ad::Tensor<float>&, const LoraLinear<float>&);
template ad::Tensor<double> lora_forward<double>(const ad::Tensor<double>&,
                                                 const LoraLinear<double>&);
template ad::Tensor<float> lora_merge<float>(const LoraLinear<float>&);
template ad::Tensor<double> lora_merge<double>(const LoraLinear<double>&);

}  // namespace xedit::lora
