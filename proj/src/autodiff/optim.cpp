#include "xedit/autodiff/optim.hpp"

#include <cmath>
#include <string>

namespace xedit::ad {

template <class T>
AdamState<T> AdamState<T>::for_params(const std::vector<Tensor<T>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), T(0));
    s.v.emplace_back(p.size(), T(0));
  }
  return s;
}

template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors but " + std::to_string(params.size()) + " parameters were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = params[i].size();
    if (state.m[i].size() != n || state.v[i].size() != n ||
        (params[i].has_grad() && params[i].grad().size() != n)) {
      throw ShapeError("adam_step: moment/gradient size mismatch for parameter " +
                       std::to_string(i) + " of shape " + shape_str(params[i].shape()));
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T step_size = T(cfg.lr / bc1);
  const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
  const T eps = T(cfg.eps);
  const T decay = T(1.0 - cfg.lr * cfg.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has_grad = params[i].has_grad();
    const auto grad = params[i].grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T g = has_grad ? grad[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      if (cfg.weight_decay != 0.0) data[j] *= decay;
      data[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<Tensor<float>>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::vector<Tensor<double>>&, AdamState<double>&,
                                const AdamConfig&);
template void zero_grads<float>(std::vector<Tensor<float>>&);
template void zero_grads<double>(std::vector<Tensor<double>>&);

}  // namespace xedit::ad
