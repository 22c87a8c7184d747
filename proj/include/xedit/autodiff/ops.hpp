#pragma once
// Differentiable primitives. Matrices are rank-2 row-major tensors; the
// row-wise ops (softmax, layer_norm, add_row, mul_row) treat any tensor as
// rows() x cols() over its last axis.

#include <cstddef>
#include <vector>

#include "xedit/autodiff/tensor.hpp"

namespace xedit::ad {

/// a[m x k] * b[k x n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a[m x k] * b[n x k]^T. Linear layers store weights as [out x in] and use
/// this form, as does the Q K^T product of attention.
template <class T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise (Hadamard) product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x[r x c] + v[c] broadcast over rows.
template <class T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& v);
/// x[r x c] * v[c] broadcast over rows.
template <class T>
Tensor<T> mul_row(const Tensor<T>& x, const Tensor<T>& v);

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Tensor<T> gelu(const Tensor<T>& x);

/// Softmax over the last axis with max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x);

/// Row-wise normalization to zero mean and unit (biased) variance followed
/// by gain * xhat + bias. gain and bias are [cols] and may be constants.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (cols).
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Half-open range [begin, end) of a rank-2 tensor along axis 0 or 1.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <class T>
Tensor<T> transpose(const Tensor<T>& x);

/// Rows of table[V x d] selected by ids; gradients scatter-add.
template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids);

/// mean((pred - target)^2) as a [1] tensor.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Sum of all elements as a [1] tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x);

}  // namespace xedit::ad
