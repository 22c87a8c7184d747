#include "xedit/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xedit/kernels/gemm.hpp"

namespace xedit::ad {
namespace {

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class T>
bool wants(const NodePtr<T>& p) {
  return p->requires_grad;
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_op<T>("matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                    [m, n, k](Node<T>& self) {
                      auto& pa = self.parents[0];
                      auto& pb = self.parents[1];
                      if (wants(pa)) {
                        kernels::gemm_nt(m, k, n, self.grad.data(), pb->data.data(),
                                         pa->grad.data(), true);
                      }
                      if (wants(pb)) {
                        kernels::gemm_tn(k, n, m, pa->data.data(), self.grad.data(),
                                         pb->grad.data(), true);
                      }
                    });
}

template <class T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_bt");
  require_matrix(b, "matmul_bt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_bt: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  kernels::gemm_nt(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_op<T>("matmul_bt", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                    [m, n, k](Node<T>& self) {
                      auto& pa = self.parents[0];
                      auto& pb = self.parents[1];
                      if (wants(pa)) {
                        kernels::gemm_nn(m, k, n, self.grad.data(), pb->data.data(),
                                         pa->grad.data(), true);
                      }
                      if (wants(pb)) {
                        kernels::gemm_tn(n, k, m, self.grad.data(), pa->data.data(),
                                         pb->grad.data(), true);
                      }
                    });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op<T>("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                    [](Node<T>& self) {
                      for (auto& p : self.parents) {
                        if (!wants(p)) continue;
                        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
                      }
                    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op<T>("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                    [](Node<T>& self) {
                      auto& pa = self.parents[0];
                      auto& pb = self.parents[1];
                      if (wants(pa)) {
                        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
                      }
                      if (wants(pb)) {
                        for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
                      }
                    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op<T>("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                    [](Node<T>& self) {
                      auto& pa = self.parents[0];
                      auto& pb = self.parents[1];
                      if (wants(pa)) {
                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                          pa->grad[i] += self.grad[i] * pb->data[i];
                      }
                      if (wants(pb)) {
                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                          pb->grad[i] += self.grad[i] * pa->data[i];
                      }
                    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_op<T>("scale", a.shape(), std::move(out), {a.node_ptr()},
                    [factor](Node<T>& self) {
                      auto& p = self.parents[0];
                      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * factor;
                    });
}

template <class T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t r = x.rows(), c = x.cols();
  if (v.size() != c) {
    throw ShapeError("add_row: vector " + shape_str(v.shape()) + " does not match row width of " +
                     shape_str(x.shape()));
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + v[j];
  return make_op<T>("add_row", x.shape(), std::move(out), {x.node_ptr(), v.node_ptr()},
                    [r, c](Node<T>& self) {
                      auto& px = self.parents[0];
                      auto& pv = self.parents[1];
                      if (wants(px)) {
                        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
                      }
                      if (wants(pv)) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) pv->grad[j] += self.grad[i * c + j];
                      }
                    });
}

template <class T>
Tensor<T> mul_row(const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t r = x.rows(), c = x.cols();
  if (v.size() != c) {
    throw ShapeError("mul_row: vector " + shape_str(v.shape()) + " does not match row width of " +
                     shape_str(x.shape()));
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * v[j];
  return make_op<T>("mul_row", x.shape(), std::move(out), {x.node_ptr(), v.node_ptr()},
                    [r, c](Node<T>& self) {
                      auto& px = self.parents[0];
                      auto& pv = self.parents[1];
                      if (wants(px)) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j)
                            px->grad[i * c + j] += self.grad[i * c + j] * pv->data[j];
                      }
                      if (wants(pv)) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j)
                            pv->grad[j] += self.grad[i * c + j] * px->data[i * c + j];
                      }
                    });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v)));
  }
  return make_op<T>("gelu", x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = p->data[i];
      const T th = std::tanh(k0 * (v + k1 * v * v * v));
      const T d = T(0.5) * (T(1) + th) +
                  T(0.5) * v * (T(1) - th * th) * k0 * (T(1) + T(3) * k1 * v * v);
      p->grad[i] += self.grad[i] * d;
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = x.data().data() + i * c;
    T* o = out.data() + i * c;
    const T mx = *std::max_element(in, in + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
  }
  return make_op<T>("softmax", x.shape(), std::move(out), {x.node_ptr()},
                    [r, c](Node<T>& self) {
                      auto& p = self.parents[0];
                      for (std::size_t i = 0; i < r; ++i) {
                        const T* y = self.data.data() + i * c;
                        const T* g = self.grad.data() + i * c;
                        T dot = 0;
                        for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                        for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += y[j] * (g[j] - dot);
                      }
                    });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match width of " + shape_str(x.shape()));
  }
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  std::vector<T> out(x.size());
  // Normalized values and per-row inverse std are kept for the backward rule.
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = x.data().data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += in[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (in[j] - mean) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * gain[j] + bias[j];
    }
  }
  return make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [r, c, xhat, inv_std](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (std::size_t i = 0; i < r; ++i) {
          const T* g = self.grad.data() + i * c;
          const T* h = xhat->data() + i * c;
          if (wants(pg)) {
            for (std::size_t j = 0; j < c; ++j) pg->grad[j] += g[j] * h[j];
          }
          if (wants(pb)) {
            for (std::size_t j = 0; j < c; ++j) pb->grad[j] += g[j];
          }
          if (wants(px)) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T dh = g[j] * pg->data[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh /= T(c);
            mean_dh_h /= T(c);
            const T is = (*inv_std)[i];
            for (std::size_t j = 0; j < c; ++j) {
              const T dh = g[j] * pg->data[j];
              px->grad[i * c + j] += is * (dh - mean_dh - h[j] * mean_dh_h);
            }
          }
        }
      });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_matrix(p, "concat");
  const std::size_t other = 1 - axis;
  const std::size_t fixed = parts[0].dim(other);
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != fixed) {
      throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()) + " along axis " + std::to_string(axis));
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  const std::size_t out_cols = shape[1];
  std::vector<T> out(total * fixed);
  std::vector<NodePtr<T>> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t oi = axis == 0 ? i + offset : i;
        const std::size_t oj = axis == 0 ? j : j + offset;
        out[oi * out_cols + oj] = p[i * pc + j];
      }
    offset += p.dim(axis);
    parents.push_back(p.node_ptr());
  }
  return make_op<T>("concat", shape, std::move(out), std::move(parents),
                    [axis, out_cols](Node<T>& self) {
                      std::size_t off = 0;
                      for (auto& p : self.parents) {
                        const std::size_t pr = p->shape[0], pc = p->shape[1];
                        if (wants(p)) {
                          for (std::size_t i = 0; i < pr; ++i)
                            for (std::size_t j = 0; j < pc; ++j) {
                              const std::size_t oi = axis == 0 ? i + off : i;
                              const std::size_t oj = axis == 0 ? j : j + off;
                              p->grad[i * pc + j] += self.grad[oi * out_cols + oj];
                            }
                        }
                        off += p->shape[axis];
                      }
                    });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice");
  if (axis > 1) throw ShapeError("slice: axis must be 0 or 1");
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const std::size_t in_cols = x.dim(1);
  const std::size_t r = axis == 0 ? end - begin : x.dim(0);
  const std::size_t c = axis == 0 ? in_cols : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 0 ? 0 : begin;
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[(i + r0) * in_cols + j + c0];
  return make_op<T>("slice", {r, c}, std::move(out), {x.node_ptr()},
                    [r, c, r0, c0, in_cols](Node<T>& self) {
                      auto& p = self.parents[0];
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                          p->grad[(i + r0) * in_cols + j + c0] += self.grad[i * c + j];
                    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("reshape: zero dimension in " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_op<T>("reshape", std::move(shape), std::move(out), {x.node_ptr()},
                    [](Node<T>& self) {
                      auto& p = self.parents[0];
                      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
                    });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_op<T>("transpose", {c, r}, std::move(out), {x.node_ptr()},
                    [r, c](Node<T>& self) {
                      auto& p = self.parents[0];
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[j * r + i];
                    });
}

template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  require_matrix(table, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                       shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  return make_op<T>("embedding", {ids.size(), d}, std::move(out), {table.node_ptr()},
                    [ids, d](Node<T>& self) {
                      auto& p = self.parents[0];
                      for (std::size_t i = 0; i < ids.size(); ++i)
                        for (std::size_t j = 0; j < d; ++j) p->grad[ids[i] * d + j] += self.grad[i * d + j];
                    });
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred[i] - target[i];
    acc += d * d;
  }
  return make_op<T>("mse_loss", {1}, {acc / T(n)}, {pred.node_ptr(), target.node_ptr()},
                    [n](Node<T>& self) {
                      auto& pp = self.parents[0];
                      auto& pt = self.parents[1];
                      const T g = self.grad[0] * T(2) / T(n);
                      for (std::size_t i = 0; i < n; ++i) {
                        const T d = pp->data[i] - pt->data[i];
                        if (wants(pp)) pp->grad[i] += g * d;
                        if (wants(pt)) pt->grad[i] -= g * d;
                      }
                    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return make_op<T>("sum", {1}, {acc}, {x.node_ptr()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    for (auto& g : p->grad) g += self.grad[0];
  });
}

#define XEDIT_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul_bt(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul_row(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> gelu(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                   \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> embedding(const Tensor<T>&, const std::vector<std::size_t>&);         \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sum(const Tensor<T>&);

XEDIT_INSTANTIATE_OPS(float)
XEDIT_INSTANTIATE_OPS(double)

}  // namespace xedit::ad
