#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xedit::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared in a forward value or a propagated gradient.
/// `primitive` names the op that produced it.
struct NumericError : std::runtime_error {
  NumericError(std::string primitive_name, const std::string& what)
      : std::runtime_error(what), primitive(std::move(primitive_name)) {}
  std::string primitive;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched by backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/// Shared handle to a node of the computation graph. Copies alias the same
/// storage; values are treated as immutable once an op has consumed them.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  /// Product of all but the last dimension (1 for rank-1 tensors).
  std::size_t rows() const;
  /// Last dimension.
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  /// In-place access for parameter updates and test fixtures only.
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad();

  /// Fresh leaf holding a copy of the values (no graph linkage).
  Tensor detach() const;

  Node<T>* node() const { return node_.get(); }
  const NodePtr<T>& node_ptr() const { return node_; }

 private:
  NodePtr<T> node_;
};

/// While alive on a thread, ops on that thread record no graph linkage
/// (inference mode). Nests.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar output. Leaf gradients accumulate
/// additively across calls; interior gradients are recomputed each call.
template <class T>
void backward(const Tensor<T>& loss);

/// Builds a graph node. When no parent requires a gradient the node is a
/// plain constant and the backward rule is dropped. Throws NumericError when
/// `data` is not finite.
template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> data,
                  std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace xedit::ad
