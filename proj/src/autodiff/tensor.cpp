#include "xedit/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace xedit::ad {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

thread_local bool g_no_grad = false;

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
NodePtr<T> new_leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad));
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, value), requires_grad));
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  return Tensor(new_leaf<T>(std::move(shape), std::move(values), requires_grad));
}

template <class T>
std::size_t Tensor<T>::rows() const {
  return shape().size() <= 1 ? 1 : size() / shape().back();
}

template <class T>
std::size_t Tensor<T>::cols() const {
  return shape().empty() ? 1 : shape().back();
}

template <class T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <class T>
void Tensor<T>::set_requires_grad(bool v) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be changed on leaves");
  node_->requires_grad = v;
  if (!v) node_->grad.clear();
}

template <class T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(new_leaf<T>(shape(), node_->data, false));
}

template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> data,
                  std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  if (!all_finite<T>(data)) {
    throw NumericError(op, std::string("non-finite value produced by primitive '") + op + "'");
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  const bool needs = !g_no_grad &&
      std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() called on a tensor that is not connected to the graph");
  }

  // Iterative post-order DFS; `order` ends with the loss.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  Node<T>* root = loss.node();
  root->ensure_grad();
  root->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward_fn) continue;
    if (!all_finite<T>(n->grad)) {
      throw NumericError(n->op, std::string("non-finite gradient flowing into primitive '") +
                                    n->op + "'");
    }
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (n->is_leaf() && !all_finite<T>(n->grad)) {
      throw NumericError(n->op, "non-finite gradient accumulated into a leaf tensor");
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template Tensor<float> make_op<float>(const char*, Shape, std::vector<float>,
                                      std::vector<NodePtr<float>>,
                                      std::function<void(Node<float>&)>);
template Tensor<double> make_op<double>(const char*, Shape, std::vector<double>,
                                        std::vector<NodePtr<double>>,
                                        std::function<void(Node<double>&)>);

}  // namespace xedit::ad
