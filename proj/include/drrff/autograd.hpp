#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drrff/tensor.hpp"

namespace drrff {

// One value in a reverse-mode computation graph. Leaves with requires_grad
// (parameters) accumulate gradients across backward passes until zeroed.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Receives this node's gradient and accumulates into the inputs.
  std::function<void(const Tensor<T>&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  static Var leaf(Tensor<T> value, bool requires_grad) {
    Var v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  // In-place access for optimizers and initializers; never use on graph interiors.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  // Empty tensor when no gradient has reached this node.
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  // Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  // Seeds d(this)/d(this) = 1; this must hold a single element.
  void backward() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Adds g into the gradient of v when v participates in differentiation.
template <typename T>
void accumulate_grad(const Var<T>& v, const Tensor<T>& g) {
  if (!v.requires_grad()) return;
  Tensor<T>& buf = v.node()->grad_buffer();
  T* dst = buf.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
}

// Wraps an op result. When no input needs gradients the result is a constant
// and `backward` is dropped.
template <typename T, typename Backward>
Var<T> make_var(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward&& backward) {
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return Var<T>::constant(std::move(value));
  Var<T> out = Var<T>::leaf(std::move(value), true);
  Node<T>* node = out.node();
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->inputs.push_back(in.shared_node());
  }
  node->backward = std::forward<Backward>(backward);
  return out;
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a scalar, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  std::unordered_set<Node<T>*> marks;
  stack.emplace_back(node_.get(), 0);
  marks.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && marks.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Tensor<T>& seed = node_->grad_buffer();
  seed[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) {
      n->backward(n->grad);
      n->grad = Tensor<T>();  // interior gradients are not kept
    }
  }
}

}  // namespace drrff
