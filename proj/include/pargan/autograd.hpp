#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pargan/tensor.hpp"

namespace pargan {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  Tensor<T>& grad_ref() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
  Node& input(std::size_t i) { return *inputs[i]; }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Tensor<T>& grad() { return node_->grad_ref(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool defined() const { return static_cast<bool>(node_); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Same value, cut from the graph.
  Var detach() const { return leaf(node_->value, false); }

  T item() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>::leaf(std::move(value), false);
}

/// Records an operation node. When no input requires a gradient (or grad mode
/// is off) the result is a plain constant.
template <typename T>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  bool needs = false;
  if (detail::grad_mode_flag()) {
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& v : inputs) node->inputs.push_back(v.node_ptr());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward) {
  bool needs = false;
  if (detail::grad_mode_flag()) {
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& v : inputs) node->inputs.push_back(v.node_ptr());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Back-propagates from a scalar root. Leaf gradients accumulate; interior
/// gradients are released once consumed.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw Error(ErrorCode::shape, "backward() needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad_ref()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward) {
      node->backward(*node);
      node->grad = Tensor<T>();
    }
  }
}

}  // namespace pargan
