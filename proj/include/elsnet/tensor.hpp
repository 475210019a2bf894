#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "elsnet/errors.hpp"

namespace elsnet {

using Dims = std::vector<std::size_t>;

inline std::size_t numel_of(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims_to_string(const Dims& dims);

namespace detail {

template <typename T>
struct Node {
  Dims dims;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

inline thread_local bool grad_recording = true;

}  // namespace detail

/// While alive, ops on this thread produce constants and record no history.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// N-dimensional row-major array that can take part in reverse-mode
/// differentiation. Copies share the underlying node; use `detach()` for a
/// value copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

  static BasicTensor zeros(Dims dims) { return full(std::move(dims), T(0)); }

  static BasicTensor full(Dims dims, T v) {
    const std::size_t n = numel_of(dims);
    return from(std::move(dims), std::vector<T>(n, v));
  }

  static BasicTensor from(Dims dims, std::vector<T> data) {
    for (std::size_t d : dims)
      if (d == 0) throw DimensionError("tensor extents must be positive, got " + dims_to_string(dims));
    if (numel_of(dims) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match dims " +
                           dims_to_string(dims));
    auto node = std::make_shared<detail::Node<T>>();
    node->dims = std::move(dims);
    node->value = std::move(data);
    return BasicTensor(std::move(node));
  }

  static BasicTensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Dims& dims() const { return node_->dims; }
  std::size_t dim(std::size_t axis) const { return node_->dims.at(axis); }
  std::size_t ndim() const { return node_->dims.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const T> data() const { return node_->value; }
  /// Writable view; only meaningful for leaves (parameters, inputs) between steps.
  std::span<T> mutable_data() { return node_->value; }
  T item() const {
    if (!is_scalar()) throw ContractError("item() on tensor with dims " + dims_to_string(dims()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Value copy with no graph history.
  BasicTensor detach() const {
    BasicTensor out = from(dims(), node_->value);
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> v(node_->value.begin(), node_->value.end());
    BasicTensor<U> out = BasicTensor<U>::from(dims(), std::move(v));
    out.set_requires_grad(requires_grad());
    return out;
  }

  const char* op_name() const { return node_->op; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// The recorded operations reachable from a root, in topological order
/// (every op after all of its inputs). Built on demand from the root's
/// history; dropping the root releases the graph.
template <typename T>
class Graph {
 public:
  using Node = detail::Node<T>;

  explicit Graph(const BasicTensor<T>& root) : root_(root.node()) {
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS; inputs are visited in declaration order so the
    // ordering is deterministic.
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<Node*>& order() const { return order_; }

  /// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
  /// Intermediate gradients are recomputed from scratch on every call.
  void backward() {
    if (root_->value.size() != 1)
      throw ContractError("backward() requires a scalar loss, got dims " + dims_to_string(root_->dims));
    if (!root_->requires_grad) return;
    for (Node* n : order_)
      if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    root_->ensure_grad()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it)
      if (!(*it)->is_leaf()) (*it)->backward(**it);
  }

 private:
  std::shared_ptr<Node> root_;
  std::vector<Node*> order_;
};

template <typename T>
void backward(const BasicTensor<T>& loss) {
  Graph<T>(loss).backward();
}

}  // namespace elsnet
