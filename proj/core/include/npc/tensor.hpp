#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "npc/common.hpp"

namespace npc {

namespace detail {
inline thread_local bool autograd_enabled = true;
}

inline bool autograd_enabled() { return detail::autograd_enabled; }

// Disables graph construction in scope (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::autograd_enabled) { detail::autograd_enabled = false; }
  ~NoGradGuard() { detail::autograd_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense tensor participating in a dynamically built reverse-mode graph.
// Tensor is a cheap shared handle; ops are free functions (ops.hpp) that
// record a backward rule capturing the parent handles, so a loss tensor
// keeps its whole graph alive until it goes out of scope.
template <std::floating_point T>
class Tensor {
 public:
  struct Node;
  // Receives the node holding the output gradient; accumulates into parents.
  using BackwardFn = std::function<void(Node&)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily; same length as value when present
    bool requires_grad = false;
    std::vector<Tensor> parents;
    BackwardFn backward;

    i64 numel() const { return static_cast<i64>(value.size()); }
    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), T(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    i64 n = numel_of(shape);
    Tensor t = from_data(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), fill),
                         requires_grad);
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    for (i64 d : shape)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    i64 n = numel_of(shape);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    if (data.empty())
      node->value.assign(static_cast<std::size_t>(n), T(0));
    else {
      if (static_cast<i64>(data.size()) != n)
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(node->shape));
      node->value = std::move(data);
    }
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }

  // Graph-building constructor used by every op.
  static Tensor make_op(Shape shape, std::vector<T> value, std::vector<Tensor> parents,
                        BackwardFn backward) {
    Tensor t = from_data(std::move(shape), std::move(value), false);
    bool track = autograd_enabled();
    if (track) {
      bool any = false;
      for (const auto& p : parents) any = any || p.requires_grad();
      track = any;
    }
    if (track) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
      t.node_->backward = std::move(backward);
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  i64 numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Marks a leaf as trainable.
  void set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (v) node_->ensure_grad();
  }

  std::span<T> value() { return {node_->value.data(), node_->value.size()}; }
  std::span<const T> value() const { return {node_->value.data(), node_->value.size()}; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() {
    if (!has_grad()) throw StateError("gradient not populated; backward not run");
    return {node_->grad.data(), node_->grad.size()};
  }
  std::span<const T> grad() const {
    if (!has_grad()) throw StateError("gradient not populated; backward not run");
    return {node_->grad.data(), node_->grad.size()};
  }

  void zero_grad() {
    node_->grad.assign(node_->value.size(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar tensor, shape is " + shape_str(shape()));
    return node_->value[0];
  }

  // Reverse-mode sweep from a scalar. Visits each reachable node exactly once
  // in reverse topological order; gradient buffers accumulate, so leaves used
  // along several paths receive the sum.
  void backward() {
    if (numel() != 1) throw StateError("backward() requires a scalar loss");
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    topo_visit(node_.get(), visited, order);
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward) {
        for (auto& p : n->parents)
          if (p.requires_grad()) p.node_->ensure_grad();
        n->backward(*n);
      }
    }
  }

  Node* node() { return node_.get(); }
  const Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Iterative post-order DFS; parent order fixes the traversal, keeping
  // backward bit-deterministic for a given graph.
  static void topo_visit(Node* root, std::unordered_set<Node*>& visited,
                         std::vector<Node*>& order) {
    struct Frame {
      Node* node;
      std::size_t next_parent;
    };
    if (!root->requires_grad) return;
    std::vector<Frame> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node* p = f.node->parents[f.next_parent++].node_.get();
        if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace npc
