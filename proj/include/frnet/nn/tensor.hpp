#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "frnet/error.hpp"

namespace frnet::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array of doubles with an optional same-length gradient
// buffer (empty until first requested).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() {
    ensure_grad();
    return grad_;
  }
  std::span<const double> grad() const { return grad_; }
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  void drop_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// ---------------------------------------------------------------------------
// Reverse-mode graph. Every kernel output is a Node that owns its value, keeps
// its inputs alive and knows how to push its gradient back into them. Nodes
// are stamped with a creation sequence number; inputs are always created
// before outputs, so descending sequence order is a valid reverse topological
// order.

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Tensor value;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  std::uint64_t sequence = 0;

  static std::uint64_t next_sequence() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->sequence = Node::next_sequence();
  }

  bool defined() const { return node_ != nullptr; }
  Tensor& value() { return node_->value; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::span<double> data() { return node_->value.data(); }
  std::span<const double> data() const { return std::as_const(node_->value).data(); }
  std::span<double> grad() { return node_->value.grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  double item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  Node& node() { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds a kernel output. The backward closure runs only if some input needs
// a gradient, and receives the output node (value and gradient).
inline Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var out(std::move(value));
  Node& node = out.node();
  bool needs = false;
  for (Var& in : inputs) {
    needs = needs || in.requires_grad();
    node.inputs.push_back(in.ptr());
  }
  node.requires_grad = needs;
  if (needs) {
    node.backward = std::move(backward);
  } else {
    node.inputs.clear();
  }
  return out;
}

// Accumulates d(root)/d(x) into the gradient buffer of every reachable leaf
// that requires a gradient. Root must be a scalar.
inline void backward(Var root) {
  if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::vector<Node*> stack{&root.node()};
  std::unordered_set<const Node*> seen;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->sequence > b->sequence; });
  // Leaves accumulate across calls; interior buffers restart from zero.
  for (Node* n : order) {
    n->value.ensure_grad();
    if (n->backward) n->value.zero_grad();
  }
  root.node().value.grad()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward) n->backward(*n);
  }
}

}  // namespace frnet::nn
