#pragma once

// Dense row-major tensor with a dynamically recorded reverse-mode graph.
//
// Every op returns a fresh node. When at least one input requires a gradient
// the node keeps references to its inputs plus a backward closure; otherwise
// nothing is recorded, so gradient-free computation (frozen teachers,
// evaluation) allocates no graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "loretrack/errors.hpp"

namespace loretrack {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    if (data.size() != shape_numel(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0.0, requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  // 2-D convenience constructor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false) {
    if (rows.empty() || rows.front().empty())
      throw DimensionError("matrix: empty rows");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("matrix: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(flat), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(node_->shape.size() - 1); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }

  double item() const {
    if (numel() != 1)
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double& operator[](std::size_t i) { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->data[r * cols() + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  // Only valid on leaves; interior nodes derive the flag from their inputs.
  void set_requires_grad(bool v) {
    if (!node_->is_leaf())
      throw ContractError("set_requires_grad on a non-leaf tensor");
    node_->requires_grad = v;
    if (!v) node_->grad.clear();
  }
  void zero_grad() { node_->grad.clear(); }

  // Value copy with no graph attachment.
  Tensor detach() const {
    return Tensor(node_->shape, node_->data, false);
  }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }
  const NodePtr& node() const { return node_; }

  // Used by op implementations to build the result node.
  static Tensor from_node(NodePtr n) {
    Tensor t(Private{});
    t.node_ = std::move(n);
    return t;
  }

 private:
  struct Private {};
  explicit Tensor(Private) {}

  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto d : shape)
      if (d == 0)
        throw DimensionError("tensor dimensions must be positive, got " +
                             shape_str(shape));
  }

  NodePtr node_;
};

// Build a result node; parents are recorded only when a gradient is needed.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(n));
}

// Topologically ordered view of the recorded graph reachable from a root.
class Graph {
 public:
  explicit Graph(const Tensor& root) {
    // Iterative post-order DFS; each node is emitted once.
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    Node* r = root.node().get();
    if (!r->requires_grad) return;
    stack.emplace_back(r, 0);
    seen.insert(r);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  // Inputs before outputs.
  const std::vector<Node*>& order() const { return order_; }

 private:
  std::vector<Node*> order_;
};

// Populates grad on every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate across calls; callers zero them explicitly.
// Interior gradients are recomputed from scratch on every call, so the
// recorded graph stays valid for repeated backward passes until released.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  Graph graph(loss);
  const auto& order = graph.order();
  if (order.empty()) return;
  for (Node* n : order)
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  Node* root = order.back();
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
}

}  // namespace loretrack
