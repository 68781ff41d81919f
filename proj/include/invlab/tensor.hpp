#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "invlab/error.hpp"

namespace invlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  // Empty until a backward pass reaches this node.
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

#ifndef NDEBUG
inline constexpr bool kEagerFiniteCheck = true;
#else
inline constexpr bool kEagerFiniteCheck = false;
#endif

}  // namespace detail

class Tensor;
Tensor make_op_result(Shape shape, std::vector<double> value, const char* op,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backprop);

/// Dense row-major fp64 array that participates in reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Use clone() or detach() for an independent value.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<detail::Node>()) {
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const double> data() const { return node_->value; }
  /// Only leaves may be written; interior values are owned by the graph.
  std::span<double> mutable_data() {
    if (!node_->leaf) throw Error("cannot mutate the value of a non-leaf tensor");
    return node_->value;
  }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * node_->shape.at(1) + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->leaf) throw Error("requires_grad can only be set on leaves");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->leaf; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  /// Writable gradient buffer of a leaf, allocated (zeroed) on first use.
  std::span<double> mutable_grad() {
    if (!node_->leaf) throw Error("mutable_grad() is only available on leaves");
    node_->ensure_grad();
    return node_->grad;
  }

  /// Same values, fresh leaf without history.
  Tensor detach() const { return Tensor(shape(), node_->value); }
  Tensor clone() const {
    Tensor t(shape(), node_->value);
    t.node_->requires_grad = node_->requires_grad && node_->leaf;
    return t;
  }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, const char*, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Builds the output of a primitive. A graph node (inputs + backprop) is only
/// recorded when at least one input requires grad.
inline Tensor make_op_result(Shape shape, std::vector<double> value, const char* op,
                             std::vector<Tensor> inputs,
                             std::function<void(detail::Node&)> backprop) {
  if constexpr (detail::kEagerFiniteCheck) {
    if (!all_finite(value)) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op, 0);
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->leaf = false;
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

/// Topologically ordered view of the nodes that feed a root tensor.
class Graph {
 public:
  explicit Graph(const Tensor& root) : root_(root.node()) {
    // Iterative post-order DFS so deep chains do not exhaust the stack.
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        auto* child = n->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  /// Inputs always precede their consumers.
  const std::vector<detail::Node*>& nodes() const { return order_; }

  void backward() {
    if (root_->value.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root_->shape));
    }
    if (!std::isfinite(root_->value[0])) {
      throw NonFiniteError("loss is not finite", order_.size() - 1);
    }
    if (!root_->requires_grad) return;
    for (auto* n : order_) {
      if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
    }
    root_->ensure_grad();
    root_->grad[0] += 1.0;
    for (std::size_t i = order_.size(); i-- > 0;) {
      auto* n = order_[i];
      if (n->leaf || !n->backprop) continue;
      n->backprop(*n);
      for (auto& in : n->inputs) {
        if (in->requires_grad && !all_finite(in->grad)) {
          throw NonFiniteError(std::string("non-finite gradient flowing out of node ") +
                                   std::to_string(i) + " (" + n->op + ")",
                               i);
        }
      }
    }
    for (auto* n : order_) {
      if (!n->leaf) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from loss.
inline void backward(const Tensor& loss) { Graph(loss).backward(); }

}  // namespace invlab
