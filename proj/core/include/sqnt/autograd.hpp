#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sqnt/tensor.hpp"

namespace sqnt {

/// Integer representation of a value that lies on a uniform quantization
/// grid: value ~= step * ints, with `ints` holding exact integers.
///
/// Linear ops whose inputs all carry a grid evaluate on the integers and
/// rescale once, which is exactly what the integer inference engine does.
struct Grid {
  Tensor ints;
  double step = 0.0;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded operation. The graph formed by `inputs` is a DAG; backward
/// visits each node once in reverse topological order.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool custom_gradient = false;  // backward is a registered surrogate (STE)
  std::string op = "leaf";
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;
  std::shared_ptr<const Grid> grid;

  void accumulate(const Tensor& g);
};

/// Shared handle to a node of the autodiff graph.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  /// Leaf value. Parameters pass requires_grad = true.
  static Var leaf(Tensor value, bool requires_grad = false);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }
  const std::string& op() const { return node_->op; }
  const std::shared_ptr<const Grid>& grid() const { return node_->grid; }

  Node& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }

  /// Copy of the value with no graph attached.
  Var detach() const { return leaf(node_->value, false); }

 private:
  NodePtr node_;
};

/// Records a new node. `backward` is stored only when some input requires a
/// gradient, so inference over constant inputs builds no graph.
Var make_node(std::string op, Tensor value, std::vector<Var> inputs,
              std::function<void(Node&)> backward, bool custom_gradient = false);

/// Populates grad of every requires-grad node reachable from `loss`.
/// Throws ShapeError when `loss` is not a single-element tensor.
void backward(const Var& loss);

}  // namespace sqnt
