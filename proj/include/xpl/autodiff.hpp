#pragma once

// Reverse-mode tape over Tensor values. Node ids double as a topological
// order: every node's inputs have strictly smaller ids, and backward walks
// ids in decreasing order.

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "xpl/tensor.hpp"

namespace xpl::ad {

using NodeId = std::size_t;

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  ScalarMul,
  AddScalar,
  MatMul,
  AddBias,
  Relu,
  Sigmoid,
  Log,
  Exp,
  Clamp,
  Sum,
  Mean,
  CosineSim,
  CosineRows,
  ReduceMax,
  LogSumExp,
  Row,
  Element,
  StackRows,
  Transpose,
};

const char* op_name(Op op);

/// Reduction axis for reduce_max on matrices. Rows reduces over the row
/// index (one result per column), Cols over the column index.
enum class Axis { All, Rows, Cols };

struct Node {
  Op op = Op::Leaf;
  std::vector<NodeId> inputs;
  Tensor value;
  bool requires_grad = false;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t index = 0;
  Axis axis = Axis::All;
  std::vector<std::size_t> argmax;
};

class Graph;

/// Handle to a node. Cheap to copy; only valid while its graph lives.
class Var {
 public:
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_;
  NodeId id_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input excluded from differentiation (stop-gradient).
  Var constant(Tensor value);

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  Var record(Node node);

 private:
  std::deque<Node> nodes_;  // stable addresses: value() references survive later pushes
};

/// Gradients of one backward pass, indexed by node id. Nodes that do not
/// require a gradient (constants and everything computed only from
/// constants) never get an entry.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n) {}

  bool has(Var v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }
  bool has(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }
  const Tensor& of(Var v) const;
  /// Gradient of v, or zeros shaped like v if v was unreachable.
  Tensor of_or_zero(Var v) const;

  std::optional<Tensor>& slot(NodeId id) { return grads_[id]; }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

/// d(root)/d(node) for every node that requires grad and reaches root.
Gradients backward(const Graph& graph, Var root);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
/// x[m x n] + b[n] added to every row.
Var add_bias(Var x, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var log(Var x);
Var exp(Var x);
/// Elementwise clamp; the gradient is zero wherever the clamp is active.
Var clamp(Var x, double lo, double hi);
Var sum(Var x);
Var mean(Var x);
Var cosine_sim(Var u, Var v);
/// Cosine similarity of every row of x[m x d] with u[d]; result has shape [m].
Var cosine_rows(Var x, Var u);
/// Ties go to the lowest flat index.
Var reduce_max(Var x, Axis axis);
Var log_sum_exp(Var x);
Var row(Var x, std::size_t r);
Var element(Var x, std::size_t flat_index);
Var stack_rows(std::span<const Var> rows);
Var transpose(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace xpl::ad
