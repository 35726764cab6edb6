#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssp/tensor.hpp"

namespace ssp {

/// A named parameter living outside any Graph. Gradients accumulate into
/// `grad` during backward only when `trainable` is set.
struct Variable {
  Variable() = default;
  Variable(std::string name, Tensor value, bool trainable);

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = false;

  void zero_grad();
};

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  matmul,
  transpose,
  add,
  sub,
  mul,
  scale,
  affine,
  sigmoid,
  relu,
  sin,
  cos,
  reciprocal,
  softmax,
  mean,
  concat,
  row_scale,
  gather_rows,
  cross_entropy,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to one recorded value on a Graph. Handles are invalidated when
/// the owning Graph is cleared (which backward does).
class Node {
 public:
  Node() = default;
  Node(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Tape of executed operations in topological order. One Graph per thread
/// per training step; Graphs are not shared between threads.
class Graph {
 public:
  using Backprop = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Owned constant; never receives gradient.
  Node constant(Tensor value);
  /// Borrowed constant. `value` must outlive the Graph's current tape.
  Node constant_ref(const Tensor& value);
  /// Leaf bound to `var`. A non-trainable Variable behaves like constant_ref.
  Node param(Variable& var);
  /// Leaf that reads `var` without ever accumulating into it.
  Node frozen(const Variable& var);

  /// Appends an op result. Used by the op implementations.
  Node record(OpKind kind, Tensor value, std::vector<int> inputs, Backprop backprop);

  /// Reverse sweep from a scalar root; accumulates into trainable Variables
  /// and then clears the tape.
  void backward(Node root);
  void clear();

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(int id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  const std::vector<int>& inputs(int id) const { return nodes_.at(static_cast<std::size_t>(id)).inputs; }
  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of a node, allocated on first use.
  Tensor& grad(int id);

 private:
  struct Record {
    OpKind kind = OpKind::constant;
    std::optional<Tensor> owned;
    const Tensor* borrowed = nullptr;
    std::vector<int> inputs;
    Backprop backprop;
    Variable* variable = nullptr;
    bool requires_grad = false;
    std::optional<Tensor> grad;
  };
  std::vector<Record> nodes_;
};

// ---- Differentiable operations. Shapes follow broadcasting-free rules;
// mismatches raise ShapeError naming the op and both shapes.

Node matmul(Node a, Node b);
Node transpose(Node a);
Node add(Node a, Node b);
Node sub(Node a, Node b);
Node mul(Node a, Node b);
Node scale(Node a, double s);
/// s * a + b elementwise, with scalars s and b.
Node affine(Node a, double s, double b);
Node sigmoid(Node a);
Node relu(Node a);
Node sin(Node a);
Node cos(Node a);
Node reciprocal(Node a);
/// Softmax of a rank-1 (axis 0) or rank-2 (axis 0 or 1) tensor.
Node softmax(Node a, int axis);
/// Mean of all elements, as a {1} tensor.
Node mean(Node a);
/// Concatenation of rank-2 tensors along axis 0 or 1.
Node concat(std::span<const Node> parts, int axis);
/// Row r of `a` (R x C) multiplied by element r of `s` (R elements).
Node row_scale(Node a, Node s);
/// Rows of `table` selected by `ids`.
Node gather_rows(Node table, std::span<const int> ids);
/// Mean over non-ignored rows of -log softmax(logits[r])[targets[r]].
Node cross_entropy(Node logits, std::span<const int> targets, std::optional<int> ignore_index = std::nullopt);

// Tensor-level forms of the same math, for callers without a Graph.
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
double cross_entropy(const Tensor& logits, std::span<const int> targets, std::optional<int> ignore_index = std::nullopt);

}  // namespace ssp
