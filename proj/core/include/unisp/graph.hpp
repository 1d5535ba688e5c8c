#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "unisp/params.hpp"
#include "unisp/tensor.hpp"

namespace unisp {

/// Handle to a node recorded on a Graph.
struct Var {
  std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParam,
  kMatMul,
  kTranspose,
  kAdd,
  kMul,
  kTanh,
  kSigmoid,
  kScale,
  kSum,
  kRow,
  kConcat,
  kSlice,
  kStackRows,
  kSoftmax,
  kSoftmaxXent,
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so every
/// node's inputs precede it and a reverse sweep is a valid topological order.
///
/// A Graph is single-threaded. Parameter nodes alias the ParamStore's tensors;
/// backward() accumulates into their gradient buffers (it never resets them).
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(const Tensor& t);
  Var constant_row(std::span<const double> values);
  /// Trainable parameter: backward() accumulates into p's gradient buffer.
  Var param(Parameter& p);
  /// Read-only view of a parameter; no gradient flows back to it.
  Var frozen(const Parameter& p);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var scale(Var a, double factor);
  Var sum(Var a);
  /// Row `index` of a matrix as a 1 x cols vector (embedding lookup).
  Var row(Var table, std::size_t index);
  /// Column-wise concatenation of two tensors with equal row counts.
  Var concat(Var a, Var b);
  /// Columns [begin, begin + width) of a.
  Var slice(Var a, std::size_t begin, std::size_t width);
  /// Stacks 1 x k rows into an n x k matrix.
  Var stack_rows(std::span<const Var> rows);
  /// Softmax over the columns of a 1 x n row.
  Var softmax(Var a);
  /// Cross-entropy -sum_v target[v] * log softmax(logits)[v]; logits is 1 x n.
  /// Throws ContractViolation when target is not a distribution (tolerance 1e-9).
  Var softmax_xent(Var logits, std::span<const double> target);
  /// Same loss with a one-hot target.
  Var softmax_xent(Var logits, std::size_t target_index);

  /// Reverse sweep from a 1 x 1 node. Calling twice accumulates twice.
  void backward(Var loss);

  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  std::span<const double> value(Var v) const;
  double scalar(Var v) const { return value(v)[0]; }
  /// Gradient of the last backward() w.r.t. this node (empty before any backward).
  std::span<const double> grad(Var v) const;
  OpKind kind(Var v) const { return nodes_[v.id].op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Input node ids of v, all strictly smaller than v.id.
  std::span<const std::uint32_t> inputs(Var v) const;

 private:
  struct Node {
    OpKind op;
    std::uint32_t in_begin = 0;
    std::uint32_t in_count = 0;
    Shape shape;
    std::size_t offset = 0;      // value (and grad) slot in the arenas
    std::size_t aux = 0;         // auxiliary arena slot (softmax probs, targets)
    std::size_t index = 0;       // row index or slice begin
    double factor = 0.0;         // scale factor
    const Parameter* param = nullptr;  // aliased tensor for kParam
    Parameter* trainable = nullptr;    // gradient target, null when frozen
  };

  Var push(OpKind op, std::initializer_list<std::uint32_t> in, Shape shape);
  Var push_n(OpKind op, std::span<const Var> in, Shape shape);
  double* val(std::uint32_t id);
  const double* val(std::uint32_t id) const;
  void check_id(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> input_pool_;
  std::vector<double> arena_;
  std::vector<double> aux_arena_;
  std::vector<double> grads_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

}  // namespace unisp
