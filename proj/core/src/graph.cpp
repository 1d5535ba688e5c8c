#include "unisp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unisp/error.hpp"

namespace unisp {
namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                            to_string(b));
  }
}

void require_row(const Shape& s, const char* op) {
  if (s.rows != 1) throw ContractViolation(std::string(op) + ": expected a 1 x n row, got " + to_string(s));
}

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// probs <- softmax(x) over n entries; returns log-sum-exp of x.
double stable_softmax(const double* x, std::size_t n, double* probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(x[i] - mx);
    z += probs[i];
  }
  for (std::size_t i = 0; i < n; ++i) probs[i] /= z;
  return mx + std::log(z);
}

}  // namespace

Var Graph::push(OpKind op, std::initializer_list<std::uint32_t> in, Shape shape) {
  Node node;
  node.op = op;
  node.in_begin = static_cast<std::uint32_t>(input_pool_.size());
  node.in_count = static_cast<std::uint32_t>(in.size());
  input_pool_.insert(input_pool_.end(), in.begin(), in.end());
  node.shape = shape;
  node.offset = arena_.size();
  arena_.resize(arena_.size() + shape.size(), 0.0);
  nodes_.push_back(node);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::push_n(OpKind op, std::span<const Var> in, Shape shape) {
  Node node;
  node.op = op;
  node.in_begin = static_cast<std::uint32_t>(input_pool_.size());
  node.in_count = static_cast<std::uint32_t>(in.size());
  for (Var v : in) input_pool_.push_back(v.id);
  node.shape = shape;
  node.offset = arena_.size();
  arena_.resize(arena_.size() + shape.size(), 0.0);
  nodes_.push_back(node);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double* Graph::val(std::uint32_t id) {
  // Parameter nodes are never written through this accessor.
  Node& n = nodes_[id];
  return n.param ? const_cast<double*>(n.param->value.values().data()) : arena_.data() + n.offset;
}

const double* Graph::val(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value.values().data() : arena_.data() + n.offset;
}

void Graph::check_id(Var v) const {
  if (v.id >= nodes_.size()) throw ContractViolation("variable does not belong to this graph");
}

std::span<const double> Graph::value(Var v) const {
  check_id(v);
  return {val(v.id), nodes_[v.id].shape.size()};
}

std::span<const double> Graph::grad(Var v) const {
  check_id(v);
  if (grads_.size() < arena_.size()) return {};
  return {grads_.data() + nodes_[v.id].offset, nodes_[v.id].shape.size()};
}

std::span<const std::uint32_t> Graph::inputs(Var v) const {
  check_id(v);
  const Node& n = nodes_[v.id];
  return {input_pool_.data() + n.in_begin, n.in_count};
}

Var Graph::constant(const Tensor& t) {
  Var v = push(OpKind::kConstant, {}, t.shape());
  std::copy(t.values().begin(), t.values().end(), arena_.begin() + nodes_[v.id].offset);
  return v;
}

Var Graph::constant_row(std::span<const double> values) {
  Var v = push(OpKind::kConstant, {}, Shape{1, values.size()});
  std::copy(values.begin(), values.end(), arena_.begin() + nodes_[v.id].offset);
  return v;
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    if (nodes_[it->second].trainable == nullptr) {
      throw ContractViolation("parameter '" + p.name + "' already bound as frozen");
    }
    return Var{it->second};
  }
  // The arena slot is only used as the gradient slot; values alias the parameter.
  Var v = push(OpKind::kParam, {}, p.value.shape());
  nodes_[v.id].param = &p;
  nodes_[v.id].trainable = &p;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::frozen(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  // Keeps a gradient slot so backward sweeps through frozen nodes stay uniform.
  Var v = push(OpKind::kParam, {}, p.value.shape());
  nodes_[v.id].param = &p;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  check_id(a);
  check_id(b);
  const Shape sa = shape(a), sb = shape(b);
  if (sa.cols != sb.rows) {
    throw ContractViolation("matmul: dimension mismatch " + to_string(sa) + " x " + to_string(sb));
  }
  Var c = push(OpKind::kMatMul, {a.id, b.id}, Shape{sa.rows, sb.cols});
  const double* x = val(a.id);
  const double* y = val(b.id);
  double* z = val(c.id);
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  for (std::size_t i = 0; i < m; ++i) {
    double* zr = z + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yr = y + p * n;
      for (std::size_t j = 0; j < n; ++j) zr[j] += xv * yr[j];
    }
  }
  return c;
}

Var Graph::transpose(Var a) {
  check_id(a);
  const Shape s = shape(a);
  Var c = push(OpKind::kTranspose, {a.id}, Shape{s.cols, s.rows});
  const double* x = val(a.id);
  double* z = val(c.id);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) z[j * s.rows + i] = x[i * s.cols + j];
  return c;
}

Var Graph::add(Var a, Var b) {
  check_id(a);
  check_id(b);
  require_same_shape(shape(a), shape(b), "add");
  Var c = push(OpKind::kAdd, {a.id, b.id}, shape(a));
  const double* x = val(a.id);
  const double* y = val(b.id);
  double* z = val(c.id);
  for (std::size_t i = 0, n = shape(c).size(); i < n; ++i) z[i] = x[i] + y[i];
  return c;
}

Var Graph::mul(Var a, Var b) {
  check_id(a);
  check_id(b);
  require_same_shape(shape(a), shape(b), "mul");
  Var c = push(OpKind::kMul, {a.id, b.id}, shape(a));
  const double* x = val(a.id);
  const double* y = val(b.id);
  double* z = val(c.id);
  for (std::size_t i = 0, n = shape(c).size(); i < n; ++i) z[i] = x[i] * y[i];
  return c;
}

Var Graph::tanh(Var a) {
  check_id(a);
  Var c = push(OpKind::kTanh, {a.id}, shape(a));
  const double* x = val(a.id);
  double* z = val(c.id);
  for (std::size_t i = 0, n = shape(c).size(); i < n; ++i) z[i] = std::tanh(x[i]);
  return c;
}

Var Graph::sigmoid(Var a) {
  check_id(a);
  Var c = push(OpKind::kSigmoid, {a.id}, shape(a));
  const double* x = val(a.id);
  double* z = val(c.id);
  for (std::size_t i = 0, n = shape(c).size(); i < n; ++i) z[i] = sigmoid_of(x[i]);
  return c;
}

Var Graph::scale(Var a, double factor) {
  check_id(a);
  Var c = push(OpKind::kScale, {a.id}, shape(a));
  nodes_[c.id].factor = factor;
  const double* x = val(a.id);
  double* z = val(c.id);
  for (std::size_t i = 0, n = shape(c).size(); i < n; ++i) z[i] = factor * x[i];
  return c;
}

Var Graph::sum(Var a) {
  check_id(a);
  Var c = push(OpKind::kSum, {a.id}, Shape{1, 1});
  const double* x = val(a.id);
  double s = 0.0;
  for (std::size_t i = 0, n = shape(a).size(); i < n; ++i) s += x[i];
  *val(c.id) = s;
  return c;
}

Var Graph::row(Var table, std::size_t index) {
  check_id(table);
  const Shape s = shape(table);
  if (index >= s.rows) {
    throw ContractViolation("row: index " + std::to_string(index) + " out of range for " + to_string(s));
  }
  Var c = push(OpKind::kRow, {table.id}, Shape{1, s.cols});
  nodes_[c.id].index = index;
  const double* x = val(table.id) + index * s.cols;
  std::copy(x, x + s.cols, val(c.id));
  return c;
}

Var Graph::concat(Var a, Var b) {
  check_id(a);
  check_id(b);
  const Shape sa = shape(a), sb = shape(b);
  if (sa.rows != sb.rows) {
    throw ContractViolation("concat: row mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  Var c = push(OpKind::kConcat, {a.id, b.id}, Shape{sa.rows, sa.cols + sb.cols});
  const double* x = val(a.id);
  const double* y = val(b.id);
  double* z = val(c.id);
  const std::size_t n = sa.cols + sb.cols;
  for (std::size_t r = 0; r < sa.rows; ++r) {
    std::copy(x + r * sa.cols, x + (r + 1) * sa.cols, z + r * n);
    std::copy(y + r * sb.cols, y + (r + 1) * sb.cols, z + r * n + sa.cols);
  }
  return c;
}

Var Graph::slice(Var a, std::size_t begin, std::size_t width) {
  check_id(a);
  const Shape s = shape(a);
  if (width == 0 || begin + width > s.cols) {
    throw ContractViolation("slice: columns [" + std::to_string(begin) + "," +
                            std::to_string(begin + width) + ") out of range for " + to_string(s));
  }
  Var c = push(OpKind::kSlice, {a.id}, Shape{s.rows, width});
  nodes_[c.id].index = begin;
  const double* x = val(a.id);
  double* z = val(c.id);
  for (std::size_t r = 0; r < s.rows; ++r)
    std::copy(x + r * s.cols + begin, x + r * s.cols + begin + width, z + r * width);
  return c;
}

Var Graph::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ContractViolation("stack_rows: no rows");
  const std::size_t k = shape(rows[0]).cols;
  for (Var v : rows) {
    check_id(v);
    if (shape(v).rows != 1 || shape(v).cols != k) {
      throw ContractViolation("stack_rows: expected 1 x " + std::to_string(k) + " rows, got " +
                              to_string(shape(v)));
    }
  }
  Var c = push_n(OpKind::kStackRows, rows, Shape{rows.size(), k});
  double* z = val(c.id);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* x = val(rows[i].id);
    std::copy(x, x + k, z + i * k);
  }
  return c;
}

Var Graph::softmax(Var a) {
  check_id(a);
  require_row(shape(a), "softmax");
  Var c = push(OpKind::kSoftmax, {a.id}, shape(a));
  stable_softmax(val(a.id), shape(a).cols, val(c.id));
  return c;
}

Var Graph::softmax_xent(Var logits, std::span<const double> target) {
  check_id(logits);
  require_row(shape(logits), "softmax_xent");
  const std::size_t n = shape(logits).cols;
  if (target.size() != n) {
    throw ContractViolation("softmax_xent: target has " + std::to_string(target.size()) +
                            " entries, logits have " + std::to_string(n));
  }
  double total = 0.0;
  for (double t : target) {
    if (!(t >= 0.0)) throw ContractViolation("softmax_xent: target has a negative entry");
    total += t;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractViolation("softmax_xent: target sums to " + std::to_string(total) + ", not 1");
  }
  Var c = push(OpKind::kSoftmaxXent, {logits.id}, Shape{1, 1});
  Node& node = nodes_[c.id];
  node.aux = aux_arena_.size();
  aux_arena_.resize(aux_arena_.size() + 2 * n);
  double* probs = aux_arena_.data() + node.aux;
  std::copy(target.begin(), target.end(), probs + n);
  const double* x = val(logits.id);
  const double lse = stable_softmax(x, n, probs);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (target[i] != 0.0) loss -= target[i] * (x[i] - lse);
  }
  *val(c.id) = loss;
  return c;
}

Var Graph::softmax_xent(Var logits, std::size_t target_index) {
  check_id(logits);
  const std::size_t n = shape(logits).cols;
  if (target_index >= n) throw ContractViolation("softmax_xent: target index out of range");
  std::vector<double> onehot(n, 0.0);
  onehot[target_index] = 1.0;
  return softmax_xent(logits, onehot);
}

void Graph::backward(Var loss) {
  check_id(loss);
  if (!(shape(loss) == Shape{1, 1})) {
    throw ContractViolation("backward: loss must be a scalar, got " + to_string(shape(loss)));
  }
  grads_.assign(arena_.size(), 0.0);
  grads_[nodes_[loss.id].offset] = 1.0;

  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    const double* g = grads_.data() + node.offset;
    const std::size_t n = node.shape.size();
    const std::uint32_t* in = input_pool_.data() + node.in_begin;
    auto grad_of = [&](std::uint32_t i) { return grads_.data() + nodes_[i].offset; };

    switch (node.op) {
      case OpKind::kConstant:
        break;
      case OpKind::kParam: {
        if (node.trainable == nullptr) break;
        auto pg = node.trainable->value.grad();
        for (std::size_t i = 0; i < n; ++i) pg[i] += g[i];
        break;
      }
      case OpKind::kMatMul: {
        const Shape sa = nodes_[in[0]].shape, sb = nodes_[in[1]].shape;
        const std::size_t m = sa.rows, k = sa.cols, cols = sb.cols;
        const double* a = val(in[0]);
        const double* b = val(in[1]);
        double* ga = grad_of(in[0]);
        double* gb = grad_of(in[1]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gr = g + i * cols;
          for (std::size_t p = 0; p < k; ++p) {
            const double* br = b + p * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += gr[j] * br[j];
            ga[i * k + p] += acc;
          }
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* gbr = gb + p * cols;
            for (std::size_t j = 0; j < cols; ++j) gbr[j] += av * gr[j];
          }
        }
        break;
      }
      case OpKind::kTranspose: {
        const Shape s = nodes_[in[0]].shape;
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0; i < s.rows; ++i)
          for (std::size_t j = 0; j < s.cols; ++j) ga[i * s.cols + j] += g[j * s.rows + i];
        break;
      }
      case OpKind::kAdd: {
        double* ga = grad_of(in[0]);
        double* gb = grad_of(in[1]);
        for (std::size_t i = 0; i < n; ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case OpKind::kMul: {
        const double* a = val(in[0]);
        const double* b = val(in[1]);
        double* ga = grad_of(in[0]);
        double* gb = grad_of(in[1]);
        for (std::size_t i = 0; i < n; ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::kTanh: {
        const double* y = val(id);
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case OpKind::kSigmoid: {
        const double* y = val(id);
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case OpKind::kScale: {
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * node.factor;
        break;
      }
      case OpKind::kSum: {
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0, m = nodes_[in[0]].shape.size(); i < m; ++i) ga[i] += g[0];
        break;
      }
      case OpKind::kRow: {
        double* ga = grad_of(in[0]) + node.index * node.shape.cols;
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        break;
      }
      case OpKind::kConcat: {
        const Shape sa = nodes_[in[0]].shape, sb = nodes_[in[1]].shape;
        double* ga = grad_of(in[0]);
        double* gb = grad_of(in[1]);
        const std::size_t w = node.shape.cols;
        for (std::size_t r = 0; r < node.shape.rows; ++r) {
          for (std::size_t j = 0; j < sa.cols; ++j) ga[r * sa.cols + j] += g[r * w + j];
          for (std::size_t j = 0; j < sb.cols; ++j) gb[r * sb.cols + j] += g[r * w + sa.cols + j];
        }
        break;
      }
      case OpKind::kSlice: {
        const std::size_t src_cols = nodes_[in[0]].shape.cols;
        const std::size_t w = node.shape.cols;
        double* ga = grad_of(in[0]);
        for (std::size_t r = 0; r < node.shape.rows; ++r)
          for (std::size_t j = 0; j < w; ++j) ga[r * src_cols + node.index + j] += g[r * w + j];
        break;
      }
      case OpKind::kStackRows: {
        const std::size_t k = node.shape.cols;
        for (std::uint32_t r = 0; r < node.in_count; ++r) {
          double* ga = grad_of(in[r]);
          for (std::size_t j = 0; j < k; ++j) ga[j] += g[r * k + j];
        }
        break;
      }
      case OpKind::kSoftmax: {
        const double* y = val(id);
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += y[i] * (g[i] - dot);
        break;
      }
      case OpKind::kSoftmaxXent: {
        const std::size_t m = nodes_[in[0]].shape.cols;
        const double* probs = aux_arena_.data() + node.aux;
        const double* target = probs + m;
        double* ga = grad_of(in[0]);
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[0] * (probs[i] - target[i]);
        break;
      }
    }
  }
}

}  // namespace unisp
