#pragma once

// Reverse-mode automatic differentiation on an explicit tape. A Graph is a
// flat list of nodes in topological (build) order; evaluate() runs the tape
// forward, backward() runs it in reverse and accumulates adjoints. All
// tensors are dense row-major 2-D arrays of doubles; scalars are 1x1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tor/errors.hpp"

namespace tor::diff {

using NodeId = std::int32_t;

class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows <= 0 || cols <= 0) {
      throw UsageError("tensor dimensions must be positive");
    }
    values_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }
  Tensor(int rows, int cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(rows) * cols) {
      throw UsageError("tensor value count does not match its shape");
    }
  }

  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }
  static Tensor rowVector(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor(1, n, std::move(v));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& at(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double item() const {
    if (values_.size() != 1) {
      throw UsageError("item() called on a non-scalar tensor");
    }
    return values_[0];
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

using Inputs = std::unordered_map<std::string, const Tensor*>;

enum class Op {
  input,
  constant,
  constantView,
  matmul,
  add,
  addScaled,
  addConst,
  addRow,
  scale,
  mul,
  expOp,
  logOp,
  tanhOp,
  rmsNorm,
  softmaxRows,
  logSoftmaxRows,
  causalSoftmaxRows,
  transpose,
  gatherRows,
  pick,
  sumAll,
  meanAll,
  minOp,
  clip,
  concatRows,
};

inline const char* opName(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::constantView: return "constantView";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::addScaled: return "addScaled";
    case Op::addConst: return "addConst";
    case Op::addRow: return "addRow";
    case Op::scale: return "scale";
    case Op::mul: return "mul";
    case Op::expOp: return "exp";
    case Op::logOp: return "log";
    case Op::tanhOp: return "tanh";
    case Op::rmsNorm: return "rmsNorm";
    case Op::softmaxRows: return "softmaxRows";
    case Op::logSoftmaxRows: return "logSoftmaxRows";
    case Op::causalSoftmaxRows: return "causalSoftmaxRows";
    case Op::transpose: return "transpose";
    case Op::gatherRows: return "gatherRows";
    case Op::pick: return "pick";
    case Op::sumAll: return "sum";
    case Op::meanAll: return "mean";
    case Op::minOp: return "min";
    case Op::clip: return "clip";
    case Op::concatRows: return "concatRows";
  }
  return "?";
}

struct Node {
  Op op;
  int rows = 0;
  int cols = 0;
  NodeId a = -1;
  NodeId b = -1;
  std::vector<NodeId> parts;   // concatRows
  double alpha = 0.0;          // scale factor / clip low / rmsNorm epsilon
  double beta = 0.0;           // clip high
  std::vector<int> indices;    // gatherRows rows; pick (row, col) pairs flattened
  std::string name;            // input binding key
  std::vector<double> value;
  std::vector<double> grad;
  const double* view = nullptr;  // constantView payload, owned by the caller
  bool needsGrad = false;
};

class Graph {
 public:
  explicit Graph(std::size_t expectedNodes = 0) {
    if (expectedNodes > 0) {
      nodes_.reserve(expectedNodes);
    }
  }

  // ---- graph construction ----

  NodeId input(std::string name, int rows, int cols) {
    requirePositive(rows, cols, "input");
    Node n;
    n.op = Op::input;
    n.rows = rows;
    n.cols = cols;
    n.name = std::move(name);
    n.needsGrad = true;
    for (const Node& other : nodes_) {
      if (other.op == Op::input && other.name == n.name) {
        throw UsageError("duplicate input name '" + n.name + "'");
      }
    }
    return push(std::move(n));
  }

  NodeId constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.rows = value.rows();
    n.cols = value.cols();
    n.value = std::move(value.values());
    return push(std::move(n));
  }

  NodeId constant(double scalarValue) { return constant(Tensor::scalar(scalarValue)); }

  // The caller must keep `value` alive for the lifetime of the graph.
  NodeId constantView(const Tensor& value) {
    Node n;
    n.op = Op::constantView;
    n.rows = value.rows();
    n.cols = value.cols();
    n.view = value.values().data();
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.cols != nb.rows) {
      throw ConfigError(shapeMessage("matmul", na, nb));
    }
    return pushBinary(Op::matmul, a, b, na.rows, nb.cols);
  }

  NodeId add(NodeId a, NodeId b) {
    requireSameShape("add", a, b);
    return pushBinary(Op::add, a, b, node(a).rows, node(a).cols);
  }

  // a + alpha * b, fused so that subtraction is a single node.
  NodeId addScaled(NodeId a, NodeId b, double alpha) {
    requireSameShape("addScaled", a, b);
    NodeId id = pushBinary(Op::addScaled, a, b, node(a).rows, node(a).cols);
    nodes_[id].alpha = alpha;
    return id;
  }

  NodeId addConst(NodeId a, double alpha) {
    NodeId id = pushUnary(Op::addConst, a, node(a).rows, node(a).cols);
    nodes_[id].alpha = alpha;
    return id;
  }

  NodeId addRow(NodeId a, NodeId row) {
    const Node& na = node(a);
    const Node& nr = node(row);
    if (nr.rows != 1 || nr.cols != na.cols) {
      throw ConfigError(shapeMessage("addRow", na, nr));
    }
    return pushBinary(Op::addRow, a, row, na.rows, na.cols);
  }

  NodeId scale(NodeId a, double alpha) {
    NodeId id = pushUnary(Op::scale, a, node(a).rows, node(a).cols);
    nodes_[id].alpha = alpha;
    return id;
  }

  NodeId mul(NodeId a, NodeId b) {
    requireSameShape("mul", a, b);
    return pushBinary(Op::mul, a, b, node(a).rows, node(a).cols);
  }

  NodeId exp(NodeId a) { return pushUnary(Op::expOp, a, node(a).rows, node(a).cols); }
  NodeId log(NodeId a) { return pushUnary(Op::logOp, a, node(a).rows, node(a).cols); }
  NodeId tanh(NodeId a) { return pushUnary(Op::tanhOp, a, node(a).rows, node(a).cols); }

  // Row-wise x / sqrt(mean(x^2) + epsilon), no learned gain.
  NodeId rmsNorm(NodeId a, double epsilon) {
    NodeId id = pushUnary(Op::rmsNorm, a, node(a).rows, node(a).cols);
    nodes_[id].alpha = epsilon;
    return id;
  }

  NodeId softmaxRows(NodeId a) {
    return pushUnary(Op::softmaxRows, a, node(a).rows, node(a).cols);
  }

  NodeId logSoftmaxRows(NodeId a) {
    return pushUnary(Op::logSoftmaxRows, a, node(a).rows, node(a).cols);
  }

  // Square attention matrix: row i is a softmax over columns 0..i, the rest
  // of the row is exactly zero.
  NodeId causalSoftmaxRows(NodeId a) {
    const Node& na = node(a);
    if (na.rows != na.cols) {
      throw ConfigError(std::string("causalSoftmaxRows requires a square matrix, got ") +
                        shape(na));
    }
    return pushUnary(Op::causalSoftmaxRows, a, na.rows, na.cols);
  }

  NodeId transpose(NodeId a) { return pushUnary(Op::transpose, a, node(a).cols, node(a).rows); }

  // Duplicate indices are allowed; their adjoints accumulate additively.
  NodeId gatherRows(NodeId a, std::vector<int> rows) {
    const Node& na = node(a);
    if (rows.empty()) {
      throw UsageError("gatherRows needs at least one row index");
    }
    for (int r : rows) {
      if (r < 0 || r >= na.rows) {
        throw UsageError("gatherRows index " + std::to_string(r) + " out of range for " +
                         shape(na));
      }
    }
    NodeId id = pushUnary(Op::gatherRows, a, static_cast<int>(rows.size()), na.cols);
    nodes_[id].indices = std::move(rows);
    return id;
  }

  // Collects individual elements (row, col) into a [1, k] row.
  NodeId pick(NodeId a, const std::vector<std::pair<int, int>>& cells) {
    const Node& na = node(a);
    if (cells.empty()) {
      throw UsageError("pick needs at least one element");
    }
    std::vector<int> flat;
    flat.reserve(cells.size() * 2);
    for (auto [r, c] : cells) {
      if (r < 0 || r >= na.rows || c < 0 || c >= na.cols) {
        throw UsageError("pick element (" + std::to_string(r) + ", " + std::to_string(c) +
                         ") out of range for " + shape(na));
      }
      flat.push_back(r);
      flat.push_back(c);
    }
    NodeId id = pushUnary(Op::pick, a, 1, static_cast<int>(cells.size()));
    nodes_[id].indices = std::move(flat);
    return id;
  }

  NodeId sum(NodeId a) { return pushUnary(Op::sumAll, a, 1, 1); }
  NodeId mean(NodeId a) { return pushUnary(Op::meanAll, a, 1, 1); }

  // Elementwise minimum; on ties the gradient goes to the first argument.
  NodeId min(NodeId a, NodeId b) {
    requireSameShape("min", a, b);
    return pushBinary(Op::minOp, a, b, node(a).rows, node(a).cols);
  }

  // Clamps to [low, high]; gradient passes through when the pre-clip value
  // lies inside the interval, boundaries included.
  NodeId clip(NodeId a, double low, double high) {
    if (!(low <= high)) {
      throw UsageError("clip bounds are inverted");
    }
    NodeId id = pushUnary(Op::clip, a, node(a).rows, node(a).cols);
    nodes_[id].alpha = low;
    nodes_[id].beta = high;
    return id;
  }

  NodeId concatRows(const std::vector<NodeId>& parts) {
    if (parts.empty()) {
      throw UsageError("concatRows needs at least one part");
    }
    int cols = node(parts[0]).cols;
    int rows = 0;
    for (NodeId p : parts) {
      if (node(p).cols != cols) {
        throw ConfigError(std::string("concatRows column mismatch: ") + shape(node(parts[0])) +
                          " vs " + shape(node(p)));
      }
      rows += node(p).rows;
    }
    Node n;
    n.op = Op::concatRows;
    n.rows = rows;
    n.cols = cols;
    n.parts = parts;
    for (NodeId p : parts) {
      n.needsGrad = n.needsGrad || node(p).needsGrad;
    }
    return push(std::move(n));
  }

  void setOutput(NodeId id) {
    node(id);
    output_ = id;
  }
  NodeId output() const { return output_; }

  std::size_t nodeCount() const { return nodes_.size(); }
  int rowsOf(NodeId id) const { return node(id).rows; }
  int colsOf(NodeId id) const { return node(id).cols; }

  // ---- execution ----

  Tensor evaluate(const Inputs& inputs) {
    if (output_ < 0) {
      throw UsageError("evaluate called before setOutput");
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      forward(static_cast<NodeId>(i), inputs);
    }
    evaluated_ = true;
    backwardDone_ = false;
    const Node& out = node(output_);
    return Tensor(out.rows, out.cols,
                  std::vector<double>(valueOf(output_).begin(), valueOf(output_).end()));
  }

  void backward() {
    if (!evaluated_) {
      throw UsageError("backward called before evaluate");
    }
    const Node& out = node(output_);
    if (out.rows != 1 || out.cols != 1) {
      throw UsageError(std::string("backward requires a scalar output, got ") + shape(out));
    }
    for (Node& n : nodes_) {
      if (n.needsGrad) {
        n.grad.assign(static_cast<std::size_t>(n.rows) * n.cols, 0.0);
      }
    }
    if (!nodes_[output_].needsGrad) {
      // Output does not depend on any input; all gradients are zero.
      backwardDone_ = true;
      return;
    }
    nodes_[output_].grad[0] = 1.0;
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      accumulate(static_cast<NodeId>(i));
    }
    backwardDone_ = true;
  }

  Tensor inputGradient(const std::string& name) const {
    if (!backwardDone_) {
      throw UsageError("inputGradient called before backward");
    }
    for (const Node& n : nodes_) {
      if (n.op == Op::input && n.name == name) {
        return Tensor(n.rows, n.cols, n.grad);
      }
    }
    throw UsageError("unknown input '" + name + "'");
  }

  std::span<const double> valueOf(NodeId id) const {
    const Node& n = node(id);
    if (n.op == Op::constantView) {
      return {n.view, static_cast<std::size_t>(n.rows) * n.cols};
    }
    return {n.value.data(), n.value.size()};
  }

 private:
  std::vector<Node> nodes_;
  NodeId output_ = -1;
  bool evaluated_ = false;
  bool backwardDone_ = false;

  const Node& node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw UsageError("node id out of range");
    }
    return nodes_[id];
  }

  static std::string shape(const Node& n) {
    return "[" + std::to_string(n.rows) + ", " + std::to_string(n.cols) + "]";
  }

  static std::string shapeMessage(const char* op, const Node& a, const Node& b) {
    return std::string(op) + " shape mismatch: " + shape(a) + " vs " + shape(b);
  }

  static void requirePositive(int rows, int cols, const char* op) {
    if (rows <= 0 || cols <= 0) {
      throw ConfigError(std::string(op) + " dimensions must be positive");
    }
  }

  void requireSameShape(const char* op, NodeId a, NodeId b) const {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) {
      throw ConfigError(shapeMessage(op, na, nb));
    }
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    backwardDone_ = false;
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId pushUnary(Op op, NodeId a, int rows, int cols) {
    node(a);
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.a = a;
    n.needsGrad = nodes_[a].needsGrad;
    return push(std::move(n));
  }

  NodeId pushBinary(Op op, NodeId a, NodeId b, int rows, int cols) {
    node(a);
    node(b);
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.a = a;
    n.b = b;
    n.needsGrad = nodes_[a].needsGrad || nodes_[b].needsGrad;
    return push(std::move(n));
  }

  void checkFinite(NodeId id) {
    for (double v : valueOf(id)) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value at node " + std::to_string(id) + " (" +
                           opName(nodes_[id].op) + ")");
      }
    }
  }

  void forward(NodeId id, const Inputs& inputs) {
    Node& n = nodes_[id];
    std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
    switch (n.op) {
      case Op::input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end() || it->second == nullptr) {
          throw UsageError("missing binding for input '" + n.name + "'");
        }
        const Tensor& t = *it->second;
        if (t.rows() != n.rows || t.cols() != n.cols) {
          throw ConfigError("input '" + n.name + "' expects " + shape(n) + ", got [" +
                            std::to_string(t.rows()) + ", " + std::to_string(t.cols()) + "]");
        }
        n.value = t.values();
        break;
      }
      case Op::constant:
      case Op::constantView:
        break;
      case Op::matmul: {
        const Node& a = nodes_[n.a];
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        int m = n.rows, k = a.cols, cols = n.cols;
        n.value.assign(count, 0.0);
        for (int i = 0; i < m; ++i) {
          const double* arow = av.data() + static_cast<std::size_t>(i) * k;
          double* crow = n.value.data() + static_cast<std::size_t>(i) * cols;
          for (int kk = 0; kk < k; ++kk) {
            double aik = arow[kk];
            const double* brow = bv.data() + static_cast<std::size_t>(kk) * cols;
            for (int j = 0; j < cols; ++j) {
              crow[j] += aik * brow[j];
            }
          }
        }
        break;
      }
      case Op::add: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = av[i] + bv[i];
        }
        break;
      }
      case Op::addScaled: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = av[i] + n.alpha * bv[i];
        }
        break;
      }
      case Op::addConst: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = av[i] + n.alpha;
        }
        break;
      }
      case Op::addRow: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        n.value.resize(count);
        for (int i = 0; i < n.rows; ++i) {
          for (int j = 0; j < n.cols; ++j) {
            n.value[static_cast<std::size_t>(i) * n.cols + j] =
                av[static_cast<std::size_t>(i) * n.cols + j] + bv[j];
          }
        }
        break;
      }
      case Op::scale: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = n.alpha * av[i];
        }
        break;
      }
      case Op::mul: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = av[i] * bv[i];
        }
        break;
      }
      case Op::expOp: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = std::exp(av[i]);
        }
        break;
      }
      case Op::logOp: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = std::log(av[i]);
        }
        break;
      }
      case Op::tanhOp: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = std::tanh(av[i]);
        }
        break;
      }
      case Op::rmsNorm: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (int i = 0; i < n.rows; ++i) {
          const double* x = av.data() + static_cast<std::size_t>(i) * n.cols;
          double* y = n.value.data() + static_cast<std::size_t>(i) * n.cols;
          double meanSquare = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            meanSquare += x[j] * x[j];
          }
          meanSquare /= n.cols;
          double inverseRms = 1.0 / std::sqrt(meanSquare + n.alpha);
          for (int j = 0; j < n.cols; ++j) {
            y[j] = x[j] * inverseRms;
          }
        }
        break;
      }
      case Op::softmaxRows:
      case Op::logSoftmaxRows: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (int i = 0; i < n.rows; ++i) {
          const double* x = av.data() + static_cast<std::size_t>(i) * n.cols;
          double* y = n.value.data() + static_cast<std::size_t>(i) * n.cols;
          double maxValue = x[0];
          for (int j = 1; j < n.cols; ++j) {
            maxValue = std::max(maxValue, x[j]);
          }
          double total = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            total += std::exp(x[j] - maxValue);
          }
          if (n.op == Op::softmaxRows) {
            for (int j = 0; j < n.cols; ++j) {
              y[j] = std::exp(x[j] - maxValue) / total;
            }
          } else {
            double logTotal = std::log(total);
            for (int j = 0; j < n.cols; ++j) {
              y[j] = x[j] - maxValue - logTotal;
            }
          }
        }
        break;
      }
      case Op::causalSoftmaxRows: {
        auto av = valueOf(n.a);
        n.value.assign(count, 0.0);
        for (int i = 0; i < n.rows; ++i) {
          const double* x = av.data() + static_cast<std::size_t>(i) * n.cols;
          double* y = n.value.data() + static_cast<std::size_t>(i) * n.cols;
          double maxValue = x[0];
          for (int j = 1; j <= i; ++j) {
            maxValue = std::max(maxValue, x[j]);
          }
          double total = 0.0;
          for (int j = 0; j <= i; ++j) {
            total += std::exp(x[j] - maxValue);
          }
          for (int j = 0; j <= i; ++j) {
            y[j] = std::exp(x[j] - maxValue) / total;
          }
        }
        break;
      }
      case Op::transpose: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (int i = 0; i < n.rows; ++i) {
          for (int j = 0; j < n.cols; ++j) {
            n.value[static_cast<std::size_t>(i) * n.cols + j] =
                av[static_cast<std::size_t>(j) * n.rows + i];
          }
        }
        break;
      }
      case Op::gatherRows: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (int i = 0; i < n.rows; ++i) {
          const double* src = av.data() + static_cast<std::size_t>(n.indices[i]) * n.cols;
          std::copy(src, src + n.cols, n.value.data() + static_cast<std::size_t>(i) * n.cols);
        }
        break;
      }
      case Op::pick: {
        auto av = valueOf(n.a);
        int sourceCols = nodes_[n.a].cols;
        n.value.resize(count);
        for (int j = 0; j < n.cols; ++j) {
          n.value[j] =
              av[static_cast<std::size_t>(n.indices[2 * j]) * sourceCols + n.indices[2 * j + 1]];
        }
        break;
      }
      case Op::sumAll:
      case Op::meanAll: {
        auto av = valueOf(n.a);
        double total = 0.0;
        for (double v : av) {
          total += v;
        }
        if (n.op == Op::meanAll) {
          total /= static_cast<double>(av.size());
        }
        n.value.assign(1, total);
        break;
      }
      case Op::minOp: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = std::min(av[i], bv[i]);
        }
        break;
      }
      case Op::clip: {
        auto av = valueOf(n.a);
        n.value.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          n.value[i] = std::clamp(av[i], n.alpha, n.beta);
        }
        break;
      }
      case Op::concatRows: {
        n.value.resize(count);
        double* dst = n.value.data();
        for (NodeId p : n.parts) {
          auto pv = valueOf(p);
          std::copy(pv.begin(), pv.end(), dst);
          dst += pv.size();
        }
        break;
      }
    }
    checkFinite(id);
  }

  // Adds this node's contribution to its arguments' adjoints.
  void accumulate(NodeId id) {
    Node& n = nodes_[id];
    if (!n.needsGrad || n.grad.empty()) {
      return;
    }
    const std::vector<double>& g = n.grad;
    auto gradOf = [this](NodeId arg) -> std::vector<double>* {
      return nodes_[arg].needsGrad ? &nodes_[arg].grad : nullptr;
    };
    switch (n.op) {
      case Op::input:
      case Op::constant:
      case Op::constantView:
        break;
      case Op::matmul: {
        const Node& a = nodes_[n.a];
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        int m = n.rows, k = a.cols, cols = n.cols;
        if (auto* ga = gradOf(n.a)) {
          // dA = dC * B^T
          for (int i = 0; i < m; ++i) {
            const double* grow = g.data() + static_cast<std::size_t>(i) * cols;
            double* garow = ga->data() + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
              const double* brow = bv.data() + static_cast<std::size_t>(kk) * cols;
              double acc = 0.0;
              for (int j = 0; j < cols; ++j) {
                acc += grow[j] * brow[j];
              }
              garow[kk] += acc;
            }
          }
        }
        if (auto* gb = gradOf(n.b)) {
          // dB = A^T * dC
          for (int i = 0; i < m; ++i) {
            const double* arow = av.data() + static_cast<std::size_t>(i) * k;
            const double* grow = g.data() + static_cast<std::size_t>(i) * cols;
            for (int kk = 0; kk < k; ++kk) {
              double aik = arow[kk];
              double* gbrow = gb->data() + static_cast<std::size_t>(kk) * cols;
              for (int j = 0; j < cols; ++j) {
                gbrow[j] += aik * grow[j];
              }
            }
          }
        }
        break;
      }
      case Op::add: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (auto* gb = gradOf(n.b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
        }
        break;
      }
      case Op::addScaled: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (auto* gb = gradOf(n.b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += n.alpha * g[i];
        }
        break;
      }
      case Op::addConst: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        break;
      }
      case Op::addRow: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (auto* gb = gradOf(n.b)) {
          for (int i = 0; i < n.rows; ++i) {
            for (int j = 0; j < n.cols; ++j) {
              (*gb)[j] += g[static_cast<std::size_t>(i) * n.cols + j];
            }
          }
        }
        break;
      }
      case Op::scale: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.alpha * g[i];
        }
        break;
      }
      case Op::mul: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        }
        if (auto* gb = gradOf(n.b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
        }
        break;
      }
      case Op::expOp: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.value[i];
        }
        break;
      }
      case Op::logOp: {
        auto av = valueOf(n.a);
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / av[i];
        }
        break;
      }
      case Op::tanhOp: {
        if (auto* ga = gradOf(n.a)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            (*ga)[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
          }
        }
        break;
      }
      case Op::rmsNorm: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        auto av = valueOf(n.a);
        for (int i = 0; i < n.rows; ++i) {
          const double* x = av.data() + static_cast<std::size_t>(i) * n.cols;
          const double* grow = g.data() + static_cast<std::size_t>(i) * n.cols;
          double* garow = ga->data() + static_cast<std::size_t>(i) * n.cols;
          double meanSquare = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            meanSquare += x[j] * x[j];
          }
          meanSquare /= n.cols;
          double inverseRms = 1.0 / std::sqrt(meanSquare + n.alpha);
          double dot = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            dot += grow[j] * x[j];
          }
          // d/dx_j of x_j * r: r * g_j - (r^3 / n) * x_j * <g, x>
          double factor = inverseRms * inverseRms * inverseRms * dot / n.cols;
          for (int j = 0; j < n.cols; ++j) {
            garow[j] += inverseRms * grow[j] - factor * x[j];
          }
        }
        break;
      }
      case Op::softmaxRows: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        for (int i = 0; i < n.rows; ++i) {
          const double* y = n.value.data() + static_cast<std::size_t>(i) * n.cols;
          const double* grow = g.data() + static_cast<std::size_t>(i) * n.cols;
          double* garow = ga->data() + static_cast<std::size_t>(i) * n.cols;
          double dot = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            dot += grow[j] * y[j];
          }
          for (int j = 0; j < n.cols; ++j) {
            garow[j] += y[j] * (grow[j] - dot);
          }
        }
        break;
      }
      case Op::logSoftmaxRows: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        for (int i = 0; i < n.rows; ++i) {
          const double* y = n.value.data() + static_cast<std::size_t>(i) * n.cols;
          const double* grow = g.data() + static_cast<std::size_t>(i) * n.cols;
          double* garow = ga->data() + static_cast<std::size_t>(i) * n.cols;
          double total = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            total += grow[j];
          }
          for (int j = 0; j < n.cols; ++j) {
            garow[j] += grow[j] - std::exp(y[j]) * total;
          }
        }
        break;
      }
      case Op::causalSoftmaxRows: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        for (int i = 0; i < n.rows; ++i) {
          const double* y = n.value.data() + static_cast<std::size_t>(i) * n.cols;
          const double* grow = g.data() + static_cast<std::size_t>(i) * n.cols;
          double* garow = ga->data() + static_cast<std::size_t>(i) * n.cols;
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) {
            dot += grow[j] * y[j];
          }
          for (int j = 0; j <= i; ++j) {
            garow[j] += y[j] * (grow[j] - dot);
          }
        }
        break;
      }
      case Op::transpose: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        for (int i = 0; i < n.rows; ++i) {
          for (int j = 0; j < n.cols; ++j) {
            (*ga)[static_cast<std::size_t>(j) * n.rows + i] +=
                g[static_cast<std::size_t>(i) * n.cols + j];
          }
        }
        break;
      }
      case Op::gatherRows: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        for (int i = 0; i < n.rows; ++i) {
          double* dst = ga->data() + static_cast<std::size_t>(n.indices[i]) * n.cols;
          const double* src = g.data() + static_cast<std::size_t>(i) * n.cols;
          for (int j = 0; j < n.cols; ++j) {
            dst[j] += src[j];
          }
        }
        break;
      }
      case Op::pick: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        int sourceCols = nodes_[n.a].cols;
        for (int j = 0; j < n.cols; ++j) {
          (*ga)[static_cast<std::size_t>(n.indices[2 * j]) * sourceCols + n.indices[2 * j + 1]] +=
              g[j];
        }
        break;
      }
      case Op::sumAll: {
        if (auto* ga = gradOf(n.a)) {
          for (double& v : *ga) v += g[0];
        }
        break;
      }
      case Op::meanAll: {
        if (auto* ga = gradOf(n.a)) {
          double share = g[0] / static_cast<double>(ga->size());
          for (double& v : *ga) v += share;
        }
        break;
      }
      case Op::minOp: {
        auto av = valueOf(n.a);
        auto bv = valueOf(n.b);
        auto* ga = gradOf(n.a);
        auto* gb = gradOf(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (av[i] <= bv[i]) {
            if (ga) (*ga)[i] += g[i];
          } else if (gb) {
            (*gb)[i] += g[i];
          }
        }
        break;
      }
      case Op::clip: {
        auto* ga = gradOf(n.a);
        if (!ga) break;
        auto av = valueOf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (av[i] >= n.alpha && av[i] <= n.beta) {
            (*ga)[i] += g[i];
          }
        }
        break;
      }
      case Op::concatRows: {
        std::size_t offset = 0;
        for (NodeId p : n.parts) {
          Node& part = nodes_[p];
          std::size_t partSize = static_cast<std::size_t>(part.rows) * part.cols;
          if (part.needsGrad) {
            for (std::size_t i = 0; i < partSize; ++i) {
              part.grad[i] += g[offset + i];
            }
          }
          offset += partSize;
        }
        break;
      }
    }
  }
};

// ---- gradient verification ----

struct FdCheckOptions {
  double stepSize = 1e-5;
  double tolerance = 1e-4;
  // Multiplies the first analytic gradient entry by 1.1 before comparing, to
  // confirm the check itself can fail.
  bool corruptFirstAdjoint = false;
};

struct FdCheckEntry {
  std::string name;
  double maxRelError = 0.0;
  int worstIndex = -1;
  double analyticAtWorst = 0.0;
  double numericAtWorst = 0.0;
};

struct FdCheckReport {
  bool pass = false;
  double maxRelError = 0.0;
  std::string worstInput;
  std::vector<FdCheckEntry> entries;
};

// Central-difference comparison of every input gradient. Relative error per
// coordinate is |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
inline FdCheckReport finiteDifferenceCheck(Graph& graph, const Inputs& inputs,
                                           FdCheckOptions options = {}) {
  if (!(options.stepSize > 0.0) || options.stepSize > 1e-3) {
    throw UsageError("finite-difference step size must lie in (0, 1e-3]");
  }
  // Work on local copies so perturbations never touch caller tensors. Names
  // are sorted to keep the report order deterministic.
  std::vector<std::string> names;
  names.reserve(inputs.size());
  for (const auto& [name, tensor] : inputs) {
    if (tensor == nullptr) {
      throw UsageError("null tensor bound to input '" + name + "'");
    }
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::unordered_map<std::string, Tensor> local;
  Inputs bound;
  for (const std::string& name : names) {
    local.emplace(name, *inputs.at(name));
  }
  for (const std::string& name : names) {
    bound[name] = &local.at(name);
  }

  graph.evaluate(bound);
  graph.backward();
  std::unordered_map<std::string, Tensor> analytic;
  for (const std::string& name : names) {
    analytic.emplace(name, graph.inputGradient(name));
  }
  if (options.corruptFirstAdjoint && !names.empty()) {
    double& first = analytic.at(names.front()).values()[0];
    first = first * 1.1 + 1e-3;
  }

  FdCheckReport report;
  report.pass = true;
  for (const std::string& name : names) {
    Tensor& x = local.at(name);
    const Tensor& g = analytic.at(name);
    FdCheckEntry entry;
    entry.name = name;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double original = x.values()[i];
      x.values()[i] = original + options.stepSize;
      double plus = graph.evaluate(bound).item();
      x.values()[i] = original - options.stepSize;
      double minus = graph.evaluate(bound).item();
      x.values()[i] = original;
      double numeric = (plus - minus) / (2.0 * options.stepSize);
      double analyticValue = g.values()[i];
      double relError = std::abs(analyticValue - numeric) /
                        std::max({std::abs(analyticValue), std::abs(numeric), 1e-8});
      if (relError > entry.maxRelError) {
        entry.maxRelError = relError;
        entry.worstIndex = static_cast<int>(i);
        entry.analyticAtWorst = analyticValue;
        entry.numericAtWorst = numeric;
      }
    }
    if (entry.maxRelError > report.maxRelError) {
      report.maxRelError = entry.maxRelError;
      report.worstInput = name;
    }
    if (entry.maxRelError > options.tolerance) {
      report.pass = false;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tor::diff
