#pragma once

// Tape-free reverse-mode automatic differentiation over dense double
// matrices. Every value is a 2-D Eigen matrix; scalars are 1x1.
//
// A graph is built implicitly by calling the free functions below on Var
// handles. backward() on a 1x1 root walks the graph in reverse topological
// order. Leaves accumulate gradients across calls until zero_grad().

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace irtvi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace ad {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> propagate;
  bool requires_grad = false;
  bool leaf = true;
};

class Var {
 public:
  Var() = default;

  explicit Var(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var scalar(double v, bool requires_grad = false) {
    return Var(Matrix::Constant(1, 1, v), requires_grad);
  }

  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const {
    if (rows() != 1 || cols() != 1) throw std::invalid_argument("item(): Var is not a scalar");
    return node_->value(0, 0);
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  // Gradient of the last backward root with respect to this Var. Zero-filled
  // if nothing has flowed here yet.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }

  void zero_grad() { node_->grad = Matrix::Zero(rows(), cols()); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline void accumulate(Node& target, const Matrix& contribution) {
  if (!target.requires_grad) return;
  if (target.grad.size() == 0) {
    target.grad = contribution;
  } else {
    target.grad += contribution;
  }
}

inline Var make_result(Matrix value, std::vector<Var> inputs,
                       std::function<void(Node&)> propagate) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->leaf = false;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->propagate = std::move(propagate);
  }
  return Var(std::move(node));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace detail

using detail::normal_cdf;
using detail::normal_pdf;
using detail::stable_sigmoid;

inline Var constant(Matrix value) { return Var(std::move(value), false); }
inline Var parameter(Matrix value) { return Var(std::move(value), true); }

// ---------------------------------------------------------------------------
// Elementwise binary ops

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return detail::make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], -self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  return detail::make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::accumulate(pa, self.grad.cwiseProduct(pb.value));
    detail::accumulate(pb, self.grad.cwiseProduct(pa.value));
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "div");
  return detail::make_result(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::accumulate(pa, self.grad.cwiseQuotient(pb.value));
    detail::accumulate(pb, -self.grad.cwiseProduct(self.value).cwiseQuotient(pb.value));
  });
}

// Row-wise bias addition: a is (n, m), row is (1, m).
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: bias must be 1x" + std::to_string(a.cols()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return detail::make_result(std::move(out), {a, row}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad.colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Scalar-constant ops

inline Var scale(const Var& a, double c) {
  return detail::make_result(a.value() * c, {a}, [c](Node& self) {
    detail::accumulate(*self.parents[0], self.grad * c);
  });
}

inline Var shift(const Var& a, double c) {
  return detail::make_result((a.value().array() + c).matrix(), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

inline Var sigmoid(const Var& a) {
  // exp(-x) overflows to inf for very negative x, giving exactly 0.
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    const auto s = self.value.array();
    detail::accumulate(*self.parents[0], (self.grad.array() * s * (1.0 - s)).matrix());
  });
}

// ELU with alpha = 1.
inline Var elu(const Var& a) {
  const auto x = a.value().array();
  Matrix out = (x > 0.0).select(x, x.min(0.0).exp() - 1.0).matrix();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    // d/dx = 1 for x > 0, exp(x) = out + 1 otherwise
    const auto y = self.value.array();
    detail::accumulate(*self.parents[0],
                       (self.grad.array() * (y > 0.0).select(1.0, y + 1.0)).matrix());
  });
}

inline Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad.cwiseProduct(self.value));
  });
}

inline Var log(const Var& a) {
  Matrix out = a.value().array().log().matrix();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad.cwiseQuotient(self.parents[0]->value));
  });
}

inline Var square(const Var& a) {
  Matrix out = a.value().array().square().matrix();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], 2.0 * self.grad.cwiseProduct(self.parents[0]->value));
  });
}

// Standard normal CDF.
inline Var normal_cdf(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return detail::normal_cdf(x); });
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    Matrix pdf = self.parents[0]->value.unaryExpr([](double x) { return detail::normal_pdf(x); });
    detail::accumulate(*self.parents[0], self.grad.cwiseProduct(pdf));
  });
}

// Gradient passes only where lo < x < hi.
inline Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return detail::make_result(std::move(out), {a}, [lo, hi](Node& self) {
    const auto& x = self.parents[0]->value;
    Matrix pass = ((x.array() > lo) && (x.array() < hi)).cast<double>().matrix();
    detail::accumulate(*self.parents[0], self.grad.cwiseProduct(pass));
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) detail::accumulate(pa, self.grad * pb.value.transpose());
    if (pb.requires_grad) detail::accumulate(pb, pa.value.transpose() * self.grad);
  });
}

inline Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad.transpose());
  });
}

inline Var sum(const Var& a) {
  return detail::make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    detail::accumulate(*self.parents[0], Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty input");
  const double n = static_cast<double>(a.value().size());
  return detail::make_result(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [n](Node& self) {
    const auto& x = self.parents[0]->value;
    detail::accumulate(*self.parents[0],
                       Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0) / n));
  });
}

// (n, m) -> (n, 1)
inline Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    const auto cols = self.parents[0]->value.cols();
    detail::accumulate(*self.parents[0], self.grad.replicate(1, cols));
  });
}

// Sums each run of `block` consecutive rows: (n*block, m) -> (n, m).
inline Var block_row_sum(const Var& a, Eigen::Index block) {
  if (block <= 0 || a.rows() % block != 0) {
    throw std::invalid_argument("block_row_sum: row count not divisible by block");
  }
  const Eigen::Index groups = a.rows() / block;
  Matrix out = Matrix::Zero(groups, a.cols());
  const auto& x = a.value();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index g = 0; g < groups; ++g) {
      out(g, c) = x.col(c).segment(g * block, block).sum();
    }
  }
  return detail::make_result(std::move(out), {a}, [block](Node& self) {
    Matrix g(self.grad.rows() * block, self.grad.cols());
    for (Eigen::Index r = 0; r < self.grad.rows(); ++r) {
      g.middleRows(r * block, block) = self.grad.row(r).replicate(block, 1);
    }
    detail::accumulate(*self.parents[0], g);
  });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return detail::make_result(std::move(out), parts, [](Node& self) {
    Eigen::Index off = 0;
    for (auto& parent : self.parents) {
      const auto c = parent->value.cols();
      if (parent->requires_grad) detail::accumulate(*parent, self.grad.middleCols(off, c));
      off += c;
    }
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  Matrix out = a.value().middleCols(start, count);
  return detail::make_result(std::move(out), {a}, [start, count](Node& self) {
    const auto& x = self.parents[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = self.grad;
    detail::accumulate(*self.parents[0], g);
  });
}

// Each row repeated `times` consecutively: (n, m) -> (n*times, m).
inline Var repeat_rows(const Var& a, Eigen::Index times) {
  const auto& x = a.value();
  Matrix out(x.rows() * times, x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.middleRows(r * times, times) = x.row(r).replicate(times, 1);
  }
  return detail::make_result(std::move(out), {a}, [times](Node& self) {
    const auto n = self.parents[0]->value.rows();
    Matrix g(n, self.grad.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
      g.row(r) = self.grad.middleRows(r * times, times).colwise().sum();
    }
    detail::accumulate(*self.parents[0], g);
  });
}

// Whole matrix stacked `times` times: (n, m) -> (times*n, m).
inline Var tile_rows(const Var& a, Eigen::Index times) {
  Matrix out = a.value().replicate(times, 1);
  return detail::make_result(std::move(out), {a}, [times](Node& self) {
    const auto n = self.parents[0]->value.rows();
    Matrix g = Matrix::Zero(n, self.grad.cols());
    for (Eigen::Index t = 0; t < times; ++t) g += self.grad.middleRows(t * n, n);
    detail::accumulate(*self.parents[0], g);
  });
}

// Row-major reshape: element (r, c) of the input is flat index r*cols + c.
inline Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor flat = a.value();
  Matrix out = Eigen::Map<const RowMajor>(flat.data(), rows, cols);
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    RowMajor g = self.grad;
    detail::accumulate(*self.parents[0], Eigen::Map<const RowMajor>(g.data(), x.rows(), x.cols()));
  });
}

inline Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index) {
  const auto& x = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
  }
  return detail::make_result(std::move(out), {a}, [index](Node& self) {
    const auto& x = self.parents[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      g.row(index[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    detail::accumulate(*self.parents[0], g);
  });
}

// ---------------------------------------------------------------------------

// Backpropagates from a scalar root. Intermediate gradients are recomputed on
// every call; leaf gradients accumulate.
inline void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.resize(0, 0);
  }
  detail::accumulate(*root.node(), Matrix::Constant(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || !n->propagate) continue;
    if (n->grad.size() == 0) continue;
    n->propagate(*n);
  }
}

// Convenience operators.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return shift(a, c); }
inline Var operator-(const Var& a, double c) { return shift(a, -c); }

}  // namespace ad

using ad::stable_sigmoid;

}  // namespace irtvi
