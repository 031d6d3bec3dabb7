#pragma once

// Dense 2-D tensors with tape-free reverse-mode differentiation. Every op
// returns a new Tensor holding shared pointers to its inputs; backward()
// walks that DAG in reverse topological order and accumulates gradients
// into every node that requires them. Accumulation order is fixed by the
// DAG, so results are bit-reproducible for identical inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "unitgraph/error.hpp"

namespace unitgraph {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

// ReLU sign patterns recorded while a gradient check is probing; lets the
// checker tell a nondifferentiable kink crossing from a wrong gradient.
inline thread_local std::vector<std::uint8_t>* relu_trace = nullptr;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
  }

  static Tensor scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const {
    node_->grad_buffer();
    return node_->grad;
  }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0, 0); }

  double item() const {
    if (rows() != 1 || cols() != 1) fail(errc::shape_mismatch, "item() needs a 1x1 tensor");
    return node_->value(0, 0);
  }

  const char* op() const { return node_->op; }

  // Seeds d(self)/d(self) = 1 and propagates to every reachable input.
  void backward() const {
    if (rows() != 1 || cols() != 1) fail(errc::shape_mismatch, "backward() needs a scalar loss");
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer().array() += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Matrix value, const char* op, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (auto& t : inputs) {
    if (t.requires_grad()) n->requires_grad = true;
    n->parents.push_back(t.node());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Tensor::from_node(std::move(n));
}

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) fail(errc::shape_mismatch, std::string(op) + ": " + what);
}

inline std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

inline Matrix& grad_of(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
inline bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul", detail::dims(a) + " * " + detail::dims(b));
  Matrix out;
  out.noalias() = a.value() * b.value();
  return detail::make_result(std::move(out), "matmul", {a, b}, [](detail::Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (detail::wants(self, 0)) detail::grad_of(self, 0).noalias() += self.grad * bv.transpose();
    if (detail::wants(self, 1)) detail::grad_of(self, 1).noalias() += av.transpose() * self.grad;
  });
}

// Same value, cut off from the graph: no gradient flows back through it.
inline Tensor detach(const Tensor& a) { return Tensor(a.value()); }

inline Tensor transpose(const Tensor& a) {
  return detail::make_result(a.value().transpose(), "transpose", {a}, [](detail::Node& self) {
    detail::grad_of(self, 0) += self.grad.transpose();
  });
}

// Elementwise sum; `b` may also be a 1xC row broadcast over every row of `a`.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return detail::make_result(a.value() + b.value(), "add", {a, b}, [](detail::Node& self) {
      if (detail::wants(self, 0)) detail::grad_of(self, 0) += self.grad;
      if (detail::wants(self, 1)) detail::grad_of(self, 1) += self.grad;
    });
  }
  detail::require(b.rows() == 1 && b.cols() == a.cols(), "add", detail::dims(a) + " + " + detail::dims(b));
  Matrix out = a.value().rowwise() + b.value().row(0);
  return detail::make_result(std::move(out), "add_row", {a, b}, [](detail::Node& self) {
    if (detail::wants(self, 0)) detail::grad_of(self, 0) += self.grad;
    if (detail::wants(self, 1)) detail::grad_of(self, 1) += self.grad.colwise().sum();
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", detail::dims(a) + " - " + detail::dims(b));
  return detail::make_result(a.value() - b.value(), "sub", {a, b}, [](detail::Node& self) {
    if (detail::wants(self, 0)) detail::grad_of(self, 0) += self.grad;
    if (detail::wants(self, 1)) detail::grad_of(self, 1) -= self.grad;
  });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", detail::dims(a) + " .* " + detail::dims(b));
  return detail::make_result(a.value().cwiseProduct(b.value()), "hadamard", {a, b}, [](detail::Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (detail::wants(self, 0)) detail::grad_of(self, 0) += self.grad.cwiseProduct(bv);
    if (detail::wants(self, 1)) detail::grad_of(self, 1) += self.grad.cwiseProduct(av);
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::make_result(a.value() * s, "scale", {a}, [s](detail::Node& self) {
    detail::grad_of(self, 0) += self.grad * s;
  });
}

// Multiplies row r by factors[r].
inline Tensor scale_rows(const Tensor& a, std::span<const double> factors) {
  detail::require(static_cast<Index>(factors.size()) == a.rows(), "scale_rows", "one factor per row");
  Eigen::VectorXd f = Eigen::Map<const Eigen::VectorXd>(factors.data(), static_cast<Index>(factors.size()));
  Matrix out = f.asDiagonal() * a.value();
  return detail::make_result(std::move(out), "scale_rows", {a}, [f](detail::Node& self) {
    detail::grad_of(self, 0) += f.asDiagonal() * self.grad;
  });
}

// Elementwise product with a constant matrix (masks, dropout).
inline Tensor mul_constant(const Tensor& a, Matrix c) {
  detail::require(a.rows() == c.rows() && a.cols() == c.cols(), "mul_constant", "shape");
  Matrix out = a.value().cwiseProduct(c);
  return detail::make_result(std::move(out), "mul_constant", {a}, [c = std::move(c)](detail::Node& self) {
    detail::grad_of(self, 0) += self.grad.cwiseProduct(c);
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == parts[0].rows(), "concat_cols", "row count mismatch");
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  std::vector<Index> starts;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    starts.push_back(at);
    at += p.cols();
  }
  return detail::make_result(std::move(out), "concat_cols", parts, [starts](detail::Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (detail::wants(self, i))
        detail::grad_of(self, i) += self.grad.middleCols(starts[i], self.parents[i]->value.cols());
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == parts[0].cols(), "concat_rows", "column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  std::vector<Index> starts;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    starts.push_back(at);
    at += p.rows();
  }
  return detail::make_result(std::move(out), "concat_rows", parts, [starts](detail::Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (detail::wants(self, i))
        detail::grad_of(self, i) += self.grad.middleRows(starts[i], self.parents[i]->value.rows());
  });
}

inline Tensor slice_cols(const Tensor& a, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols", "range");
  return detail::make_result(a.value().middleCols(start, count), "slice_cols", {a},
                             [start, count](detail::Node& self) {
                               detail::grad_of(self, 0).middleCols(start, count) += self.grad;
                             });
}

inline Tensor slice_rows(const Tensor& a, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows", "range");
  return detail::make_result(a.value().middleRows(start, count), "slice_rows", {a},
                             [start, count](detail::Node& self) {
                               detail::grad_of(self, 0).middleRows(start, count) += self.grad;
                             });
}

// out[i] = a[index[i]]; repeated indices accumulate in backward.
inline Tensor gather_rows(const Tensor& a, std::vector<std::uint32_t> index) {
  Matrix out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] < a.rows(), "gather_rows", "index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  return detail::make_result(std::move(out), "gather_rows", {a}, [index = std::move(index)](detail::Node& self) {
    Matrix& g = detail::grad_of(self, 0);
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(static_cast<Index>(i));
  });
}

// out[r] = keep[r] ? a[r] : b[r]
inline Tensor select_rows(const std::vector<bool>& keep, const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "select_rows", "shape");
  detail::require(static_cast<Index>(keep.size()) == a.rows(), "select_rows", "mask length");
  Matrix out = b.value();
  for (Index r = 0; r < a.rows(); ++r)
    if (keep[static_cast<std::size_t>(r)]) out.row(r) = a.value().row(r);
  return detail::make_result(std::move(out), "select_rows", {a, b}, [keep](detail::Node& self) {
    for (Index r = 0; r < self.grad.rows(); ++r) {
      const std::size_t target = keep[static_cast<std::size_t>(r)] ? 0 : 1;
      if (detail::wants(self, target)) detail::grad_of(self, target).row(r) += self.grad.row(r);
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

// Column-wise mean over rows: r x c -> 1 x c.
inline Tensor mean_rows(const Tensor& a) {
  detail::require(a.rows() > 0, "mean_rows", "empty input");
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return detail::make_result(std::move(out), "mean_rows", {a}, [inv](detail::Node& self) {
    detail::grad_of(self, 0).rowwise() += self.grad.row(0) * inv;
  });
}

inline Tensor sum(const Tensor& a) {
  return detail::make_result(Matrix::Constant(1, 1, a.value().sum()), "sum", {a}, [](detail::Node& self) {
    detail::grad_of(self, 0).array() += self.grad(0, 0);
  });
}

// Σ a ⊙ w for a constant weight matrix w.
inline Tensor weighted_sum(const Tensor& a, Matrix w) {
  detail::require(a.rows() == w.rows() && a.cols() == w.cols(), "weighted_sum", "shape");
  const double v = a.value().cwiseProduct(w).sum();
  return detail::make_result(Matrix::Constant(1, 1, v), "weighted_sum", {a}, [w = std::move(w)](detail::Node& self) {
    detail::grad_of(self, 0) += w * self.grad(0, 0);
  });
}

// Compressed neighbor lists: the neighbors of row v are
// indices[offsets[v] .. offsets[v+1]).
struct Adjacency {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;

  std::size_t num_rows() const { return offsets.size() - 1; }
  std::uint32_t degree(std::size_t v) const { return offsets[v + 1] - offsets[v]; }
};

// out[v] = mean of a[u] over the neighbors u of v; zero when v has none.
inline Tensor neighbor_mean(const Tensor& a, std::shared_ptr<const Adjacency> adj) {
  detail::require(static_cast<Index>(adj->num_rows()) == a.rows(), "neighbor_mean", "adjacency size");
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  for (std::size_t v = 0; v < adj->num_rows(); ++v) {
    const auto deg = adj->degree(v);
    if (deg == 0) continue;
    auto row = out.row(static_cast<Index>(v));
    for (auto k = adj->offsets[v]; k < adj->offsets[v + 1]; ++k) row += a.value().row(adj->indices[k]);
    row /= static_cast<double>(deg);
  }
  return detail::make_result(std::move(out), "neighbor_mean", {a}, [adj](detail::Node& self) {
    Matrix& g = detail::grad_of(self, 0);
    for (std::size_t v = 0; v < adj->num_rows(); ++v) {
      const auto deg = adj->degree(v);
      if (deg == 0) continue;
      const auto gv = self.grad.row(static_cast<Index>(v)) / static_cast<double>(deg);
      for (auto k = adj->offsets[v]; k < adj->offsets[v + 1]; ++k) g.row(adj->indices[k]) += gv;
    }
  });
}

// Mean over consecutive row segments [offsets[s], offsets[s+1]).
inline Tensor segment_mean(const Tensor& a, std::vector<std::uint32_t> offsets) {
  detail::require(!offsets.empty() && offsets.back() == a.rows(), "segment_mean", "segments must cover all rows");
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  Matrix out = Matrix::Zero(segs, a.cols());
  for (Index s = 0; s < segs; ++s) {
    const auto lo = offsets[static_cast<std::size_t>(s)], hi = offsets[static_cast<std::size_t>(s) + 1];
    if (hi > lo) out.row(s) = a.value().middleRows(lo, hi - lo).colwise().sum() / static_cast<double>(hi - lo);
  }
  return detail::make_result(std::move(out), "segment_mean", {a}, [offsets = std::move(offsets)](detail::Node& self) {
    Matrix& g = detail::grad_of(self, 0);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const auto lo = offsets[s], hi = offsets[s + 1];
      if (hi == lo) continue;
      g.middleRows(lo, hi - lo).rowwise() += self.grad.row(static_cast<Index>(s)) / static_cast<double>(hi - lo);
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

inline Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  if (detail::relu_trace) {
    const Matrix& v = a.value();
    for (Index i = 0; i < v.size(); ++i) detail::relu_trace->push_back(v.data()[i] > 0.0);
  }
  return detail::make_result(std::move(out), "relu", {a}, [](detail::Node& self) {
    const Matrix& x = self.parents[0]->value;
    detail::grad_of(self, 0).array() += (x.array() > 0.0).cast<double>() * self.grad.array();
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return detail::make_result(std::move(out), "sigmoid", {a}, [](detail::Node& self) {
    const Matrix& y = self.value;
    detail::grad_of(self, 0).array() += self.grad.array() * y.array() * (1.0 - y.array());
  });
}

inline Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh().matrix();
  return detail::make_result(std::move(out), "tanh", {a}, [](detail::Node& self) {
    const Matrix& y = self.value;
    detail::grad_of(self, 0).array() += self.grad.array() * (1.0 - y.array().square());
  });
}

inline Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp().matrix();
  return detail::make_result(std::move(out), "exp", {a}, [](detail::Node& self) {
    detail::grad_of(self, 0).array() += self.grad.array() * self.value.array();
  });
}

inline Tensor log(const Tensor& a) {
  Matrix out = a.value().array().log().matrix();
  return detail::make_result(std::move(out), "log", {a}, [](detail::Node& self) {
    detail::grad_of(self, 0).array() += self.grad.array() / self.parents[0]->value.array();
  });
}

inline Tensor softmax_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return detail::make_result(std::move(out), "softmax_rows", {a}, [](detail::Node& self) {
    const Matrix& y = self.value;
    Matrix& g = detail::grad_of(self, 0);
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      g.row(r).array() += y.row(r).array() * (self.grad.row(r).array() - dot);
    }
  });
}

// Row-wise log-softmax restricted to entries where include(r, c) != 0.
// Excluded entries produce 0 and receive no gradient. A row with no
// included entry is all zeros.
inline Tensor masked_log_softmax_rows(const Tensor& a, Matrix include) {
  detail::require(include.rows() == a.rows() && include.cols() == a.cols(), "masked_log_softmax_rows", "mask shape");
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  Matrix probs = Matrix::Zero(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Index c = 0; c < a.cols(); ++c)
      if (include(r, c) != 0.0) {
        m = std::max(m, a.value()(r, c));
        any = true;
      }
    // overflowed inputs must surface as non-finite output, not a silent zero row
    if (!any) continue;
    double z = 0.0;
    for (Index c = 0; c < a.cols(); ++c)
      if (include(r, c) != 0.0) z += std::exp(a.value()(r, c) - m);
    const double lse = m + std::log(z);
    for (Index c = 0; c < a.cols(); ++c) {
      if (include(r, c) == 0.0) continue;
      out(r, c) = a.value()(r, c) - lse;
      probs(r, c) = std::exp(out(r, c));
    }
  }
  return detail::make_result(std::move(out), "masked_log_softmax_rows", {a},
                             [include = std::move(include), probs = std::move(probs)](detail::Node& self) {
                               Matrix& g = detail::grad_of(self, 0);
                               for (Index r = 0; r < g.rows(); ++r) {
                                 double total = 0.0;
                                 for (Index c = 0; c < g.cols(); ++c)
                                   if (include(r, c) != 0.0) total += self.grad(r, c);
                                 for (Index c = 0; c < g.cols(); ++c)
                                   if (include(r, c) != 0.0) g(r, c) += self.grad(r, c) - probs(r, c) * total;
                               }
                             });
}

inline Tensor log_softmax_rows(const Tensor& a) {
  return masked_log_softmax_rows(a, Matrix::Ones(a.rows(), a.cols()));
}

// Unit-norm rows. Zero rows stay zero (and pass no gradient); the count of
// such rows is written to `zero_rows` when provided.
inline Tensor l2_normalize_rows(const Tensor& a, std::size_t* zero_rows = nullptr) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  std::size_t zeros = 0;
  for (Index r = 0; r < a.rows(); ++r) {
    if (norms(r) > 0.0) {
      out.row(r) = a.value().row(r) / norms(r);
    } else {
      ++zeros;
    }
  }
  if (zero_rows) *zero_rows = zeros;
  return detail::make_result(std::move(out), "l2_normalize_rows", {a}, [norms](detail::Node& self) {
    const Matrix& y = self.value;
    Matrix& g = detail::grad_of(self, 0);
    for (Index r = 0; r < y.rows(); ++r) {
      if (norms(r) <= 0.0) continue;
      const double dot = self.grad.row(r).dot(y.row(r));
      g.row(r) += (self.grad.row(r) - y.row(r) * dot) / norms(r);
    }
  });
}

// Inverted dropout: zeroes entries with probability p and rescales the
// survivors by 1/(1-p). Identity when p == 0.
template <typename Rng>
Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) return mul_constant(a, Matrix::Zero(a.rows(), a.cols()));
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  return mul_constant(a, std::move(mask));
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t kink_excluded = 0;   // entries whose probe crossed a ReLU kink at every step size
  std::string worst;               // "<param>[i]" of the largest error
};

// Compares reverse-mode gradients of `loss_fn` against central differences
// (initial step 1e-5) for every entry of every tensor in `params`. The
// relative error of an entry is |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-4); the floor keeps entries whose true gradient is ~0 from
// being judged on rounding noise alone. If a probe flips the sign of any
// ReLU input the step is shrunk tenfold (twice at most); an entry that still
// crosses a kink sits on a nondifferentiable point and is excluded.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                  const std::vector<std::string>& names = {}, double step = 1e-5,
                                  std::size_t max_entries_per_param = 0) {
  for (auto& p : params) p.zero_grad();
  std::vector<std::uint8_t> base_pattern;
  detail::relu_trace = &base_pattern;
  Tensor loss = loss_fn();
  detail::relu_trace = nullptr;
  loss.backward();

  GradCheckResult result;
  std::vector<std::uint8_t> probe;
  auto eval = [&](bool& crossed) {
    probe.clear();
    detail::relu_trace = &probe;
    const double v = loss_fn().item();
    detail::relu_trace = nullptr;
    if (probe != base_pattern) crossed = true;
    return v;
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const Matrix analytic = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    const Index n = p.value().size();
    const Index stride = (max_entries_per_param > 0 && static_cast<std::size_t>(n) > max_entries_per_param)
                             ? n / static_cast<Index>(max_entries_per_param)
                             : 1;
    for (Index i = 0; i < n; i += stride) {
      double& x = p.mutable_value().data()[i];
      const double orig = x;
      double h = step;
      bool crossed = true;
      double numeric = 0.0;
      for (int attempt = 0; attempt < 3 && crossed; ++attempt, h /= 10.0) {
        crossed = false;
        x = orig + h;
        const double up = eval(crossed);
        x = orig - h;
        const double down = eval(crossed);
        x = orig;
        numeric = (up - down) / (2.0 * h);
      }
      if (crossed) {
        ++result.kink_excluded;
        continue;
      }
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = (pi < names.size() ? names[pi] : "param" + std::to_string(pi)) + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace unitgraph
