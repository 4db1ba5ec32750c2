#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "patchlens/text.hpp"

namespace patchlens::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Named parameters in registration order.
template <class T>
class ParameterSet {
public:
  Parameter<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw Error("duplicate parameter " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Matrix<T>::Zero(rows, cols);
    p->grad = Matrix<T>::Zero(rows, cols);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return *params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  ParameterSet() = default;
  ParameterSet(const ParameterSet& o) : index_(o.index_) {
    for (const auto& p : o.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
  }
  ParameterSet& operator=(const ParameterSet& o) {
    if (this != &o) {
      ParameterSet copy(o);
      std::swap(params_, copy.params_);
      std::swap(index_, copy.index_);
    }
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  std::size_t id = 0;
};

/// Reverse-mode autodiff over dense matrices. Every op appends a node whose
/// closure pushes its output gradient back to its inputs. With recording off
/// the tape only evaluates.
template <class T>
class Tape {
public:
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(256); }

  bool recording() const { return record_; }

  Var constant(Matrix<T> m) { return push(std::move(m)); }

  /// Leaf that reads the parameter in place; the parameter must outlive the
  /// tape and stay unchanged until backward() returns.
  Var param(Parameter<T>& p) {
    nodes_.push_back(Node{{}, {}, {}, &p, &p.value});
    return Var{nodes_.size() - 1};
  }

  /// Read-only leaf over a caller-owned matrix.
  Var view(const Matrix<T>& m) {
    nodes_.push_back(Node{{}, {}, {}, nullptr, &m});
    return Var{nodes_.size() - 1};
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.value;
  }

  T scalar(Var v) const { return value(v)(0, 0); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// Parameter leaves accumulate into Parameter::grad.
  void backward(Var loss, T seed = T(1)) {
    if (!record_) throw Error("backward on a non-recording tape");
    for (auto& n : nodes_) {
      const Matrix<T>& v = n.ref ? *n.ref : n.value;
      n.grad = Matrix<T>::Zero(v.rows(), v.cols());
    }
    nodes_[loss.id].grad.setConstant(seed);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward();
      if (n.param) n.param->grad += n.grad;
    }
  }

  // --- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b) {
    Matrix<T> out;
    out.noalias() = value(a) * value(b);
    Var c = push(std::move(out));
    on_backward(c, [this, a, b, c] {
      grad(a).noalias() += grad(c) * value(b).transpose();
      grad(b).noalias() += value(a).transpose() * grad(c);
    });
    return c;
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    Matrix<T> out;
    out.noalias() = value(a) * value(b).transpose();
    Var c = push(std::move(out));
    on_backward(c, [this, a, b, c] {
      grad(a).noalias() += grad(c) * value(b);
      grad(b).noalias() += grad(c).transpose() * value(a);
    });
    return c;
  }

  Var transpose(Var a) {
    Var c = push(value(a).transpose());
    on_backward(c, [this, a, c] { grad(a) += grad(c).transpose(); });
    return c;
  }

  Var add(Var a, Var b) {
    Var c = push(value(a) + value(b));
    on_backward(c, [this, a, b, c] {
      grad(a) += grad(c);
      grad(b) += grad(c);
    });
    return c;
  }

  /// a + row broadcast over every row of a.
  Var add_row(Var a, Var row) {
    Matrix<T> out = value(a);
    out.rowwise() += value(row).row(0);
    Var c = push(std::move(out));
    on_backward(c, [this, a, row, c] {
      grad(a) += grad(c);
      grad(row) += grad(c).colwise().sum();
    });
    return c;
  }

  /// x with `vec` added to each row listed in `rows`.
  Var add_to_rows(Var x, Var vec, std::vector<std::size_t> rows) {
    Matrix<T> out = value(x);
    for (auto r : rows) out.row(static_cast<Eigen::Index>(r)) += value(vec).row(0);
    Var c = push(std::move(out));
    on_backward(c, [this, x, vec, c, rows = std::move(rows)] {
      grad(x) += grad(c);
      for (auto r : rows) grad(vec).row(0) += grad(c).row(static_cast<Eigen::Index>(r));
    });
    return c;
  }

  Var scale(Var a, T s) {
    Var c = push(value(a) * s);
    on_backward(c, [this, a, c, s] { grad(a) += grad(c) * s; });
    return c;
  }

  Var relu(Var a) {
    Var c = push(value(a).cwiseMax(T(0)));
    on_backward(c, [this, a, c] {
      grad(a) += (value(a).array() > T(0)).select(grad(c), T(0));
    });
    return c;
  }

  /// Sum of 1x1 nodes with weights.
  Var weighted_sum(std::vector<Var> terms, std::vector<T> weights) {
    T total = 0;
    for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * scalar(terms[i]);
    Matrix<T> out(1, 1);
    out(0, 0) = total;
    Var c = push(std::move(out));
    on_backward(c, [this, c, terms = std::move(terms), weights = std::move(weights)] {
      for (std::size_t i = 0; i < terms.size(); ++i) grad(terms[i])(0, 0) += weights[i] * grad(c)(0, 0);
    });
    return c;
  }

  // --- shape ---------------------------------------------------------------

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    Var c = push(value(a).middleCols(start, count));
    on_backward(c, [this, a, c, start, count] { grad(a).middleCols(start, count) += grad(c); });
    return c;
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    Var c = push(value(a).middleRows(start, count));
    on_backward(c, [this, a, c, start, count] { grad(a).middleRows(start, count) += grad(c); });
    return c;
  }

  Var concat_cols(std::vector<Var> parts) {
    Eigen::Index rows = value(parts.front()).rows(), cols = 0;
    for (Var p : parts) cols += value(p).cols();
    Matrix<T> out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    Var c = push(std::move(out));
    on_backward(c, [this, c, parts = std::move(parts)] {
      Eigen::Index off = 0;
      for (Var p : parts) {
        grad(p) += grad(c).middleCols(off, value(p).cols());
        off += value(p).cols();
      }
    });
    return c;
  }

  /// Rows of `table` selected by ids.
  Var gather_rows(Var table, std::vector<int> ids) {
    const auto& tv = value(table);
    Matrix<T> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    Var c = push(std::move(out));
    on_backward(c, [this, table, c, ids = std::move(ids)] {
      for (std::size_t i = 0; i < ids.size(); ++i) grad(table).row(ids[i]) += grad(c).row(static_cast<Eigen::Index>(i));
    });
    return c;
  }

  // --- normalisation and attention pieces ---------------------------------

  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& xv = value(x);
    const Eigen::Index n = xv.rows(), d = xv.cols();
    Matrix<T> xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      T mean = xv.row(i).mean();
      auto centered = xv.row(i).array() - mean;
      T var = centered.square().mean();
      inv_std(i) = T(1) / std::sqrt(var + eps);
      xhat.row(i) = centered * inv_std(i);
    }
    Matrix<T> out = xhat;
    out.array().rowwise() *= value(gamma).row(0).array();
    out.rowwise() += value(beta).row(0);
    Var c = push(std::move(out));
    on_backward(c, [this, x, gamma, beta, c, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& g = grad(c);
      grad(gamma).row(0) += (g.array() * xhat.array()).colwise().sum().matrix();
      grad(beta).row(0) += g.colwise().sum();
      const Eigen::Index d = g.cols();
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        auto dxhat = (g.row(i).array() * value(gamma).row(0).array()).eval();
        T m1 = dxhat.sum() / static_cast<T>(d);
        T m2 = (dxhat * xhat.row(i).array()).sum() / static_cast<T>(d);
        grad(x).row(i).array() += inv_std(i) * (dxhat - m1 - xhat.row(i).array() * m2);
      }
    });
    return c;
  }

  /// Row-wise softmax; `mask` (same shape, 0 or -inf) is added first.
  Var softmax_rows(Var scores, const Matrix<T>* mask = nullptr) {
    Matrix<T> out = value(scores);
    if (mask) out += *mask;
    softmax_inplace(out);
    Var c = push(std::move(out));
    on_backward(c, [this, scores, c] {
      const auto& y = value(c);
      const auto& gy = grad(c);
      auto dot = (gy.array() * y.array()).rowwise().sum().eval();
      grad(scores).array() += y.array() * (gy.array().colwise() - dot);
    });
    return c;
  }

  /// scores + clamp(s) on every column flagged in `cols`; s is a 1x1 node.
  /// The clamp stops the gradient once |s| exceeds `limit`.
  Var add_column_bias(Var scores, Var s, std::vector<char> cols, T limit) {
    const T raw = scalar(s);
    const T b = std::clamp(raw, -limit, limit);
    Matrix<T> out = value(scores);
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      if (cols[static_cast<std::size_t>(j)]) out.col(j).array() += b;
    Var c = push(std::move(out));
    const bool passes = raw > -limit && raw < limit;
    on_backward(c, [this, scores, s, c, cols = std::move(cols), passes] {
      grad(scores) += grad(c);
      if (!passes) return;
      T acc = 0;
      for (Eigen::Index j = 0; j < grad(c).cols(); ++j)
        if (cols[static_cast<std::size_t>(j)]) acc += grad(c).col(j).sum();
      grad(s)(0, 0) += acc;
    });
    return c;
  }

  /// Inverted dropout with keep probability 1 - p.
  template <class Rng>
  Var dropout(Var a, T p, Rng& rng) {
    if (p <= T(0)) return a;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    Matrix<T> mask(value(a).rows(), value(a).cols());
    const T s = T(1) / (T(1) - p);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : T(0);
    Var c = push(value(a).cwiseProduct(mask));
    on_backward(c, [this, a, c, mask = std::move(mask)] { grad(a) += grad(c).cwiseProduct(mask); });
    return c;
  }

  /// Mean cross-entropy of row-wise softmax(logits [+ mask]) against target
  /// column indices. Returns a 1x1 node.
  Var cross_entropy(Var logits, std::vector<int> targets, const Matrix<T>* mask = nullptr) {
    Matrix<T> probs = value(logits);
    if (mask) probs += *mask;
    softmax_inplace(probs);
    T loss = 0;
    for (std::size_t i = 0; i < targets.size(); ++i)
      loss -= std::log(std::max(probs(static_cast<Eigen::Index>(i), targets[i]), std::numeric_limits<T>::min()));
    const T m = static_cast<T>(targets.size());
    Matrix<T> out(1, 1);
    out(0, 0) = loss / m;
    Var c = push(std::move(out));
    on_backward(c, [this, logits, c, m, targets = std::move(targets), probs = std::move(probs)] {
      Matrix<T> d = probs;
      for (std::size_t i = 0; i < targets.size(); ++i) d(static_cast<Eigen::Index>(i), targets[i]) -= T(1);
      grad(logits) += d * (grad(c)(0, 0) / m);
    });
    return c;
  }

  static void softmax_inplace(Matrix<T>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      auto row = m.row(i);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
  }

private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    std::function<void()> backward;
    Parameter<T>* param = nullptr;
    const Matrix<T>* ref = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;

  Var push(Matrix<T> m) {
    nodes_.push_back(Node{std::move(m), {}, {}, nullptr, nullptr});
    return Var{nodes_.size() - 1};
  }

  Matrix<T>& grad(Var v) { return nodes_[v.id].grad; }

  template <class F>
  void on_backward(Var v, F&& f) {
    if (record_) nodes_[v.id].backward = std::forward<F>(f);
  }
};

/// Row-wise log-softmax of a plain matrix (no tape).
template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits, const Matrix<T>* mask = nullptr) {
  Matrix<T> out = logits;
  if (mask) out += *mask;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    row.array() -= lse;
  }
  return out;
}

}  // namespace patchlens::nn
