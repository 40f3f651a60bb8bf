// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over Eigen matrices. A Tape owns the nodes of one
// forward pass; parameters live outside the tape and collect gradients
// across backward calls. Everything is double precision.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mfir/core.hpp"
#include "mfir/rng.hpp"

namespace mfir::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Parameter(std::string n, Mat v, bool train = true)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())), trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

class Tape {
 public:
  explicit Tape(bool with_grad = true) : with_grad_(with_grad) {}

  bool grad_enabled() const { return with_grad_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Mat v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var leaf(Parameter& p) {
    Var out = constant(p.value);
    if (with_grad_ && p.trainable) {
      Parameter* pp = &p;
      set_backward(out, [this, pp, id = out.id]() {
        pp->grad += grad(id);
      });
    }
    return out;
  }

  Var make(Mat v, std::function<void()> back) {
    nodes_.push_back(Node{std::move(v), {}, nullptr});
    Var out{this, static_cast<int>(nodes_.size()) - 1};
    if (with_grad_ && back) nodes_.back().back = std::move(back);
    return out;
  }

  const Mat& value(int id) const { return nodes_[id].val; }

  // Gradient buffer of a node, allocated on first touch.
  Mat& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  // Reverse pass from a scalar root. Parameter gradients accumulate; call
  // Parameter::zero_grad between steps.
  void backward(Var root) {
    require(with_grad_, "backward on a no-grad tape");
    require(root.tape == this, "backward root from another tape");
    require(value(root.id).rows() == 1 && value(root.id).cols() == 1,
            "backward root must be a scalar");
    grad(root.id)(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back();
    }
  }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;
  };

  void set_backward(Var v, std::function<void()> back) {
    nodes_[v.id].back = std::move(back);
  }

  std::vector<Node> nodes_;
  bool with_grad_;
};

inline const Mat& Var::val() const { return tape->value(id); }

inline double scalar(Var v) {
  require(v.rows() == 1 && v.cols() == 1, "scalar() on a non-scalar node");
  return v.val()(0, 0);
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops

inline Var add(Var a, Var b) {
  Tape* t = a.tape;
  require(a.val().rows() == b.val().rows() && a.val().cols() == b.val().cols(),
          "add: shape mismatch ", a.rows(), "x", a.cols(), " vs ", b.rows(),
          "x", b.cols());
  Mat v = a.val() + b.val();
  return t->make(std::move(v), [t, a, b, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id) += g;
    t->grad(b.id) += g;
  });
}

inline Var sub(Var a, Var b) {
  Tape* t = a.tape;
  require(a.val().rows() == b.val().rows() && a.val().cols() == b.val().cols(),
          "sub: shape mismatch");
  Mat v = a.val() - b.val();
  return t->make(std::move(v), [t, a, b, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id) += g;
    t->grad(b.id) -= g;
  });
}

inline Var mul(Var a, Var b) {
  Tape* t = a.tape;
  require(a.val().rows() == b.val().rows() && a.val().cols() == b.val().cols(),
          "mul: shape mismatch");
  Mat v = a.val().cwiseProduct(b.val());
  return t->make(std::move(v), [t, a, b, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id) += g.cwiseProduct(t->value(b.id));
    t->grad(b.id) += g.cwiseProduct(t->value(a.id));
  });
}

inline Var scale(Var a, double c) {
  Tape* t = a.tape;
  Mat v = a.val() * c;
  return t->make(std::move(v), [t, a, c, out = static_cast<int>(t->size())]() {
    t->grad(a.id) += t->grad(out) * c;
  });
}

inline Var matmul(Var a, Var b) {
  Tape* t = a.tape;
  require(a.val().cols() == b.val().rows(), "matmul: inner dims ", a.cols(),
          " vs ", b.rows());
  Mat v = a.val() * b.val();
  return t->make(std::move(v), [t, a, b, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id).noalias() += g * t->value(b.id).transpose();
    t->grad(b.id).noalias() += t->value(a.id).transpose() * g;
  });
}

inline Var transpose(Var a) {
  Tape* t = a.tape;
  Mat v = a.val().transpose();
  return t->make(std::move(v), [t, a, out = static_cast<int>(t->size())]() {
    t->grad(a.id) += t->grad(out).transpose();
  });
}

// A (m x n) plus column vector b (m x 1) added to every column.
inline Var add_col_broadcast(Var a, Var b) {
  Tape* t = a.tape;
  require(b.val().cols() == 1 && a.val().rows() == b.val().rows(),
          "add_col_broadcast: expected m x 1 bias");
  Mat v = a.val().colwise() + Eigen::VectorXd(b.val().col(0));
  return t->make(std::move(v), [t, a, b, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id) += g;
    t->grad(b.id) += g.rowwise().sum();
  });
}

// A (m x n) plus row vector b (1 x n) added to every row.
inline Var add_row_broadcast(Var a, Var b) {
  Tape* t = a.tape;
  require(b.val().rows() == 1 && a.val().cols() == b.val().cols(),
          "add_row_broadcast: expected 1 x n bias");
  Mat v = a.val().rowwise() + Eigen::RowVectorXd(b.val().row(0));
  return t->make(std::move(v), [t, a, b, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id) += g;
    t->grad(b.id) += g.colwise().sum();
  });
}

inline Var sigmoid(Var a) {
  Tape* t = a.tape;
  Mat v = a.val().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return t->make(std::move(v), [t, a, out = static_cast<int>(t->size())]() {
    const Mat& y = t->value(out);
    t->grad(a.id) +=
        t->grad(out).cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y));
  });
}

inline Var tanh_v(Var a) {
  Tape* t = a.tape;
  Mat v = a.val().array().tanh().matrix();
  return t->make(std::move(v), [t, a, out = static_cast<int>(t->size())]() {
    const Mat& y = t->value(out);
    t->grad(a.id) += t->grad(out).cwiseProduct(
        (1.0 - y.array().square()).matrix());
  });
}

inline Var relu(Var a) {
  Tape* t = a.tape;
  Mat v = a.val().cwiseMax(0.0);
  return t->make(std::move(v), [t, a, out = static_cast<int>(t->size())]() {
    const Mat& x = t->value(a.id);
    t->grad(a.id) += t->grad(out).cwiseProduct(
        x.unaryExpr([](double e) { return e > 0.0 ? 1.0 : 0.0; }));
  });
}

// Row-wise softmax; every output row sums to one.
inline Var softmax_rows(Var a) {
  Tape* t = a.tape;
  Mat v = a.val();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  return t->make(std::move(v), [t, a, out = static_cast<int>(t->size())]() {
    const Mat& y = t->value(out);
    const Mat& g = t->grad(out);
    Mat& ga = t->grad(a.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Tape* t = parts.front().tape;
  const Eigen::Index cols = parts.front().val().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p.val().cols() == cols, "concat_rows: column mismatch");
    rows += p.val().rows();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.val().rows()) = p.val();
    at += p.val().rows();
  }
  std::vector<Var> held = parts;
  return t->make(std::move(v), [t, held, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    Eigen::Index at2 = 0;
    for (const auto& p : held) {
      t->grad(p.id) += g.middleRows(at2, p.val().rows());
      at2 += p.val().rows();
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape* t = parts.front().tape;
  const Eigen::Index rows = parts.front().val().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.val().rows() == rows, "concat_cols: row mismatch");
    cols += p.val().cols();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.val().cols()) = p.val();
    at += p.val().cols();
  }
  std::vector<Var> held = parts;
  return t->make(std::move(v), [t, held, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    Eigen::Index at2 = 0;
    for (const auto& p : held) {
      t->grad(p.id) += g.middleCols(at2, p.val().cols());
      at2 += p.val().cols();
    }
  });
}

inline Var middle_cols(Var a, Eigen::Index start, Eigen::Index n) {
  Tape* t = a.tape;
  require(start >= 0 && n > 0 && start + n <= a.val().cols(),
          "middle_cols: range out of bounds");
  Mat v = a.val().middleCols(start, n);
  return t->make(std::move(v),
                 [t, a, start, n, out = static_cast<int>(t->size())]() {
    t->grad(a.id).middleCols(start, n) += t->grad(out);
  });
}

inline Var col(Var a, Eigen::Index j) {
  Tape* t = a.tape;
  require(j >= 0 && j < a.val().cols(), "col: index out of range");
  Mat v = a.val().col(j);
  return t->make(std::move(v), [t, a, j, out = static_cast<int>(t->size())]() {
    t->grad(a.id).col(j) += t->grad(out).col(0);
  });
}

// Mean over columns -> m x 1.
inline Var mean_cols(Var a) {
  Tape* t = a.tape;
  const double n = static_cast<double>(a.val().cols());
  Mat v = a.val().rowwise().mean();
  return t->make(std::move(v), [t, a, n, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    t->grad(a.id).colwise() += Eigen::VectorXd(g.col(0) / n);
  });
}

// Column-block means: cols = blocks * k, output m x blocks where output
// column b is the mean of the b-th block of k columns.
inline Var block_mean_cols(Var a, Eigen::Index blocks) {
  Tape* t = a.tape;
  require(blocks > 0 && a.val().cols() % blocks == 0,
          "block_mean_cols: cols not divisible by blocks");
  const Eigen::Index k = a.val().cols() / blocks;
  Mat v(a.val().rows(), blocks);
  for (Eigen::Index b = 0; b < blocks; ++b)
    v.col(b) = a.val().middleCols(b * k, k).rowwise().mean();
  return t->make(std::move(v),
                 [t, a, blocks, k, out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    Mat& ga = t->grad(a.id);
    for (Eigen::Index b = 0; b < blocks; ++b)
      ga.middleCols(b * k, k).colwise() +=
          Eigen::VectorXd(g.col(b) / static_cast<double>(k));
  });
}

inline Var sum_all(Var a) {
  Tape* t = a.tape;
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  return t->make(std::move(v), [t, a, out = static_cast<int>(t->size())]() {
    t->grad(a.id).array() += t->grad(out)(0, 0);
  });
}

inline Var mean_all(Var a) {
  Tape* t = a.tape;
  const double n = static_cast<double>(a.val().size());
  Mat v(1, 1);
  v(0, 0) = a.val().sum() / n;
  return t->make(std::move(v), [t, a, n, out = static_cast<int>(t->size())]() {
    t->grad(a.id).array() += t->grad(out)(0, 0) / n;
  });
}

// Cosine similarity of two column vectors. A zero-norm input yields a
// score of 0 with zero gradient, so degenerate embeddings rank as
// uninformative instead of poisoning the pipeline with NaNs.
inline Var cosine(Var u, Var v) {
  Tape* t = u.tape;
  require(u.val().cols() == 1 && v.val().cols() == 1 &&
              u.val().rows() == v.val().rows(),
          "cosine: expects equal-length column vectors");
  const double nu = u.val().norm();
  const double nv = v.val().norm();
  Mat out(1, 1);
  const bool degenerate = nu == 0.0 || nv == 0.0;
  out(0, 0) = degenerate ? 0.0 : u.val().col(0).dot(v.val().col(0)) / (nu * nv);
  return t->make(std::move(out), [t, u, v, nu, nv, degenerate,
                                  out_id = static_cast<int>(t->size())]() {
    if (degenerate) return;
    const double g = t->grad(out_id)(0, 0);
    const double s = t->value(out_id)(0, 0);
    const Mat& uv = t->value(u.id);
    const Mat& vv = t->value(v.id);
    t->grad(u.id) += g * (vv / (nu * nv) - s * uv / (nu * nu));
    t->grad(v.id) += g * (uv / (nu * nv) - s * vv / (nv * nv));
  });
}

// max(0, margin + s_neg - s_pos) on scalar nodes.
inline Var hinge(Var s_pos, Var s_neg, double margin) {
  Tape* t = s_pos.tape;
  Var diff = sub(s_neg, s_pos);
  Var shifted = t->make(
      Mat::Constant(1, 1, diff.val()(0, 0) + margin),
      [t, diff, out = static_cast<int>(t->size())]() {
        t->grad(diff.id) += t->grad(out);
      });
  return relu(shifted);
}

}  // namespace mfir::nn
