// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "unitsep/common.hpp"

namespace unitsep::nn {

using Mat = Eigen::MatrixXd;

// Trainable tensor plus its Adam state. Owned by a ParamStore; graphs only
// reference it.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

// Lightweight handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int idx) : g_(g), idx_(idx) {}
  const Mat& val() const;
  int index() const { return idx_; }
  bool valid() const { return g_ != nullptr; }
  Graph* graph() const { return g_; }

 private:
  Graph* g_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode autodiff tape. A fresh graph is built per forward pass
// (define-by-run); backward() walks the recorded nodes in reverse.
class Graph {
 public:
  struct Node {
    Mat value;
    Mat grad;  // empty until touched by backward
    bool needs_grad = false;
    std::function<void(Graph&, int)> back;  // propagates node grad to parents
  };

  // ------------------------------------------------------------- leaves

  Var constant(Mat v) { return push(std::move(v), false, nullptr); }

  Var leaf(Param& p) {
    const Var v = push(p.value, true, nullptr);
    param_leaves_.emplace_back(v.index(), &p);
    return v;
  }

  // ------------------------------------------------------------- arithmetic

  Var add(Var a, Var b) {
    check(a), check(b);
    same_shape(a, b, "add");
    return push(val(a) + val(b), needs(a) || needs(b), [a, b](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a) += g.node(self).grad;
      if (g.needs(b)) g.grad_of(b) += g.node(self).grad;
    });
  }

  // b is (rows x 1), broadcast across columns.
  Var add_bias(Var a, Var b) {
    check(a), check(b);
    if (val(b).cols() != 1 || val(b).rows() != val(a).rows()) {
      throw ShapeError("add_bias: bias must be (rows x 1)");
    }
    Mat out = val(a);
    out.colwise() += Eigen::VectorXd(val(b).col(0));
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a) += g.node(self).grad;
      if (g.needs(b)) g.grad_of(b) += g.node(self).grad.rowwise().sum();
    });
  }

  Var sub(Var a, Var b) {
    check(a), check(b);
    same_shape(a, b, "sub");
    return push(val(a) - val(b), needs(a) || needs(b), [a, b](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a) += g.node(self).grad;
      if (g.needs(b)) g.grad_of(b) -= g.node(self).grad;
    });
  }

  // Broadcast-subtract a 1x1 scalar from every element.
  Var sub_scalar(Var a, Var s) {
    check(a), check(s);
    if (val(s).size() != 1) throw ShapeError("sub_scalar: scalar must be 1x1");
    return push(val(a).array() - val(s)(0, 0), needs(a) || needs(s),
                [a, s](Graph& g, int self) {
                  if (g.needs(a)) g.grad_of(a) += g.node(self).grad;
                  if (g.needs(s)) g.grad_of(s)(0, 0) -= g.node(self).grad.sum();
                });
  }

  Var cmul(Var a, Var b) {
    check(a), check(b);
    same_shape(a, b, "cmul");
    return push(val(a).cwiseProduct(val(b)), needs(a) || needs(b),
                [a, b](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  if (g.needs(a)) g.grad_of(a) += d.cwiseProduct(g.val(b));
                  if (g.needs(b)) g.grad_of(b) += d.cwiseProduct(g.val(a));
                });
  }

  Var smul(Var a, double c) {
    check(a);
    return push(val(a) * c, needs(a), [a, c](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a) += c * g.node(self).grad;
    });
  }

  // Exact elementwise division by a constant (not multiplication by 1/c;
  // the distinction matters for bitwise-reproducible means).
  Var divc(Var a, double c) {
    check(a);
    return push(val(a) / c, needs(a), [a, c](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a) += g.node(self).grad / c;
    });
  }

  // Scale a matrix by a 1x1 scalar variable.
  Var scale_by(Var a, Var s) {
    check(a), check(s);
    if (val(s).size() != 1) throw ShapeError("scale_by: scalar must be 1x1");
    return push(val(a) * val(s)(0, 0), needs(a) || needs(s),
                [a, s](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  if (g.needs(a)) g.grad_of(a) += d * g.val(s)(0, 0);
                  if (g.needs(s)) g.grad_of(s)(0, 0) += d.cwiseProduct(g.val(a)).sum();
                });
  }

  Var matmul(Var a, Var b) {
    check(a), check(b);
    if (val(a).cols() != val(b).rows()) throw ShapeError("matmul: inner dims differ");
    return push(val(a) * val(b), needs(a) || needs(b), [a, b](Graph& g, int self) {
      const Mat& d = g.node(self).grad;
      if (g.needs(a)) g.grad_of(a) += d * g.val(b).transpose();
      if (g.needs(b)) g.grad_of(b) += g.val(a).transpose() * d;
    });
  }

  Var transpose(Var a) {
    check(a);
    return push(val(a).transpose(), needs(a), [a](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a) += g.node(self).grad.transpose();
    });
  }

  // ------------------------------------------------------------- nonlinear

  Var sigmoid(Var a) {
    check(a);
    Mat out = ((-val(a).array()).exp() + 1.0).inverse();
    return push(std::move(out), needs(a), [a](Graph& g, int self) {
      if (!g.needs(a)) return;
      const Mat& y = g.node(self).value;
      g.grad_of(a).array() +=
          g.node(self).grad.array() * y.array() * (1.0 - y.array());
    });
  }

  Var tanh_(Var a) {
    check(a);
    return push(val(a).array().tanh(), needs(a), [a](Graph& g, int self) {
      if (!g.needs(a)) return;
      const Mat& y = g.node(self).value;
      g.grad_of(a).array() += g.node(self).grad.array() * (1.0 - y.array().square());
    });
  }

  Var relu(Var a) {
    check(a);
    return push(val(a).cwiseMax(0.0), needs(a), [a](Graph& g, int self) {
      if (!g.needs(a)) return;
      g.grad_of(a).array() +=
          g.node(self).grad.array() * (g.val(a).array() > 0.0).cast<double>();
    });
  }

  Var abs_(Var a) {
    check(a);
    return push(val(a).cwiseAbs(), needs(a), [a](Graph& g, int self) {
      if (!g.needs(a)) return;
      g.grad_of(a).array() += g.node(self).grad.array() * g.val(a).array().sign();
    });
  }

  Var log_(Var a) {
    check(a);
    if ((val(a).array() <= 0.0).any()) throw ShapeError("log_: nonpositive input");
    return push(val(a).array().log(), needs(a), [a](Graph& g, int self) {
      if (!g.needs(a)) return;
      g.grad_of(a).array() += g.node(self).grad.array() / g.val(a).array();
    });
  }

  // ------------------------------------------------------------- reshaping

  Var rows(Var a, int r0, int n) {
    check(a);
    if (r0 < 0 || r0 + n > val(a).rows()) throw ShapeError("rows: slice out of range");
    return push(val(a).middleRows(r0, n), needs(a), [a, r0, n](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a).middleRows(r0, n) += g.node(self).grad;
    });
  }

  Var cols(Var a, int c0, int n) {
    check(a);
    if (c0 < 0 || c0 + n > val(a).cols()) throw ShapeError("cols: slice out of range");
    return push(val(a).middleCols(c0, n), needs(a), [a, c0, n](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a).middleCols(c0, n) += g.node(self).grad;
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    return concat(parts, /*by_rows=*/true);
  }
  Var concat_cols(const std::vector<Var>& parts) {
    return concat(parts, /*by_rows=*/false);
  }

  // out.col(i) = a.col(cols[i]); -1 selects a zero column. Used for
  // segment/batch reshuffling where whole columns move together.
  Var select_cols(Var a, std::shared_ptr<const std::vector<long>> cols) {
    check(a);
    const Eigen::Index R = val(a).rows();
    Mat out(R, static_cast<Eigen::Index>(cols->size()));
    const Mat& src = val(a);
    for (std::size_t i = 0; i < cols->size(); ++i) {
      const long c = (*cols)[i];
      if (c < -1 || c >= src.cols()) throw ShapeError("select_cols: index out of range");
      if (c >= 0) {
        out.col(static_cast<Eigen::Index>(i)) = src.col(c);
      } else {
        out.col(static_cast<Eigen::Index>(i)).setZero();
      }
    }
    return push(std::move(out), needs(a), [a, cols](Graph& g, int self) {
      if (!g.needs(a)) return;
      Mat& ga = g.grad_of(a);
      const Mat& d = g.node(self).grad;
      for (std::size_t i = 0; i < cols->size(); ++i) {
        const long c = (*cols)[i];
        if (c >= 0) ga.col(c) += d.col(static_cast<Eigen::Index>(i));
      }
    });
  }

  // out(i) = flat(a)(map[i]) with column-major flattening; map entries of -1
  // produce zeros. One op covers im2col, segmentation and time reversal.
  Var gather(Var a, std::shared_ptr<const std::vector<long>> map, int out_rows,
             int out_cols) {
    check(a);
    if (static_cast<long>(map->size()) != static_cast<long>(out_rows) * out_cols) {
      throw ShapeError("gather: map size does not match output shape");
    }
    Mat out(out_rows, out_cols);
    const double* src = val(a).data();
    const long limit = static_cast<long>(val(a).size());
    double* dst = out.data();
    const auto& m = *map;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const long s = m[i];
      if (s < -1 || s >= limit) throw ShapeError("gather: map index out of range");
      dst[i] = s >= 0 ? src[s] : 0.0;
    }
    return push(std::move(out), needs(a), [a, map](Graph& g, int self) {
      if (!g.needs(a)) return;
      Mat& ga = g.grad_of(a);
      double* dst = ga.data();
      const double* d = g.node(self).grad.data();
      const auto& m = *map;
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= 0) dst[m[i]] += d[i];
      }
    });
  }

  // flat(out)(map[i]) += flat(a)(i); the adjoint of gather with the same map.
  Var scatter_add(Var a, std::shared_ptr<const std::vector<long>> map, int out_rows,
                  int out_cols) {
    check(a);
    if (static_cast<long>(map->size()) != static_cast<long>(val(a).size())) {
      throw ShapeError("scatter_add: map size does not match input shape");
    }
    Mat out = Mat::Zero(out_rows, out_cols);
    const double* src = val(a).data();
    double* dst = out.data();
    const long limit = static_cast<long>(out.size());
    const auto& m = *map;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const long t = m[i];
      if (t < -1 || t >= limit) throw ShapeError("scatter_add: map index out of range");
      if (t >= 0) dst[t] += src[i];
    }
    return push(std::move(out), needs(a), [a, map](Graph& g, int self) {
      if (!g.needs(a)) return;
      Mat& ga = g.grad_of(a);
      double* dst = ga.data();
      const double* d = g.node(self).grad.data();
      const auto& m = *map;
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= 0) dst[i] += d[m[i]];
      }
    });
  }

  // ------------------------------------------------------------- reductions

  Var sum_all(Var a) {
    check(a);
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    return push(std::move(out), needs(a), [a](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a).array() += g.node(self).grad(0, 0);
    });
  }

  Var mean_all(Var a) {
    check(a);
    Mat out(1, 1);
    out(0, 0) = val(a).mean();
    const double inv = 1.0 / static_cast<double>(val(a).size());
    return push(std::move(out), needs(a), [a, inv](Graph& g, int self) {
      if (g.needs(a)) g.grad_of(a).array() += inv * g.node(self).grad(0, 0);
    });
  }

  // Mean over columns -> (rows x 1). Used by the speaker head.
  Var mean_cols(Var a) {
    check(a);
    const double inv = 1.0 / static_cast<double>(val(a).cols());
    Mat out = val(a).rowwise().mean();
    return push(std::move(out), needs(a), [a, inv](Graph& g, int self) {
      if (!g.needs(a)) return;
      g.grad_of(a).colwise() += Eigen::VectorXd(inv * g.node(self).grad.col(0));
    });
  }

  Var dot(Var a, Var b) {
    check(a), check(b);
    same_shape(a, b, "dot");
    Mat out(1, 1);
    out(0, 0) = val(a).cwiseProduct(val(b)).sum();
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, int self) {
      const double d = g.node(self).grad(0, 0);
      if (g.needs(a)) g.grad_of(a) += d * g.val(b);
      if (g.needs(b)) g.grad_of(b) += d * g.val(a);
    });
  }

  Var sdiv(Var a, Var b) {
    check(a), check(b);
    if (val(a).size() != 1 || val(b).size() != 1) throw ShapeError("sdiv: wants 1x1");
    Mat out(1, 1);
    out(0, 0) = val(a)(0, 0) / val(b)(0, 0);
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, int self) {
      const double d = g.node(self).grad(0, 0);
      const double av = g.val(a)(0, 0), bv = g.val(b)(0, 0);
      if (g.needs(a)) g.grad_of(a)(0, 0) += d / bv;
      if (g.needs(b)) g.grad_of(b)(0, 0) -= d * av / (bv * bv);
    });
  }

  // ------------------------------------------------------------- softmax/CE

  // Column-wise softmax (classes along rows).
  Var softmax_cols(Var a) {
    check(a);
    Mat out = val(a);
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double mx = out.col(c).maxCoeff();
      out.col(c) = (out.col(c).array() - mx).exp();
      out.col(c) /= out.col(c).sum();
    }
    return push(std::move(out), needs(a), [a](Graph& g, int self) {
      if (!g.needs(a)) return;
      const Mat& y = g.node(self).value;
      const Mat& d = g.node(self).grad;
      Mat& ga = g.grad_of(a);
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const double dotp = d.col(c).dot(y.col(c));
        ga.col(c).array() += y.col(c).array() * (d.col(c).array() - dotp);
      }
    });
  }

  // Mean cross-entropy of column-wise logits against integer targets,
  // in nats. Sequential loops keep the arithmetic order reproducible.
  Var cross_entropy_cols(Var logits, std::shared_ptr<const std::vector<int>> targets) {
    check(logits);
    const Mat& l = val(logits);
    if (static_cast<Eigen::Index>(targets->size()) != l.cols()) {
      throw ShapeError("cross_entropy_cols: target count != columns");
    }
    const Eigen::Index J = l.rows(), N = l.cols();
    double total = 0.0;
    for (Eigen::Index n = 0; n < N; ++n) {
      const int t = (*targets)[n];
      if (t < 0 || t >= J) throw ShapeError("cross_entropy_cols: target out of range");
      double mx = l(0, n);
      for (Eigen::Index j = 1; j < J; ++j) mx = std::max(mx, l(j, n));
      double se = 0.0;
      for (Eigen::Index j = 0; j < J; ++j) se += std::exp(l(j, n) - mx);
      total += std::log(se) + mx - l(t, n);
    }
    Mat out(1, 1);
    out(0, 0) = total / static_cast<double>(N);
    return push(std::move(out), needs(logits), [logits, targets](Graph& g, int self) {
      if (!g.needs(logits)) return;
      const Mat& l = g.val(logits);
      const double d = g.node(self).grad(0, 0) / static_cast<double>(l.cols());
      Mat& gl = g.grad_of(logits);
      for (Eigen::Index n = 0; n < l.cols(); ++n) {
        const double mx = l.col(n).maxCoeff();
        Eigen::VectorXd p = (l.col(n).array() - mx).exp();
        p /= p.sum();
        gl.col(n) += d * p;
        gl((*targets)[n], n) -= d;
      }
    });
  }

  // Column-wise layer normalization with learnable gain/shift (rows x 1).
  Var layer_norm_cols(Var a, Var gamma, Var beta, double eps = 1e-5) {
    check(a), check(gamma), check(beta);
    const Mat& x = val(a);
    const Eigen::Index R = x.rows();
    if (val(gamma).rows() != R || val(beta).rows() != R || val(gamma).cols() != 1 ||
        val(beta).cols() != 1) {
      throw ShapeError("layer_norm_cols: gamma/beta must be (rows x 1)");
    }
    Mat xhat(x.rows(), x.cols());
    Eigen::VectorXd inv_std(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double mu = x.col(c).mean();
      const double var = (x.col(c).array() - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(c) = is;
      xhat.col(c) = (x.col(c).array() - mu) * is;
    }
    Mat out = xhat;
    out.array().colwise() *= val(gamma).col(0).array();
    out.colwise() += Eigen::VectorXd(val(beta).col(0));
    auto xhat_p = std::make_shared<Mat>(std::move(xhat));
    auto inv_std_p = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
    return push(std::move(out), needs(a) || needs(gamma) || needs(beta),
                [a, gamma, beta, xhat_p, inv_std_p](Graph& g, int self) {
                  const Mat& d = g.node(self).grad;
                  const Mat& xh = *xhat_p;
                  if (g.needs(gamma)) {
                    g.grad_of(gamma).col(0) += d.cwiseProduct(xh).rowwise().sum();
                  }
                  if (g.needs(beta)) g.grad_of(beta).col(0) += d.rowwise().sum();
                  if (!g.needs(a)) return;
                  const Eigen::ArrayXd gam = g.val(gamma).col(0).array();
                  Mat& ga = g.grad_of(a);
                  const double R = static_cast<double>(xh.rows());
                  for (Eigen::Index c = 0; c < xh.cols(); ++c) {
                    const Eigen::ArrayXd dy = d.col(c).array() * gam;
                    const double m1 = dy.mean();
                    const double m2 = (dy * xh.col(c).array()).mean();
                    ga.col(c).array() +=
                        (*inv_std_p)(c) * (dy - m1 - xh.col(c).array() * m2);
                    (void)R;
                  }
                });
  }

  // ------------------------------------------------------------- backward

  void backward(Var root) {
    check(root);
    if (val(root).size() != 1) throw ShapeError("backward: root must be scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    touch_grad(root.index());
    nodes_[root.index()].grad(0, 0) = 1.0;
    for (int i = root.index(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
      n.back(*this, i);
    }
    for (const auto& [idx, param] : param_leaves_) {
      if (nodes_[idx].grad.size() != 0) {
        if (param->grad.size() == 0) param->zero_grad();
        param->grad += nodes_[idx].grad;
      }
    }
  }

  const Mat& val(Var v) const { return nodes_[v.index()].value; }
  Mat& grad_of(Var v) { return touch_grad(v.index()); }
  const Mat& grad_view(Var v) const { return nodes_[v.index()].grad; }
  bool needs(Var v) const { return nodes_[v.index()].needs_grad; }
  Node& node(int i) { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_leaves_.clear();
  }

 private:
  Var push(Mat value, bool needs_grad, std::function<void(Graph&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Mat& touch_grad(int idx) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var concat(const std::vector<Var>& parts, bool by_rows) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    Eigen::Index total = 0;
    bool any = false;
    for (Var p : parts) {
      check(p);
      total += by_rows ? val(p).rows() : val(p).cols();
      any = any || needs(p);
    }
    const Eigen::Index other = by_rows ? val(parts[0]).cols() : val(parts[0]).rows();
    Mat out(by_rows ? total : other, by_rows ? other : total);
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Mat& v = val(p);
      if ((by_rows ? v.cols() : v.rows()) != other) {
        throw ShapeError("concat: mismatched shapes");
      }
      if (by_rows) {
        out.middleRows(at, v.rows()) = v;
        at += v.rows();
      } else {
        out.middleCols(at, v.cols()) = v;
        at += v.cols();
      }
    }
    auto parts_copy = std::make_shared<std::vector<Var>>(parts);
    return push(std::move(out), any, [parts_copy, by_rows](Graph& g, int self) {
      Eigen::Index at = 0;
      for (Var p : *parts_copy) {
        const Eigen::Index n = by_rows ? g.val(p).rows() : g.val(p).cols();
        if (g.needs(p)) {
          if (by_rows) {
            g.grad_of(p) += g.node(self).grad.middleRows(at, n);
          } else {
            g.grad_of(p) += g.node(self).grad.middleCols(at, n);
          }
        }
        at += n;
      }
    });
  }

  void check(Var v) const {
    if (!v.valid() || v.graph() != this) throw ShapeError("Var does not belong to graph");
  }
  void same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols()) {
      throw ShapeError(std::string(op) + ": shape mismatch");
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> param_leaves_;
};

inline const Mat& Var::val() const { return g_->val(*this); }

}  // namespace unitsep::nn
