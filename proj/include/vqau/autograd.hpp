// Copyright 2026 The vqau Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode differentiation over 2-D matrices.
//
// A Value owns a node in a dynamically built graph. Every op computes its
// output eagerly and records a closure that pushes the output gradient into
// its parents. There is no broadcasting: every op states its shape contract
// and throws ShapeError otherwise.
//
// Sequence data is laid out as (batch * steps) x features with row
// b * steps + t; SeqLayout carries the (batch, steps) split.

#ifndef VQAU_AUTOGRAD_HPP_
#define VQAU_AUTOGRAD_HPP_

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vqau/common.hpp"

namespace vqau::ag {

/// When set, every op checks its output for NaN/Inf and throws NumericError.
inline std::atomic<bool>& check_finite_flag() {
#ifdef NDEBUG
  static std::atomic<bool> flag{false};
#else
  static std::atomic<bool> flag{true};
#endif
  return flag;
}

inline void set_check_finite(bool on) { check_finite_flag() = on; }

inline bool& grad_mode_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

/// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode_disabled()) { grad_mode_disabled() = true; }
  ~NoGradGuard() { grad_mode_disabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialized on first use.
  Mat<T>& g() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Mat<T>::Zero(value.rows(), value.cols());
    }
    return grad;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

template <typename T>
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Value constant(Mat<T> m) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(m);
    return Value(std::move(n));
  }

  static Value parameter(Mat<T> m) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(m);
    n->requires_grad = true;
    return Value(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Mat<T>& data() const { return node_->value; }
  Mat<T>& mutable_data() { return node_->value; }
  /// Gradient accumulated by the last backward(); zeros if none arrived.
  const Mat<T>& grad() const { return node_->g(); }
  Mat<T>& mutable_grad() { return node_->g(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const {
    require<ShapeError>(rows() == 1 && cols() == 1, "item() on a ", rows(), "x", cols(), " value");
    return node_->value(0, 0);
  }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  void zero_grad() { node_->grad.resize(0, 0); }

  /// Back-propagates from a 1x1 value, accumulating into every ancestor that
  /// requires a gradient.
  void backward() const {
    require<ShapeError>(rows() == 1 && cols() == 1, "backward() needs a scalar, got ", rows(), "x",
                        cols());
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node<T>* p = n->parents[i++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->g().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->grad.size() > 0) n->backward(*n);
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op node. `backward` receives the node (with .grad filled) and
/// must accumulate into the parents that require gradients.
template <typename T>
Value<T> make_op(const char* name, Mat<T> value, std::vector<Value<T>> parents,
                 std::function<void(Node<T>&)> backward) {
  if (check_finite_flag() && !value.allFinite()) {
    throw NumericError(str_cat("non-finite output from op '", name, "'"));
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = name;
  if (grad_mode_disabled()) return Value<T>(std::move(n));
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.shared());
    n->backward = std::move(backward);
  }
  return Value<T>(std::move(n));
}

struct SeqLayout {
  Index batch = 1;
  Index steps = 0;
  Index rows() const { return batch * steps; }
  bool operator==(const SeqLayout&) const = default;
};

namespace detail {

template <typename T>
void same_shape(const Value<T>& a, const Value<T>& b, const char* op) {
  require<ShapeError>(a.rows() == b.rows() && a.cols() == b.cols(), op, ": shape mismatch ",
                      a.rows(), "x", a.cols(), " vs ", b.rows(), "x", b.cols());
}

template <typename T>
bool wants(Node<T>& n, std::size_t i) {
  return n.parent(i).requires_grad;
}

}  // namespace detail

// --- elementwise and reductions ---------------------------------------------

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  detail::same_shape(a, b, "add");
  return make_op<T>("add", a.data() + b.data(), {a, b}, [](Node<T>& n) {
    if (detail::wants(n, 0)) n.parent(0).g() += n.grad;
    if (detail::wants(n, 1)) n.parent(1).g() += n.grad;
  });
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  detail::same_shape(a, b, "sub");
  return make_op<T>("sub", a.data() - b.data(), {a, b}, [](Node<T>& n) {
    if (detail::wants(n, 0)) n.parent(0).g() += n.grad;
    if (detail::wants(n, 1)) n.parent(1).g() -= n.grad;
  });
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  detail::same_shape(a, b, "mul");
  return make_op<T>("mul", a.data().cwiseProduct(b.data()), {a, b}, [](Node<T>& n) {
    if (detail::wants(n, 0)) n.parent(0).g() += n.grad.cwiseProduct(n.parent(1).value);
    if (detail::wants(n, 1)) n.parent(1).g() += n.grad.cwiseProduct(n.parent(0).value);
  });
}

template <typename T>
Value<T> scale(const Value<T>& a, T s) {
  return make_op<T>("scale", a.data() * s, {a}, [s](Node<T>& n) { n.parent(0).g() += s * n.grad; });
}

template <typename T>
Value<T> sum(const Value<T>& a) {
  Mat<T> out(1, 1);
  out(0, 0) = a.data().sum();
  return make_op<T>("sum", std::move(out), {a},
                    [](Node<T>& n) { n.parent(0).g().array() += n.grad(0, 0); });
}

template <typename T>
Value<T> mean(const Value<T>& a) {
  require<ShapeError>(a.data().size() > 0, "mean: empty input");
  Mat<T> out(1, 1);
  out(0, 0) = a.data().mean();
  const T inv = T(1) / static_cast<T>(a.data().size());
  return make_op<T>("mean", std::move(out), {a},
                    [inv](Node<T>& n) { n.parent(0).g().array() += n.grad(0, 0) * inv; });
}

template <typename T>
Value<T> relu(const Value<T>& a) {
  return make_op<T>("relu", a.data().cwiseMax(T(0)), {a}, [](Node<T>& n) {
    n.parent(0).g().array() += (n.parent(0).value.array() > T(0)).select(n.grad.array(), T(0));
  });
}

template <typename T>
Value<T> sigmoid(const Value<T>& a) {
  Mat<T> y = (T(1) / (T(1) + (-a.data().array()).exp())).matrix();
  return make_op<T>("sigmoid", std::move(y), {a}, [](Node<T>& n) {
    n.parent(0).g().array() += n.grad.array() * n.value.array() * (T(1) - n.value.array());
  });
}

template <typename T>
Value<T> tanh(const Value<T>& a) {
  Mat<T> y = a.data().array().tanh().matrix();
  return make_op<T>("tanh", std::move(y), {a}, [](Node<T>& n) {
    n.parent(0).g().array() += n.grad.array() * (T(1) - n.value.array().square());
  });
}

/// Detached copy: the value passes, the gradient does not.
template <typename T>
Value<T> stop_gradient(const Value<T>& a) {
  return Value<T>::constant(a.data());
}

/// Forward value is `replacement`; backward is the identity onto `a`.
template <typename T>
Value<T> straight_through(const Value<T>& a, Mat<T> replacement) {
  require<ShapeError>(replacement.rows() == a.rows() && replacement.cols() == a.cols(),
                      "straight_through: shape mismatch");
  return make_op<T>("straight_through", std::move(replacement), {a},
                    [](Node<T>& n) { n.parent(0).g() += n.grad; });
}

// --- linear algebra ----------------------------------------------------------

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
  require<ShapeError>(a.cols() == b.rows(), "matmul: inner dims ", a.cols(), " vs ", b.rows());
  Mat<T> y = a.data() * b.data();
  return make_op<T>("matmul", std::move(y), {a, b}, [](Node<T>& n) {
    if (detail::wants(n, 0)) n.parent(0).g().noalias() += n.grad * n.parent(1).value.transpose();
    if (detail::wants(n, 1)) n.parent(1).g().noalias() += n.parent(0).value.transpose() * n.grad;
  });
}

/// x W + b, with W: in x out and b: 1 x out.
template <typename T>
Value<T> linear(const Value<T>& x, const Value<T>& w, const Value<T>& b) {
  require<ShapeError>(x.cols() == w.rows(), "linear: input width ", x.cols(), " vs weight rows ",
                      w.rows());
  require<ShapeError>(b.rows() == 1 && b.cols() == w.cols(), "linear: bias must be 1x", w.cols());
  Mat<T> y = x.data() * w.data();
  y.rowwise() += b.data().row(0);
  return make_op<T>("linear", std::move(y), {x, w, b}, [](Node<T>& n) {
    if (detail::wants(n, 0)) n.parent(0).g().noalias() += n.grad * n.parent(1).value.transpose();
    if (detail::wants(n, 1)) n.parent(1).g().noalias() += n.parent(0).value.transpose() * n.grad;
    if (detail::wants(n, 2)) n.parent(2).g() += n.grad.colwise().sum();
  });
}

template <typename T>
Value<T> linear(const Value<T>& x, const Value<T>& w) {
  return matmul(x, w);
}

template <typename T>
Value<T> concat_cols(const std::vector<Value<T>>& parts) {
  require<ShapeError>(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    require<ShapeError>(p.rows() == parts[0].rows(), "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<T> y(parts[0].rows(), cols);
  std::vector<Index> offsets;
  Index c = 0;
  for (const auto& p : parts) {
    offsets.push_back(c);
    y.middleCols(c, p.cols()) = p.data();
    c += p.cols();
  }
  return make_op<T>("concat_cols", std::move(y), parts, [offsets](Node<T>& n) {
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (detail::wants(n, i)) {
        auto& p = n.parent(i);
        p.g() += n.grad.middleCols(offsets[i], p.value.cols());
      }
    }
  });
}

/// Row gather; index -1 yields a zero row. Backward scatter-adds.
template <typename T>
Value<T> gather_rows(const Value<T>& a, std::vector<Index> idx) {
  Mat<T> y(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Index src = idx[r];
    require<ShapeError>(src >= -1 && src < a.rows(), "gather_rows: index ", src, " out of range");
    if (src < 0) {
      y.row(static_cast<Index>(r)).setZero();
    } else {
      y.row(static_cast<Index>(r)) = a.data().row(src);
    }
  }
  return make_op<T>("gather_rows", std::move(y), {a}, [idx = std::move(idx)](Node<T>& n) {
    auto& g = n.parent(0).g();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] >= 0) g.row(idx[r]) += n.grad.row(static_cast<Index>(r));
    }
  });
}

/// Embedding lookup is a row gather on the table.
template <typename T>
Value<T> embedding(const Value<T>& table, std::vector<Index> ids) {
  return gather_rows(table, std::move(ids));
}

// --- convolution -------------------------------------------------------------

/// Output length of a strided 1-D convolution.
inline Index conv_out_len(Index steps, Index kernel, Index stride, Index pad_left, Index pad_right) {
  return (steps + pad_left + pad_right - kernel) / stride + 1;
}

/// Unfolds kernel-sized windows of each sequence into rows (tap-major
/// columns: tap * C + channel). Out-of-range taps read zeros.
template <typename T>
Value<T> im2col(const Value<T>& x, SeqLayout layout, Index kernel, Index stride, Index pad_left,
                Index out_steps) {
  require<ShapeError>(x.rows() == layout.rows(), "im2col: ", x.rows(), " rows vs layout ",
                      layout.batch, "x", layout.steps);
  require<ShapeError>(kernel >= 1 && stride >= 1 && out_steps >= 1, "im2col: bad geometry");
  const Index c = x.cols();
  Mat<T> y = Mat<T>::Zero(layout.batch * out_steps, kernel * c);
  for (Index b = 0; b < layout.batch; ++b) {
    for (Index t = 0; t < out_steps; ++t) {
      for (Index k = 0; k < kernel; ++k) {
        const Index s = t * stride - pad_left + k;
        if (s < 0 || s >= layout.steps) continue;
        y.row(b * out_steps + t).segment(k * c, c) = x.data().row(b * layout.steps + s);
      }
    }
  }
  return make_op<T>("im2col", std::move(y), {x},
                    [layout, kernel, stride, pad_left, out_steps, c](Node<T>& n) {
                      auto& g = n.parent(0).g();
                      for (Index b = 0; b < layout.batch; ++b) {
                        for (Index t = 0; t < out_steps; ++t) {
                          for (Index k = 0; k < kernel; ++k) {
                            const Index s = t * stride - pad_left + k;
                            if (s < 0 || s >= layout.steps) continue;
                            g.row(b * layout.steps + s) +=
                                n.grad.row(b * out_steps + t).segment(k * c, c);
                          }
                        }
                      }
                    });
}

/// 1-D convolution over time as im2col followed by a linear map.
/// `w` is (kernel * C_in) x C_out.
template <typename T>
Value<T> conv1d(const Value<T>& x, SeqLayout layout, const Value<T>& w, const Value<T>& b,
                Index kernel, Index stride, Index pad_left, Index out_steps) {
  return linear(im2col(x, layout, kernel, stride, pad_left, out_steps), w, b);
}

// --- normalization -----------------------------------------------------------

/// Row-wise layer normalization with learned gain and bias (1 x C each).
template <typename T>
Value<T> layer_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta, T eps = T(1e-5)) {
  const Index c = x.cols();
  require<ShapeError>(gamma.rows() == 1 && gamma.cols() == c && beta.rows() == 1 && beta.cols() == c,
                      "layer_norm: gain/bias must be 1x", c);
  const ColVec<T> mu = x.data().rowwise().mean();
  Mat<T> xhat = x.data().colwise() - mu;
  const ColVec<T> inv_std =
      ((xhat.array().square().rowwise().sum() / static_cast<T>(c)) + eps).rsqrt().matrix();
  xhat.array().colwise() *= inv_std.array();
  Mat<T> y = xhat.array().rowwise() * gamma.data().row(0).array();
  y.rowwise() += beta.data().row(0);
  return make_op<T>("layer_norm", std::move(y), {x, gamma, beta},
                    [xhat = std::move(xhat), inv_std](Node<T>& n) {
                      if (detail::wants(n, 1)) {
                        n.parent(1).g() += n.grad.cwiseProduct(xhat).colwise().sum();
                      }
                      if (detail::wants(n, 2)) n.parent(2).g() += n.grad.colwise().sum();
                      if (detail::wants(n, 0)) {
                        Mat<T> gx = n.grad.array().rowwise() * n.parent(1).value.row(0).array();
                        const ColVec<T> m1 = gx.rowwise().mean();
                        const ColVec<T> m2 = gx.cwiseProduct(xhat).rowwise().mean();
                        gx.colwise() -= m1;
                        gx -= (xhat.array().colwise() * m2.array()).matrix();
                        gx.array().colwise() *= inv_std.array();
                        n.parent(0).g() += gx;
                      }
                    });
}

template <typename T>
struct BatchNormStats {
  RowVec<T> running_mean;
  RowVec<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormStats(Index c = 0)
      : running_mean(RowVec<T>::Zero(c)), running_var(RowVec<T>::Ones(c)) {}
};

/// Inference-mode batch normalization: a fixed affine map built from the
/// running statistics.
template <typename T>
Value<T> batch_norm_eval(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                         const BatchNormStats<T>& stats) {
  const Index c = x.cols();
  require<ShapeError>(gamma.cols() == c && beta.cols() == c && stats.running_mean.size() == c,
                      "batch_norm: parameter width mismatch");
  const RowVec<T> inv_std = (stats.running_var.array() + stats.eps).rsqrt().matrix();
  const RowVec<T> a = gamma.data().row(0).cwiseProduct(inv_std);
  Mat<T> xhat = (x.data().rowwise() - stats.running_mean).array().rowwise() * inv_std.array();
  Mat<T> y = xhat.array().rowwise() * gamma.data().row(0).array();
  y.rowwise() += beta.data().row(0);
  return make_op<T>("batch_norm_eval", std::move(y), {x, gamma, beta},
                    [a, xhat = std::move(xhat)](Node<T>& n) {
                      if (detail::wants(n, 0)) n.parent(0).g().array() += n.grad.array().rowwise() * a.array();
                      if (detail::wants(n, 1)) n.parent(1).g() += n.grad.cwiseProduct(xhat).colwise().sum();
                      if (detail::wants(n, 2)) n.parent(2).g() += n.grad.colwise().sum();
                    });
}

/// Column-wise batch normalization over rows. In training mode it
/// normalizes with batch statistics and updates the running estimates
/// (unbiased variance); otherwise it defers to batch_norm_eval.
template <typename T>
Value<T> batch_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    BatchNormStats<T>& stats, bool training) {
  if (!training) return batch_norm_eval(x, gamma, beta, stats);
  const Index c = x.cols();
  const Index m = x.rows();
  require<ShapeError>(gamma.cols() == c && beta.cols() == c && stats.running_mean.size() == c,
                      "batch_norm: parameter width mismatch");
  require<ShapeError>(m >= 2, "batch_norm: training needs at least 2 rows");
  const RowVec<T> mu = x.data().colwise().mean();
  Mat<T> xhat = x.data().rowwise() - mu;
  const RowVec<T> var = xhat.array().square().colwise().sum() / static_cast<T>(m);
  const RowVec<T> inv_std = (var.array() + stats.eps).rsqrt().matrix();
  xhat.array().rowwise() *= inv_std.array();
  stats.running_mean = (T(1) - stats.momentum) * stats.running_mean + stats.momentum * mu;
  stats.running_var = (T(1) - stats.momentum) * stats.running_var +
                      stats.momentum * var * (static_cast<T>(m) / static_cast<T>(m - 1));
  Mat<T> y = xhat.array().rowwise() * gamma.data().row(0).array();
  y.rowwise() += beta.data().row(0);
  return make_op<T>("batch_norm", std::move(y), {x, gamma, beta},
                    [xhat = std::move(xhat), inv_std](Node<T>& n) {
                      if (detail::wants(n, 1)) n.parent(1).g() += n.grad.cwiseProduct(xhat).colwise().sum();
                      if (detail::wants(n, 2)) n.parent(2).g() += n.grad.colwise().sum();
                      if (detail::wants(n, 0)) {
                        Mat<T> gx = n.grad.array().rowwise() * n.parent(1).value.row(0).array();
                        const RowVec<T> m1 = gx.colwise().mean();
                        const RowVec<T> m2 = gx.cwiseProduct(xhat).colwise().mean();
                        gx.rowwise() -= m1;
                        gx -= (xhat.array().rowwise() * m2.array()).matrix();
                        gx.array().rowwise() *= inv_std.array();
                        n.parent(0).g() += gx;
                      }
                    });
}

// --- recurrent cell ----------------------------------------------------------

/// GRU parameters. Gate blocks are laid out [reset | update | candidate].
///   r  = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
///   u  = sigmoid(x Wx_u + bx_u + h Wh_u + bh_u)
///   n  = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
///   h' = (1 - u) * h + u * n
template <typename T>
struct GruWeights {
  Value<T> wx;  // in x 3H
  Value<T> wh;  // H x 3H
  Value<T> bx;  // 1 x 3H
  Value<T> bh;  // 1 x 3H
  Index hidden() const { return wh.rows(); }
};

namespace detail {

template <typename T>
struct GruStep {
  Mat<T> r, u, n, gh_n, h_prev, h;
};

template <typename T>
GruStep<T> gru_forward_step(const Mat<T>& gx, const Mat<T>& h_prev, const Mat<T>& wh,
                            const RowVec<T>& bh) {
  const Index hd = h_prev.cols();
  Mat<T> gh = h_prev * wh;
  gh.rowwise() += bh;
  GruStep<T> s;
  s.r = (T(1) / (T(1) + (-(gx.leftCols(hd) + gh.leftCols(hd)).array()).exp())).matrix();
  s.u = (T(1) / (T(1) + (-(gx.middleCols(hd, hd) + gh.middleCols(hd, hd)).array()).exp())).matrix();
  s.gh_n = gh.rightCols(hd);
  s.n = (gx.rightCols(hd).array() + s.r.array() * s.gh_n.array()).tanh().matrix();
  s.h = ((T(1) - s.u.array()) * h_prev.array() + s.u.array() * s.n.array()).matrix();
  s.h_prev = h_prev;
  return s;
}

/// Given dL/dh' for one step, returns dL/d(gate pre-activations from x)
/// (B x 3H) and accumulates dL/dh_prev, dWh, dbh.
template <typename T>
Mat<T> gru_backward_step(const GruStep<T>& s, const Mat<T>& dh, const Mat<T>& wh, Mat<T>& dh_prev,
                         Mat<T>* dwh, Mat<T>* dbh) {
  const Index hd = dh.cols();
  const auto dn = (dh.array() * s.u.array()).eval();
  const auto du = (dh.array() * (s.n.array() - s.h_prev.array())).eval();
  const auto dan = (dn * (T(1) - s.n.array().square())).eval();
  const auto dr = (dan * s.gh_n.array()).eval();
  const auto dar = (dr * s.r.array() * (T(1) - s.r.array())).eval();
  const auto dau = (du * s.u.array() * (T(1) - s.u.array())).eval();
  Mat<T> dgx(dh.rows(), 3 * hd);
  dgx.leftCols(hd) = dar.matrix();
  dgx.middleCols(hd, hd) = dau.matrix();
  dgx.rightCols(hd) = dan.matrix();
  Mat<T> dgh = dgx;
  dgh.rightCols(hd) = (dan * s.r.array()).matrix();
  dh_prev = (dh.array() * (T(1) - s.u.array())).matrix();
  dh_prev.noalias() += dgh * wh.transpose();
  if (dwh != nullptr) dwh->noalias() += s.h_prev.transpose() * dgh;
  if (dbh != nullptr) *dbh += dgh.colwise().sum();
  return dgx;
}

}  // namespace detail

/// One GRU step on a batch: x (B x in), h (B x H) -> h' (B x H).
template <typename T>
Value<T> gru_cell(const Value<T>& x, const Value<T>& h, const GruWeights<T>& w) {
  const Index hd = w.hidden();
  require<ShapeError>(x.cols() == w.wx.rows() && w.wx.cols() == 3 * hd && h.cols() == hd &&
                          h.rows() == x.rows(),
                      "gru_cell: shape mismatch");
  Mat<T> gx = x.data() * w.wx.data();
  gx.rowwise() += w.bx.data().row(0);
  auto step = std::make_shared<detail::GruStep<T>>(
      detail::gru_forward_step<T>(gx, h.data(), w.wh.data(), w.bh.data().row(0)));
  Mat<T> out = step->h;
  return make_op<T>("gru_cell", std::move(out), {x, h, w.wx, w.wh, w.bx, w.bh}, [step](Node<T>& n) {
    Mat<T> dh_prev;
    Mat<T> dwh = Mat<T>::Zero(n.parent(3).value.rows(), n.parent(3).value.cols());
    Mat<T> dbh = Mat<T>::Zero(1, n.parent(5).value.cols());
    const Mat<T> dgx =
        detail::gru_backward_step<T>(*step, n.grad, n.parent(3).value, dh_prev, &dwh, &dbh);
    if (detail::wants(n, 0)) n.parent(0).g().noalias() += dgx * n.parent(2).value.transpose();
    if (detail::wants(n, 1)) n.parent(1).g() += dh_prev;
    if (detail::wants(n, 2)) n.parent(2).g().noalias() += n.parent(0).value.transpose() * dgx;
    if (detail::wants(n, 3)) n.parent(3).g() += dwh;
    if (detail::wants(n, 4)) n.parent(4).g() += dgx.colwise().sum();
    if (detail::wants(n, 5)) n.parent(5).g() += dbh;
  });
}

/// Runs a GRU over every sequence of the layout from a zero state and
/// returns all hidden states, (B * T) x H. Backward is full BPTT.
template <typename T>
Value<T> gru_sequence(const Value<T>& x, SeqLayout layout, const GruWeights<T>& w) {
  const Index hd = w.hidden();
  require<ShapeError>(x.rows() == layout.rows(), "gru_sequence: rows vs layout mismatch");
  require<ShapeError>(x.cols() == w.wx.rows() && w.wx.cols() == 3 * hd, "gru_sequence: weight shape");
  Mat<T> gx_all = x.data() * w.wx.data();
  gx_all.rowwise() += w.bx.data().row(0);
  const Index bsz = layout.batch;
  auto steps = std::make_shared<std::vector<detail::GruStep<T>>>();
  steps->reserve(static_cast<std::size_t>(layout.steps));
  Mat<T> out(layout.rows(), hd);
  Mat<T> h = Mat<T>::Zero(bsz, hd);
  Mat<T> gx(bsz, 3 * hd);
  const RowVec<T> bh = w.bh.data().row(0);
  for (Index t = 0; t < layout.steps; ++t) {
    for (Index b = 0; b < bsz; ++b) gx.row(b) = gx_all.row(b * layout.steps + t);
    steps->push_back(detail::gru_forward_step<T>(gx, h, w.wh.data(), bh));
    h = steps->back().h;
    for (Index b = 0; b < bsz; ++b) out.row(b * layout.steps + t) = h.row(b);
  }
  return make_op<T>("gru_sequence", std::move(out), {x, w.wx, w.wh, w.bx, w.bh},
                    [steps, layout, hd](Node<T>& n) {
                      const Index bsz = layout.batch;
                      const Mat<T>& wh = n.parent(2).value;
                      Mat<T> dwh = Mat<T>::Zero(wh.rows(), wh.cols());
                      Mat<T> dbh = Mat<T>::Zero(1, 3 * hd);
                      Mat<T> dgx_all(layout.rows(), 3 * hd);
                      Mat<T> dh = Mat<T>::Zero(bsz, hd);
                      Mat<T> dh_prev;
                      for (Index t = layout.steps - 1; t >= 0; --t) {
                        for (Index b = 0; b < bsz; ++b) dh.row(b) += n.grad.row(b * layout.steps + t);
                        const Mat<T> dgx = detail::gru_backward_step<T>(
                            (*steps)[static_cast<std::size_t>(t)], dh, wh, dh_prev, &dwh, &dbh);
                        for (Index b = 0; b < bsz; ++b) dgx_all.row(b * layout.steps + t) = dgx.row(b);
                        dh = dh_prev;
                      }
                      if (detail::wants(n, 0))
                        n.parent(0).g().noalias() += dgx_all * n.parent(1).value.transpose();
                      if (detail::wants(n, 1))
                        n.parent(1).g().noalias() += n.parent(0).value.transpose() * dgx_all;
                      if (detail::wants(n, 2)) n.parent(2).g() += dwh;
                      if (detail::wants(n, 3)) n.parent(3).g() += dgx_all.colwise().sum();
                      if (detail::wants(n, 4)) n.parent(4).g() += dbh;
                    });
}

// --- losses and pooling ------------------------------------------------------

/// Mean over all elements of (a - b)^2.
template <typename T>
Value<T> mse(const Value<T>& a, const Value<T>& b) {
  detail::same_shape(a, b, "mse");
  require<ShapeError>(a.data().size() > 0, "mse: empty input");
  Mat<T> diff = a.data() - b.data();
  Mat<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<T>(diff.size());
  const T k = T(2) / static_cast<T>(diff.size());
  return make_op<T>("mse", std::move(out), {a, b}, [diff = std::move(diff), k](Node<T>& n) {
    const T g = n.grad(0, 0) * k;
    if (detail::wants(n, 0)) n.parent(0).g() += g * diff;
    if (detail::wants(n, 1)) n.parent(1).g() -= g * diff;
  });
}

/// (1 / rows) * sum over rows of ||a_i - b_i||^2.
template <typename T>
Value<T> mean_row_sq_dist(const Value<T>& a, const Value<T>& b) {
  detail::same_shape(a, b, "mean_row_sq_dist");
  require<ShapeError>(a.rows() > 0, "mean_row_sq_dist: empty input");
  Mat<T> diff = a.data() - b.data();
  Mat<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<T>(diff.rows());
  const T k = T(2) / static_cast<T>(diff.rows());
  return make_op<T>("mean_row_sq_dist", std::move(out), {a, b},
                    [diff = std::move(diff), k](Node<T>& n) {
                      const T g = n.grad(0, 0) * k;
                      if (detail::wants(n, 0)) n.parent(0).g() += g * diff;
                      if (detail::wants(n, 1)) n.parent(1).g() -= g * diff;
                    });
}

/// Mean softmax cross-entropy of row-wise logits against integer labels.
template <typename T>
Value<T> softmax_cross_entropy(const Value<T>& logits, std::vector<int> labels) {
  require<ShapeError>(static_cast<Index>(labels.size()) == logits.rows() && logits.rows() > 0,
                      "softmax_cross_entropy: need one label per row");
  const Index rows = logits.rows();
  Mat<T> prob = logits.data();
  T loss = 0;
  for (Index r = 0; r < rows; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    require<ShapeError>(y >= 0 && y < logits.cols(), "softmax_cross_entropy: label ", y,
                        " out of range");
    const T mx = prob.row(r).maxCoeff();
    prob.row(r).array() = (prob.row(r).array() - mx).exp();
    const T z = prob.row(r).sum();
    prob.row(r) /= z;
    loss += -(logits.data()(r, y) - mx - std::log(z));
  }
  Mat<T> out(1, 1);
  out(0, 0) = loss / static_cast<T>(rows);
  return make_op<T>("softmax_cross_entropy", std::move(out), {logits},
                    [prob = std::move(prob), labels = std::move(labels)](Node<T>& n) {
                      const T g = n.grad(0, 0) / static_cast<T>(prob.rows());
                      Mat<T> d = prob;
                      for (Index r = 0; r < prob.rows(); ++r) d(r, labels[static_cast<std::size_t>(r)]) -= T(1);
                      n.parent(0).g() += g * d;
                    });
}

/// Mean of each row block [offsets[i], offsets[i+1]). Returns (n_blocks x C).
template <typename T>
Value<T> mean_pool(const Value<T>& x, std::vector<Index> offsets) {
  require<ShapeError>(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == x.rows(),
                      "mean_pool: offsets must span all rows");
  const Index blocks = static_cast<Index>(offsets.size()) - 1;
  Mat<T> y(blocks, x.cols());
  for (Index i = 0; i < blocks; ++i) {
    const Index a = offsets[static_cast<std::size_t>(i)], b = offsets[static_cast<std::size_t>(i) + 1];
    require<ShapeError>(b > a, "mean_pool: empty block ", i);
    y.row(i) = x.data().middleRows(a, b - a).colwise().mean();
  }
  return make_op<T>("mean_pool", std::move(y), {x}, [offsets = std::move(offsets)](Node<T>& n) {
    auto& g = n.parent(0).g();
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      const Index a = offsets[i], b = offsets[i + 1];
      const RowVec<T> share = n.grad.row(static_cast<Index>(i)) / static_cast<T>(b - a);
      g.middleRows(a, b - a).rowwise() += share;
    }
  });
}

}  // namespace vqau::ag

#endif  // VQAU_AUTOGRAD_HPP_
