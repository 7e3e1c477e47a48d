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

// Parameter-holding building blocks shared by the models.

#ifndef VQAU_LAYERS_HPP_
#define VQAU_LAYERS_HPP_

#include <string>
#include <vector>

#include "vqau/autograd.hpp"
#include "vqau/checkpoint.hpp"

namespace vqau::models {

using Real = float;
using V = ag::Value<Real>;
using MatR = Mat<Real>;

struct NamedParam {
  std::string name;
  V value;
};

inline MatR uniform_init(Index rows, Index cols, double bound, Rng& rng) {
  MatR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * bound);
  }
  return m;
}

struct Linear {
  V w, b;
  bool has_bias = true;

  Linear() = default;
  Linear(Index in, Index out, Rng& rng, bool bias = true) : has_bias(bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w = V::parameter(uniform_init(in, out, bound, rng));
    if (bias) b = V::parameter(uniform_init(1, out, bound, rng));
  }
  V operator()(const V& x) const { return has_bias ? ag::linear(x, w, b) : ag::matmul(x, w); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".w", w});
    if (has_bias) out.push_back({prefix + ".b", b});
  }
};

/// Conv1d over a SeqLayout: kernel taps are unfolded then mapped linearly.
struct Conv1d {
  Linear map;
  Index kernel = 1, stride = 1, pad_left = 0;

  Conv1d() = default;
  Conv1d(Index in, Index out, Index kernel_, Index stride_, Index pad_left_, Rng& rng, bool bias)
      : map(in * kernel_, out, rng, bias), kernel(kernel_), stride(stride_), pad_left(pad_left_) {}

  /// Output steps: ceil(steps / stride), i.e. "same" padding for stride 1.
  Index out_steps(Index steps) const { return (steps + stride - 1) / stride; }

  V operator()(const V& x, ag::SeqLayout layout) const {
    return map(ag::im2col(x, layout, kernel, stride, pad_left, out_steps(layout.steps)));
  }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    map.collect(prefix, out);
  }
};

struct LayerNorm {
  V gamma, beta;
  LayerNorm() = default;
  explicit LayerNorm(Index c)
      : gamma(V::parameter(MatR::Ones(1, c))), beta(V::parameter(MatR::Zero(1, c))) {}
  V operator()(const V& x) const { return ag::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

struct BatchNorm {
  V gamma, beta;
  ag::BatchNormStats<Real> stats;
  BatchNorm() = default;
  explicit BatchNorm(Index c)
      : gamma(V::parameter(MatR::Ones(1, c))), beta(V::parameter(MatR::Zero(1, c))), stats(c) {}
  V train(const V& x) { return ag::batch_norm(x, gamma, beta, stats, true); }
  V eval(const V& x) const { return ag::batch_norm_eval(x, gamma, beta, stats); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
  void save_buffers(const std::string& prefix, Checkpoint& ck) const {
    ck.tensors[prefix + ".running_mean"] = stats.running_mean;
    ck.tensors[prefix + ".running_var"] = stats.running_var;
  }
  void load_buffers(const std::string& prefix, const Checkpoint& ck) {
    stats.running_mean = ck.tensor(prefix + ".running_mean");
    stats.running_var = ck.tensor(prefix + ".running_var");
  }
};

struct Gru {
  ag::GruWeights<Real> w;
  Gru() = default;
  Gru(Index in, Index hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    w.wx = V::parameter(uniform_init(in, 3 * hidden, bound, rng));
    w.wh = V::parameter(uniform_init(hidden, 3 * hidden, bound, rng));
    w.bx = V::parameter(uniform_init(1, 3 * hidden, bound, rng));
    w.bh = V::parameter(uniform_init(1, 3 * hidden, bound, rng));
  }
  Index hidden() const { return w.hidden(); }
  V operator()(const V& x, ag::SeqLayout layout) const { return ag::gru_sequence(x, layout, w); }

  /// One inference step on plain matrices (no graph).
  MatR step(const MatR& x, const MatR& h) const {
    MatR gx = x * w.wx.data();
    gx.rowwise() += w.bx.data().row(0);
    return ag::detail::gru_forward_step<Real>(gx, h, w.wh.data(), w.bh.data().row(0)).h;
  }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".wx", w.wx});
    out.push_back({prefix + ".wh", w.wh});
    out.push_back({prefix + ".bx", w.bx});
    out.push_back({prefix + ".bh", w.bh});
  }
};

inline void save_params(const std::vector<NamedParam>& params, Checkpoint& ck) {
  for (const auto& p : params) ck.tensors[p.name] = p.value.data();
}

inline void load_params(std::vector<NamedParam>& params, const Checkpoint& ck) {
  for (auto& p : params) {
    const auto& m = ck.tensor(p.name);
    require<FormatError>(m.rows() == p.value.rows() && m.cols() == p.value.cols(),
                         "checkpoint: tensor '", p.name, "' has shape ", m.rows(), "x", m.cols(),
                         ", model expects ", p.value.rows(), "x", p.value.cols());
    p.value.mutable_data() = m;
  }
}

}  // namespace vqau::models

#endif  // VQAU_LAYERS_HPP_
