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

// Central-difference gradient checks for autograd graphs (double precision).

#ifndef VQAU_TESTS_GRADCHECK_HPP_
#define VQAU_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vqau/autograd.hpp"
#include "vqau/objectives.hpp"
#include "vqau/quantize.hpp"

namespace vqau::testing {

using Vd = ag::Value<double>;
using Fn = std::function<Vd(const std::vector<Vd>&)>;

/// |a - b| / max(|a|, |b|, floor). The floor keeps vanishing gradients from
/// turning roundoff into large relative errors.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Matd random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matd m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal01(rng);
  return m;
}

/// Reduces any output to a scalar through a fixed random projection.
inline Vd project(const Vd& out, Rng& rng) {
  return ag::sum(ag::mul(out, Vd::constant(random_matrix(out.rows(), out.cols(), rng))));
}

/// Max relative error between backprop and central differences over every
/// input element.
inline double max_grad_error(std::vector<Vd> inputs, const Fn& f, double h = 1e-6) {
  for (auto& x : inputs) x.zero_grad();
  const Vd loss = f(inputs);
  loss.backward();
  std::vector<Matd> analytic;
  for (const auto& x : inputs) analytic.push_back(x.grad());
  double worst = 0.0;
  ag::NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& m = inputs[k].mutable_data();
    for (Index i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double up = f(inputs).item();
      m.data()[i] = keep - h;
      const double down = f(inputs).item();
      m.data()[i] = keep;
      worst = std::max(worst, rel_error(analytic[k].data()[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

struct OpCase {
  std::string name;
  std::function<double(Rng&)> run;  // one randomized trial, returns max error
};

/// One case per differentiable op and loss; every trial draws fresh shapes
/// and values.
inline std::vector<OpCase> op_cases() {
  using ag::SeqLayout;
  std::vector<OpCase> cases;
  auto dims = [](Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(uniform_index(rng, hi - lo + 1)); };
  auto unary = [&](const std::string& name, std::function<Vd(const Vd&)> op, double scale = 1.0) {
    cases.push_back({name, [op, dims, scale](Rng& rng) {
                       const Index r = dims(rng, 1, 4), c = dims(rng, 1, 5);
                       Vd a = Vd::parameter(random_matrix(r, c, rng, scale));
                       Rng proj = rng;
                       return max_grad_error({a}, [&](const std::vector<Vd>& in) {
                         Rng p = proj;
                         return project(op(in[0]), p);
                       });
                     }});
  };
  auto binary = [&](const std::string& name, std::function<Vd(const Vd&, const Vd&)> op) {
    cases.push_back({name, [op, dims](Rng& rng) {
                       const Index r = dims(rng, 1, 4), c = dims(rng, 1, 5);
                       Vd a = Vd::parameter(random_matrix(r, c, rng)), b = Vd::parameter(random_matrix(r, c, rng));
                       Rng proj = rng;
                       return max_grad_error({a, b}, [&](const std::vector<Vd>& in) {
                         Rng p = proj;
                         return project(op(in[0], in[1]), p);
                       });
                     }});
  };
  binary("add", [](const Vd& a, const Vd& b) { return ag::add(a, b); });
  binary("sub", [](const Vd& a, const Vd& b) { return ag::sub(a, b); });
  binary("mul", [](const Vd& a, const Vd& b) { return ag::mul(a, b); });
  binary("mse", [](const Vd& a, const Vd& b) { return ag::mse(a, b); });
  binary("mean_row_sq_dist", [](const Vd& a, const Vd& b) { return ag::mean_row_sq_dist(a, b); });
  unary("scale", [](const Vd& a) { return ag::scale(a, -1.7); });
  unary("sum", [](const Vd& a) { return ag::sum(a); });
  unary("mean", [](const Vd& a) { return ag::mean(a); });
  unary("relu", [](const Vd& a) { return ag::relu(a); });
  unary("sigmoid", [](const Vd& a) { return ag::sigmoid(a); }, 2.0);
  unary("tanh", [](const Vd& a) { return ag::tanh(a); }, 2.0);
  unary("gather_rows", [](const Vd& a) {
    std::vector<Index> idx;
    for (Index r = 0; r < a.rows(); ++r) idx.push_back(a.rows() - 1 - r);
    idx.push_back(-1);
    idx.push_back(0);
    return ag::gather_rows(a, idx);
  });

  cases.push_back({"matmul", [dims](Rng& rng) {
                     const Index n = dims(rng, 1, 4), k = dims(rng, 1, 4), m = dims(rng, 1, 4);
                     Vd a = Vd::parameter(random_matrix(n, k, rng)), b = Vd::parameter(random_matrix(k, m, rng));
                     Rng proj = rng;
                     return max_grad_error({a, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::matmul(in[0], in[1]), p);
                     });
                   }});
  cases.push_back({"linear", [dims](Rng& rng) {
                     const Index n = dims(rng, 1, 4), k = dims(rng, 1, 4), m = dims(rng, 1, 4);
                     Vd x = Vd::parameter(random_matrix(n, k, rng)), w = Vd::parameter(random_matrix(k, m, rng));
                     Vd b = Vd::parameter(random_matrix(1, m, rng));
                     Rng proj = rng;
                     return max_grad_error({x, w, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::linear(in[0], in[1], in[2]), p);
                     });
                   }});
  cases.push_back({"concat_cols", [dims](Rng& rng) {
                     const Index n = dims(rng, 1, 4);
                     Vd a = Vd::parameter(random_matrix(n, dims(rng, 1, 3), rng));
                     Vd b = Vd::parameter(random_matrix(n, dims(rng, 1, 3), rng));
                     Rng proj = rng;
                     return max_grad_error({a, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::concat_cols<double>({in[0], in[1], in[0]}), p);
                     });
                   }});
  cases.push_back({"embedding", [dims](Rng& rng) {
                     Vd table = Vd::parameter(random_matrix(dims(rng, 2, 5), dims(rng, 1, 4), rng));
                     std::vector<Index> ids;
                     for (int i = 0; i < 6; ++i) ids.push_back(static_cast<Index>(uniform_index(rng, table.rows())));
                     Rng proj = rng;
                     return max_grad_error({table}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::embedding(in[0], ids), p);
                     });
                   }});
  cases.push_back({"conv1d", [dims](Rng& rng) {
                     const SeqLayout l{dims(rng, 1, 3), dims(rng, 3, 7)};
                     const Index cin = dims(rng, 1, 3), cout = dims(rng, 1, 3), k = dims(rng, 1, 4);
                     const Index stride = dims(rng, 1, 2), pad = dims(rng, 0, k - 1);
                     const Index out_steps = (l.steps + stride - 1) / stride;
                     Vd x = Vd::parameter(random_matrix(l.rows(), cin, rng));
                     Vd w = Vd::parameter(random_matrix(k * cin, cout, rng)), b = Vd::parameter(random_matrix(1, cout, rng));
                     Rng proj = rng;
                     return max_grad_error({x, w, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::conv1d(in[0], l, in[1], in[2], k, stride, pad, out_steps), p);
                     });
                   }});
  cases.push_back({"layer_norm", [dims](Rng& rng) {
                     const Index n = dims(rng, 1, 4), c = dims(rng, 2, 6);
                     Vd x = Vd::parameter(random_matrix(n, c, rng)), g = Vd::parameter(random_matrix(1, c, rng));
                     Vd b = Vd::parameter(random_matrix(1, c, rng));
                     Rng proj = rng;
                     return max_grad_error({x, g, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::layer_norm(in[0], in[1], in[2]), p);
                     });
                   }});
  cases.push_back({"batch_norm", [dims](Rng& rng) {
                     const Index n = dims(rng, 2, 6), c = dims(rng, 1, 4);
                     Vd x = Vd::parameter(random_matrix(n, c, rng)), g = Vd::parameter(random_matrix(1, c, rng));
                     Vd b = Vd::parameter(random_matrix(1, c, rng));
                     Rng proj = rng;
                     return max_grad_error({x, g, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       ag::BatchNormStats<double> stats(c);
                       return project(ag::batch_norm(in[0], in[1], in[2], stats, true), p);
                     });
                   }});
  cases.push_back({"batch_norm_eval", [dims](Rng& rng) {
                     const Index n = dims(rng, 1, 4), c = dims(rng, 1, 4);
                     Vd x = Vd::parameter(random_matrix(n, c, rng)), g = Vd::parameter(random_matrix(1, c, rng));
                     Vd b = Vd::parameter(random_matrix(1, c, rng));
                     ag::BatchNormStats<double> stats(c);
                     stats.running_mean = random_matrix(1, c, rng);
                     stats.running_var = random_matrix(1, c, rng).array().abs() + 0.5;
                     Rng proj = rng;
                     return max_grad_error({x, g, b}, [&](const std::vector<Vd>& in) {
                       Rng p = proj;
                       return project(ag::batch_norm_eval(in[0], in[1], in[2], stats), p);
                     });
                   }});
  auto gru_weights = [](Index in, Index h, Rng& rng) {
    ag::GruWeights<double> w;
    w.wx = Vd::parameter(random_matrix(in, 3 * h, rng, 0.5));
    w.wh = Vd::parameter(random_matrix(h, 3 * h, rng, 0.5));
    w.bx = Vd::parameter(random_matrix(1, 3 * h, rng, 0.5));
    w.bh = Vd::parameter(random_matrix(1, 3 * h, rng, 0.5));
    return w;
  };
  cases.push_back({"gru_cell", [dims, gru_weights](Rng& rng) {
                     const Index b = dims(rng, 1, 3), in = dims(rng, 1, 3), h = dims(rng, 1, 3);
                     auto w = gru_weights(in, h, rng);
                     Vd x = Vd::parameter(random_matrix(b, in, rng)), h0 = Vd::parameter(random_matrix(b, h, rng));
                     Rng proj = rng;
                     return max_grad_error({x, h0, w.wx, w.wh, w.bx, w.bh}, [&](const std::vector<Vd>& v) {
                       Rng p = proj;
                       return project(ag::gru_cell(v[0], v[1], ag::GruWeights<double>{v[2], v[3], v[4], v[5]}), p);
                     });
                   }});
  cases.push_back({"gru_sequence", [dims, gru_weights](Rng& rng) {
                     const SeqLayout l{dims(rng, 1, 3), dims(rng, 1, 5)};
                     const Index in = dims(rng, 1, 3), h = dims(rng, 1, 3);
                     auto w = gru_weights(in, h, rng);
                     Vd x = Vd::parameter(random_matrix(l.rows(), in, rng));
                     Rng proj = rng;
                     return max_grad_error({x, w.wx, w.wh, w.bx, w.bh}, [&](const std::vector<Vd>& v) {
                       Rng p = proj;
                       return project(ag::gru_sequence(v[0], l, ag::GruWeights<double>{v[1], v[2], v[3], v[4]}), p);
                     });
                   }});
  cases.push_back({"softmax_cross_entropy", [dims](Rng& rng) {
                     const Index n = dims(rng, 1, 5), k = dims(rng, 2, 6);
                     std::vector<int> labels;
                     for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(uniform_index(rng, k)));
                     Vd z = Vd::parameter(random_matrix(n, k, rng, 2.0));
                     return max_grad_error({z}, [&](const std::vector<Vd>& v) {
                       return ag::softmax_cross_entropy(v[0], labels);
                     });
                   }});
  cases.push_back({"mean_pool", [dims](Rng& rng) {
                     const Index blocks = dims(rng, 1, 3);
                     std::vector<Index> offsets{0};
                     for (Index i = 0; i < blocks; ++i) offsets.push_back(offsets.back() + dims(rng, 1, 4));
                     Vd x = Vd::parameter(random_matrix(offsets.back(), dims(rng, 1, 4), rng));
                     Rng proj = rng;
                     return max_grad_error({x}, [&](const std::vector<Vd>& v) {
                       Rng p = proj;
                       return project(ag::mean_pool(v[0], offsets), p);
                     });
                   }});
  cases.push_back({"infonce", [dims](Rng& rng) {
                     obj::CpcConfig cfg;
                     cfg.horizon = static_cast<int>(dims(rng, 1, 3));
                     cfg.n_negatives = static_cast<int>(dims(rng, 1, 4));
                     cfg.group_size = 2;
                     const SeqLayout l{2, cfg.horizon + dims(rng, 2, 5)};
                     const Index d = dims(rng, 1, 4), dc = dims(rng, 1, 4);
                     std::vector<obj::SegmentInfo> seg{{0, 0}, {0, 1}};
                     const auto neg = obj::sample_negatives(l, seg, cfg, rng);
                     Vd z = Vd::parameter(random_matrix(l.rows(), d, rng));
                     Vd c = Vd::parameter(random_matrix(l.rows(), dc, rng));
                     Vd w = Vd::parameter(random_matrix(dc, cfg.horizon * d, rng));
                     return max_grad_error({z, c, w}, [&](const std::vector<Vd>& v) {
                       return obj::infonce_loss(v[0], v[1], v[2], neg).loss;
                     });
                   }});
  cases.push_back({"vqvae_loss", [dims](Rng& rng) {
                     const Index n = dims(rng, 2, 6), d = dims(rng, 1, 4), k = dims(rng, 2, 5);
                     vq::Codebook<double> book(k, d);
                     book.codes = random_matrix(k, d, rng);
                     Vd recon = Vd::parameter(random_matrix(n, 3, rng));
                     Vd target = Vd::constant(random_matrix(n, 3, rng));
                     Vd z = Vd::parameter(random_matrix(n, d, rng));
                     return max_grad_error({recon, z}, [&](const std::vector<Vd>& v) {
                       const auto b = vq::bottleneck(v[1], book);
                       return obj::vqvae_loss(v[0], target, b.commitment, 0.25);
                     });
                   }});
  return cases;
}

}  // namespace vqau::testing

#endif  // VQAU_TESTS_GRADCHECK_HPP_
