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

// Training objectives: InfoNCE over future codes with within- or
// across-speaker negatives, and reconstruction + commitment for the
// autoencoder.

#ifndef VQAU_OBJECTIVES_HPP_
#define VQAU_OBJECTIVES_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqau/autograd.hpp"
#include "vqau/common.hpp"

namespace vqau::obj {

enum class SamplingMode { kWithinSpeaker, kAcrossSpeaker };

inline SamplingMode parse_sampling(const std::string& s) {
  if (s == "within") return SamplingMode::kWithinSpeaker;
  if (s == "across") return SamplingMode::kAcrossSpeaker;
  throw UsageError("unknown sampling mode '" + s + "' (expected within or across)");
}

inline std::string to_string(SamplingMode m) {
  return m == SamplingMode::kWithinSpeaker ? "within" : "across";
}

struct CpcConfig {
  int horizon = 6;
  int n_negatives = 17;
  SamplingMode mode = SamplingMode::kWithinSpeaker;
  int group_size = 8;

  void validate() const {
    require(horizon >= 1, "cpc: horizon must be >= 1");
    require(n_negatives >= 1, "cpc: n_negatives must be >= 1");
    require(group_size >= 1, "cpc: group_size must be >= 1");
  }
};

/// Provenance of one segment in a batch.
struct SegmentInfo {
  int speaker = 0;
  int utterance = 0;
};

/// Candidate sets for every (anchor t, step m). Entry e has candidates
/// [e * (n + 1), (e + 1) * (n + 1)); the first one is the positive.
struct NegativeSet {
  ag::SeqLayout layout;
  int horizon = 0;
  int n_negatives = 0;
  std::vector<Index> anchor;     // per entry: row of c_t
  std::vector<int> step;         // per entry: m in [1, horizon]
  std::vector<Index> candidates; // rows of the code matrix
  std::vector<int> speaker;      // per candidate
  std::vector<int> utterance;    // per candidate

  std::size_t size() const { return anchor.size(); }
  int set_size() const { return n_negatives + 1; }
};

namespace detail {

/// Draws `n` distinct values from [0, range) (Floyd's algorithm).
inline void sample_distinct(std::uint64_t range, int n, Rng& rng, std::vector<std::uint64_t>& out) {
  out.clear();
  for (std::uint64_t j = range - static_cast<std::uint64_t>(n); j < range; ++j) {
    const std::uint64_t t = uniform_index(rng, j + 1);
    if (std::find(out.begin(), out.end(), t) == out.end()) {
      out.push_back(t);
    } else {
      out.push_back(j);
    }
  }
}

}  // namespace detail

/// Samples negatives for every valid anchor of a batch of equal-length code
/// segments. Segments are grouped in consecutive blocks of group_size; the
/// pool for an anchor is every frame of its group (across mode) or every
/// frame of its group from the anchor's speaker (within mode), minus the
/// positive frame. Sampling is uniform without replacement.
inline NegativeSet sample_negatives(ag::SeqLayout layout, const std::vector<SegmentInfo>& segments,
                                    const CpcConfig& cfg, Rng& rng) {
  cfg.validate();
  require<ShapeError>(static_cast<Index>(segments.size()) == layout.batch,
                      "sample_negatives: need one SegmentInfo per segment");
  require(layout.steps > cfg.horizon, "sample_negatives: segment length ", layout.steps,
          " must exceed the horizon ", cfg.horizon);
  const Index len = layout.steps;
  const Index valid = len - cfg.horizon;

  // Pools keyed by (group, speaker); speaker -1 is the whole group.
  std::map<std::pair<Index, int>, std::vector<Index>> pools;
  for (Index b = 0; b < layout.batch; ++b) {
    const Index g = b / cfg.group_size;
    const int key_spk =
        cfg.mode == SamplingMode::kWithinSpeaker ? segments[static_cast<std::size_t>(b)].speaker : -1;
    auto& pool = pools[{g, key_spk}];
    for (Index t = 0; t < len; ++t) pool.push_back(b * len + t);
  }

  NegativeSet out;
  out.layout = layout;
  out.horizon = cfg.horizon;
  out.n_negatives = cfg.n_negatives;
  const std::size_t entries = static_cast<std::size_t>(layout.batch * valid * cfg.horizon);
  out.anchor.reserve(entries);
  out.step.reserve(entries);
  out.candidates.reserve(entries * static_cast<std::size_t>(cfg.n_negatives + 1));
  std::vector<std::uint64_t> picks;
  for (Index b = 0; b < layout.batch; ++b) {
    const Index g = b / cfg.group_size;
    const int key_spk =
        cfg.mode == SamplingMode::kWithinSpeaker ? segments[static_cast<std::size_t>(b)].speaker : -1;
    const auto& pool = pools.at({g, key_spk});
    if (static_cast<Index>(pool.size()) - 1 < cfg.n_negatives) {
      throw UsageError(str_cat("negative pool exhausted: ", pool.size() - 1, " candidates for ",
                               cfg.n_negatives, " negatives (enlarge the group or reduce n_negatives)"));
    }
    for (Index t = 0; t < valid; ++t) {
      for (int m = 1; m <= cfg.horizon; ++m) {
        const Index pos = b * len + t + m;
        const auto pos_in_pool = static_cast<std::uint64_t>(
            std::lower_bound(pool.begin(), pool.end(), pos) - pool.begin());
        out.anchor.push_back(b * len + t);
        out.step.push_back(m);
        out.candidates.push_back(pos);
        detail::sample_distinct(pool.size() - 1, cfg.n_negatives, rng, picks);
        for (auto v : picks) out.candidates.push_back(pool[v >= pos_in_pool ? v + 1 : v]);
      }
    }
  }
  for (Index r : out.candidates) {
    const auto& info = segments[static_cast<std::size_t>(r / len)];
    out.speaker.push_back(info.speaker);
    out.utterance.push_back(info.utterance);
  }
  return out;
}

template <typename T>
struct InfoNceResult {
  ag::Value<T> loss;
  std::vector<double> accuracy;  // per prediction step m = 1..M
};

/// InfoNCE given per-anchor predictions pred (rows x M*D, block m-1 holds
/// W_m c_t):
///   L = mean_e [ logsumexp_j(z_j . p_e) - z_pos . p_e ].
template <typename T>
InfoNceResult<T> infonce_from_predictions(const ag::Value<T>& codes, const ag::Value<T>& pred,
                                          const NegativeSet& neg) {
  const Index d = codes.cols();
  require<ShapeError>(pred.cols() == d * neg.horizon, "infonce: prediction width ", pred.cols(),
                      " != horizon * code dim");
  require<ShapeError>(pred.rows() == codes.rows(), "infonce: contexts and codes must align");
  require(neg.size() > 0, "infonce: no prediction targets");
  const int n = neg.set_size();
  const std::size_t entries = neg.size();
  Mat<T> prob(static_cast<Index>(entries), n);
  std::vector<std::size_t> hits(static_cast<std::size_t>(neg.horizon), 0);
  std::vector<std::size_t> totals(static_cast<std::size_t>(neg.horizon), 0);
  double loss = 0.0;
  const auto& z = codes.data();
  const auto& p = pred.data();
  for (std::size_t e = 0; e < entries; ++e) {
    const auto pv = p.row(neg.anchor[e]).segment((neg.step[e] - 1) * d, d);
    auto row = prob.row(static_cast<Index>(e));
    for (int j = 0; j < n; ++j) row(j) = z.row(neg.candidates[e * n + j]).dot(pv);
    const T mx = row.maxCoeff();
    bool best = true;
    for (int j = 1; j < n; ++j) best = best && row(0) > row(j);
    const auto m = static_cast<std::size_t>(neg.step[e] - 1);
    hits[m] += best ? 1 : 0;
    ++totals[m];
    const T s0 = row(0);
    row.array() = (row.array() - mx).exp();
    const T zsum = row.sum();
    row /= zsum;
    loss += static_cast<double>(mx + std::log(zsum) - s0);
  }
  Mat<T> out(1, 1);
  out(0, 0) = static_cast<T>(loss / static_cast<double>(entries));
  InfoNceResult<T> res;
  for (std::size_t m = 0; m < hits.size(); ++m) {
    res.accuracy.push_back(totals[m] ? static_cast<double>(hits[m]) / static_cast<double>(totals[m]) : 0.0);
  }
  res.loss = ag::make_op<T>(
      "infonce", std::move(out), {codes, pred}, [prob = std::move(prob), neg, d, n](ag::Node<T>& node) {
        const T scale = node.grad(0, 0) / static_cast<T>(prob.rows());
        const bool want_z = node.parent(0).requires_grad;
        const bool want_p = node.parent(1).requires_grad;
        const auto& z = node.parent(0).value;
        const auto& p = node.parent(1).value;
        Mat<T>* gz = want_z ? &node.parent(0).g() : nullptr;
        Mat<T>* gp = want_p ? &node.parent(1).g() : nullptr;
        for (Index e = 0; e < prob.rows(); ++e) {
          const auto ue = static_cast<std::size_t>(e);
          const Index a = neg.anchor[ue];
          const Index off = (neg.step[ue] - 1) * d;
          for (int j = 0; j < n; ++j) {
            const T ds = scale * (prob(e, j) - (j == 0 ? T(1) : T(0)));
            const Index c = neg.candidates[ue * n + j];
            if (gz) gz->row(c) += ds * p.row(a).segment(off, d);
            if (gp) gp->row(a).segment(off, d) += ds * z.row(c);
          }
        }
      });
  return res;
}

/// InfoNCE with linear predictors (Dc x M*D; block m-1 is W_m^T).
template <typename T>
InfoNceResult<T> infonce_loss(const ag::Value<T>& codes, const ag::Value<T>& contexts,
                              const ag::Value<T>& predictors, const NegativeSet& neg) {
  require<ShapeError>(contexts.rows() == codes.rows(), "infonce: contexts and codes must align");
  require(neg.layout.steps > neg.horizon, "infonce: sequence length ", neg.layout.steps,
          " must exceed horizon ", neg.horizon);
  return infonce_from_predictions(codes, ag::matmul(contexts, predictors), neg);
}

/// Reconstruction (MSE over spectrogram frames) plus beta * commitment.
template <typename T>
ag::Value<T> vqvae_loss(const ag::Value<T>& reconstruction, const ag::Value<T>& target,
                        const ag::Value<T>& commitment, T beta) {
  return ag::add(ag::mse(reconstruction, target), ag::scale(commitment, beta));
}

/// Per-step training metrics, one JSON object per line.
struct StepMetrics {
  long step = 0;
  double loss = 0.0;
  double commitment = 0.0;
  double perplexity = 0.0;
  double lr = 0.0;
  std::vector<double> accuracy;

  nlohmann::json to_json() const {
    return {{"step", step},           {"loss", loss}, {"commitment", commitment},
            {"perplexity", perplexity}, {"lr", lr},    {"accuracy", accuracy}};
  }
};

}  // namespace vqau::obj

#endif  // VQAU_OBJECTIVES_HPP_
