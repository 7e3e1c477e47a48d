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

// Vector-quantization bottleneck: nearest-code assignment, straight-through
// gradients, EMA codebook learning, time jitter and codebook diagnostics.

#ifndef VQAU_QUANTIZE_HPP_
#define VQAU_QUANTIZE_HPP_

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "vqau/autograd.hpp"
#include "vqau/common.hpp"
#include "vqau/io.hpp"

namespace vqau::vq {

/// K codes of dimension D with their EMA accumulators. After every
/// ema_update, codes[i] == ema_sums[i] / (ema_counts[i] + smoothing) for each
/// code that has ever been assigned; the rest keep their initial value.
template <typename T>
struct Codebook {
  Mat<T> codes;
  ColVec<T> ema_counts;
  Mat<T> ema_sums;
  std::vector<std::uint64_t> lifetime_counts;
  double decay = 0.99;
  double smoothing = 1e-5;
  bool initialized = false;

  Codebook() = default;
  Codebook(Index k, Index d, double decay_ = 0.99)
      : codes(Mat<T>::Zero(k, d)), ema_counts(ColVec<T>::Zero(k)), ema_sums(Mat<T>::Zero(k, d)),
        lifetime_counts(static_cast<std::size_t>(k), 0), decay(decay_) {
    require(k >= 1 && d >= 1, "codebook: need K >= 1 and D >= 1");
    require(decay_ >= 0.0 && decay_ < 1.0, "codebook: decay must be in [0, 1)");
  }

  Index size() const { return codes.rows(); }
  Index dim() const { return codes.cols(); }
};

/// Seeds the codes with distinct random rows of `z` (with replacement when
/// z has fewer rows than K).
template <typename T>
void init_from_batch(Codebook<T>& book, const Mat<T>& z, Rng& rng) {
  require<ShapeError>(z.cols() == book.dim() && z.rows() > 0, "codebook init: bad batch shape");
  const Index k = book.size();
  std::vector<Index> order(static_cast<std::size_t>(z.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }
  for (Index j = 0; j < k; ++j) {
    const Index src = order[static_cast<std::size_t>(j % z.rows())];
    book.codes.row(j) = z.row(src);
  }
  book.initialized = true;
}

template <typename T>
struct QuantizeResult {
  Mat<T> quantized;
  std::vector<std::uint32_t> indices;
  T commitment_loss = 0;
};

/// Index of the squared-Euclidean nearest code; ties go to the lowest index.
template <typename T, typename Row>
std::uint32_t nearest_code(const Row& z, const Mat<T>& codes, T* best_dist = nullptr) {
  const ColVec<T> d = (codes.rowwise() - z).rowwise().squaredNorm();
  Index best = 0;
  for (Index j = 1; j < d.size(); ++j) {
    if (d(j) < d(best)) best = j;
  }
  if (best_dist != nullptr) *best_dist = d(best);
  return static_cast<std::uint32_t>(best);
}

template <typename T>
QuantizeResult<T> quantize(const Mat<T>& z, const Codebook<T>& book) {
  require<ShapeError>(z.cols() == book.dim(), "quantize: input dim ", z.cols(), " vs codebook dim ",
                      book.dim());
  require<ShapeError>(z.rows() >= 1, "quantize: empty input");
  QuantizeResult<T> out;
  out.quantized.resize(z.rows(), z.cols());
  out.indices.resize(static_cast<std::size_t>(z.rows()));
  T total = 0;
  for (Index t = 0; t < z.rows(); ++t) {
    T dist = 0;
    const auto k = nearest_code<T>(z.row(t), book.codes, &dist);
    out.indices[static_cast<std::size_t>(t)] = k;
    out.quantized.row(t) = book.codes.row(k);
    total += (z.row(t) - book.codes.row(k)).squaredNorm();
  }
  out.commitment_loss = total / static_cast<T>(z.rows());
  return out;
}

/// The straight-through estimator: the gradient w.r.t. z is the upstream
/// gradient w.r.t. the quantized output, unchanged.
template <typename T>
Mat<T> straight_through_backward(const Mat<T>& upstream) {
  return upstream;
}

/// Autograd-level bottleneck: returns the quantized value wired with a
/// straight-through backward into `z`, plus the commitment term
/// (1/T) sum ||z_i - sg(zq_i)||^2 which only reaches z.
template <typename T>
struct BottleneckOutput {
  ag::Value<T> quantized;
  ag::Value<T> commitment;
  std::vector<std::uint32_t> indices;
};

template <typename T>
BottleneckOutput<T> bottleneck(const ag::Value<T>& z, const Codebook<T>& book) {
  auto q = quantize(z.data(), book);
  BottleneckOutput<T> out;
  auto target = ag::Value<T>::constant(q.quantized);
  out.commitment = ag::mean_row_sq_dist(z, target);
  out.quantized = ag::straight_through(z, std::move(q.quantized));
  out.indices = std::move(q.indices);
  return out;
}

/// EMA codebook step:
///   N_i <- g N_i + (1 - g) n_i,  m_i <- g m_i + (1 - g) sum_{z -> i} z,
///   e_i <- m_i / (N_i + smoothing).
template <typename T>
void ema_update(Codebook<T>& book, const Mat<T>& z, std::span<const std::uint32_t> indices) {
  require<ShapeError>(z.cols() == book.dim() && static_cast<Index>(indices.size()) == z.rows(),
                      "ema_update: shape mismatch");
  const Index k = book.size();
  ColVec<T> counts = ColVec<T>::Zero(k);
  Mat<T> sums = Mat<T>::Zero(k, book.dim());
  for (Index t = 0; t < z.rows(); ++t) {
    const auto i = indices[static_cast<std::size_t>(t)];
    require<ShapeError>(i < static_cast<std::uint32_t>(k), "ema_update: index out of range");
    counts(i) += T(1);
    sums.row(i) += z.row(t);
    ++book.lifetime_counts[i];
  }
  const T g = static_cast<T>(book.decay);
  book.ema_counts = g * book.ema_counts + (T(1) - g) * counts;
  book.ema_sums = g * book.ema_sums + (T(1) - g) * sums;
  const T lambda = static_cast<T>(book.smoothing);
  for (Index i = 0; i < k; ++i) {
    if (book.lifetime_counts[static_cast<std::size_t>(i)] == 0 || book.ema_counts(i) <= T(0)) continue;
    book.codes.row(i) = book.ema_sums.row(i) / (book.ema_counts(i) + lambda);
  }
}

/// For each position, the source position after jitter: with probability p
/// a position takes its left or right neighbour (uniformly); the ends only
/// have one neighbour.
inline std::vector<Index> jitter_sources(Index length, double p, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, "time_jitter: p must be in [0, 1]");
  std::vector<Index> src(static_cast<std::size_t>(length));
  for (Index t = 0; t < length; ++t) {
    src[static_cast<std::size_t>(t)] = t;
    if (length < 2) continue;
    if (uniform01(rng) >= p) continue;
    if (t == 0) {
      src[0] = 1;
    } else if (t == length - 1) {
      src[static_cast<std::size_t>(t)] = t - 1;
    } else {
      src[static_cast<std::size_t>(t)] = uniform01(rng) < 0.5 ? t - 1 : t + 1;
    }
  }
  return src;
}

template <typename U>
std::vector<U> time_jitter(const std::vector<U>& seq, double p, Rng& rng) {
  const auto src = jitter_sources(static_cast<Index>(seq.size()), p, rng);
  std::vector<U> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) out[t] = seq[static_cast<std::size_t>(src[t])];
  return out;
}

/// Jitter applied row-wise to a quantized batch laid out as sequences.
/// Gradients flow to whichever frame was copied.
template <typename T>
ag::Value<T> time_jitter(const ag::Value<T>& zq, ag::SeqLayout layout, double p, Rng& rng) {
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(layout.rows()));
  for (Index b = 0; b < layout.batch; ++b) {
    for (Index s : jitter_sources(layout.steps, p, rng)) idx.push_back(b * layout.steps + s);
  }
  return ag::gather_rows(zq, std::move(idx));
}

/// exp(entropy in nats) of a code histogram; in [1, K].
template <typename C>
double codebook_perplexity(std::span<const C> histogram) {
  require(!histogram.empty(), "perplexity: empty histogram");
  double total = 0.0;
  for (auto c : histogram) total += static_cast<double>(c);
  require(total > 0.0, "perplexity: histogram has no mass");
  double h = 0.0;
  for (auto c : histogram) {
    const double p = static_cast<double>(c) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

inline std::vector<std::uint64_t> code_histogram(std::span<const std::uint32_t> indices, Index k) {
  std::vector<std::uint64_t> hist(static_cast<std::size_t>(k), 0);
  for (auto i : indices) {
    require<ShapeError>(i < static_cast<std::uint32_t>(k), "histogram: index out of range");
    ++hist[i];
  }
  return hist;
}

/// Standalone export of the code vectors as a K x D VQAU feature record.
template <typename T>
void export_codebook(const std::filesystem::path& path, const Codebook<T>& book) {
  FeatureSequence seq;
  seq.frames = book.codes.template cast<float>();
  seq.frame_rate_hz = 0.0f;
  io::write_features(path, seq);
}

}  // namespace vqau::vq

#endif  // VQAU_QUANTIZE_HPP_
