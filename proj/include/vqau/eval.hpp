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

// Evaluation: DTW-cosine ABX phone discrimination, bitrate, speaker probes
// and code alignment tables.

#ifndef VQAU_EVAL_HPP_
#define VQAU_EVAL_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqau/autograd.hpp"
#include "vqau/common.hpp"
#include "vqau/corpus.hpp"
#include "vqau/optim.hpp"

namespace vqau::eval {

// --- DTW ---------------------------------------------------------------------

/// 1 - cos(a, b). A zero vector is at distance 0 from another zero vector
/// and 1 from anything else.
template <typename A, typename B>
double cosine_distance(const A& a, const B& b) {
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  const double c = a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
  return 1.0 - std::clamp(c, -1.0, 1.0);
}

/// Cost of the minimum-sum monotone alignment path (steps (1,0), (0,1),
/// (1,1)) divided by its node count. Among equal-sum paths the longest wins.
template <typename M1, typename M2>
double dtw_distance(const M1& s1, const M2& s2) {
  require(s1.rows() > 0 && s2.rows() > 0, "dtw: empty sequence");
  require<ShapeError>(s1.cols() == s2.cols(), "dtw: dimension mismatch (", s1.cols(), " vs ", s2.cols(), ")");
  const Index n = s1.rows(), m = s2.rows();
  Mat<double> cost(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) cost(i, j) = cosine_distance(s1.row(i), s2.row(j));
  }
  Mat<double> acc(n, m);
  Mat<Index> len(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        acc(0, 0) = cost(0, 0);
        len(0, 0) = 1;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      Index best_len = 0;
      auto consider = [&](Index pi, Index pj) {
        if (pi < 0 || pj < 0) return;
        if (acc(pi, pj) < best || (acc(pi, pj) == best && len(pi, pj) > best_len)) {
          best = acc(pi, pj);
          best_len = len(pi, pj);
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      acc(i, j) = best + cost(i, j);
      len(i, j) = best_len + 1;
    }
  }
  return acc(n - 1, m - 1) / static_cast<double>(len(n - 1, m - 1));
}

// --- ABX ---------------------------------------------------------------------

/// One triphone occurrence: rows [begin, end) of utterance `utt`.
struct TriphoneItem {
  int left = 0, center = 0, right = 0;
  int speaker = 0;
  int utt = 0;
  Index begin = 0, end = 0;
};

struct AbxTriple {
  TriphoneItem a, b, x;
};

struct AbxReport {
  double error = 0.0;  // percent
  std::map<std::string, double> per_context;
  std::size_t n_triples = 0;
  std::string representation;

  nlohmann::json to_json() const {
    return {{"error", error}, {"n_triples", n_triples}, {"representation", representation},
            {"n_contexts", per_context.size()}};
  }
};

struct AbxConfig {
  std::size_t max_triples = 5000;
  std::uint64_t seed = 0;
};

/// Triphone occurrences of one utterance. `downsample` maps feature frames
/// to representation rows (2 for codes, 1 for features): a segment
/// [s, e) covers rows [s / r, ceil(e / r)).
inline std::vector<TriphoneItem> triphones(const std::vector<corpus::Segment>& segs, int speaker, int utt,
                                           int downsample, Index n_rows) {
  require(downsample >= 1, "abx: downsample must be >= 1");
  std::vector<TriphoneItem> out;
  for (std::size_t i = 1; i + 1 < segs.size(); ++i) {
    TriphoneItem it;
    it.left = segs[i - 1].phone;
    it.center = segs[i].phone;
    it.right = segs[i + 1].phone;
    it.speaker = speaker;
    it.utt = utt;
    it.begin = segs[i - 1].start / downsample;
    it.end = std::min<Index>(n_rows, (segs[i + 1].end + downsample - 1) / downsample);
    if (it.end > it.begin) out.push_back(it);
  }
  return out;
}

/// Samples ABX triples: A and B share speaker and context (left, right)
/// and differ in the center phone; X has A's triphone and another speaker.
/// All triples are kept when there are at most `max_triples`; otherwise
/// that many are drawn uniformly with replacement.
inline std::vector<AbxTriple> sample_triples(const std::vector<TriphoneItem>& items, const AbxConfig& cfg) {
  using Cell = std::tuple<int, int, int, int>;  // left, center, right, speaker
  std::map<Cell, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    cells[{it.left, it.center, it.right, it.speaker}].push_back(i);
  }
  // Per context (left, right): centers -> speakers present.
  std::map<std::pair<int, int>, std::map<int, std::vector<int>>> ctx;
  for (const auto& [cell, list] : cells) {
    ctx[{std::get<0>(cell), std::get<2>(cell)}][std::get<1>(cell)].push_back(std::get<3>(cell));
  }
  struct Combo {
    const std::vector<std::size_t>* a;
    const std::vector<std::size_t>* b;
    const std::vector<std::size_t>* x;
    double count;
  };
  std::vector<Combo> combos;
  for (const auto& [lr, centers] : ctx) {
    for (const auto& [ca, spk_a] : centers) {
      for (const auto& [cb, spk_b] : centers) {
        if (ca == cb) continue;
        for (int s : spk_a) {
          if (std::find(spk_b.begin(), spk_b.end(), s) == spk_b.end()) continue;
          for (int sx : spk_a) {
            if (sx == s) continue;
            const auto& la = cells.at({lr.first, ca, lr.second, s});
            const auto& lb = cells.at({lr.first, cb, lr.second, s});
            const auto& lx = cells.at({lr.first, ca, lr.second, sx});
            combos.push_back({&la, &lb, &lx, static_cast<double>(la.size() * lb.size() * lx.size())});
          }
        }
      }
    }
  }
  std::vector<AbxTriple> out;
  double total = 0.0;
  for (const auto& c : combos) total += c.count;
  if (total <= static_cast<double>(cfg.max_triples)) {
    for (const auto& c : combos) {
      for (auto ia : *c.a) {
        for (auto ib : *c.b) {
          for (auto ix : *c.x) out.push_back({items[ia], items[ib], items[ix]});
        }
      }
    }
    return out;
  }
  std::vector<double> cum;
  double run = 0.0;
  for (const auto& c : combos) cum.push_back(run += c.count);
  Rng rng = derive_rng(cfg.seed, 31, 0);
  for (std::size_t k = 0; k < cfg.max_triples; ++k) {
    const double r = uniform01(rng) * total;
    const auto ci = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
    const auto& c = combos[std::min(ci, combos.size() - 1)];
    const auto pick = [&rng](const std::vector<std::size_t>& v) { return v[uniform_index(rng, v.size())]; };
    out.push_back({items[pick(*c.a)], items[pick(*c.b)], items[pick(*c.x)]});
  }
  return out;
}

inline std::string context_key(const AbxTriple& t) {
  return str_cat(t.a.left, "_", t.a.right, ":", t.a.center, "/", t.b.center);
}

/// ABX error over utterance representations. `reps[i]` belongs to
/// `utts[i]`; rows are at feature_rate / downsample.
template <typename MatT>
AbxReport abx_error(const std::vector<corpus::Utterance>& utts, const std::vector<MatT>& reps, int downsample,
                    const std::string& representation, const AbxConfig& cfg = {}) {
  require<ShapeError>(utts.size() == reps.size(), "abx: one representation per utterance required");
  std::vector<TriphoneItem> items;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    auto t = triphones(utts[i].phone_segments, utts[i].speaker, static_cast<int>(i), downsample, reps[i].rows());
    items.insert(items.end(), t.begin(), t.end());
  }
  const auto triples = sample_triples(items, cfg);
  require(!triples.empty(), "abx: no valid triples (need >= 2 speakers sharing triphone contexts)");
  auto slice = [&reps](const TriphoneItem& it) { return reps[static_cast<std::size_t>(it.utt)].middleRows(it.begin, it.end - it.begin); };
  std::map<std::string, std::pair<double, std::size_t>> by_ctx;
  for (const auto& t : triples) {
    const double dax = dtw_distance(slice(t.a), slice(t.x));
    const double dbx = dtw_distance(slice(t.b), slice(t.x));
    const double score = dax < dbx ? 1.0 : (dax == dbx ? 0.5 : 0.0);
    auto& acc = by_ctx[context_key(t)];
    acc.first += score;
    ++acc.second;
  }
  AbxReport rep;
  rep.representation = representation;
  rep.n_triples = triples.size();
  double sum = 0.0;
  for (const auto& [key, acc] : by_ctx) {
    const double err = 100.0 * (1.0 - acc.first / static_cast<double>(acc.second));
    rep.per_context[key] = err;
    sum += err;
  }
  rep.error = sum / static_cast<double>(by_ctx.size());
  return rep;
}

// --- bitrate -----------------------------------------------------------------

/// Shannon entropy (bits) of the pooled unigram code distribution.
inline double code_entropy_bits(const std::vector<std::vector<std::uint32_t>>& sequences) {
  std::map<std::uint32_t, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : sequences) {
    for (auto c : s) ++counts[c];
    total += s.size();
  }
  require(total > 0, "bitrate: no symbols");
  double h = 0.0;
  for (const auto& [c, n] : counts) {
    const double p = static_cast<double>(n) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

/// Symbols x entropy / duration.
inline double bitrate(const std::vector<std::vector<std::uint32_t>>& sequences, double duration_s) {
  require(duration_s > 0.0, "bitrate: duration must be > 0");
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  require(total > 0, "bitrate: empty input");
  return static_cast<double>(total) * code_entropy_bits(sequences) / duration_s;
}

// --- speaker probe -----------------------------------------------------------

struct ProbeConfig {
  int hidden = 256;
  long steps = 1500;
  int batch_items = 32;
  double lr = 2e-3;
  int window = 0;  // rows per probe item; 0 uses whole utterances
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0.0;  // percent, held-out items
  double train_accuracy = 0.0;
  std::size_t n_train = 0, n_test = 0;
  int n_classes = 0;
};

namespace detail {

struct ProbeItem {
  Mat<float> x;
  int label = 0;
};

inline std::vector<ProbeItem> windows(const Mat<float>& rep, int label, int window) {
  std::vector<ProbeItem> out;
  if (window <= 0 || rep.rows() < window) {
    out.push_back({rep, label});
    return out;
  }
  for (Index s = 0; s + window <= rep.rows(); s += window) out.push_back({rep.middleRows(s, window), label});
  return out;
}

}  // namespace detail

/// Frame-wise MLP (one hidden ReLU layer), mean-pooled over each item,
/// then a linear softmax classifier; trained with Adam. Utterances of each
/// speaker alternate between the training and held-out halves.
template <typename MatT>
ProbeResult speaker_probe(const std::vector<MatT>& reps, const std::vector<int>& speakers, const ProbeConfig& cfg) {
  using V = ag::Value<float>;
  require<ShapeError>(reps.size() == speakers.size() && !reps.empty(), "probe: one label per representation");
  std::map<int, int> classes;
  for (int s : speakers) classes.emplace(s, 0);
  require(classes.size() >= 2, "probe: need at least 2 speakers, got ", classes.size());
  int next = 0;
  for (auto& [s, c] : classes) c = next++;

  std::vector<detail::ProbeItem> train, test;
  std::map<int, int> seen;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const int label = classes.at(speakers[i]);
    auto items = detail::windows(reps[i].template cast<float>(), label, cfg.window);
    auto& dst = (seen[label]++ % 2 == 0) ? train : test;
    dst.insert(dst.end(), items.begin(), items.end());
  }
  require(!train.empty() && !test.empty(), "probe: need at least 2 utterances per speaker");

  const Index dim = train.front().x.cols();
  Mat<double> s = Mat<double>::Zero(1, dim), s2 = Mat<double>::Zero(1, dim);
  double n = 0.0;
  for (const auto& it : train) {
    s += it.x.cast<double>().colwise().sum();
    s2 += it.x.cast<double>().array().square().matrix().colwise().sum();
    n += static_cast<double>(it.x.rows());
  }
  const RowVec<float> mu = (s / n).cast<float>();
  const RowVec<float> inv = ((s2 / n).array() - (s / n).array().square()).max(1e-8).rsqrt().matrix().cast<float>();
  auto standardize = [&](std::vector<detail::ProbeItem>& v) {
    for (auto& it : v) {
      it.x.rowwise() -= mu;
      it.x.array().rowwise() *= inv.array();
    }
  };
  standardize(train);
  standardize(test);

  Rng rng = derive_rng(cfg.seed, 41, 0);
  const int k = static_cast<int>(classes.size());
  auto init = [&rng](Index r, Index c, double bound) {
    Mat<float> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
    return m;
  };
  const double b1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  V w1 = V::parameter(init(dim, cfg.hidden, b1)), c1 = V::parameter(init(1, cfg.hidden, b1));
  V w2 = V::parameter(init(cfg.hidden, k, b2)), c2 = V::parameter(init(1, k, b2));
  ag::Adam<float> opt({w1, c1, w2, c2}, ag::Schedule::constant(cfg.lr));

  auto logits = [&](const std::vector<const detail::ProbeItem*>& batch) {
    Index rows = 0;
    for (auto* it : batch) rows += it->x.rows();
    Mat<float> x(rows, dim);
    std::vector<Index> offsets{0};
    for (auto* it : batch) {
      x.middleRows(offsets.back(), it->x.rows()) = it->x;
      offsets.push_back(offsets.back() + it->x.rows());
    }
    const V h = ag::relu(ag::linear(V::constant(std::move(x)), w1, c1));
    return ag::linear(ag::mean_pool(h, std::move(offsets)), w2, c2);
  };
  auto accuracy = [&](const std::vector<detail::ProbeItem>& items) {
    ag::NoGradGuard no_grad;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < items.size(); i += 64) {
      std::vector<const detail::ProbeItem*> batch;
      for (std::size_t j = i; j < std::min(items.size(), i + 64); ++j) batch.push_back(&items[j]);
      const auto out = logits(batch).data();
      for (Index r = 0; r < out.rows(); ++r) {
        Index arg = 0;
        out.row(r).maxCoeff(&arg);
        hits += arg == batch[static_cast<std::size_t>(r)]->label ? 1 : 0;
      }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(items.size());
  };

  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_items), train.size());
  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<const detail::ProbeItem*> batch;
    std::vector<int> labels;
    for (std::size_t j = 0; j < bs; ++j) {
      const auto& it = train[uniform_index(rng, train.size())];
      batch.push_back(&it);
      labels.push_back(it.label);
    }
    const V loss = ag::softmax_cross_entropy(logits(batch), std::move(labels));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  ProbeResult r;
  r.accuracy = accuracy(test);
  r.train_accuracy = accuracy(train);
  r.n_train = train.size();
  r.n_test = test.size();
  r.n_classes = k;
  return r;
}

// --- alignment ---------------------------------------------------------------

struct AlignmentRow {
  Index frame = 0;     // code frame
  double time_s = 0.0;
  int phone = 0;
  std::uint32_t code = 0;
  bool operator==(const AlignmentRow&) const = default;
};

/// One row per code frame; the phone is the ground-truth label of the
/// first input frame the code covers.
inline std::vector<AlignmentRow> export_alignment(const std::vector<int>& phone_labels, const CodeSequence& codes,
                                                  int downsample = 2) {
  const auto expected = static_cast<std::size_t>((phone_labels.size() + static_cast<std::size_t>(downsample) - 1) /
                                                 static_cast<std::size_t>(downsample));
  require<ShapeError>(codes.indices.size() == expected, "alignment: ", codes.indices.size(), " codes for ",
                      phone_labels.size(), " frames (expected ", expected, ")");
  require(codes.frame_rate_hz > 0.0f, "alignment: code frame rate must be > 0");
  std::vector<AlignmentRow> rows;
  for (std::size_t i = 0; i < codes.indices.size(); ++i) {
    rows.push_back({static_cast<Index>(i), static_cast<double>(i) / static_cast<double>(codes.frame_rate_hz),
                    phone_labels[i * static_cast<std::size_t>(downsample)], codes.indices[i]});
  }
  return rows;
}

inline std::string alignment_csv(const std::vector<AlignmentRow>& rows) {
  std::string out = "frame,time_s,phone,code\n";
  char buf[64];
  for (const auto& r : rows) {
    auto res = std::to_chars(buf, buf + sizeof(buf), r.time_s);
    out += str_cat(r.frame, ",", std::string(buf, res.ptr), ",", r.phone, ",", r.code, "\n");
  }
  return out;
}

inline std::vector<AlignmentRow> parse_alignment_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require<FormatError>(static_cast<bool>(std::getline(in, line)) && line == "frame,time_s,phone,code",
                       "alignment csv: bad header");
  std::vector<AlignmentRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    require<FormatError>(f.size() == 4, "alignment csv: expected 4 fields in '", line, "'");
    AlignmentRow r;
    auto parse = [&line](const std::string& s, auto& v) {
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      require<FormatError>(res.ec == std::errc() && res.ptr == s.data() + s.size(), "alignment csv: bad field in '",
                           line, "'");
    };
    parse(f[0], r.frame);
    parse(f[1], r.time_s);
    parse(f[2], r.phone);
    parse(f[3], r.code);
    rows.push_back(r);
  }
  return rows;
}

/// Fraction of phone segments whose most frequent code covers more than
/// half of the segment's code frames.
inline double modal_code_coverage(const std::vector<AlignmentRow>& rows) {
  std::size_t segments = 0, dominated = 0;
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    std::map<std::uint32_t, std::size_t> counts;
    while (j < rows.size() && rows[j].phone == rows[i].phone) ++counts[rows[j++].code];
    std::size_t best = 0;
    for (const auto& [c, n] : counts) best = std::max(best, n);
    ++segments;
    dominated += 2 * best > j - i ? 1 : 0;
    i = j;
  }
  require(segments > 0, "alignment: no rows");
  return static_cast<double>(dominated) / static_cast<double>(segments);
}

/// Levenshtein distance between two code sequences.
inline std::size_t edit_distance(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// --- reports -----------------------------------------------------------------

/// Common metric record: {metric, value, config_hash, seed, n_samples, version}.
inline nlohmann::json metric_report(const std::string& metric, double value, const std::string& config_hash,
                                    std::uint64_t seed, std::size_t n_samples, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json j = {{"metric", metric},   {"value", value},         {"config_hash", config_hash},
                      {"seed", seed},       {"n_samples", n_samples}, {"version", std::string(kVersion)}};
  if (!extra.is_null()) j["details"] = std::move(extra);
  return j;
}

}  // namespace vqau::eval

#endif  // VQAU_EVAL_HPP_
