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

// Acceptance run: prints one PASS/FAIL line per criterion and exits with the
// number of failures. Criteria 7-9 train models and take tens of minutes.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "vqau/corpus.hpp"
#include "vqau/eval.hpp"
#include "vqau/io.hpp"
#include "vqau/models.hpp"

namespace vqau {
namespace {

namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;
using testing::random_matrix;
using testing::Vd;

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-3;
constexpr int kGradTrialsPerOp = 5;
constexpr int kGradMinTrials = 100;
constexpr double kGradBudgetS = 60.0;
constexpr int kQuantizeInstances = 1000;
constexpr double kQuantizeBudgetS = 10.0;
constexpr int kStTrials = 200;
constexpr int kEmaUpdates = 500;
constexpr double kEmaTol = 1e-3;
constexpr int kDtwTrials = 600;
constexpr double kDtwTol = 1e-9;
constexpr double kInfoNceTol = 1e-6;
constexpr double kUniformBitrateTol = 0.5;
constexpr double kAbxMargin = 10.0;     // points below raw
constexpr double kRawAbxCeiling = 50.0;
constexpr double kProbeRawGap = 5.0;    // points
constexpr double kMinUsage = 0.05;      // perplexity / K
constexpr double kTrainBudgetS = 1800.0;
constexpr double kSwapFraction = 0.8;

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

// --- 1 -----------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = clk::now();
  Rng rng = derive_rng(101, 0);
  double worst = 0.0;
  std::string worst_op;
  int trials = 0;
  for (const auto& c : testing::op_cases()) {
    for (int i = 0; i < kGradTrialsPerOp; ++i, ++trials) {
      const double e = c.run(rng);
      if (!(e <= worst)) {
        worst = e;
        worst_op = c.name;
      }
    }
  }
  const double dt = seconds_since(t0);
  return {worst < kGradTol && trials >= kGradMinTrials && dt < kGradBudgetS,
          fmt("%d trials over %zu ops, max rel error %.2e (%s), %.1f s", trials, testing::op_cases().size(), worst,
              worst_op.c_str(), dt)};
}

// --- 2 -----------------------------------------------------------------------

std::uint32_t brute_nearest(const RowVec<double>& z, const Matd& codes) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < codes.rows(); ++j) {
    double d = 0;
    for (Index c = 0; c < codes.cols(); ++c) d += (z(c) - codes(j, c)) * (z(c) - codes(j, c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return best;
}

Outcome quantizer() {
  const auto t0 = clk::now();
  Rng rng = derive_rng(102, 0);
  std::size_t rows = 0, mismatches = 0, ties = 0;
  for (int inst = 0; inst < kQuantizeInstances; ++inst) {
    const Index k = 1 + static_cast<Index>(uniform_index(rng, 64));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 8));
    const Index t = 1 + static_cast<Index>(uniform_index(rng, 32));
    vq::Codebook<double> book(k, d);
    Matd z;
    if (inst % 2 == 0) {
      book.codes = random_matrix(k, d, rng);
      z = random_matrix(t, d, rng);
    } else {
      // Small integer grid: equal distances are common.
      auto grid = [&rng](Index r, Index c) {
        Matd m(r, c);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(uniform_index(rng, 3)) - 1.0;
        return m;
      };
      book.codes = grid(k, d);
      z = grid(t, d);
    }
    for (Index j = 1; j < k; ++j) {
      if (uniform01(rng) < 0.2) book.codes.row(j) = book.codes.row(static_cast<Index>(uniform_index(rng, j)));
    }
    const auto q = vq::quantize(z, book);
    for (Index r = 0; r < t; ++r, ++rows) {
      const auto want = brute_nearest(z.row(r), book.codes);
      const RowVec<double> dist = (book.codes.rowwise() - z.row(r)).rowwise().squaredNorm().transpose();
      ties += (dist.array() == dist.minCoeff()).count() > 1 ? 1 : 0;
      if (q.indices[static_cast<std::size_t>(r)] != want || q.quantized.row(r) != book.codes.row(want)) ++mismatches;
    }
  }
  const double dt = seconds_since(t0);
  return {mismatches == 0 && dt < kQuantizeBudgetS,
          fmt("%d instances, %zu rows (%zu with tied distances), %zu mismatches, %.2f s", kQuantizeInstances, rows, ties,
              mismatches, dt)};
}

// --- 3 -----------------------------------------------------------------------

// A random differentiable graph over x (and its own random weights).
std::function<Vd(const Vd&)> random_head(Rng& rng, Index d) {
  const int depth = 1 + static_cast<int>(uniform_index(rng, 3));
  std::vector<std::function<Vd(const Vd&)>> layers;
  Index width = d;
  for (int i = 0; i < depth; ++i) {
    const Index out = 1 + static_cast<Index>(uniform_index(rng, 5));
    const Matd w = random_matrix(width, out, rng);
    const int act = static_cast<int>(uniform_index(rng, 3));
    layers.push_back([w, act](const Vd& x) {
      Vd h = ag::matmul(x, Vd::constant(w));
      if (act == 0) return ag::tanh(h);
      if (act == 1) return ag::sigmoid(h);
      return ag::mul(h, h);
    });
    width = out;
  }
  return [layers](const Vd& x) {
    Vd h = x;
    for (const auto& f : layers) h = f(h);
    return ag::sum(h);
  };
}

Outcome straight_through() {
  Rng rng = derive_rng(103, 0);
  double worst = 0.0;
  for (int trial = 0; trial < kStTrials; ++trial) {
    const Index t = 1 + static_cast<Index>(uniform_index(rng, 10));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 6));
    const Index k = 1 + static_cast<Index>(uniform_index(rng, 16));
    vq::Codebook<double> book(k, d);
    book.codes = random_matrix(k, d, rng);
    const Matd w_enc = random_matrix(d, d, rng);
    const auto head = random_head(rng, d);

    // Encoder -> bottleneck -> head; the gradient at the encoder output.
    Vd x = Vd::parameter(random_matrix(t, d, rng));
    Vd z = ag::matmul(x, Vd::constant(w_enc));
    Vd z_leaf = Vd::parameter(z.data());
    const auto b = vq::bottleneck(z_leaf, book);
    head(b.quantized).backward();

    // The same head on the quantized values as a leaf.
    Vd q = Vd::parameter(vq::quantize(z.data(), book).quantized);
    head(q).backward();
    worst = std::max(worst, (z_leaf.grad() - q.grad()).cwiseAbs().maxCoeff());

    // And through to the encoder input: dL/dx = dL/dq W^T.
    Vd zq = vq::bottleneck(z, book).quantized;
    head(zq).backward();
    worst = std::max(worst, (x.grad() - q.grad() * w_enc.transpose()).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, fmt("%d random graphs, max elementwise difference %.1e", kStTrials, worst)};
}

// --- 4 -----------------------------------------------------------------------

Outcome ema_fixed_point() {
  Rng rng = derive_rng(104, 0);
  const Index per = 200, d = 4;
  Matd z(3 * per, d);
  for (Index c = 0; c < 3; ++c) {
    const Matd center = random_matrix(1, d, rng, 5.0);
    z.middleRows(c * per, per) = random_matrix(per, d, rng, 0.5).rowwise() + center.row(0);
  }
  vq::Codebook<double> book(3, d);
  for (Index c = 0; c < 3; ++c) book.codes.row(c) = z.row(c * per + static_cast<Index>(uniform_index(rng, per)));
  for (int i = 0; i < kEmaUpdates; ++i) {
    const auto q = vq::quantize(z, book);
    vq::ema_update(book, z, q.indices);
  }
  double worst = 0.0;
  for (Index c = 0; c < 3; ++c) {
    worst = std::max(worst, (book.codes.row(c) - z.middleRows(c * per, per).colwise().mean()).norm());
  }
  return {worst < kEmaTol, fmt("K=3, %d updates, max distance to cluster mean %.2e", kEmaUpdates, worst)};
}

// --- 5 -----------------------------------------------------------------------

double exhaustive_dtw(const Matd& a, const Matd& b) {
  double best_sum = std::numeric_limits<double>::infinity();
  Index best_len = 0;
  std::function<void(Index, Index, double, Index)> walk = [&](Index i, Index j, double sum, Index len) {
    sum += eval::cosine_distance(a.row(i), b.row(j));
    ++len;
    if (i == a.rows() - 1 && j == b.rows() - 1) {
      if (sum < best_sum || (sum == best_sum && len > best_len)) {
        best_sum = sum;
        best_len = len;
      }
      return;
    }
    if (i + 1 < a.rows() && j + 1 < b.rows()) walk(i + 1, j + 1, sum, len);
    if (i + 1 < a.rows()) walk(i + 1, j, sum, len);
    if (j + 1 < b.rows()) walk(i, j + 1, sum, len);
  };
  walk(0, 0, 0.0, 0);
  return best_sum / static_cast<double>(best_len);
}

Outcome dtw() {
  Rng rng = derive_rng(105, 0);
  double worst = 0.0;
  for (int trial = 0; trial < kDtwTrials; ++trial) {
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 6)), m = 1 + static_cast<Index>(uniform_index(rng, 6));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 4));
    Matd a = random_matrix(n, d, rng), b = random_matrix(m, d, rng);
    if (trial % 3 == 0) {
      // One-hot rows: many equal-cost paths.
      a.setZero();
      b.setZero();
      for (Index i = 0; i < n; ++i) a(i, static_cast<Index>(uniform_index(rng, d))) = 1.0;
      for (Index i = 0; i < m; ++i) b(i, static_cast<Index>(uniform_index(rng, d))) = 1.0;
    }
    worst = std::max(worst, std::abs(eval::dtw_distance(a, b) - exhaustive_dtw(a, b)));
  }
  return {worst <= kDtwTol, fmt("%d pairs, lengths 1-6, max |difference| %.1e", kDtwTrials, worst)};
}

// --- 6 -----------------------------------------------------------------------

Outcome infonce_zero() {
  Rng rng = derive_rng(106, 0);
  obj::CpcConfig cfg;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    cfg.mode = trial % 2 == 0 ? obj::SamplingMode::kWithinSpeaker : obj::SamplingMode::kAcrossSpeaker;
    const ag::SeqLayout l{16, 20 + static_cast<Index>(uniform_index(rng, 20))};
    std::vector<obj::SegmentInfo> seg;
    for (Index b = 0; b < l.batch; ++b) seg.push_back({static_cast<int>(b % 2), static_cast<int>(b)});
    const auto neg = obj::sample_negatives(l, seg, cfg, rng);
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 8)), dc = 1 + static_cast<Index>(uniform_index(rng, 8));
    Vd z = Vd::constant(random_matrix(l.rows(), d, rng));
    Vd c = Vd::constant(random_matrix(l.rows(), dc, rng));
    Vd w = Vd::constant(Matd::Zero(dc, cfg.horizon * d));
    worst = std::max(worst, std::abs(obj::infonce_loss(z, c, w, neg).loss.item() - std::log(18.0)));
  }
  return {worst < kInfoNceTol, fmt("17 negatives, 20 batches, max |loss - ln 18| %.1e", worst)};
}

// --- end-to-end state ----------------------------------------------------------

struct Trained {
  std::string name;
  models::AnyModel model;
  double train_s = 0.0;
  std::vector<models::MatR> code, pre;  // test split
  std::vector<std::vector<std::uint32_t>> indices;
};

struct EndToEnd {
  std::vector<corpus::Utterance> train, test;
  std::vector<Trained> runs;
  double train_total_s = 0.0;
};

corpus::GeneratorSpec toy_spec() {
  corpus::GeneratorSpec spec;
  spec.seed = 1;
  corpus::materialize(spec);
  return spec;
}

Trained train_one(const std::string& name, models::ModelKind kind, obj::SamplingMode mode,
                  const std::vector<corpus::Utterance>& train, const std::vector<corpus::Utterance>& test,
                  int n_speakers) {
  models::ModelConfig mc;
  mc.kind = kind;
  mc.input_dim = static_cast<int>(train.front().features.dim());
  mc.cpc.mode = mode;
  if (kind == models::ModelKind::kVqVae) {
    for (int s = 0; s < n_speakers; ++s) mc.speakers.push_back(s);
  }
  auto tc = models::TrainConfig::defaults_for(kind);
  tc.seed = 3;
  tc.log_every = 1000;
  Trained r{name, kind == models::ModelKind::kVqVae ? models::AnyModel(models::VqVaeModel(mc, 5))
                                                    : models::AnyModel(models::CpcModel(mc, 5)),
            0.0, {}, {}, {}};
  const auto t0 = clk::now();
  if (auto* m = std::get_if<models::CpcModel>(&r.model)) {
    models::train_vq_cpc(train, *m, tc);
  } else {
    models::train_vq_vae(train, std::get<models::VqVaeModel>(r.model), tc);
  }
  r.train_s = seconds_since(t0);
  for (const auto& u : test) {
    auto e = models::encode(r.model, u.features);
    r.code.push_back(std::move(e.code_vectors));
    r.pre.push_back(std::move(e.pre_quant));
    r.indices.push_back(std::move(e.codes.indices));
  }
  note(fmt("trained %s in %.0f s", name.c_str(), r.train_s));
  return r;
}

EndToEnd& end_to_end() {
  static std::optional<EndToEnd> state;
  if (state) return *state;
  state.emplace();
  const auto spec = toy_spec();
  state->train = corpus::generate_corpus(spec, 600, corpus::Split::kTrain);
  state->test = corpus::generate_corpus(spec, 120, corpus::Split::kTest);
  double minutes = 0.0;
  for (const auto& u : state->train) minutes += static_cast<double>(u.n_frames()) / u.features.frame_rate_hz / 60.0;
  note(fmt("toy corpus: %d phones, %d speakers, %.1f min of training audio", spec.n_phones, spec.n_speakers, minutes));
  using models::ModelKind;
  using obj::SamplingMode;
  const int n_spk = spec.n_train_speakers();
  state->runs.push_back(train_one("vq-cpc within", ModelKind::kVqCpc, SamplingMode::kWithinSpeaker, state->train,
                                  state->test, n_spk));
  state->runs.push_back(train_one("vq-cpc across", ModelKind::kVqCpc, SamplingMode::kAcrossSpeaker, state->train,
                                  state->test, n_spk));
  state->runs.push_back(
      train_one("cpc", ModelKind::kCpc, SamplingMode::kWithinSpeaker, state->train, state->test, n_spk));
  state->runs.push_back(
      train_one("vq-vae", ModelKind::kVqVae, SamplingMode::kWithinSpeaker, state->train, state->test, n_spk));
  for (const auto& r : state->runs) state->train_total_s += r.train_s;
  return *state;
}

const Trained& run(const std::string& name) {
  for (const auto& r : end_to_end().runs) {
    if (r.name == name) return r;
  }
  throw Error("no run named " + name);
}

double test_duration_s(const std::vector<corpus::Utterance>& utts) {
  double s = 0.0;
  for (const auto& u : utts) s += static_cast<double>(u.n_frames()) / u.features.frame_rate_hz;
  return s;
}

// --- 7 -----------------------------------------------------------------------

Outcome bitrate() {
  const std::vector<std::vector<std::uint32_t>> constant(4, std::vector<std::uint32_t>(50, 7u));
  const double b0 = eval::bitrate(constant, 4.0);

  // Uniform draws over 512 codes at 50 codes/s.
  Rng rng = derive_rng(107, 0);
  std::vector<std::vector<std::uint32_t>> uniform(100);
  std::size_t n = 0;
  for (auto& s : uniform) {
    s.resize(10000);
    for (auto& c : s) c = static_cast<std::uint32_t>(uniform_index(rng, 512));
    n += s.size();
  }
  const double bu = eval::bitrate(uniform, static_cast<double>(n) / 50.0);

  const auto& e2e = end_to_end();
  const double dur = test_duration_s(e2e.test);
  std::string trained;
  bool trained_ok = true;
  for (const auto& r : e2e.runs) {
    if (r.indices.front().empty()) continue;
    const double b = eval::bitrate(r.indices, dur);
    trained_ok = trained_ok && b <= 450.0;
    trained += fmt(", %s %.1f", r.name.c_str(), b);
  }
  return {b0 == 0.0 && std::abs(bu - 450.0) <= kUniformBitrateTol && trained_ok,
          fmt("constant %.1f, uniform-512 %.2f bits/s; trained", b0, bu) + trained};
}

// --- 8 -----------------------------------------------------------------------

double probe(const std::vector<corpus::Utterance>& utts, const std::function<models::MatR(const corpus::Utterance&)>& rep) {
  std::vector<models::MatR> reps;
  std::vector<int> spk;
  for (const auto& u : utts) {
    reps.push_back(rep(u));
    spk.push_back(u.speaker);
  }
  return eval::speaker_probe(reps, spk, eval::ProbeConfig{}).accuracy;
}

Outcome ordering() {
  const auto& e2e = end_to_end();
  std::vector<Matf> raw;
  for (const auto& u : e2e.test) raw.push_back(u.features.frames);
  const double abx_raw = eval::abx_error(e2e.test, raw, 1, "raw").error;
  std::map<std::string, double> abx;
  for (const auto& r : e2e.runs) abx[r.name] = eval::abx_error(e2e.test, r.code, 2, "code").error;
  note(fmt("ABX raw %.2f, vq-cpc within %.2f, across %.2f, cpc %.2f, vq-vae %.2f", abx_raw, abx["vq-cpc within"],
           abx["vq-cpc across"], abx["cpc"], abx["vq-vae"]));
  const bool a = abx["vq-cpc within"] < abx_raw - kAbxMargin && abx_raw < kRawAbxCeiling;
  const bool b = abx["vq-cpc within"] < abx["vq-cpc across"];

  // Probes on the training split (seen speakers), alternating utterances.
  const auto code_of = [](const models::AnyModel& m) {
    return [&m](const corpus::Utterance& u) { return models::encode(m, u.features).code_vectors; };
  };
  const auto pre_of = [](const models::AnyModel& m) {
    return [&m](const corpus::Utterance& u) { return models::encode(m, u.features).pre_quant; };
  };
  const double p_raw = probe(e2e.train, [](const corpus::Utterance& u) { return u.features.frames; });
  const auto& within = run("vq-cpc within").model;
  const auto& vae = run("vq-vae").model;
  const double p_within_code = probe(e2e.train, code_of(within)), p_within_pre = probe(e2e.train, pre_of(within));
  const double p_vae_code = probe(e2e.train, code_of(vae)), p_vae_pre = probe(e2e.train, pre_of(vae));
  const double p_cpc = probe(e2e.train, code_of(run("cpc").model));
  note(fmt("probe raw %.1f; vq-cpc within code %.1f pre %.1f; vq-vae code %.1f pre %.1f; cpc %.1f", p_raw,
           p_within_code, p_within_pre, p_vae_code, p_vae_pre, p_cpc));
  const bool c_vq = p_within_code < p_within_pre && p_vae_code < p_vae_pre;
  const bool c_cpc = std::abs(p_cpc - p_raw) <= kProbeRawGap;

  bool d = true;
  std::string ppl;
  for (const auto& r : e2e.runs) {
    if (r.indices.front().empty()) continue;
    std::vector<std::uint32_t> all;
    for (const auto& s : r.indices) all.insert(all.end(), s.begin(), s.end());
    const double p = vq::codebook_perplexity<std::uint64_t>(vq::code_histogram(all, 512));
    d = d && p > kMinUsage * 512;
    ppl += fmt(" %s %.1f", r.name.c_str(), p);
  }
  note("test-set code perplexity (floor 25.6):" + ppl);
  const bool budget = e2e.train_total_s < kTrainBudgetS;
  auto flag = [](bool ok) { return ok ? "ok" : "FAIL"; };
  return {a && b && c_vq && c_cpc && d && budget,
          fmt("a %s, b %s, c-vq %s, c-cpc %s, d %s, training %.0f s %s", flag(a), flag(b), flag(c_vq), flag(c_cpc),
              flag(d), e2e.train_total_s, flag(budget))};
}

// --- 9 -----------------------------------------------------------------------

Outcome speaker_swap() {
  corpus::GeneratorSpec spec;
  spec.seed = 1;
  spec.noise_sigma = 0.0;
  corpus::materialize(spec);
  const auto train = corpus::generate_corpus(spec, 300, corpus::Split::kTrain);
  const auto test = corpus::generate_corpus(spec, 60, corpus::Split::kTest);
  models::ModelConfig mc;
  mc.kind = models::ModelKind::kVqVae;
  mc.input_dim = static_cast<int>(train.front().features.dim());
  for (int s = 0; s < spec.n_train_speakers(); ++s) mc.speakers.push_back(s);
  auto tc = models::TrainConfig::defaults_for(mc.kind);
  tc.steps = 1500;
  tc.seed = 3;
  models::VqVaeModel model(mc, 5);
  models::train_vq_vae(train, model, tc);
  int closer = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int target = mc.speakers[i % mc.speakers.size()];
    const auto out = models::convert_speaker(model, test[i].features, target);
    const auto to = corpus::render(spec, test[i].phone_segments, target, nullptr);
    const auto from = corpus::render(spec, test[i].phone_segments, test[i].speaker, nullptr);
    closer += (out.frames - to.frames).squaredNorm() < (out.frames - from.frames).squaredNorm() ? 1 : 0;
  }
  const double frac = static_cast<double>(closer) / static_cast<double>(test.size());
  return {frac >= kSwapFraction, fmt("%d/%zu converted test utterances closer to the target rendering", closer,
                                     test.size())};
}

// --- 10 ----------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return out;
}

struct Pass {
  std::map<std::string, std::string> corpus;
  std::string losses, reports;
};

Pass determinism_pass(const fs::path& dir) {
  corpus::GeneratorSpec spec;
  spec.seed = 7;
  corpus::materialize(spec);
  const auto train = corpus::generate_corpus(spec, 48, corpus::Split::kTrain);
  const auto test = corpus::generate_corpus(spec, 24, corpus::Split::kTest);
  fs::create_directories(dir);
  corpus::write_spec(dir, spec);
  corpus::write_split(dir, corpus::Split::kTrain, train);
  corpus::write_split(dir, corpus::Split::kTest, test);
  Pass p;
  p.corpus = read_tree(dir);

  const auto reread = corpus::read_split(dir, corpus::Split::kTrain);
  const auto test_in = corpus::read_split(dir, corpus::Split::kTest);
  for (auto kind : {models::ModelKind::kVqCpc, models::ModelKind::kVqVae}) {
    models::ModelConfig mc;
    mc.kind = kind;
    mc.input_dim = static_cast<int>(reread.front().features.dim());
    for (int s = 0; s < spec.n_train_speakers(); ++s) mc.speakers.push_back(s);
    auto tc = models::TrainConfig::defaults_for(kind);
    tc.steps = 30;
    tc.seed = 11;
    if (kind != models::ModelKind::kVqVae) tc.segment_frames = 64;
    models::AnyModel m = kind == models::ModelKind::kVqVae ? models::AnyModel(models::VqVaeModel(mc, 13))
                                                           : models::AnyModel(models::CpcModel(mc, 13));
    models::TrainLog log;
    if (auto* c = std::get_if<models::CpcModel>(&m)) {
      log = models::train_vq_cpc(reread, *c, tc);
    } else {
      log = models::train_vq_vae(reread, std::get<models::VqVaeModel>(m), tc);
    }
    p.losses += log.to_jsonl();

    std::vector<models::MatR> code;
    std::vector<std::vector<std::uint32_t>> idx;
    for (const auto& u : test_in) {
      auto e = models::encode(m, u.features);
      code.push_back(e.code_vectors);
      idx.push_back(e.codes.indices);
    }
    std::vector<int> spk;
    for (const auto& u : test_in) spk.push_back(u.speaker);
    eval::ProbeConfig pc;
    pc.steps = 40;
    p.reports += eval::abx_error(test_in, code, 2, "code").to_json().dump();
    p.reports += fmt("%.17g", eval::bitrate(idx, test_duration_s(test_in)));
    p.reports += fmt("%.17g", eval::speaker_probe(code, spk, pc).accuracy);
  }
  return p;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("vqau_acceptance_" + std::to_string(::getpid()));
  const Pass a = determinism_pass(root / "a");
  const Pass b = determinism_pass(root / "b");
  fs::remove_all(root);
  const bool corpus_same = a.corpus == b.corpus, loss_same = a.losses == b.losses, rep_same = a.reports == b.reports;
  return {corpus_same && loss_same && rep_same && !a.corpus.empty(),
          fmt("corpus %zu files %s, loss curves %s, reports %s", a.corpus.size(), corpus_same ? "identical" : "DIFFER",
              loss_same ? "identical" : "DIFFER", rep_same ? "identical" : "DIFFER")};
}

}  // namespace
}  // namespace vqau

int main() {
  using namespace vqau;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"quantizer oracle equivalence", quantizer},
      {"straight-through contract", straight_through},
      {"EMA fixed point", ema_fixed_point},
      {"DTW oracle equivalence", dtw},
      {"InfoNCE analytic point", infonce_zero},
      {"bitrate bounds and anchors", bitrate},
      {"end-to-end ordering", ordering},
      {"speaker swap", speaker_swap},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
