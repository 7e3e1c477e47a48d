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

// The three systems: VQ-CPC, plain CPC (identity bottleneck) and a
// spectrogram VQ-VAE with a speaker-conditioned autoregressive decoder.
// Both encoders halve the frame rate.

#ifndef VQAU_MODELS_HPP_
#define VQAU_MODELS_HPP_

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqau/autograd.hpp"
#include "vqau/checkpoint.hpp"
#include "vqau/corpus.hpp"
#include "vqau/layers.hpp"
#include "vqau/objectives.hpp"
#include "vqau/optim.hpp"
#include "vqau/quantize.hpp"

namespace vqau::models {

enum class ModelKind { kVqCpc, kCpc, kVqVae };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kVqCpc: return "vq-cpc";
    case ModelKind::kCpc: return "cpc";
    case ModelKind::kVqVae: return "vq-vae";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "vq-cpc") return ModelKind::kVqCpc;
  if (s == "cpc") return ModelKind::kCpc;
  if (s == "vq-vae") return ModelKind::kVqVae;
  throw UsageError("unknown model '" + s + "' (expected vq-cpc, vq-vae or cpc)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::kVqCpc;
  int input_dim = 40;
  int channels = 64;      // conv / hidden width of the encoders
  int code_dim = 32;
  int codebook_size = 512;
  double ema_decay = 0.99;
  double beta = 0.25;
  // CPC
  int context_dim = 64;
  obj::CpcConfig cpc;
  // VQ-VAE
  int speaker_dim = 16;
  int decoder_hidden = 64;
  double jitter_p = 0.5;
  double prev_frame_dropout = 0.5;
  std::vector<int> speakers;  // speaker ids of the embedding table rows

  bool quantize_enabled() const { return kind != ModelKind::kCpc; }

  void validate() const {
    require(input_dim >= 1 && channels >= 1 && code_dim >= 1, "model: dimensions must be positive");
    require(codebook_size >= 1, "model: codebook_size must be >= 1");
    require(beta >= 0.0, "model: beta must be >= 0");
    require(jitter_p >= 0.0 && jitter_p <= 1.0, "model: jitter_p must be in [0, 1]");
    require(prev_frame_dropout >= 0.0 && prev_frame_dropout < 1.0,
            "model: prev_frame_dropout must be in [0, 1)");
    if (kind == ModelKind::kVqVae) require(!speakers.empty(), "model: vq-vae needs a speaker table");
    cpc.validate();
  }

  nlohmann::json to_json() const {
    return {{"kind", to_string(kind)},
            {"input_dim", input_dim},
            {"channels", channels},
            {"code_dim", code_dim},
            {"codebook_size", codebook_size},
            {"ema_decay", ema_decay},
            {"beta", beta},
            {"context_dim", context_dim},
            {"horizon", cpc.horizon},
            {"n_negatives", cpc.n_negatives},
            {"sampling", obj::to_string(cpc.mode)},
            {"group_size", cpc.group_size},
            {"speaker_dim", speaker_dim},
            {"decoder_hidden", decoder_hidden},
            {"jitter_p", jitter_p},
            {"prev_frame_dropout", prev_frame_dropout},
            {"speakers", speakers}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    try {
      ModelConfig c;
      c.kind = parse_model_kind(j.at("kind").get<std::string>());
      c.input_dim = j.at("input_dim");
      c.channels = j.at("channels");
      c.code_dim = j.at("code_dim");
      c.codebook_size = j.at("codebook_size");
      c.ema_decay = j.at("ema_decay");
      c.beta = j.at("beta");
      c.context_dim = j.at("context_dim");
      c.cpc.horizon = j.at("horizon");
      c.cpc.n_negatives = j.at("n_negatives");
      c.cpc.mode = obj::parse_sampling(j.at("sampling").get<std::string>());
      c.cpc.group_size = j.at("group_size");
      c.speaker_dim = j.at("speaker_dim");
      c.decoder_hidden = j.at("decoder_hidden");
      c.jitter_p = j.at("jitter_p");
      c.prev_frame_dropout = j.at("prev_frame_dropout");
      c.speakers = j.at("speakers").get<std::vector<int>>();
      return c;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("model config: ") + e.what());
    }
  }
};

struct TrainConfig {
  long steps = 6000;
  int segment_frames = 128;   // input frames per segment
  int batch_segments = 16;    // a multiple of cpc.group_size for CPC models
  double lr = 4e-4;
  double warmup_start_lr = 1e-5;
  double warmup_epochs = 2;  // CPC; an epoch is one pass of segments over the training utterances
  std::vector<double> halving_fractions{0.6, 0.8};  // VQ-VAE; fractions of `steps`
  std::uint64_t seed = 0;
  long log_every = 50;
  long checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_dir;

  /// Defaults for a given model.
  static TrainConfig defaults_for(ModelKind kind) {
    TrainConfig t;
    if (kind == ModelKind::kVqVae) {
      t.segment_frames = 32;
      t.batch_segments = 52;
    }
    return t;
  }

  void validate(const ModelConfig& m) const {
    require(steps >= 1, "train: steps must be >= 1");
    require(batch_segments >= 1, "train: batch_segments must be >= 1");
    require(lr > 0.0, "train: lr must be > 0");
    if (m.kind == ModelKind::kVqVae) {
      require(segment_frames >= 8, "train: segment_frames must cover the encoder receptive field (>= 8)");
    } else {
      require(batch_segments % m.cpc.group_size == 0, "train: batch_segments (", batch_segments,
              ") must be a multiple of group_size (", m.cpc.group_size, ")");
      const int code_frames = (segment_frames + 1) / 2;
      require(code_frames > 2 * m.cpc.horizon, "train: segment of ", segment_frames,
              " frames gives ", code_frames, " codes; need more than 2 * horizon = ", 2 * m.cpc.horizon);
    }
  }

  long steps_per_epoch(std::size_t n_utterances) const {
    return std::max<long>(1, static_cast<long>((n_utterances + static_cast<std::size_t>(batch_segments) - 1) /
                                               static_cast<std::size_t>(batch_segments)));
  }
};

/// Output of encoding one utterance. Rows are at the code rate.
struct EncodeResult {
  CodeSequence codes;       // empty indices for the CPC ablation
  MatR code_vectors;        // the quantized vectors (z itself without VQ)
  MatR pre_quant;           // encoder output z
  MatR aux;                 // context vectors (CPC models) or z (VQ-VAE)
};

/// Per-dimension standardization fitted on the training frames.
struct InputNorm {
  MatR mean, inv_std;  // 1 x dim

  static InputNorm fit(const std::vector<corpus::Utterance>& utts, Index dim) {
    Mat<double> s = Mat<double>::Zero(1, dim), s2 = Mat<double>::Zero(1, dim);
    double n = 0.0;
    for (const auto& u : utts) {
      const Mat<double> f = u.features.frames.cast<double>();
      s += f.colwise().sum();
      s2 += f.array().square().matrix().colwise().sum();
      n += static_cast<double>(f.rows());
    }
    require(n > 0.0, "input norm: no frames");
    InputNorm out;
    const Mat<double> mu = s / n;
    const Mat<double> var = (s2 / n).array() - mu.array().square();
    out.mean = mu.cast<Real>();
    out.inv_std = (var.array().max(1e-8).rsqrt()).matrix().cast<Real>();
    return out;
  }

  MatR apply(const Matf& frames) const {
    require<ShapeError>(frames.cols() == mean.cols(), "input has ", frames.cols(),
                        " dims, model expects ", mean.cols());
    MatR x = frames.cast<Real>();
    x.rowwise() -= mean.row(0);
    x.array().rowwise() *= inv_std.row(0).array();
    return x;
  }

  MatR invert(const MatR& x) const {
    MatR y = x;
    y.array().rowwise() /= inv_std.row(0).array();
    y.rowwise() += mean.row(0);
    return y;
  }
};

namespace detail {

inline void save_codebook(const vq::Codebook<Real>& book, Checkpoint& ck) {
  ck.tensors["codebook.codes"] = book.codes;
  ck.tensors["codebook.ema_counts"] = book.ema_counts;
  ck.tensors["codebook.ema_sums"] = book.ema_sums;
  MatR used(book.size(), 1);
  for (Index i = 0; i < book.size(); ++i) {
    used(i, 0) = book.lifetime_counts[static_cast<std::size_t>(i)] > 0 ? 1.0f : 0.0f;
  }
  ck.tensors["codebook.used"] = used;
}

inline void load_codebook(vq::Codebook<Real>& book, const Checkpoint& ck) {
  const auto& codes = ck.tensor("codebook.codes");
  require<FormatError>(codes.rows() == book.size() && codes.cols() == book.dim(),
                       "checkpoint: codebook shape mismatch");
  book.codes = codes;
  book.ema_counts = ck.tensor("codebook.ema_counts");
  book.ema_sums = ck.tensor("codebook.ema_sums");
  const auto& used = ck.tensor("codebook.used");
  for (Index i = 0; i < book.size(); ++i) {
    book.lifetime_counts[static_cast<std::size_t>(i)] = used(i, 0) > 0.5f ? 1 : 0;
  }
  book.initialized = true;
}

/// A batch of equal-length segments cut from utterances.
struct SegmentBatch {
  MatR x;  // (batch * frames) x dim, normalized
  ag::SeqLayout layout;
  std::vector<obj::SegmentInfo> info;
  std::vector<int> speaker_row;  // per segment, row in the speaker table (VQ-VAE)
};

inline void cut_segment(const MatR& src, Index offset, Index frames, MatR& dst, Index row0) {
  dst.middleRows(row0, frames) = src.middleRows(offset, frames);
}

}  // namespace detail

/// Utterances grouped by speaker with frames normalized once.
class SegmentSampler {
 public:
  SegmentSampler(const std::vector<corpus::Utterance>& utts, const InputNorm& norm, int frames)
      : frames_(frames) {
    for (std::size_t i = 0; i < utts.size(); ++i) {
      if (utts[i].n_frames() < frames) continue;
      data_.push_back(norm.apply(utts[i].features.frames));
      speaker_.push_back(utts[i].speaker);
      index_.push_back(static_cast<int>(i));
      by_speaker_[utts[i].speaker].push_back(data_.size() - 1);
    }
    require(!data_.empty(), "sampler: no utterance has at least ", frames, " frames");
    for (const auto& [spk, list] : by_speaker_) speakers_.push_back(spk);
  }

  std::size_t size() const { return data_.size(); }
  const std::vector<int>& speakers() const { return speakers_; }

  /// Within mode: every group holds segments of a single speaker. Across
  /// mode: segments are drawn from the whole pool.
  detail::SegmentBatch sample(int n_segments, int group_size, bool single_speaker_groups, Rng& rng) const {
    detail::SegmentBatch b;
    const Index dim = data_.front().cols();
    b.layout = {n_segments, frames_};
    b.x.resize(b.layout.rows(), dim);
    int group_speaker = 0;
    for (int s = 0; s < n_segments; ++s) {
      std::size_t u = 0;
      if (single_speaker_groups) {
        if (s % group_size == 0) group_speaker = speakers_[uniform_index(rng, speakers_.size())];
        const auto& pool = by_speaker_.at(group_speaker);
        u = pool[uniform_index(rng, pool.size())];
      } else {
        u = uniform_index(rng, data_.size());
      }
      const Index span = data_[u].rows() - frames_;
      const Index off = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(span + 1)));
      detail::cut_segment(data_[u], off, frames_, b.x, s * frames_);
      b.info.push_back({speaker_[u], index_[u]});
    }
    return b;
  }

 private:
  int frames_;
  std::vector<MatR> data_;
  std::vector<int> speaker_;
  std::vector<int> index_;
  std::map<int, std::vector<std::size_t>> by_speaker_;
  std::vector<int> speakers_;
};

// --- VQ-CPC / CPC ------------------------------------------------------------

struct CpcForward {
  V z, quantized, commitment, context;
  std::vector<std::uint32_t> indices;
  ag::SeqLayout code_layout;
};

class CpcModel {
 public:
  static constexpr int kLinearLayers = 4;

  explicit CpcModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    require(cfg_.kind != ModelKind::kVqVae, "CpcModel: wrong model kind");
    Rng rng = derive_rng(seed, 100, 0);
    const Index c = cfg_.channels;
    conv_ = Conv1d(cfg_.input_dim, c, 4, 2, 1, rng, true);
    for (int i = 0; i < kLinearLayers; ++i) {
      norms_.emplace_back(c);
      layers_.emplace_back(c, c, rng);
    }
    norms_.emplace_back(c);
    proj_ = Linear(c, cfg_.code_dim, rng);
    book_ = vq::Codebook<Real>(cfg_.codebook_size, cfg_.code_dim, cfg_.ema_decay);
    context_ = Gru(cfg_.code_dim, cfg_.context_dim, rng);
    predictors_ = V::parameter(uniform_init(cfg_.context_dim, static_cast<Index>(cfg_.cpc.horizon) * cfg_.code_dim,
                                            1.0 / std::sqrt(static_cast<double>(cfg_.context_dim)), rng));
    norm_.mean = MatR::Zero(1, cfg_.input_dim);
    norm_.inv_std = MatR::Ones(1, cfg_.input_dim);
  }

  const ModelConfig& config() const { return cfg_; }
  vq::Codebook<Real>& codebook() { return book_; }
  const vq::Codebook<Real>& codebook() const { return book_; }
  InputNorm& input_norm() { return norm_; }
  const InputNorm& input_norm() const { return norm_; }
  V& predictors() { return predictors_; }

  std::vector<NamedParam> named_parameters() const {
    std::vector<NamedParam> out;
    conv_.collect("encoder.conv", out);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      norms_[i].collect("encoder.norm" + std::to_string(i), out);
      layers_[i].collect("encoder.linear" + std::to_string(i), out);
    }
    norms_.back().collect("encoder.norm" + std::to_string(layers_.size()), out);
    proj_.collect("encoder.proj", out);
    context_.collect("context", out);
    out.push_back({"predictors", predictors_});
    return out;
  }

  std::vector<V> parameters() const {
    std::vector<V> out;
    for (auto& p : named_parameters()) out.push_back(p.value);
    return out;
  }

  /// Encoder z at half the input rate.
  V encoder(const V& x, ag::SeqLayout layout, ag::SeqLayout* code_layout = nullptr) const {
    V h = conv_(x, layout);
    for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i](ag::relu(norms_[i](h)));
    h = proj_(ag::relu(norms_.back()(h)));
    if (code_layout != nullptr) *code_layout = {layout.batch, conv_.out_steps(layout.steps)};
    return h;
  }

  CpcForward forward(const V& x, ag::SeqLayout layout) const {
    CpcForward f;
    f.z = encoder(x, layout, &f.code_layout);
    if (cfg_.quantize_enabled()) {
      require(book_.initialized, "CpcModel: codebook is not initialized");
      auto b = vq::bottleneck(f.z, book_);
      f.quantized = b.quantized;
      f.commitment = b.commitment;
      f.indices = std::move(b.indices);
    } else {
      f.quantized = f.z;
    }
    f.context = context_(f.quantized, f.code_layout);
    return f;
  }

  EncodeResult encode(const FeatureSequence& features) const {
    require(features.n_frames() >= 1, "encode: empty utterance");
    ag::NoGradGuard no_grad;
    const V x = V::constant(norm_.apply(features.frames));
    const auto f = forward(x, {1, features.n_frames()});
    EncodeResult r;
    r.pre_quant = f.z.data();
    r.code_vectors = f.quantized.data();
    r.aux = f.context.data();
    r.codes.frame_rate_hz = features.frame_rate_hz / 2.0f;
    r.codes.indices = f.indices;
    return r;
  }

  Checkpoint to_checkpoint(long step) const {
    Checkpoint ck;
    ck.arch = cfg_.to_json();
    ck.step = step;
    save_params(named_parameters(), ck);
    ck.tensors["input.mean"] = norm_.mean;
    ck.tensors["input.inv_std"] = norm_.inv_std;
    if (cfg_.quantize_enabled()) detail::save_codebook(book_, ck);
    return ck;
  }

  static CpcModel from_checkpoint(const Checkpoint& ck) {
    CpcModel m(ModelConfig::from_json(ck.arch));
    auto params = m.named_parameters();
    load_params(params, ck);
    m.norm_.mean = ck.tensor("input.mean");
    m.norm_.inv_std = ck.tensor("input.inv_std");
    require<FormatError>(m.norm_.mean.cols() == m.cfg_.input_dim, "checkpoint: input norm shape mismatch");
    if (m.cfg_.quantize_enabled()) detail::load_codebook(m.book_, ck);
    return m;
  }

 private:
  ModelConfig cfg_;
  Conv1d conv_;
  std::vector<LayerNorm> norms_;
  std::vector<Linear> layers_;
  Linear proj_;
  vq::Codebook<Real> book_;
  Gru context_;
  V predictors_;
  InputNorm norm_;
};

// --- VQ-VAE -------------------------------------------------------------------

struct VaeForward {
  V z, quantized, commitment, reconstruction;
  std::vector<std::uint32_t> indices;
  ag::SeqLayout code_layout;
};

class VqVaeModel {
 public:
  static constexpr int kConvLayers = 5;

  explicit VqVaeModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    require(cfg_.kind == ModelKind::kVqVae, "VqVaeModel: wrong model kind");
    Rng rng = derive_rng(seed, 200, 0);
    const Index c = cfg_.channels;
    // (kernel, stride, left pad); the third layer downsamples.
    const Index geom[kConvLayers][3] = {{3, 1, 1}, {3, 1, 1}, {4, 2, 1}, {3, 1, 1}, {3, 1, 1}};
    for (int i = 0; i < kConvLayers; ++i) {
      convs_.emplace_back(i == 0 ? cfg_.input_dim : c, c, geom[i][0], geom[i][1], geom[i][2], rng, false);
      bns_.emplace_back(c);
    }
    proj_ = Linear(c, cfg_.code_dim, rng);
    book_ = vq::Codebook<Real>(cfg_.codebook_size, cfg_.code_dim, cfg_.ema_decay);
    speakers_ = V::parameter(uniform_init(static_cast<Index>(cfg_.speakers.size()), cfg_.speaker_dim, 1.0, rng));
    cond_ = Gru(cfg_.code_dim + cfg_.speaker_dim, cfg_.decoder_hidden, rng);
    ar_ = Gru(cfg_.decoder_hidden + cfg_.input_dim, cfg_.decoder_hidden, rng);
    out_ = Linear(cfg_.decoder_hidden, cfg_.input_dim, rng);
    norm_.mean = MatR::Zero(1, cfg_.input_dim);
    norm_.inv_std = MatR::Ones(1, cfg_.input_dim);
  }

  const ModelConfig& config() const { return cfg_; }
  vq::Codebook<Real>& codebook() { return book_; }
  const vq::Codebook<Real>& codebook() const { return book_; }
  InputNorm& input_norm() { return norm_; }
  const InputNorm& input_norm() const { return norm_; }

  /// Row of `speaker` in the embedding table.
  int speaker_row(int speaker) const {
    for (std::size_t i = 0; i < cfg_.speakers.size(); ++i) {
      if (cfg_.speakers[i] == speaker) return static_cast<int>(i);
    }
    throw UsageError(str_cat("unknown speaker id ", speaker, " (not in the training speaker table)"));
  }

  std::vector<NamedParam> named_parameters() const {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect("encoder.conv" + std::to_string(i), out);
      bns_[i].collect("encoder.bn" + std::to_string(i), out);
    }
    proj_.collect("encoder.proj", out);
    out.push_back({"speaker_embedding", speakers_});
    cond_.collect("decoder.cond", out);
    ar_.collect("decoder.ar", out);
    out_.collect("decoder.out", out);
    return out;
  }

  std::vector<V> parameters() const {
    std::vector<V> out;
    for (auto& p : named_parameters()) out.push_back(p.value);
    return out;
  }

  V encoder_train(const V& x, ag::SeqLayout layout, ag::SeqLayout& code_layout) {
    V h = x;
    ag::SeqLayout l = layout;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = ag::relu(bns_[i].train(convs_[i](h, l)));
      l.steps = convs_[i].out_steps(l.steps);
    }
    code_layout = l;
    return proj_(h);
  }

  V encoder_eval(const V& x, ag::SeqLayout layout, ag::SeqLayout& code_layout) const {
    V h = x;
    ag::SeqLayout l = layout;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = ag::relu(bns_[i].eval(convs_[i](h, l)));
      l.steps = convs_[i].out_steps(l.steps);
    }
    code_layout = l;
    return proj_(h);
  }

  /// Training pass with jitter and teacher forcing. `x` is normalized.
  VaeForward forward_train(const V& x, ag::SeqLayout layout, const std::vector<int>& speaker_rows, Rng& rng) {
    require(book_.initialized, "VqVaeModel: codebook is not initialized");
    VaeForward f;
    f.z = encoder_train(x, layout, f.code_layout);
    auto b = vq::bottleneck(f.z, book_);
    f.quantized = b.quantized;
    f.commitment = b.commitment;
    f.indices = std::move(b.indices);
    V q = cfg_.jitter_p > 0.0 ? vq::time_jitter(f.quantized, f.code_layout, cfg_.jitter_p, rng) : f.quantized;

    const Index n = layout.steps;
    std::vector<Index> up, prev, spk;
    for (Index s = 0; s < layout.batch; ++s) {
      for (Index t = 0; t < n; ++t) {
        up.push_back(s * f.code_layout.steps + t / 2);
        prev.push_back(t == 0 ? -1 : s * n + t - 1);
        spk.push_back(speaker_rows[static_cast<std::size_t>(s)]);
      }
    }
    const V cond_in = ag::concat_cols<Real>({ag::gather_rows(q, std::move(up)), ag::embedding(speakers_, std::move(spk))});
    const V cond = cond_(cond_in, layout);
    V prev_frames = ag::gather_rows(x, std::move(prev));
    if (cfg_.prev_frame_dropout > 0.0) {
      MatR mask(layout.rows(), cfg_.input_dim);
      const Real keep = static_cast<Real>(1.0 / (1.0 - cfg_.prev_frame_dropout));
      for (Index r = 0; r < mask.rows(); ++r) {
        mask.row(r).setConstant(uniform01(rng) < cfg_.prev_frame_dropout ? Real(0) : keep);
      }
      prev_frames = ag::mul(prev_frames, V::constant(std::move(mask)));
    }
    f.reconstruction = out_(ar_(ag::concat_cols<Real>({cond, prev_frames}), layout));
    return f;
  }

  EncodeResult encode(const FeatureSequence& features) const {
    require(features.n_frames() >= 1, "encode: empty utterance");
    ag::NoGradGuard no_grad;
    ag::SeqLayout code_layout;
    const V z = encoder_eval(V::constant(norm_.apply(features.frames)), {1, features.n_frames()}, code_layout);
    auto q = vq::quantize(z.data(), book_);
    EncodeResult r;
    r.pre_quant = z.data();
    r.aux = z.data();
    r.code_vectors = std::move(q.quantized);
    r.codes.indices = std::move(q.indices);
    r.codes.frame_rate_hz = features.frame_rate_hz / 2.0f;
    return r;
  }

  /// Free-running decode of code vectors (code rate) into `n_frames`
  /// normalized frames in the voice of table row `row`.
  MatR decode(const MatR& code_vectors, Index n_frames, int row) const {
    ag::NoGradGuard no_grad;
    const Index cd = code_vectors.rows();
    require(cd >= 1 && (n_frames + 1) / 2 <= cd, "decode: ", cd, " codes cannot cover ", n_frames, " frames");
    MatR cond_in(n_frames, cfg_.code_dim + cfg_.speaker_dim);
    for (Index t = 0; t < n_frames; ++t) {
      cond_in.row(t) << code_vectors.row(t / 2), speakers_.data().row(row);
    }
    const MatR cond = cond_(V::constant(std::move(cond_in)), {1, n_frames}).data();
    MatR out(n_frames, cfg_.input_dim);
    MatR h = MatR::Zero(1, cfg_.decoder_hidden);
    MatR step_in(1, cfg_.decoder_hidden + cfg_.input_dim);
    RowVec<Real> prev = RowVec<Real>::Zero(cfg_.input_dim);
    for (Index t = 0; t < n_frames; ++t) {
      step_in << cond.row(t), prev;
      h = ar_.step(step_in, h);
      prev = h * out_.w.data() + out_.b.data();
      out.row(t) = prev;
    }
    return out;
  }

  /// Reconstruction of `features` in the voice of `speaker` (jitter off).
  FeatureSequence convert(const FeatureSequence& features, int speaker) const {
    const int row = speaker_row(speaker);
    const auto enc = encode(features);
    FeatureSequence out;
    out.frame_rate_hz = features.frame_rate_hz;
    out.frames = norm_.invert(decode(enc.code_vectors, features.n_frames(), row)).cast<float>();
    return out;
  }

  Checkpoint to_checkpoint(long step) const {
    Checkpoint ck;
    ck.arch = cfg_.to_json();
    ck.step = step;
    save_params(named_parameters(), ck);
    for (std::size_t i = 0; i < bns_.size(); ++i) bns_[i].save_buffers("encoder.bn" + std::to_string(i), ck);
    ck.tensors["input.mean"] = norm_.mean;
    ck.tensors["input.inv_std"] = norm_.inv_std;
    detail::save_codebook(book_, ck);
    return ck;
  }

  static VqVaeModel from_checkpoint(const Checkpoint& ck) {
    VqVaeModel m(ModelConfig::from_json(ck.arch));
    auto params = m.named_parameters();
    load_params(params, ck);
    for (std::size_t i = 0; i < m.bns_.size(); ++i) m.bns_[i].load_buffers("encoder.bn" + std::to_string(i), ck);
    m.norm_.mean = ck.tensor("input.mean");
    m.norm_.inv_std = ck.tensor("input.inv_std");
    require<FormatError>(m.norm_.mean.cols() == m.cfg_.input_dim, "checkpoint: input norm shape mismatch");
    detail::load_codebook(m.book_, ck);
    return m;
  }

 private:
  ModelConfig cfg_;
  std::vector<Conv1d> convs_;
  std::vector<BatchNorm> bns_;
  Linear proj_;
  vq::Codebook<Real> book_;
  V speakers_;
  Gru cond_, ar_;
  Linear out_;
  InputNorm norm_;
};

using AnyModel = std::variant<CpcModel, VqVaeModel>;

inline AnyModel model_from_checkpoint(const Checkpoint& ck) {
  const auto cfg = ModelConfig::from_json(ck.arch);
  if (cfg.kind == ModelKind::kVqVae) return VqVaeModel::from_checkpoint(ck);
  return CpcModel::from_checkpoint(ck);
}

inline AnyModel load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(load_checkpoint(path));
}

inline EncodeResult encode(const AnyModel& model, const FeatureSequence& features) {
  return std::visit([&](const auto& m) { return m.encode(features); }, model);
}

inline const ModelConfig& model_config(const AnyModel& model) {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config(); }, model);
}

inline Checkpoint to_checkpoint(const AnyModel& model, long step) {
  return std::visit([step](const auto& m) { return m.to_checkpoint(step); }, model);
}

/// Voice conversion: re-synthesize `source` with the embedding of `target_speaker`.
inline FeatureSequence convert_speaker(const VqVaeModel& model, const FeatureSequence& source, int target_speaker) {
  return model.convert(source, target_speaker);
}

// --- training -----------------------------------------------------------------

struct TrainLog {
  std::vector<obj::StepMetrics> steps;
  double final_perplexity = 0.0;

  /// One JSON object per line.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& m : steps) out += m.to_json().dump() + "\n";
    return out;
  }
};

namespace detail {

inline double batch_perplexity(const std::vector<std::uint32_t>& indices, Index k) {
  if (indices.empty()) return 0.0;
  const auto hist = vq::code_histogram(indices, k);
  return vq::codebook_perplexity<std::uint64_t>(hist);
}

[[noreturn]] inline void abort_non_finite(const obj::StepMetrics& m, const TrainConfig& cfg) {
  const auto diag = m.to_json();
  if (!cfg.checkpoint_dir.empty()) io::atomic_write(cfg.checkpoint_dir / "diagnostic.json", diag.dump(2) + "\n");
  throw NumericError("non-finite loss at step " + std::to_string(m.step) + ": " + diag.dump());
}

template <typename Model>
void maybe_checkpoint(const Model& model, const TrainConfig& cfg, long step) {
  if (cfg.checkpoint_every <= 0 || cfg.checkpoint_dir.empty() || step % cfg.checkpoint_every != 0) return;
  char name[32];
  std::snprintf(name, sizeof(name), "step_%07ld.ckpt", step);
  save_checkpoint(cfg.checkpoint_dir / name, model.to_checkpoint(step));
}

/// Perplexity of the codes assigned over a set of utterances.
template <typename Model>
double corpus_perplexity(const Model& model, const std::vector<corpus::Utterance>& utts) {
  std::vector<std::uint32_t> all;
  for (const auto& u : utts) {
    const auto r = model.encode(u.features);
    all.insert(all.end(), r.codes.indices.begin(), r.codes.indices.end());
  }
  return batch_perplexity(all, model.codebook().size());
}

}  // namespace detail

using StepCallback = std::function<void(const obj::StepMetrics&)>;

/// Trains a VQ-CPC (or plain CPC) model in place. Learning rate ramps
/// linearly from warmup_start_lr to lr over warmup_epochs epochs.
inline TrainLog train_vq_cpc(const std::vector<corpus::Utterance>& corpus, CpcModel& model, const TrainConfig& cfg,
                             const StepCallback& on_step = {}) {
  const auto& mc = model.config();
  cfg.validate(mc);
  require(!corpus.empty(), "train: empty corpus");
  model.input_norm() = InputNorm::fit(corpus, mc.input_dim);
  const SegmentSampler sampler(corpus, model.input_norm(), cfg.segment_frames);
  const bool within = mc.cpc.mode == obj::SamplingMode::kWithinSpeaker;
  const long warmup = static_cast<long>(std::llround(cfg.warmup_epochs * static_cast<double>(cfg.steps_per_epoch(sampler.size()))));
  ag::Adam<Real> opt(model.parameters(), ag::Schedule::warmup(cfg.warmup_start_lr, cfg.lr, warmup));
  Rng batch_rng = derive_rng(cfg.seed, 11, 0);
  Rng neg_rng = derive_rng(cfg.seed, 12, 0);
  TrainLog log;
  for (long step = 1; step <= cfg.steps; ++step) {
    auto batch = sampler.sample(cfg.batch_segments, mc.cpc.group_size, within, batch_rng);
    const V x = V::constant(std::move(batch.x));
    if (mc.quantize_enabled() && !model.codebook().initialized) {
      ag::NoGradGuard no_grad;
      Rng init_rng = derive_rng(cfg.seed, 13, 0);
      vq::init_from_batch(model.codebook(), model.encoder(x, batch.layout).data(), init_rng);
    }
    auto f = model.forward(x, batch.layout);
    const auto neg = obj::sample_negatives(f.code_layout, batch.info, mc.cpc, neg_rng);
    auto nce = obj::infonce_loss(f.quantized, f.context, model.predictors(), neg);
    V loss = nce.loss;
    if (mc.quantize_enabled()) loss = ag::add(loss, ag::scale(f.commitment, static_cast<Real>(mc.beta)));

    obj::StepMetrics m;
    m.step = step;
    m.loss = loss.item();
    m.commitment = mc.quantize_enabled() ? static_cast<double>(f.commitment.item()) : 0.0;
    m.perplexity = detail::batch_perplexity(f.indices, model.codebook().size());
    m.accuracy = nce.accuracy;
    if (!std::isfinite(m.loss)) detail::abort_non_finite(m, cfg);

    opt.zero_grad();
    loss.backward();
    opt.step();
    m.lr = opt.last_lr();
    if (mc.quantize_enabled()) vq::ema_update(model.codebook(), f.z.data(), std::span<const std::uint32_t>(f.indices));
    if (step % cfg.log_every == 0 || step == cfg.steps || step == 1) log.steps.push_back(m);
    if (on_step) on_step(m);
    detail::maybe_checkpoint(model, cfg, step);
  }
  if (mc.quantize_enabled()) log.final_perplexity = detail::corpus_perplexity(model, corpus);
  return log;
}

/// Trains a VQ-VAE in place with a step-halving schedule.
inline TrainLog train_vq_vae(const std::vector<corpus::Utterance>& corpus, VqVaeModel& model, const TrainConfig& cfg,
                             const StepCallback& on_step = {}) {
  const auto& mc = model.config();
  cfg.validate(mc);
  require(!corpus.empty(), "train: empty corpus");
  for (const auto& u : corpus) (void)model.speaker_row(u.speaker);
  model.input_norm() = InputNorm::fit(corpus, mc.input_dim);
  const SegmentSampler sampler(corpus, model.input_norm(), cfg.segment_frames);
  std::vector<long> milestones;
  for (double f : cfg.halving_fractions) milestones.push_back(static_cast<long>(std::llround(f * static_cast<double>(cfg.steps))));
  ag::Adam<Real> opt(model.parameters(), ag::Schedule::halving(cfg.lr, milestones));
  Rng batch_rng = derive_rng(cfg.seed, 21, 0);
  Rng aug_rng = derive_rng(cfg.seed, 22, 0);
  TrainLog log;
  for (long step = 1; step <= cfg.steps; ++step) {
    auto batch = sampler.sample(cfg.batch_segments, cfg.batch_segments, false, batch_rng);
    std::vector<int> rows;
    for (const auto& s : batch.info) rows.push_back(model.speaker_row(s.speaker));
    const V x = V::constant(std::move(batch.x));
    if (!model.codebook().initialized) {
      ag::NoGradGuard no_grad;
      ag::SeqLayout cl;
      Rng init_rng = derive_rng(cfg.seed, 23, 0);
      vq::init_from_batch(model.codebook(), model.encoder_eval(x, batch.layout, cl).data(), init_rng);
    }
    auto f = model.forward_train(x, batch.layout, rows, aug_rng);
    const V loss = obj::vqvae_loss(f.reconstruction, x, f.commitment, static_cast<Real>(mc.beta));

    obj::StepMetrics m;
    m.step = step;
    m.loss = loss.item();
    m.commitment = f.commitment.item();
    m.perplexity = detail::batch_perplexity(f.indices, model.codebook().size());
    if (!std::isfinite(m.loss)) detail::abort_non_finite(m, cfg);

    opt.zero_grad();
    loss.backward();
    opt.step();
    m.lr = opt.last_lr();
    vq::ema_update(model.codebook(), f.z.data(), std::span<const std::uint32_t>(f.indices));
    if (step % cfg.log_every == 0 || step == cfg.steps || step == 1) log.steps.push_back(m);
    if (on_step) on_step(m);
    detail::maybe_checkpoint(model, cfg, step);
  }
  log.final_perplexity = detail::corpus_perplexity(model, corpus);
  return log;
}

}  // namespace vqau::models

#endif  // VQAU_MODELS_HPP_
