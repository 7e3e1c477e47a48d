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

// Synthetic speech-like corpus with known phone and speaker factors.
//
// Every utterance is a Markov chain over phones. Each phone has a spectral
// template (a few formant-like bumps over the mel bands); a speaker renders
// it through an invertible affine map (frequency warp + gain, plus a smooth
// spectral tilt), and frames get isotropic Gaussian noise. Speaker identity
// is therefore a well-defined factor that a model can learn to remove.

#ifndef VQAU_CORPUS_HPP_
#define VQAU_CORPUS_HPP_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqau/common.hpp"
#include "vqau/io.hpp"

namespace vqau::corpus {

enum class Split { kTrain, kTest };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw UsageError("unknown split '" + s + "' (expected train or test)");
}

struct SpeakerTransform {
  Matd gain;        // dim x dim
  ColVec<double> bias;
};

struct GeneratorSpec {
  int n_phones = 20;
  int n_speakers = 12;
  /// The last n_test_speakers speaker ids form the test split.
  int n_test_speakers = 3;
  int phone_template_dim = 40;
  int mean_phone_duration = 8;
  int duration_jitter = 3;
  double noise_sigma = 2.0;
  int min_utterance_frames = 150;
  int max_utterance_frames = 350;

  // Strength of the per-speaker transforms used when materializing.
  double warp_range = 0.12;
  double bias_scale = 3.0;

  // Feature parameters (only used by log_mel; templates are emitted directly).
  double sample_rate_hz = 16000.0;
  double hop_ms = 10.0;
  double win_ms = 25.0;
  int n_fft = 512;
  int n_mels = 40;

  std::uint64_t seed = 0;

  // Materialized tensors. Empty until materialize() runs.
  Matd phone_templates;  // n_phones x dim
  std::vector<SpeakerTransform> speaker_transforms;
  Matd markov_transition;  // row-stochastic, n_phones x n_phones

  double frame_rate_hz() const { return 1000.0 / hop_ms; }
  int n_train_speakers() const { return n_speakers - n_test_speakers; }
  bool materialized() const { return phone_templates.size() > 0; }
};

struct Segment {
  int phone = 0;
  int start = 0;  // inclusive frame
  int end = 0;    // exclusive frame
  bool operator==(const Segment&) const = default;
};

struct Utterance {
  std::string utterance_id;
  int speaker = 0;
  FeatureSequence features;
  std::vector<int> phone_labels;
  std::vector<Segment> phone_segments;

  Index n_frames() const { return features.n_frames(); }
};

namespace detail {

inline Matd frequency_warp(int dim, double alpha) {
  Matd w = Matd::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    const double src = std::clamp(i * alpha, 0.0, static_cast<double>(dim - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, dim - 1);
    const double frac = src - lo;
    w(i, lo) += 1.0 - frac;
    w(i, hi) += frac;
  }
  return w;
}

inline double condition_number(const Matd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

}  // namespace detail

/// Fills in templates, speaker transforms and the transition matrix from
/// `spec.seed`. Leaves already-materialized tensors untouched.
inline void materialize(GeneratorSpec& spec) {
  require(spec.n_phones >= 3, "generator: n_phones must be >= 3, got ", spec.n_phones);
  require(spec.n_speakers >= 1, "generator: n_speakers must be >= 1");
  require(spec.phone_template_dim >= 2, "generator: phone_template_dim must be >= 2");
  const int dim = spec.phone_template_dim;
  const int np = spec.n_phones;

  if (spec.phone_templates.size() == 0) {
    Rng rng = derive_rng(spec.seed, 101);
    spec.phone_templates = Matd::Zero(np, dim);
    for (int p = 0; p < np; ++p) {
      for (int bump = 0; bump < 3; ++bump) {
        const double center = 1.0 + uniform01(rng) * (dim - 3);
        const double width = 1.2 + uniform01(rng) * 2.5;
        const double height = 1.5 + uniform01(rng) * 2.0;
        for (int i = 0; i < dim; ++i) {
          const double d = (i - center) / width;
          spec.phone_templates(p, i) += height * std::exp(-0.5 * d * d);
        }
      }
      spec.phone_templates.row(p).array() -= 1.0;
    }
  }

  if (spec.speaker_transforms.empty()) {
    for (int s = 0; s < spec.n_speakers; ++s) {
      Rng rng = derive_rng(spec.seed, 202, static_cast<std::uint64_t>(s));
      SpeakerTransform t;
      do {
        const double alpha = 1.0 + (2.0 * uniform01(rng) - 1.0) * spec.warp_range;
        const double gain = 0.8 + 0.4 * uniform01(rng);
        t.gain = gain * (0.8 * detail::frequency_warp(dim, alpha) + 0.2 * Matd::Identity(dim, dim));
      } while (detail::condition_number(t.gain) >= 1e6);
      const double offset = (2.0 * uniform01(rng) - 1.0) * spec.bias_scale;
      const double tilt = (2.0 * uniform01(rng) - 1.0) * spec.bias_scale;
      const double ripple = 0.3 * spec.bias_scale * uniform01(rng);
      const double phase = 6.283185307179586 * uniform01(rng);
      t.bias.resize(dim);
      for (int i = 0; i < dim; ++i) {
        const double x = static_cast<double>(i) / (dim - 1);
        t.bias(i) = offset + tilt * (2.0 * x - 1.0) + ripple * std::cos(6.283185307179586 * x + phase);
      }
      spec.speaker_transforms.push_back(std::move(t));
    }
  }

  if (spec.markov_transition.size() == 0) {
    Rng rng = derive_rng(spec.seed, 303);
    spec.markov_transition = Matd::Zero(np, np);
    const int n_succ = std::min(4, np - 1);
    for (int p = 0; p < np; ++p) {
      std::vector<int> others;
      for (int q = 0; q < np; ++q)
        if (q != p) others.push_back(q);
      // Partial Fisher-Yates to pick the preferred successors.
      for (int k = 0; k < n_succ; ++k) {
        const auto j = k + static_cast<int>(uniform_index(rng, others.size() - k));
        std::swap(others[k], others[j]);
      }
      double floor_mass = 0.1 / (np - 1);
      for (int q : others) spec.markov_transition(p, q) = floor_mass;
      std::vector<double> w(n_succ);
      double total = 0.0;
      for (auto& x : w) total += (x = 0.5 + uniform01(rng));
      for (int k = 0; k < n_succ; ++k) spec.markov_transition(p, others[k]) += 0.9 * w[k] / total;
      spec.markov_transition.row(p) /= spec.markov_transition.row(p).sum();
    }
  }
}

/// Throws UsageError when the spec violates an invariant.
inline void validate(const GeneratorSpec& spec) {
  require(spec.n_phones >= 3, "generator: n_phones must be >= 3 (triphones must exist)");
  require(spec.n_speakers >= 1, "generator: n_speakers must be >= 1");
  require(spec.n_test_speakers >= 0 && spec.n_test_speakers <= spec.n_speakers,
          "generator: n_test_speakers out of range");
  require(spec.mean_phone_duration >= 1 && spec.duration_jitter >= 0 &&
              spec.duration_jitter < spec.mean_phone_duration,
          "generator: need 0 <= duration_jitter < mean_phone_duration");
  require(spec.noise_sigma >= 0.0, "generator: noise_sigma must be >= 0");
  require(spec.min_utterance_frames >= 1 && spec.max_utterance_frames >= spec.min_utterance_frames,
          "generator: bad utterance length range");
  require(spec.materialized(), "generator: spec is not materialized");
  const int dim = spec.phone_template_dim;
  require(spec.phone_templates.rows() == spec.n_phones && spec.phone_templates.cols() == dim,
          "generator: template shape mismatch");
  const auto& p = spec.markov_transition;
  require(p.rows() == spec.n_phones && p.cols() == spec.n_phones,
          "generator: transition matrix shape mismatch");
  for (Index r = 0; r < p.rows(); ++r) {
    require((p.row(r).array() >= 0.0).all(), "generator: negative transition probability in row ", r);
    require(std::abs(p.row(r).sum() - 1.0) <= 1e-9, "generator: transition row ", r,
            " sums to ", p.row(r).sum());
  }
  require(static_cast<int>(spec.speaker_transforms.size()) == spec.n_speakers,
          "generator: need one transform per speaker");
  for (std::size_t s = 0; s < spec.speaker_transforms.size(); ++s) {
    const auto& t = spec.speaker_transforms[s];
    require(t.gain.rows() == dim && t.gain.cols() == dim && t.bias.size() == dim,
            "generator: speaker ", s, " transform shape mismatch");
    require(detail::condition_number(t.gain) < 1e6, "generator: speaker ", s,
            " transform is ill-conditioned");
  }
}

/// Stationary distribution of the phone chain by power iteration.
inline ColVec<double> stationary_distribution(const Matd& transition) {
  const Index n = transition.rows();
  RowVec<double> pi = RowVec<double>::Constant(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < 10000; ++it) {
    RowVec<double> next = pi * transition;
    next /= next.sum();
    const double delta = (next - pi).cwiseAbs().sum();
    pi = next;
    if (delta < 1e-15) break;
  }
  return pi.transpose();
}

/// Speaker ids belonging to a split.
inline std::vector<int> split_speakers(const GeneratorSpec& spec, Split split) {
  std::vector<int> out;
  const int n_train = spec.n_train_speakers();
  if (split == Split::kTrain) {
    for (int s = 0; s < n_train; ++s) out.push_back(s);
  } else {
    for (int s = n_train; s < spec.n_speakers; ++s) out.push_back(s);
  }
  return out;
}

/// Noiseless rendering of one phone by one speaker.
inline RowVec<double> render_template(const GeneratorSpec& spec, int phone, int speaker) {
  const auto& t = spec.speaker_transforms.at(static_cast<std::size_t>(speaker));
  ColVec<double> x = t.gain * spec.phone_templates.row(phone).transpose() + t.bias;
  return x.transpose();
}

/// Renders a segmentation in a given voice. `rng` may be null for a
/// noiseless rendering.
inline FeatureSequence render(const GeneratorSpec& spec, const std::vector<Segment>& segments,
                              int speaker, Rng* rng) {
  const int n_frames = segments.empty() ? 0 : segments.back().end;
  FeatureSequence out;
  out.frame_rate_hz = static_cast<float>(spec.frame_rate_hz());
  out.frames.resize(n_frames, spec.phone_template_dim);
  std::vector<RowVec<double>> cache(static_cast<std::size_t>(spec.n_phones));
  for (const auto& seg : segments) {
    auto& tpl = cache[static_cast<std::size_t>(seg.phone)];
    if (tpl.size() == 0) tpl = render_template(spec, seg.phone, speaker);
    for (int f = seg.start; f < seg.end; ++f) {
      for (Index d = 0; d < tpl.size(); ++d) {
        double v = tpl(d);
        if (rng != nullptr && spec.noise_sigma > 0.0) v += spec.noise_sigma * normal01(*rng);
        out.frames(f, d) = static_cast<float>(v);
      }
    }
  }
  return out;
}

inline std::vector<int> labels_from_segments(const std::vector<Segment>& segments) {
  std::vector<int> labels;
  for (const auto& s : segments) labels.insert(labels.end(), s.end - s.start, s.phone);
  return labels;
}

/// True iff the segments tile [0, n_frames) in order with no gaps.
inline bool segments_tile(const std::vector<Segment>& segments, Index n_frames) {
  int cursor = 0;
  for (const auto& s : segments) {
    if (s.start != cursor || s.end <= s.start) return false;
    cursor = s.end;
  }
  return cursor == n_frames;
}

inline std::string utterance_id(Split split, int speaker, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_s%02d_u%05d", to_string(split).c_str(), speaker, index);
  return buf;
}

/// Generates one utterance of a split. Each index has its own derived
/// generator, so utterances can be produced in any order.
inline Utterance generate_utterance(const GeneratorSpec& spec, Split split, int index,
                                    const ColVec<double>& stationary) {
  const auto speakers = split_speakers(spec, split);
  Rng rng = derive_rng(spec.seed, split == Split::kTrain ? 1 : 2, static_cast<std::uint64_t>(index));
  Utterance u;
  u.speaker = speakers[static_cast<std::size_t>(index) % speakers.size()];
  u.utterance_id = utterance_id(split, u.speaker, index);

  const int target = spec.min_utterance_frames +
                     static_cast<int>(uniform_index(
                         rng, static_cast<std::uint64_t>(spec.max_utterance_frames -
                                                         spec.min_utterance_frames + 1)));
  auto draw = [&rng](const auto& probs) {
    const double r = uniform01(rng);
    double acc = 0.0;
    const int n = static_cast<int>(probs.size());
    for (int i = 0; i < n; ++i) {
      acc += probs(i);
      if (r < acc) return i;
    }
    return n - 1;
  };
  int phone = draw(stationary);
  int cursor = 0;
  while (cursor < target) {
    const int dur = spec.mean_phone_duration - spec.duration_jitter +
                    static_cast<int>(uniform_index(rng, 2 * spec.duration_jitter + 1));
    u.phone_segments.push_back({phone, cursor, cursor + dur});
    cursor += dur;
    phone = draw(spec.markov_transition.row(phone));
  }
  u.phone_labels = labels_from_segments(u.phone_segments);
  u.features = render(spec, u.phone_segments, u.speaker, &rng);
  return u;
}

inline std::vector<Utterance> generate_corpus(const GeneratorSpec& spec, int n_utterances,
                                              Split split) {
  validate(spec);
  require(n_utterances >= 1, "generate_corpus: n_utterances must be >= 1");
  if (split == Split::kTest) {
    require(spec.n_test_speakers >= 2, "generate_corpus: test split needs >= 2 speakers, got ",
            spec.n_test_speakers);
  } else {
    require(spec.n_train_speakers() >= 1, "generate_corpus: train split has no speakers");
  }
  const auto stationary = stationary_distribution(spec.markov_transition);
  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(n_utterances));
  for (int i = 0; i < n_utterances; ++i) out.push_back(generate_utterance(spec, split, i, stationary));
  return out;
}

// --- JSON and on-disk layout -------------------------------------------------

inline nlohmann::json matrix_to_json(const Matd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matd matrix_from_json(const nlohmann::json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j[0].size());
  Matd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    require<FormatError>(static_cast<Index>(j[r].size()) == cols, "ragged matrix in JSON");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline nlohmann::json spec_to_json(const GeneratorSpec& s) {
  nlohmann::json j;
  j["n_phones"] = s.n_phones;
  j["n_speakers"] = s.n_speakers;
  j["n_test_speakers"] = s.n_test_speakers;
  j["phone_template_dim"] = s.phone_template_dim;
  j["mean_phone_duration"] = s.mean_phone_duration;
  j["duration_jitter"] = s.duration_jitter;
  j["noise_sigma"] = s.noise_sigma;
  j["min_utterance_frames"] = s.min_utterance_frames;
  j["max_utterance_frames"] = s.max_utterance_frames;
  j["warp_range"] = s.warp_range;
  j["bias_scale"] = s.bias_scale;
  j["sample_rate_hz"] = s.sample_rate_hz;
  j["hop_ms"] = s.hop_ms;
  j["win_ms"] = s.win_ms;
  j["n_fft"] = s.n_fft;
  j["n_mels"] = s.n_mels;
  j["seed"] = s.seed;
  j["phone_templates"] = matrix_to_json(s.phone_templates);
  j["markov_transition"] = matrix_to_json(s.markov_transition);
  nlohmann::json spk = nlohmann::json::array();
  for (const auto& t : s.speaker_transforms) {
    Matd bias = t.bias.transpose();
    spk.push_back({{"gain", matrix_to_json(t.gain)}, {"bias", matrix_to_json(bias)[0]}});
  }
  j["speaker_transforms"] = std::move(spk);
  return j;
}

inline GeneratorSpec spec_from_json(const nlohmann::json& j) {
  try {
    GeneratorSpec s;
    s.n_phones = j.at("n_phones");
    s.n_speakers = j.at("n_speakers");
    s.n_test_speakers = j.at("n_test_speakers");
    s.phone_template_dim = j.at("phone_template_dim");
    s.mean_phone_duration = j.at("mean_phone_duration");
    s.duration_jitter = j.at("duration_jitter");
    s.noise_sigma = j.at("noise_sigma");
    s.min_utterance_frames = j.at("min_utterance_frames");
    s.max_utterance_frames = j.at("max_utterance_frames");
    s.warp_range = j.at("warp_range");
    s.bias_scale = j.at("bias_scale");
    s.sample_rate_hz = j.at("sample_rate_hz");
    s.hop_ms = j.at("hop_ms");
    s.win_ms = j.at("win_ms");
    s.n_fft = j.at("n_fft");
    s.n_mels = j.at("n_mels");
    s.seed = j.at("seed");
    s.phone_templates = matrix_from_json(j.at("phone_templates"));
    s.markov_transition = matrix_from_json(j.at("markov_transition"));
    for (const auto& t : j.at("speaker_transforms")) {
      SpeakerTransform st;
      st.gain = matrix_from_json(t.at("gain"));
      const auto& b = t.at("bias");
      st.bias.resize(static_cast<Index>(b.size()));
      for (std::size_t i = 0; i < b.size(); ++i) st.bias(static_cast<Index>(i)) = b[i].get<double>();
      s.speaker_transforms.push_back(std::move(st));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("generator spec: ") + e.what());
  }
}

inline nlohmann::json manifest_entry(const Utterance& u, const std::string& path) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : u.phone_segments) segs.push_back({s.phone, s.start, s.end});
  return {{"utterance_id", u.utterance_id},
          {"speaker", u.speaker},
          {"path", path},
          {"n_frames", u.n_frames()},
          {"segments", std::move(segs)}};
}

inline nlohmann::json make_manifest(const std::vector<Utterance>& utts) {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& u : utts) m.push_back(manifest_entry(u, u.utterance_id + ".vqau"));
  return m;
}

/// Writes `<dir>/<split>/manifest.json` and one feature file per utterance.
inline void write_split(const std::filesystem::path& dir, Split split,
                        const std::vector<Utterance>& utts) {
  const auto sub = dir / to_string(split);
  std::filesystem::create_directories(sub);
  for (const auto& u : utts) io::write_features(sub / (u.utterance_id + ".vqau"), u.features);
  io::atomic_write(sub / "manifest.json", make_manifest(utts).dump(2) + "\n");
}

inline void write_spec(const std::filesystem::path& dir, const GeneratorSpec& spec) {
  io::atomic_write(dir / "generator.json", spec_to_json(spec).dump(2) + "\n");
}

inline GeneratorSpec read_spec(const std::filesystem::path& dir) {
  const auto text = io::read_file(dir / "generator.json");
  try {
    return spec_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("generator.json: ") + e.what());
  }
}

inline std::vector<Utterance> read_split(const std::filesystem::path& dir, Split split) {
  const auto sub = dir / to_string(split);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(sub / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  std::vector<Utterance> out;
  try {
    for (const auto& e : manifest) {
      Utterance u;
      u.utterance_id = e.at("utterance_id");
      u.speaker = e.at("speaker");
      u.features = io::read_features(sub / e.at("path").get<std::string>());
      for (const auto& s : e.at("segments")) u.phone_segments.push_back({s[0], s[1], s[2]});
      require<FormatError>(u.n_frames() == e.at("n_frames").get<Index>(),
                           "manifest frame count mismatch for ", u.utterance_id);
      require<FormatError>(segments_tile(u.phone_segments, u.n_frames()),
                           "segments do not tile ", u.utterance_id);
      u.phone_labels = labels_from_segments(u.phone_segments);
      out.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return out;
}

}  // namespace vqau::corpus

#endif  // VQAU_CORPUS_HPP_
