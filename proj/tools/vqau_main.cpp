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

// vqau: corpus generation, training, encoding, evaluation, probing and
// conversion from one entry point.
//
// Exit status: 0 ok, 1 usage, 2 I/O or format, 3 numeric failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vqau/checkpoint.hpp"
#include "vqau/corpus.hpp"
#include "vqau/eval.hpp"
#include "vqau/io.hpp"
#include "vqau/models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vqau;

namespace {

struct Globals {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int verbose = 0;
};

/// Provenance attached to every artifact.
struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;

  json to_json(const std::string& command) const {
    return {{"command", command}, {"config_hash", config_hash}, {"seed", seed}, {"version", std::string(kVersion)}};
  }
};

fs::path resolve_out(const Globals& g, const std::string& explicit_path, const std::string& default_name) {
  if (!explicit_path.empty()) return explicit_path;
  return fs::path(g.out_dir) / default_name;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::atomic_write(path, j.dump(2) + "\n");
}

void log(const Globals& g, const std::string& msg) {
  if (g.verbose > 0) std::cerr << msg << "\n";
}

std::vector<corpus::Utterance> load_split(const std::string& dir, const std::string& split, int limit = 0) {
  require<FormatError>(fs::is_directory(dir), "corpus directory not found: ", dir);
  auto utts = corpus::read_split(dir, corpus::parse_split(split));
  if (limit > 0 && static_cast<int>(utts.size()) > limit) utts.resize(static_cast<std::size_t>(limit));
  require(!utts.empty(), "split '", split, "' of ", dir, " is empty");
  return utts;
}

models::AnyModel load_model_checked(const std::string& path) {
  require<FormatError>(!path.empty(), "--checkpoint is required");
  require<FormatError>(fs::exists(path), "checkpoint not found: ", path);
  return models::load_model(path);
}

// --- gen-data -----------------------------------------------------------------

struct GenOptions {
  std::string out;
  int n_train = 600;
  int n_test = 120;
  corpus::GeneratorSpec spec;
};

void add_gen(CLI::App& app, GenOptions& o) {
  app.add_option("--out", o.out, "corpus directory (default <out-dir>/corpus)");
  app.add_option("--n-train", o.n_train, "training utterances")->capture_default_str();
  app.add_option("--n-test", o.n_test, "test utterances")->capture_default_str();
  auto& s = o.spec;
  app.add_option("--n-phones", s.n_phones)->capture_default_str();
  app.add_option("--n-speakers", s.n_speakers)->capture_default_str();
  app.add_option("--n-test-speakers", s.n_test_speakers)->capture_default_str();
  app.add_option("--dim", s.phone_template_dim, "feature dimension")->capture_default_str();
  app.add_option("--mean-phone-duration", s.mean_phone_duration)->capture_default_str();
  app.add_option("--duration-jitter", s.duration_jitter)->capture_default_str();
  app.add_option("--noise-sigma", s.noise_sigma)->capture_default_str();
  app.add_option("--min-frames", s.min_utterance_frames)->capture_default_str();
  app.add_option("--max-frames", s.max_utterance_frames)->capture_default_str();
  app.add_option("--warp-range", s.warp_range)->capture_default_str();
  app.add_option("--bias-scale", s.bias_scale)->capture_default_str();
}

void run_gen(const Globals& g, GenOptions o, const Provenance& prov) {
  o.spec.seed = g.seed;
  corpus::materialize(o.spec);
  corpus::validate(o.spec);
  const auto train = corpus::generate_corpus(o.spec, o.n_train, corpus::Split::kTrain);
  const auto test = corpus::generate_corpus(o.spec, o.n_test, corpus::Split::kTest);
  const fs::path dir = resolve_out(g, o.out, "corpus");
  fs::create_directories(dir);
  corpus::write_spec(dir, o.spec);
  corpus::write_split(dir, corpus::Split::kTrain, train);
  corpus::write_split(dir, corpus::Split::kTest, test);
  double frames = 0.0;
  for (const auto* split : {&train, &test}) {
    for (const auto& u : *split) frames += static_cast<double>(u.n_frames());
  }
  json p = prov.to_json("gen-data");
  p["n_train"] = train.size();
  p["n_test"] = test.size();
  p["duration_s"] = frames / o.spec.frame_rate_hz();
  write_json(dir / "provenance.json", p);
  log(g, str_cat("wrote ", train.size(), " + ", test.size(), " utterances to ", dir.string()));
}

// --- train --------------------------------------------------------------------

struct TrainOptions {
  std::string corpus;
  std::string model = "vq-cpc";
  std::string sampling = "within";
  std::string checkpoint;
  std::string metrics;
  models::ModelConfig mc;
  models::TrainConfig tc;
  long segment_frames = 0;
  long batch_segments = 0;
};

void add_train(CLI::App& app, TrainOptions& o) {
  app.add_option("--corpus", o.corpus, "corpus directory")->required();
  app.add_option("--model", o.model, "vq-cpc, vq-vae or cpc")
      ->check(CLI::IsMember({"vq-cpc", "vq-vae", "cpc"}))
      ->capture_default_str();
  app.add_option("--sampling", o.sampling, "negative sampling: within or across")
      ->check(CLI::IsMember({"within", "across"}))
      ->capture_default_str();
  app.add_option("--checkpoint", o.checkpoint, "output checkpoint (default <out-dir>/<model>.ckpt)");
  app.add_option("--metrics", o.metrics, "metrics log, JSON lines (default <checkpoint>.metrics.jsonl)");
  app.add_option("--steps", o.tc.steps)->capture_default_str();
  app.add_option("--lr", o.tc.lr)->capture_default_str();
  app.add_option("--warmup-start-lr", o.tc.warmup_start_lr)->capture_default_str();
  app.add_option("--warmup-epochs", o.tc.warmup_epochs)->capture_default_str();
  app.add_option("--segment-frames", o.segment_frames, "input frames per segment (0: model default)")
      ->capture_default_str();
  app.add_option("--batch-segments", o.batch_segments, "segments per batch (0: model default)")
      ->capture_default_str();
  app.add_option("--log-every", o.tc.log_every)->capture_default_str();
  app.add_option("--checkpoint-every", o.tc.checkpoint_every)->capture_default_str();
  auto& m = o.mc;
  app.add_option("--channels", m.channels)->capture_default_str();
  app.add_option("--code-dim", m.code_dim)->capture_default_str();
  app.add_option("--codebook-size", m.codebook_size)->capture_default_str();
  app.add_option("--context-dim", m.context_dim)->capture_default_str();
  app.add_option("--beta", m.beta)->capture_default_str();
  app.add_option("--horizon", m.cpc.horizon)->capture_default_str();
  app.add_option("--n-negatives", m.cpc.n_negatives)->capture_default_str();
  app.add_option("--group-size", m.cpc.group_size)->capture_default_str();
  app.add_option("--speaker-dim", m.speaker_dim)->capture_default_str();
  app.add_option("--decoder-hidden", m.decoder_hidden)->capture_default_str();
  app.add_option("--jitter", m.jitter_p)->capture_default_str();
}

void run_train(const Globals& g, TrainOptions o, const Provenance& prov) {
  auto& mc = o.mc;
  mc.kind = models::parse_model_kind(o.model);
  mc.cpc.mode = obj::parse_sampling(o.sampling);
  const auto defaults = models::TrainConfig::defaults_for(mc.kind);
  o.tc.segment_frames = o.segment_frames > 0 ? static_cast<int>(o.segment_frames) : defaults.segment_frames;
  o.tc.batch_segments = o.batch_segments > 0 ? static_cast<int>(o.batch_segments) : defaults.batch_segments;
  o.tc.seed = g.seed;
  const auto train = load_split(o.corpus, "train");
  mc.input_dim = static_cast<int>(train.front().features.dim());
  if (mc.kind == models::ModelKind::kVqVae) {
    std::set<int> spk;
    for (const auto& u : train) spk.insert(u.speaker);
    mc.speakers.assign(spk.begin(), spk.end());
  }
  const fs::path ckpt = resolve_out(g, o.checkpoint, o.model + ".ckpt");
  const fs::path metrics = o.metrics.empty() ? fs::path(ckpt.string() + ".metrics.jsonl") : fs::path(o.metrics);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  if (o.tc.checkpoint_every > 0) o.tc.checkpoint_dir = ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path();

  auto on_step = [&g](const obj::StepMetrics& m) {
    if (g.verbose > 0 && m.step % 100 == 0) {
      std::fprintf(stderr, "step %ld loss %.4f perplexity %.1f lr %.2e\n", m.step, m.loss, m.perplexity, m.lr);
    }
  };
  models::AnyModel model = mc.kind == models::ModelKind::kVqVae ? models::AnyModel(models::VqVaeModel(mc, g.seed))
                                                                : models::AnyModel(models::CpcModel(mc, g.seed));
  models::TrainLog tlog;
  if (auto* m = std::get_if<models::CpcModel>(&model)) {
    tlog = models::train_vq_cpc(train, *m, o.tc, on_step);
  } else {
    tlog = models::train_vq_vae(train, std::get<models::VqVaeModel>(model), o.tc, on_step);
  }
  auto ck = models::to_checkpoint(model, o.tc.steps);
  ck.meta = prov.to_json("train");
  save_checkpoint(ckpt, ck);
  std::string lines;
  for (const auto& m : tlog.steps) {
    json j = m.to_json();
    j["config_hash"] = prov.config_hash;
    j["seed"] = prov.seed;
    j["version"] = std::string(kVersion);
    lines += j.dump() + "\n";
  }
  io::atomic_write(metrics, lines);
  const double final_loss = tlog.steps.empty() ? 0.0 : tlog.steps.back().loss;
  write_json(ckpt.string() + ".train.json",
             eval::metric_report("final_loss", final_loss, prov.config_hash, prov.seed,
                                 static_cast<std::size_t>(o.tc.steps),
                                 {{"model", o.model}, {"sampling", o.sampling},
                                  {"final_perplexity", tlog.final_perplexity}, {"checkpoint", ckpt.string()}}));
  log(g, str_cat("saved ", ckpt.string()));
}

// --- encode ------------------------------------------------------------------

struct EncodeOptions {
  std::string checkpoint, corpus, split = "test", out;
  bool features = false;
  bool alignment = false;
};

void add_encode(CLI::App& app, EncodeOptions& o) {
  app.add_option("--checkpoint", o.checkpoint)->required();
  app.add_option("--corpus", o.corpus)->required();
  app.add_option("--split", o.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  app.add_option("--out", o.out, "output directory (default <out-dir>/codes)");
  app.add_flag("--features", o.features, "also write pre-quantization and aux features");
  app.add_flag("--alignment", o.alignment, "also write code/phone alignment CSVs");
}

void run_encode(const Globals& g, const EncodeOptions& o, const Provenance& prov) {
  const auto model = load_model_checked(o.checkpoint);
  const auto utts = load_split(o.corpus, o.split);
  const fs::path dir = resolve_out(g, o.out, "codes");
  fs::create_directories(dir);
  std::size_t n_codes = 0;
  const bool has_codes = models::model_config(model).quantize_enabled();
  for (const auto& u : utts) {
    const auto r = models::encode(model, u.features);
    if (has_codes) {
      io::write_codes(dir / (u.utterance_id + ".codes.vqau"), r.codes);
      n_codes += r.codes.indices.size();
      if (o.alignment) {
        io::atomic_write(dir / (u.utterance_id + ".align.csv"),
                         eval::alignment_csv(eval::export_alignment(u.phone_labels, r.codes)));
      }
    }
    if (o.features || !has_codes) {
      const float rate = r.codes.frame_rate_hz;
      io::write_features(dir / (u.utterance_id + ".prequant.vqau"), {r.pre_quant, rate});
      io::write_features(dir / (u.utterance_id + ".aux.vqau"), {r.aux, rate});
    }
  }
  json p = prov.to_json("encode");
  p["checkpoint"] = o.checkpoint;
  p["n_utterances"] = utts.size();
  p["n_codes"] = n_codes;
  write_json(dir / "encode.json", p);
}

// --- eval-abx ----------------------------------------------------------------

struct AbxOptions {
  std::string checkpoint, corpus, split = "test", rep = "code", out;
  std::size_t max_triples = 5000;
};

void add_abx(CLI::App& app, AbxOptions& o) {
  app.add_option("--checkpoint", o.checkpoint, "model checkpoint (not used with --rep raw)");
  app.add_option("--corpus", o.corpus)->required();
  app.add_option("--split", o.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  app.add_option("--rep", o.rep, "code, pre-quant, aux or raw")
      ->check(CLI::IsMember({"code", "pre-quant", "aux", "raw"}))
      ->capture_default_str();
  app.add_option("--max-triples", o.max_triples)->capture_default_str();
  app.add_option("--out", o.out, "report (default <out-dir>/abx_<rep>.json)");
}

/// Representations of a split at a given probe point; `downsample` is set
/// to the frame-rate ratio against the input features.
std::vector<models::MatR> representations(const std::string& checkpoint, const std::vector<corpus::Utterance>& utts,
                                          const std::string& point, int& downsample) {
  std::vector<models::MatR> reps;
  if (point == "raw") {
    downsample = 1;
    for (const auto& u : utts) reps.push_back(u.features.frames);
    return reps;
  }
  const auto model = load_model_checked(checkpoint);
  downsample = 2;
  for (const auto& u : utts) {
    auto r = models::encode(model, u.features);
    if (point == "code") {
      reps.push_back(std::move(r.code_vectors));
    } else if (point == "pre-quant") {
      reps.push_back(std::move(r.pre_quant));
    } else {
      reps.push_back(std::move(r.aux));
    }
  }
  return reps;
}

void run_abx(const Globals& g, const AbxOptions& o, const Provenance& prov) {
  if (o.rep != "raw") load_model_checked(o.checkpoint);
  const auto utts = load_split(o.corpus, o.split);
  int ds = 1;
  const auto reps = representations(o.checkpoint, utts, o.rep, ds);
  eval::AbxConfig cfg;
  cfg.max_triples = o.max_triples;
  cfg.seed = g.seed;
  const auto rep = eval::abx_error(utts, reps, ds, o.rep, cfg);
  json details = rep.to_json();
  details["checkpoint"] = o.checkpoint;
  details["split"] = o.split;
  write_json(resolve_out(g, o.out, "abx_" + o.rep + ".json"),
             eval::metric_report("abx_error_" + o.rep, rep.error, prov.config_hash, prov.seed, rep.n_triples, details));
  std::printf("ABX error (%s): %.2f%% over %zu triples\n", o.rep.c_str(), rep.error, rep.n_triples);
}

// --- eval-bitrate -------------------------------------------------------------

struct BitrateOptions {
  std::string checkpoint, corpus, split = "test", out;
};

void add_bitrate(CLI::App& app, BitrateOptions& o) {
  app.add_option("--checkpoint", o.checkpoint)->required();
  app.add_option("--corpus", o.corpus)->required();
  app.add_option("--split", o.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  app.add_option("--out", o.out, "report (default <out-dir>/bitrate.json)");
}

void run_bitrate(const Globals& g, const BitrateOptions& o, const Provenance& prov) {
  const auto model = load_model_checked(o.checkpoint);
  require(models::model_config(model).quantize_enabled(), "bitrate needs a model with a codebook");
  const auto utts = load_split(o.corpus, o.split);
  std::vector<std::vector<std::uint32_t>> seqs;
  double duration = 0.0;
  for (const auto& u : utts) {
    seqs.push_back(models::encode(model, u.features).codes.indices);
    duration += static_cast<double>(u.n_frames()) / static_cast<double>(u.features.frame_rate_hz);
  }
  std::size_t symbols = 0;
  for (const auto& s : seqs) symbols += s.size();
  const double b = eval::bitrate(seqs, duration);
  write_json(resolve_out(g, o.out, "bitrate.json"),
             eval::metric_report("bitrate", b, prov.config_hash, prov.seed, symbols,
                                 {{"entropy_bits", eval::code_entropy_bits(seqs)}, {"duration_s", duration},
                                  {"checkpoint", o.checkpoint}}));
  std::printf("bitrate: %.1f bits/s\n", b);
}

// --- probe-speaker ------------------------------------------------------------

struct ProbeOptions {
  std::string checkpoint, corpus, split = "train", point = "code", out;
  int max_utterances = 0;  // 0: whole split
  eval::ProbeConfig cfg;
};

void add_probe(CLI::App& app, ProbeOptions& o) {
  app.add_option("--checkpoint", o.checkpoint, "model checkpoint (not used with --point raw)");
  app.add_option("--corpus", o.corpus)->required();
  app.add_option("--split", o.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  app.add_option("--point", o.point, "code, pre-quant or raw")
      ->check(CLI::IsMember({"code", "pre-quant", "raw"}))
      ->capture_default_str();
  app.add_option("--max-utterances", o.max_utterances)->capture_default_str();
  app.add_option("--hidden", o.cfg.hidden)->capture_default_str();
  app.add_option("--probe-steps", o.cfg.steps)->capture_default_str();
  app.add_option("--probe-lr", o.cfg.lr)->capture_default_str();
  app.add_option("--window", o.cfg.window, "frames per probe item (0: whole utterance)")->capture_default_str();
  app.add_option("--out", o.out, "report (default <out-dir>/probe_<point>.json)");
}

void run_probe(const Globals& g, ProbeOptions o, const Provenance& prov) {
  if (o.point != "raw") load_model_checked(o.checkpoint);
  const auto utts = load_split(o.corpus, o.split, o.max_utterances);
  int ds = 1;
  const auto reps = representations(o.checkpoint, utts, o.point, ds);
  std::vector<int> speakers;
  for (const auto& u : utts) speakers.push_back(u.speaker);
  o.cfg.seed = g.seed;
  const auto r = eval::speaker_probe(reps, speakers, o.cfg);
  write_json(resolve_out(g, o.out, "probe_" + o.point + ".json"),
             eval::metric_report("speaker_probe_" + o.point, r.accuracy, prov.config_hash, prov.seed, r.n_test,
                                 {{"train_accuracy", r.train_accuracy}, {"n_classes", r.n_classes},
                                  {"checkpoint", o.checkpoint}}));
  std::printf("speaker probe (%s): %.1f%% on %zu held-out items, %d speakers\n", o.point.c_str(), r.accuracy,
              r.n_test, r.n_classes);
}

// --- convert -----------------------------------------------------------------

struct ConvertOptions {
  std::string checkpoint, corpus, split = "test", utterance, out;
  int target_speaker = -1;
};

void add_convert(CLI::App& app, ConvertOptions& o) {
  app.add_option("--checkpoint", o.checkpoint)->required();
  app.add_option("--corpus", o.corpus)->required();
  app.add_option("--split", o.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  app.add_option("--utterance", o.utterance, "utterance id (default: every utterance of the split)");
  app.add_option("--target-speaker", o.target_speaker)->required();
  app.add_option("--out", o.out, "output directory (default <out-dir>/converted)");
}

void run_convert(const Globals& g, const ConvertOptions& o, const Provenance& prov) {
  const auto model = load_model_checked(o.checkpoint);
  const auto* vae = std::get_if<models::VqVaeModel>(&model);
  require(vae != nullptr, "convert needs a vq-vae checkpoint");
  (void)vae->speaker_row(o.target_speaker);
  auto utts = load_split(o.corpus, o.split);
  if (!o.utterance.empty()) {
    std::erase_if(utts, [&](const corpus::Utterance& u) { return u.utterance_id != o.utterance; });
    require(!utts.empty(), "utterance '", o.utterance, "' not found in split ", o.split);
  }
  const fs::path dir = resolve_out(g, o.out, "converted");
  fs::create_directories(dir);
  char suffix[32];
  std::snprintf(suffix, sizeof(suffix), "_to_s%02d.vqau", o.target_speaker);
  for (const auto& u : utts) {
    io::write_features(dir / (u.utterance_id + suffix), models::convert_speaker(*vae, u.features, o.target_speaker));
  }
  json p = prov.to_json("convert");
  p["target_speaker"] = o.target_speaker;
  p["n_utterances"] = utts.size();
  write_json(dir / "convert.json", p);
}

// --- report ------------------------------------------------------------------

struct ReportOptions {
  std::vector<std::string> inputs;
  std::string out;
};

void add_report(CLI::App& app, ReportOptions& o) {
  app.add_option("inputs", o.inputs, "metric JSON files or directories")->required();
  app.add_option("--out", o.out, "summary (default <out-dir>/summary.json)");
}

void run_report(const Globals& g, const ReportOptions& o, const Provenance& prov) {
  std::vector<fs::path> files;
  for (const auto& in : o.inputs) {
    require<FormatError>(fs::exists(in), "not found: ", in);
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
      }
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  json rows = json::array();
  for (const auto& f : files) {
    json j;
    try {
      j = json::parse(io::read_file(f));
    } catch (const json::parse_error& e) {
      throw FormatError(str_cat(f.string(), ": ", e.what()));
    }
    if (!j.is_object() || !j.contains("metric") || !j.contains("value")) continue;
    rows.push_back({{"file", f.string()}, {"metric", j["metric"]}, {"value", j["value"]},
                    {"n_samples", j.value("n_samples", 0)}, {"config_hash", j.value("config_hash", "")}});
  }
  require(!rows.empty(), "report: no metric files found");
  std::printf("%-28s %12s %10s  %s\n", "metric", "value", "samples", "file");
  for (const auto& r : rows) {
    std::printf("%-28s %12.3f %10zu  %s\n", r["metric"].get<std::string>().c_str(), r["value"].get<double>(),
                r["n_samples"].get<std::size_t>(), r["file"].get<std::string>().c_str());
  }
  json summary = prov.to_json("report");
  summary["rows"] = std::move(rows);
  write_json(resolve_out(g, o.out, "summary.json"), summary);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) != nullptr) return 1;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vector-quantized acoustic unit discovery toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "key = value configuration file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--out-dir", g.out_dir, "default directory for outputs")
      ->envname("VQAU_OUTPUT_DIR")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  GenOptions gen;
  TrainOptions train;
  EncodeOptions enc;
  AbxOptions abx;
  BitrateOptions br;
  ProbeOptions probe;
  ConvertOptions conv;
  ReportOptions rep;
  add_gen(*app.add_subcommand("gen-data", "generate a synthetic corpus"), gen);
  add_train(*app.add_subcommand("train", "train a model"), train);
  add_encode(*app.add_subcommand("encode", "encode a split into code files"), enc);
  add_abx(*app.add_subcommand("eval-abx", "ABX phone discrimination error"), abx);
  add_bitrate(*app.add_subcommand("eval-bitrate", "code bitrate"), br);
  add_probe(*app.add_subcommand("probe-speaker", "speaker probing classifier"), probe);
  add_convert(*app.add_subcommand("convert", "voice conversion with a VQ-VAE"), conv);
  add_report(*app.add_subcommand("report", "collate metric JSON files"), rep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    Provenance prov;
    prov.seed = g.seed;
    prov.config_hash = hex64(fnv1a64(str_cat("seed=", g.seed, "\n", name, "\n", sub->config_to_str(true, false))));
    if (name == "gen-data") run_gen(g, gen, prov);
    else if (name == "train") run_train(g, train, prov);
    else if (name == "encode") run_encode(g, enc, prov);
    else if (name == "eval-abx") run_abx(g, abx, prov);
    else if (name == "eval-bitrate") run_bitrate(g, br, prov);
    else if (name == "probe-speaker") run_probe(g, probe, prov);
    else if (name == "convert") run_convert(g, conv, prov);
    else if (name == "report") run_report(g, rep, prov);
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "vqau: error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "vqau: error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 0;
}
