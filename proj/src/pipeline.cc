// pipeline.cc

// Copyright 2026 The noisysed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "sed/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "json.hpp"
#include "sed/io_util.h"
#include "sed/model.h"
#include "sed/params.h"

namespace sed::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using train::ClipRecord;
using train::LabelKind;

namespace {

// Seed domains for derive_seed.
constexpr std::uint64_t kSeedFolds = 1;
constexpr std::uint64_t kSeedInit = 2;
constexpr std::uint64_t kSeedMt = 3;
constexpr std::uint64_t kSeedNs = 4;

constexpr std::size_t kPredictBatch = 16;

fs::path feature_path(const RunConfig& cfg, const datagen::ManifestEntry& e) {
  return cfg.paths.cache_dir / "features" / datagen::subset_name(e.subset) /
         (e.id + ".feat");
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw IoError("missing " + p.string() + " (" + hint + ")");
}

Tensor weak_vector(const std::vector<std::size_t>& classes, std::size_t n) {
  Tensor w({n});
  for (std::size_t c : classes) {
    if (c >= n) throw IoError("class id " + std::to_string(c) + " out of range");
    w[c] = 1.0;
  }
  return w;
}

std::vector<StrongPrediction> predict_all(Rcrnn& model,
                                          const std::vector<ClipRecord>& clips) {
  std::vector<StrongPrediction> out;
  out.reserve(clips.size());
  for (std::size_t start = 0; start < clips.size(); start += kPredictBatch) {
    const std::size_t end = std::min(clips.size(), start + kPredictBatch);
    std::vector<const Tensor*> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(&clips[i].features);
    for (auto& p : model.predict(stack_inputs(xs))) out.push_back(std::move(p));
  }
  return out;
}

Rcrnn load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  require_file(checkpoint, "train the model first");
  Rcrnn model(cfg.model);
  load_checkpoint_into(checkpoint, model.params());
  return model;
}

// Path shown in reports: relative to the checkpoint or report directory
// when inside one, so reports do not depend on where the run lives.
std::string display_path(const RunConfig& cfg, const fs::path& p) {
  const fs::path abs = fs::absolute(p).lexically_normal();
  for (const fs::path& root : {cfg.paths.checkpoint_dir, cfg.paths.report_dir}) {
    const fs::path rel =
        abs.lexically_relative(fs::absolute(root).lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return p.filename().string();
}

eval::ClipEvents grid_events(const std::vector<ClipRecord>& clips) {
  eval::ClipEvents out;
  for (const auto& c : clips) out[c.id] = eval::decode_events(c.strong_label, 0.5, 1);
  return out;
}

std::string fingerprint(const RunConfig& cfg, const std::string& job) {
  return settings_json(cfg) + "|" + job;
}

std::string summary_json(const JobResult& r, const RunConfig& cfg,
                         const fs::path& checkpoint) {
  json j;
  j["stage"] = stage_name(r.stage);
  j["fold"] = r.fold;
  j["beta_index"] = r.beta_index;
  if (r.stage == Stage::kNoisyStudent) j["beta"] = cfg.train.betas[r.beta_index];
  j["selection_f1"] = r.selection_f1;
  j["checkpoint"] = display_path(cfg, checkpoint);
  return j.dump(2) + "\n";
}

std::string log_text(const std::vector<train::EpochLog>& log) {
  std::string out;
  for (const auto& e : log) out += train::format_epoch_log(e) + "\n";
  return out;
}

JobResult run_mt(const RunConfig& cfg, const Dataset& ds, std::size_t fold,
                 const LogSink& log) {
  const fs::path dir = mt_dir(cfg, fold);
  fs::create_directories(dir);
  const train::TrainData data = fold_data(ds, cfg, fold);
  ParamStore init = build_params(cfg.model);
  std::mt19937_64 init_rng(train::derive_seed(cfg.seed, kSeedInit, fold));
  train::init_params(init, init_rng);
  const std::string tag = "[mt fold" + std::to_string(fold) + "] ";
  auto on_epoch = [&](const train::EpochLog& e) {
    if (log) log(tag + train::format_epoch_log(e));
  };
  train::ResumeOptions resume{dir / "state",
                              fingerprint(cfg, "mt/fold" + std::to_string(fold))};
  train::StageResult res = train::train_mean_teacher(
      cfg.model, cfg.train, data, std::move(init),
      train::derive_seed(cfg.seed, kSeedMt, fold), on_epoch, resume);
  const std::string meta = fingerprint(cfg, "mt");
  save_checkpoint(dir / "student.ckpt", res.best_student, meta);
  save_checkpoint(dir / "teacher.ckpt", res.best_teacher, meta);
  write_file_atomic(dir / "log.jsonl", log_text(res.log));
  JobResult r{Stage::kMeanTeacher, fold, 0, res.best_f1, dir};
  write_file_atomic(dir / "summary.json",
                    summary_json(r, cfg, dir / "teacher.ckpt"));
  return r;
}

JobResult run_ns(const RunConfig& cfg, const Dataset& ds, std::size_t fold,
                 std::size_t bi, const LogSink& log) {
  const fs::path src = mt_dir(cfg, fold);
  require_file(src / "student.ckpt", "run 'train --stage mt' for this fold");
  require_file(src / "teacher.ckpt", "run 'train --stage mt' for this fold");
  std::string meta;
  const ParamStore student = load_checkpoint(src / "student.ckpt", meta);
  const ParamStore teacher = load_checkpoint(src / "teacher.ckpt", meta);
  build_params(cfg.model).require_same_layout(student);

  const fs::path dir = ns_dir(cfg, fold, bi);
  fs::create_directories(dir);
  const train::TrainData data = fold_data(ds, cfg, fold);
  const double beta = cfg.train.betas[bi];
  const std::string job =
      "ns/fold" + std::to_string(fold) + "/beta" + std::to_string(bi);
  const std::string tag = "[" + job + "] ";
  auto on_epoch = [&](const train::EpochLog& e) {
    if (log) log(tag + train::format_epoch_log(e));
  };
  train::ResumeOptions resume{dir / "state", fingerprint(cfg, job)};
  train::SelfTrainingResult res = train::self_training(
      cfg.model, cfg.train, cfg.augment, data, student, teacher, beta,
      train::derive_seed(cfg.seed, kSeedNs, fold, bi), on_epoch, resume);

  const std::string out_meta = fingerprint(cfg, job);
  std::vector<train::EpochLog> all;
  for (std::size_t r = 0; r < res.rounds.size(); ++r) {
    const std::string n = std::to_string(r + 1);
    save_checkpoint(dir / ("round" + n + ".ckpt"), res.rounds[r].best_student,
                    out_meta);
    eval::write_events(dir / ("pseudo_round" + n + ".tsv"),
                       grid_events(res.pseudo[r]), ds.class_names);
    all.insert(all.end(), res.rounds[r].log.begin(), res.rounds[r].log.end());
  }
  save_checkpoint(dir / "final.ckpt", res.rounds.back().best_student, out_meta);
  write_file_atomic(dir / "log.jsonl", log_text(all));
  JobResult r{Stage::kNoisyStudent, fold, bi, res.rounds.back().best_f1, dir};
  write_file_atomic(dir / "summary.json", summary_json(r, cfg, dir / "final.ckpt"));
  return r;
}

}  // namespace

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

datagen::Manifest cmd_gen(const RunConfig& cfg) {
  fs::create_directories(cfg.paths.data_root);
  return datagen::generate(cfg.data, cfg.paths.data_root);
}

ExtractSummary cmd_extract(const RunConfig& cfg, const LogSink& log) {
  const fs::path manifest_path = cfg.paths.data_root / "manifest.tsv";
  require_file(manifest_path, "run 'gen' first");
  const datagen::Manifest m = datagen::read_manifest(manifest_path);
  ExtractSummary summary;
  std::vector<features::CachedFeature> feats(m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const fs::path wav = cfg.paths.data_root / e.path;
    require_file(wav, "audio listed in " + manifest_path.string());
    const std::string bytes = read_file(wav);
    const std::uint64_t hash = fnv1a64(bytes);
    const fs::path cache = feature_path(cfg, e);
    if (fs::exists(cache)) {
      try {
        features::CachedFeature f = features::load_feature(cache);
        if (f.source_hash == hash) {
          feats[i] = std::move(f);
          ++summary.reused;
          continue;
        }
      } catch (const IoError&) {
        // A corrupt cache entry is recomputed.
      }
    }
    feats[i].source_hash = hash;
    feats[i].raw = features::extract(features::decode_wav(bytes, wav.string())).frames;
    ++summary.computed;
  }
  std::vector<const Tensor*> corpus;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].subset != datagen::Subset::kValidation) {
      corpus.push_back(&feats[i].raw);
    }
  }
  summary.stats = features::fit_norm_stats(corpus);
  if (summary.stats.floored && log) {
    log("warning: feature std below floor; normalization uses the floor");
  }
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    feats[i].stats = summary.stats;
    const fs::path cache = feature_path(cfg, m.entries[i]);
    const std::string bytes = features::encode_feature(feats[i]);
    if (fs::exists(cache) && read_file(cache) == bytes) continue;
    fs::create_directories(cache.parent_path());
    write_file_atomic(cache, bytes);
    ++summary.written;
  }
  return summary;
}

Dataset load_dataset(const RunConfig& cfg) {
  const fs::path manifest_path = cfg.paths.data_root / "manifest.tsv";
  require_file(manifest_path, "run 'gen' first");
  const datagen::Manifest m = datagen::read_manifest(manifest_path);
  if (m.class_names.size() != cfg.model.n_classes) {
    throw IoError(manifest_path.string() + ": " +
                  std::to_string(m.class_names.size()) +
                  " classes, config expects " +
                  std::to_string(cfg.model.n_classes));
  }
  Dataset ds;
  ds.class_names = m.class_names;
  const std::size_t frames = cfg.model.output_frames();
  const std::size_t n = cfg.model.n_classes;
  std::vector<datagen::ManifestEntry> strong_entries;
  for (const auto& e : m.entries) {
    const fs::path cache = feature_path(cfg, e);
    require_file(cache, "run 'extract' first");
    ClipRecord r;
    r.id = e.id;
    r.features = features::load_normalized(cache).frames;
    switch (e.subset) {
      case datagen::Subset::kStrong:
      case datagen::Subset::kValidation:
        r.kind = LabelKind::kStrong;
        r.events = e.events;
        r.strong_label = eval::events_to_grid(e.events, frames, n);
        r.weak_label = weak_vector(e.weak_classes, n);
        break;
      case datagen::Subset::kWeak:
        r.kind = LabelKind::kWeak;
        r.weak_label = weak_vector(e.weak_classes, n);
        break;
      case datagen::Subset::kUnlabeled:
        r.kind = LabelKind::kUnlabeled;
        break;
    }
    switch (e.subset) {
      case datagen::Subset::kStrong:
        strong_entries.push_back(e);
        ds.strong.push_back(std::move(r));
        break;
      case datagen::Subset::kWeak: ds.weak.push_back(std::move(r)); break;
      case datagen::Subset::kUnlabeled: ds.unlabeled.push_back(std::move(r)); break;
      case datagen::Subset::kValidation: ds.validation.push_back(std::move(r)); break;
    }
  }
  ds.strong_fold = datagen::make_folds(strong_entries, cfg.train.folds,
                                       train::derive_seed(cfg.seed, kSeedFolds));
  return ds;
}

train::TrainData fold_data(const Dataset& ds, const RunConfig& cfg,
                           std::size_t fold) {
  if (fold >= cfg.train.folds) {
    throw std::invalid_argument("fold " + std::to_string(fold) + " outside [0, " +
                                std::to_string(cfg.train.folds) + ")");
  }
  train::TrainData d;
  d.weak = ds.weak;
  d.unlabeled = ds.unlabeled;
  if (cfg.train.folds == 1) {
    d.strong = ds.strong;
    d.selection = ds.validation;
    return d;
  }
  for (std::size_t i = 0; i < ds.strong.size(); ++i) {
    (ds.strong_fold[i] == fold ? d.selection : d.strong).push_back(ds.strong[i]);
  }
  return d;
}

Stage parse_stage(std::string_view s) {
  if (s == "mt") return Stage::kMeanTeacher;
  if (s == "ns") return Stage::kNoisyStudent;
  throw std::invalid_argument("unknown stage '" + std::string(s) +
                              "' (expected mt or ns)");
}

std::string stage_name(Stage s) {
  return s == Stage::kMeanTeacher ? "mt" : "ns";
}

fs::path mt_dir(const RunConfig& cfg, std::size_t fold) {
  return cfg.paths.checkpoint_dir / "mt" / ("fold" + std::to_string(fold));
}

fs::path ns_dir(const RunConfig& cfg, std::size_t fold, std::size_t bi) {
  return cfg.paths.checkpoint_dir / "ns" / ("fold" + std::to_string(fold)) /
         ("beta" + std::to_string(bi));
}

std::size_t beta_index(const train::TrainConfig& cfg, double beta) {
  for (std::size_t i = 0; i < cfg.betas.size(); ++i) {
    if (std::abs(cfg.betas[i] - beta) <= 1e-12) return i;
  }
  throw std::invalid_argument("beta " + std::to_string(beta) +
                              " is not in the configured grid");
}

std::vector<JobResult> cmd_train(const RunConfig& cfg, const TrainRequest& req,
                                 const LogSink& log) {
  cfg.validate();
  struct Job {
    std::size_t fold, bi;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> folds;
  if (req.fold) {
    if (*req.fold >= cfg.train.folds) {
      throw std::invalid_argument("--fold " + std::to_string(*req.fold) +
                                  " outside [0, " +
                                  std::to_string(cfg.train.folds) + ")");
    }
    folds.push_back(*req.fold);
  } else {
    for (std::size_t f = 0; f < cfg.train.folds; ++f) folds.push_back(f);
  }
  std::vector<std::size_t> betas;
  if (req.stage == Stage::kNoisyStudent) {
    if (req.beta) {
      betas.push_back(beta_index(cfg.train, *req.beta));
    } else {
      for (std::size_t i = 0; i < cfg.train.betas.size(); ++i) betas.push_back(i);
    }
  } else {
    betas.push_back(0);
  }
  for (std::size_t f : folds) {
    for (std::size_t b : betas) jobs.push_back({f, b});
  }

  const Dataset ds = load_dataset(cfg);
  std::mutex log_mu;
  LogSink safe_log;
  if (log) {
    safe_log = [&](const std::string& line) {
      std::lock_guard<std::mutex> lock(log_mu);
      log(line);
    };
  }
  std::vector<JobResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        results[i] = req.stage == Stage::kMeanTeacher
                         ? run_mt(cfg, ds, jobs[i].fold, safe_log)
                         : run_ns(cfg, ds, jobs[i].fold, jobs[i].bi, safe_log);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(req.jobs, 1, jobs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

void cmd_pseudolabel(const RunConfig& cfg, const fs::path& checkpoint,
                     const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  Rcrnn teacher = load_model(cfg, checkpoint);
  std::vector<const ClipRecord*> clips;
  for (const auto& c : ds.weak) clips.push_back(&c);
  for (const auto& c : ds.unlabeled) clips.push_back(&c);
  const auto labels = train::pseudo_label(teacher, clips, cfg.train.threshold);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  eval::write_events(out, grid_events(labels), ds.class_names);
}

std::string format_report(const ScoreReport& r) {
  json j;
  j["source"] = r.source;
  j["n_clips"] = r.n_clips;
  j["f1"] = r.f1.f1;
  j["precision"] = r.f1.precision;
  j["recall"] = r.f1.recall;
  j["true_positives"] = r.f1.true_positives;
  j["n_ref"] = r.f1.n_ref;
  j["n_est"] = r.f1.n_est;
  j["psds1"] = r.psds1;
  j["psds2"] = r.psds2;
  return j.dump(2) + "\n";
}

std::vector<StrongPrediction> predict_source(const RunConfig& cfg,
                                             const Dataset& ds,
                                             const fs::path& source) {
  if (source.extension() == ".json") {
    require_file(source, "run 'ensemble' first");
    const auto members =
        parse_ensemble_spec(read_file(source), source.string());
    std::vector<std::vector<StrongPrediction>> per_member;
    for (const auto& m : members) {
      Rcrnn model = load_model(cfg, cfg.paths.checkpoint_dir / m.checkpoint);
      per_member.push_back(predict_all(model, ds.validation));
    }
    std::vector<StrongPrediction> out;
    for (std::size_t c = 0; c < ds.validation.size(); ++c) {
      std::vector<const StrongPrediction*> ms;
      for (const auto& p : per_member) ms.push_back(&p[c]);
      out.push_back(eval::ensemble_combine(ms));
    }
    return out;
  }
  Rcrnn model = load_model(cfg, source);
  return predict_all(model, ds.validation);
}

ScoreReport score_predictions(const RunConfig& cfg,
                              const std::vector<ClipRecord>& clips,
                              const std::vector<StrongPrediction>& preds) {
  if (clips.size() != preds.size()) {
    throw std::invalid_argument("score_predictions: clip/prediction count");
  }
  ScoreReport r;
  r.n_clips = clips.size();
  eval::ClipEvents ref, est;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    ref[clips[i].id] = clips[i].events;
    est[clips[i].id] = eval::decode_events(preds[i].strong, cfg.train.threshold,
                                           cfg.train.median_len);
  }
  r.f1 = eval::event_f1(ref, est, cfg.eval.collars);
  std::vector<eval::ThresholdedEvents> sweep;
  for (double t : eval::psds_thresholds(cfg.eval.psds_thresholds)) {
    eval::ThresholdedEvents te;
    te.threshold = t;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      te.events[clips[i].id] =
          eval::decode_events(preds[i].strong, t, cfg.train.median_len);
    }
    sweep.push_back(std::move(te));
  }
  r.psds1 = eval::psds(ref, sweep, cfg.model.n_classes, eval::psds_scenario1());
  r.psds2 = eval::psds(ref, sweep, cfg.model.n_classes, eval::psds_scenario2());
  return r;
}

ScoreReport cmd_eval(const RunConfig& cfg, const fs::path& source,
                     const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  const auto preds = predict_source(cfg, ds, source);
  ScoreReport r = score_predictions(cfg, ds.validation, preds);
  r.source = display_path(cfg, source);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  write_file_atomic(out, format_report(r));
  eval::ClipEvents est;
  for (std::size_t i = 0; i < ds.validation.size(); ++i) {
    est[ds.validation[i].id] = eval::decode_events(
        preds[i].strong, cfg.train.threshold, cfg.train.median_len);
  }
  fs::path events = out;
  events.replace_extension(".events.tsv");
  eval::write_events(events, est, ds.class_names);
  return r;
}

EnsembleStrategy parse_strategy(std::string_view s) {
  if (s == "per-fold-best") return EnsembleStrategy::kPerFoldBest;
  if (s == "top1-5") return EnsembleStrategy::kTop5;
  if (s == "top1-10") return EnsembleStrategy::kTop10;
  throw std::invalid_argument("unknown ensemble strategy '" + std::string(s) +
                              "' (expected per-fold-best, top1-5 or top1-10)");
}

std::string strategy_name(EnsembleStrategy s) {
  switch (s) {
    case EnsembleStrategy::kPerFoldBest: return "per-fold-best";
    case EnsembleStrategy::kTop5: return "top1-5";
    case EnsembleStrategy::kTop10: return "top1-10";
  }
  return "?";
}

std::vector<eval::Candidate> collect_candidates(const RunConfig& cfg) {
  std::vector<eval::Candidate> out;
  for (std::size_t f = 0; f < cfg.train.folds; ++f) {
    for (std::size_t b = 0; b < cfg.train.betas.size(); ++b) {
      const fs::path summary = ns_dir(cfg, f, b) / "summary.json";
      if (!fs::exists(summary)) continue;
      const json j = json::parse(read_file(summary));
      eval::Candidate c;
      c.fold = f;
      c.beta_index = b;
      c.beta = cfg.train.betas[b];
      c.f1 = j.at("selection_f1").get<double>();
      c.checkpoint = j.at("checkpoint").get<std::string>();
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::string format_ensemble_spec(EnsembleStrategy s,
                                 const std::vector<eval::Candidate>& members) {
  json j;
  j["strategy"] = strategy_name(s);
  j["members"] = json::array();
  for (const auto& m : members) {
    j["members"].push_back({{"fold", m.fold},
                            {"beta_index", m.beta_index},
                            {"beta", m.beta},
                            {"f1", m.f1},
                            {"checkpoint", m.checkpoint}});
  }
  return j.dump(2) + "\n";
}

std::vector<eval::Candidate> parse_ensemble_spec(std::string_view text,
                                                 const std::string& source) {
  std::vector<eval::Candidate> out;
  try {
    const json j = json::parse(text);
    for (const auto& m : j.at("members")) {
      eval::Candidate c;
      c.fold = m.at("fold").get<std::size_t>();
      c.beta_index = m.at("beta_index").get<std::size_t>();
      c.beta = m.at("beta").get<double>();
      c.f1 = m.at("f1").get<double>();
      c.checkpoint = m.at("checkpoint").get<std::string>();
      out.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw IoError(source + ": malformed ensemble spec: " + e.what());
  }
  if (out.empty()) throw IoError(source + ": ensemble spec has no members");
  return out;
}

fs::path cmd_ensemble(const RunConfig& cfg, EnsembleStrategy s) {
  std::vector<eval::Candidate> pool = collect_candidates(cfg);
  if (pool.empty()) {
    throw IoError("no finished stage-2 models under " +
                  (cfg.paths.checkpoint_dir / "ns").string() +
                  " (run 'train --stage ns' first)");
  }
  std::vector<eval::Candidate> members;
  switch (s) {
    case EnsembleStrategy::kPerFoldBest:
      members = eval::select_per_fold_best(std::move(pool));
      break;
    case EnsembleStrategy::kTop5: members = eval::select_topk(std::move(pool), 5); break;
    case EnsembleStrategy::kTop10: members = eval::select_topk(std::move(pool), 10); break;
  }
  const fs::path out =
      cfg.paths.report_dir / ("ensemble_" + strategy_name(s) + ".json");
  fs::create_directories(cfg.paths.report_dir);
  write_file_atomic(out, format_ensemble_spec(s, members));
  return out;
}

}  // namespace sed::pipeline
