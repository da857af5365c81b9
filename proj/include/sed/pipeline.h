// sed/pipeline.h

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

// Experiment pipeline behind the command-line tool. Directory layout:
//
//   <data_root>/manifest.tsv, <data_root>/audio/<subset>/<clip>.wav
//   <cache_dir>/features/<subset>/<clip>.feat
//   <checkpoint_dir>/mt/fold<k>/       student.ckpt teacher.ckpt log.jsonl
//                                      summary.json state/
//   <checkpoint_dir>/ns/fold<k>/beta<i>/
//                                      round<r>.ckpt final.ckpt log.jsonl
//                                      pseudo_round<r>.tsv summary.json state/
//   <report_dir>/                      score reports, event lists and
//                                      ensemble specs
//
// Stage-1 checkpoints hold the best epoch by teacher F1 on the selection
// clips: the held-out strong fold, or the validation split when folds = 1.
// Stage 2 always starts from the stage-1 student of the same fold.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sed/config.h"
#include "sed/datagen.h"
#include "sed/evaluation.h"
#include "sed/features.h"
#include "sed/training.h"

namespace sed::pipeline {

/// Keeps large tensors on the heap free lists instead of returning them to
/// the kernel after every step. A no-op outside glibc.
void tune_allocator();

using LogSink = std::function<void(const std::string&)>;

datagen::Manifest cmd_gen(const RunConfig& cfg);

struct ExtractSummary {
  std::size_t computed = 0;  // clips whose log-mel was (re)computed
  std::size_t reused = 0;    // cache hits by audio content hash
  std::size_t written = 0;   // cache files whose bytes changed
  features::NormStats stats;
};

/// Computes log-mel features for every manifest clip, fits the
/// normalization on the training subsets and stores both in the cache.
/// Rerunning on unchanged audio rewrites nothing.
ExtractSummary cmd_extract(const RunConfig& cfg, const LogSink& log = {});

/// Every clip of the dataset with normalized features and labels.
struct Dataset {
  std::vector<std::string> class_names;
  std::vector<train::ClipRecord> strong;
  std::vector<train::ClipRecord> weak;
  std::vector<train::ClipRecord> unlabeled;
  std::vector<train::ClipRecord> validation;
  std::vector<std::size_t> strong_fold;  // fold of each strong clip
};

/// Throws IoError naming the first missing input.
Dataset load_dataset(const RunConfig& cfg);

/// Training pools and selection clips for one fold.
train::TrainData fold_data(const Dataset& ds, const RunConfig& cfg,
                           std::size_t fold);

enum class Stage { kMeanTeacher, kNoisyStudent };

Stage parse_stage(std::string_view s);
std::string stage_name(Stage s);

std::filesystem::path mt_dir(const RunConfig& cfg, std::size_t fold);
std::filesystem::path ns_dir(const RunConfig& cfg, std::size_t fold,
                             std::size_t beta_index);

/// Position of `beta` in the configured grid. Throws std::invalid_argument
/// when it is not a grid value.
std::size_t beta_index(const train::TrainConfig& cfg, double beta);

struct TrainRequest {
  Stage stage = Stage::kMeanTeacher;
  std::optional<std::size_t> fold;  // all folds when unset
  std::optional<double> beta;       // stage 2: every grid value when unset
  std::size_t jobs = 1;
};

struct JobResult {
  Stage stage = Stage::kMeanTeacher;
  std::size_t fold = 0;
  std::size_t beta_index = 0;
  double selection_f1 = 0.0;
  std::filesystem::path dir;
};

/// Runs the requested jobs, at most `jobs` at a time. Each job owns its
/// directory; completed jobs are reloaded rather than retrained.
std::vector<JobResult> cmd_train(const RunConfig& cfg, const TrainRequest& req,
                                 const LogSink& log = {});

/// Labels weak and unlabeled clips with the model in `checkpoint` and writes
/// the binarized labels as an event list.
void cmd_pseudolabel(const RunConfig& cfg,
                     const std::filesystem::path& checkpoint,
                     const std::filesystem::path& out);

struct ScoreReport {
  std::string source;
  std::size_t n_clips = 0;
  eval::F1Score f1;
  double psds1 = 0.0;
  double psds2 = 0.0;
};

std::string format_report(const ScoreReport& r);

/// Probabilities of a checkpoint, or of the members of an ensemble spec
/// averaged, on the validation split. `source` is a .ckpt path or a .json
/// ensemble spec.
std::vector<StrongPrediction> predict_source(const RunConfig& cfg,
                                             const Dataset& ds,
                                             const std::filesystem::path& source);

ScoreReport score_predictions(const RunConfig& cfg,
                              const std::vector<train::ClipRecord>& clips,
                              const std::vector<StrongPrediction>& preds);

/// Scores `source` on the validation split and writes the report (JSON)
/// to `out` and the decoded events next to it (<out stem>.events.tsv).
ScoreReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& source,
                     const std::filesystem::path& out);

enum class EnsembleStrategy { kPerFoldBest, kTop5, kTop10 };

EnsembleStrategy parse_strategy(std::string_view s);
std::string strategy_name(EnsembleStrategy s);

/// Stage-2 candidates found under the checkpoint directory, one per
/// finished (fold, beta) job.
std::vector<eval::Candidate> collect_candidates(const RunConfig& cfg);

std::string format_ensemble_spec(EnsembleStrategy s,
                                 const std::vector<eval::Candidate>& members);
std::vector<eval::Candidate> parse_ensemble_spec(std::string_view text,
                                                 const std::string& source);

/// Selects members and writes <report_dir>/ensemble_<strategy>.json.
std::filesystem::path cmd_ensemble(const RunConfig& cfg, EnsembleStrategy s);

}  // namespace sed::pipeline
