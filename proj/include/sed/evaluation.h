// sed/evaluation.h

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

// Event decoding and scoring: event-based F1 with onset/offset collars,
// the polyphonic sound detection score (PSDS), probability ensembles and
// model selection.
//
// Event list files are tab separated with a header row:
//
//   clip_id <TAB> onset <TAB> offset <TAB> class
//
// onset and offset are seconds printed with 17 significant digits.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sed/model.h"
#include "sed/tensor.h"

namespace sed::eval {

constexpr double kClipSeconds = 10.0;

struct Event {
  std::size_t cls = 0;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, > onset

  bool operator==(const Event&) const = default;
};

/// Events per clip id. A clip with no events maps to an empty list.
using ClipEvents = std::map<std::string, std::vector<Event>>;

/// Start time in seconds of output frame `frame` of `frames`.
double frame_time(std::size_t frame, std::size_t frames,
                  double clip_seconds = kClipSeconds);

/// Frame-level target grid [frames, n_classes]: an event covers frames
/// floor(onset * frames / clip) up to ceil(offset * frames / clip).
Tensor events_to_grid(const std::vector<Event>& events, std::size_t frames,
                      std::size_t n_classes, double clip_seconds = kClipSeconds);

/// Median filter over a binary sequence with edge replication; `len` odd.
std::vector<unsigned char> median_filter(const std::vector<unsigned char>& x,
                                         std::size_t len);

/// Thresholds probs [frames, classes] (active when p > threshold), median
/// filters each class and merges runs into events. A run over frames
/// [a, b] maps to (a, b + 1) in frame-time. Sorted by class, then onset.
std::vector<Event> decode_events(const Tensor& probs, double threshold,
                                 std::size_t median_len,
                                 double clip_seconds = kClipSeconds);

struct CollarConfig {
  double onset_collar = 0.2;    // seconds
  double offset_collar = 0.2;   // seconds
  double offset_ratio = 0.2;    // fraction of the reference duration
};

/// True when est may match ref: same class, onset within the collar and
/// offset within max(offset_collar, offset_ratio * ref duration).
bool collar_match(const Event& ref, const Event& est, const CollarConfig& cfg);

/// Size of a maximum one-to-one matching between ref and est events.
std::size_t match_count(const std::vector<Event>& ref,
                        const std::vector<Event>& est,
                        const CollarConfig& cfg);

struct F1Score {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t true_positives = 0;
  std::size_t n_ref = 0;
  std::size_t n_est = 0;
};

/// Micro-averaged event F1 over every clip present in either map.
F1Score event_f1(const ClipEvents& ref, const ClipEvents& est,
                 const CollarConfig& cfg = {});

struct PsdsParams {
  double rho_dtc = 0.7;
  double rho_gtc = 0.7;
  double rho_cttc = 0.0;
  double alpha_ct = 0.0;
  double alpha_st = 1.0;
  double e_max = 100.0;  // false positives per hour

  void validate() const;
};

PsdsParams psds_scenario1();  // (0.7, 0.7, 0.0, 0.0, 1.0)
PsdsParams psds_scenario2();  // (0.1, 0.1, 0.3, 0.5, 1.0)

/// Per-class rates at one detection threshold.
struct OperatingPoint {
  double threshold = 0.0;
  std::vector<double> tpr;   // NaN for classes without ground truth
  std::vector<double> efpr;  // per hour
};

/// Scores one set of detections. `ref` defines the evaluated clips; their
/// total duration is ref.size() * clip_seconds.
OperatingPoint operating_point(const ClipEvents& ref, const ClipEvents& est,
                               std::size_t n_classes, const PsdsParams& p,
                               double threshold,
                               double clip_seconds = kClipSeconds);

/// Normalized area under the effective TPR versus effective FPR curve up
/// to e_max. The effective TPR at x is mean - alpha_st * std (population)
/// over classes with ground truth of each class's best TPR among
/// operating points with efpr <= x, floored at 0. Throws
/// std::invalid_argument if no class has ground truth.
double psds_from_points(const std::vector<OperatingPoint>& points,
                        const PsdsParams& p);

struct ThresholdedEvents {
  double threshold = 0.0;
  ClipEvents events;
};

double psds(const ClipEvents& ref, const std::vector<ThresholdedEvents>& sweep,
            std::size_t n_classes, const PsdsParams& p,
            double clip_seconds = kClipSeconds);

/// 50 uniform thresholds over [0.01, 0.99].
std::vector<double> psds_thresholds(std::size_t count = 50, double lo = 0.01,
                                    double hi = 0.99);

/// Elementwise mean of strong and weak outputs. Throws ShapeError on
/// mismatched members and std::invalid_argument when empty.
StrongPrediction ensemble_combine(
    const std::vector<const StrongPrediction*>& members);

struct Candidate {
  std::size_t fold = 0;
  std::size_t beta_index = 0;  // position in the configured beta grid
  double beta = 0.0;
  double f1 = 0.0;             // validation event F1
  std::string checkpoint;

  bool operator==(const Candidate&) const = default;
};

/// The k best candidates by F1, ties broken by lower fold, then lower beta
/// index. Throws std::invalid_argument when k exceeds the pool.
std::vector<Candidate> select_topk(std::vector<Candidate> pool, std::size_t k);

/// Best candidate of every fold under the same ordering, by fold.
std::vector<Candidate> select_per_fold_best(std::vector<Candidate> pool);

std::string format_events(const ClipEvents& events,
                          const std::vector<std::string>& class_names);
ClipEvents parse_events(std::string_view text,
                        const std::vector<std::string>& class_names,
                        const std::string& source);
void write_events(const std::filesystem::path& path, const ClipEvents& events,
                  const std::vector<std::string>& class_names);
ClipEvents read_events(const std::filesystem::path& path,
                       const std::vector<std::string>& class_names);

}  // namespace sed::eval
