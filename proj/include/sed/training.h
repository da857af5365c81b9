// sed/training.h

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

// Two-stage semi-supervised training.
//
// Stage 1 (mean teacher): the student minimizes strong BCE on strongly
// labeled clips, weak BCE on weakly labeled clips and a ramped MSE
// consistency term between student and teacher outputs on every clip. The
// teacher is the EMA of the student.
//
// Stage 2 (noisy student): the teacher labels weak and unlabeled clips by
// thresholding its frame probabilities (weak clips keep only their tagged
// classes). A student initialized from the stage-1 student is trained with
// feature noise, dropout and the loss
//
//   L = sum_{i in S} BCE(y_i, yhat_i) + sum_{i in W u U} BCE(ybar_i, yhat_i)
//   ybar = beta * yhat (held constant) + (1 - beta) * teacher label
//
// for a configured number of rounds; each round's best student becomes
// the next round's teacher.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sed/augment.h"
#include "sed/evaluation.h"
#include "sed/model.h"
#include "sed/params.h"

namespace sed::train {

enum class LabelKind { kStrong, kWeak, kUnlabeled, kPseudo };

std::string label_kind_name(LabelKind k);

struct ClipRecord {
  std::string id;
  Tensor features;      // [625, 128], normalized
  LabelKind kind = LabelKind::kUnlabeled;
  Tensor strong_label;  // [frames, classes] for strong and pseudo clips
  Tensor weak_label;    // [classes] for strong, weak and pseudo-from-weak
  std::vector<eval::Event> events;  // reference events of strong clips

  /// Throws std::invalid_argument when labels do not fit the kind.
  void validate(std::size_t frames, std::size_t classes) const;
};

struct TrainConfig {
  double max_lr = 1e-3;
  std::size_t rampup_epochs = 50;
  std::size_t epochs_mt = 100;   // stage-1 epochs
  std::size_t epochs_ns = 100;   // stage-2 epochs per round
  double ema_decay = 0.999;
  double consistency_weight_max = 2.0;
  std::size_t batch_strong = 6;
  std::size_t batch_weak = 6;
  std::size_t batch_unlabeled = 12;
  std::vector<double> betas{0.1, 0.3, 0.5, 0.7, 0.9};
  double threshold = 0.5;
  std::size_t median_len = 7;
  std::size_t folds = 5;
  std::size_t rounds = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 10;
  double plateau_min_delta = 1e-4;
  double min_lr = 1e-5;
  bool feature_noise = true;  // stage-2 masking, mixup and shift

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Xavier-uniform weights, zero biases, BN scale 1 and shift 0, running
/// means 0 and running variances 1.
void init_params(ParamStore& params, std::mt19937_64& rng);

/// max_lr * exp(-5 (1 - min(epoch / rampup, 1))^2); max_lr when rampup = 0.
double rampup_lr(double epoch, double max_lr, std::size_t rampup_epochs);

/// Consistency weight with the same ramp shape.
double consistency_weight(double epoch, const TrainConfig& cfg);

/// t = alpha * t + (1 - alpha) * s for every parameter and buffer.
void ema_update(ParamStore& teacher, const ParamStore& student, double alpha);

/// EMA decay used after `step` optimizer steps: min(1 - 1/(step+1), alpha).
double ema_alpha(std::uint64_t step, double alpha);

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
  double lr = 0.0;

  bool operator==(const OptimizerState&) const = default;
};

/// Optimizer state file: "SEDOPT01", u64 step, f64 lr, u32 count, then per
/// parameter u32 rank, u64 dims and the f64 values of m followed by v.
std::string encode_optimizer(const OptimizerState& s);
OptimizerState decode_optimizer(std::string_view bytes,
                                const std::string& source);

class Adam {
 public:
  Adam(ParamStore& params, double beta1, double beta2, double eps);

  /// One update with the current learning rate using accumulated grads.
  void step();

  double lr() const { return state_.lr; }
  void set_lr(double lr) { state_.lr = lr; }
  const OptimizerState& state() const { return state_; }
  /// Throws ShapeError when the moments do not fit the parameters.
  void load_state(OptimizerState s);

 private:
  ParamStore* params_;
  double beta1_, beta2_, eps_;
  OptimizerState state_;
};

/// Halves (by `factor`) the learning rate after `patience` epochs without
/// an improvement larger than `min_delta` over the best loss seen.
struct PlateauState {
  double best = 0.0;
  bool has_best = false;
  std::size_t bad_epochs = 0;

  bool operator==(const PlateauState&) const = default;
};

double reduce_lr_on_plateau(double val_loss, double lr, PlateauState& state,
                            const TrainConfig& cfg);

struct StepLosses {
  double total = 0.0;
  double strong = 0.0;
  double weak = 0.0;
  double consistency = 0.0;
};

/// Index lists into a batch by label role.
struct BatchRoles {
  std::vector<std::size_t> strong;
  std::vector<std::size_t> weak;
  std::vector<std::size_t> other;  // unlabeled, or pseudo in stage 2
};

BatchRoles batch_roles(const std::vector<const ClipRecord*>& batch);

/// One stage-1 update. Throws NonFiniteError on a non-finite loss.
StepLosses mean_teacher_step(const std::vector<const ClipRecord*>& batch,
                             Rcrnn& student, Rcrnn& teacher, Adam& opt,
                             double consistency_w, double ema_decay,
                             std::mt19937_64& rng);

/// Binarizes teacher probabilities [frames, classes] at `threshold`; when
/// `weak` is given, classes absent from it are forced to zero.
Tensor binarize_pseudo(const Tensor& probs, double threshold,
                       const Tensor* weak);

std::vector<ClipRecord> pseudo_label(Rcrnn& teacher,
                                     const std::vector<const ClipRecord*>& clips,
                                     double threshold,
                                     std::size_t batch_size = 16);

/// Mean over cells of -(ybar log p + (1 - ybar) log(1 - p)), p clamped.
double bce_soft(const Tensor& pred, const Tensor& target);

/// beta * student + (1 - beta) * teacher_binary, elementwise.
Tensor interpolate_target(const Tensor& student, const Tensor& teacher_binary,
                          double beta);

/// Semi-supervised loss over a batch of strong outputs pred [N, frames,
/// classes]: rows in `strong_rows` use `targets` directly, rows in
/// `pseudo_rows` use interpolate_target(pred value, targets, beta).
ad::Var semi_supervised_loss(const ad::Var& pred, const Tensor& targets,
                             const std::vector<std::size_t>& strong_rows,
                             const std::vector<std::size_t>& pseudo_rows,
                             double beta);

/// Noisy inputs and targets for one stage-2 batch: masking, mixup within
/// the strong rows and within the pseudo rows, then shift.
struct NoisyBatch {
  Tensor inputs;   // [N, 1, 625, 128]
  Tensor targets;  // [N, frames, classes]
  BatchRoles roles;
};

NoisyBatch make_noisy_batch(const std::vector<const ClipRecord*>& batch,
                            const augment::AugmentConfig& aug, bool noise,
                            std::mt19937_64& rng);

/// One stage-2 update; returns the loss value.
double noisy_student_step(const NoisyBatch& batch, Rcrnn& student, Adam& opt,
                          double beta, std::mt19937_64& rng);

struct Validation {
  double loss = 0.0;  // mean strong BCE
  eval::F1Score f1;
};

Validation validate_model(Rcrnn& model,
                          const std::vector<const ClipRecord*>& clips,
                          const TrainConfig& cfg, std::size_t batch_size = 16);

struct EpochLog {
  std::string stage;  // "mt" or "ns"
  std::size_t round = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  StepLosses train;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  double teacher_val_f1 = 0.0;  // stage 1 only
  bool best = false;
};

/// One JSON object per line.
std::string format_epoch_log(const EpochLog& e);

struct TrainData {
  std::vector<ClipRecord> strong;
  std::vector<ClipRecord> weak;
  std::vector<ClipRecord> unlabeled;
  std::vector<ClipRecord> selection;  // strong clips for model selection
};

/// Deterministic batch schedule over the three labeled pools. An epoch
/// has max over pools of ceil(pool size / pool batch) steps; smaller
/// pools cycle through fresh permutations.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool_sizes,
               std::vector<std::size_t> batch_sizes);

  std::size_t steps_per_epoch() const { return steps_; }
  /// Index lists into each pool for the next step.
  std::vector<std::vector<std::size_t>> next(std::mt19937_64& rng);

 private:
  std::vector<std::size_t> sizes_, batch_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  std::size_t steps_ = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

struct StageResult {
  ParamStore best_student;
  ParamStore best_teacher;  // stage 1; equals best_student in stage 2
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

/// Optional directory where a stage saves its state after every epoch and
/// from which it resumes when matching state is present.
struct ResumeOptions {
  std::filesystem::path dir;  // empty disables saving and resuming
  std::string fingerprint;    // must match for a resume
};

/// Stage 1. `student` arrives initialized. Model selection uses the
/// teacher's F1 on data.selection (ties keep the earlier epoch).
StageResult train_mean_teacher(const ModelConfig& mcfg, const TrainConfig& cfg,
                               const TrainData& data, ParamStore init,
                               std::uint64_t seed, const EpochCallback& on_epoch,
                               const ResumeOptions& resume = {});

/// One stage-2 round: student starts from `student_init`, targets come from
/// `pseudo`. Selection by the student's F1 on data.selection.
StageResult train_noisy_student_round(
    const ModelConfig& mcfg, const TrainConfig& cfg,
    const augment::AugmentConfig& aug, const TrainData& data,
    const std::vector<ClipRecord>& pseudo, const ParamStore& student_init,
    double beta, std::size_t round, std::uint64_t seed,
    const EpochCallback& on_epoch, const ResumeOptions& resume = {});

struct SelfTrainingResult {
  std::vector<StageResult> rounds;
  /// Pseudo labels used by each round.
  std::vector<std::vector<ClipRecord>> pseudo;
};

/// cfg.rounds rounds of pseudo labeling and noisy-student training. Round 1
/// labels with `teacher`; later rounds with the previous round's best.
SelfTrainingResult self_training(const ModelConfig& mcfg,
                                 const TrainConfig& cfg,
                                 const augment::AugmentConfig& aug,
                                 const TrainData& data,
                                 const ParamStore& stage1_student,
                                 const ParamStore& teacher, double beta,
                                 std::uint64_t seed,
                                 const EpochCallback& on_epoch,
                                 const ResumeOptions& resume = {});

/// splitmix64 derivation of sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace sed::train
