// training.cc

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

#include "sed/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "sed/io_util.h"

namespace sed::train {

using ad::Var;
using json = nlohmann::json;

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Copies `src` ([rows, cols]) into row `n` of a [N, rows, cols] tensor.
void put_row(Tensor& dst, std::size_t n, const Tensor& src) {
  std::copy(src.data(), src.data() + src.size(), dst.data() + n * src.size());
}

double ramp(double epoch, std::size_t rampup_epochs) {
  if (rampup_epochs == 0) return 1.0;
  const double p =
      1.0 - std::min(epoch / static_cast<double>(rampup_epochs), 1.0);
  return std::exp(-5.0 * p * p);
}

}  // namespace

std::string label_kind_name(LabelKind k) {
  switch (k) {
    case LabelKind::kStrong: return "strong";
    case LabelKind::kWeak: return "weak";
    case LabelKind::kUnlabeled: return "unlabeled";
    case LabelKind::kPseudo: return "pseudo";
  }
  return "?";
}

void ClipRecord::validate(std::size_t frames, std::size_t classes) const {
  const std::string what = "clip " + id + " (" + label_kind_name(kind) + ")";
  if (features.rank() != 2) {
    throw std::invalid_argument(what + ": features must be [frames, bins]");
  }
  const bool needs_strong =
      kind == LabelKind::kStrong || kind == LabelKind::kPseudo;
  if (needs_strong && strong_label.shape() != Shape{frames, classes}) {
    throw std::invalid_argument(what + ": strong label must be " +
                                shape_str({frames, classes}) + ", got " +
                                shape_str(strong_label.shape()));
  }
  if (kind == LabelKind::kWeak && weak_label.shape() != Shape{classes}) {
    throw std::invalid_argument(what + ": weak label must be " +
                                shape_str({classes}));
  }
  if (kind == LabelKind::kUnlabeled &&
      (!strong_label.empty() || !weak_label.empty())) {
    throw std::invalid_argument(what + ": unlabeled clip carries a label");
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) {
    throw std::invalid_argument("train config: " + m);
  };
  if (!(max_lr > 0.0) || !std::isfinite(max_lr)) fail("max_lr must be > 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must be in [0,1)");
  if (!(consistency_weight_max >= 0.0)) fail("consistency_weight_max < 0");
  if (batch_strong == 0) fail("batch_strong must be > 0");
  if (betas.empty()) fail("betas must not be empty");
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) fail("beta outside [0,1]");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold outside (0,1)");
  if (median_len % 2 == 0) fail("median_len must be odd");
  if (folds == 0) fail("folds must be >= 1");
  if (rounds == 0) fail("rounds must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    fail("invalid Adam constants");
  }
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    fail("plateau_factor outside (0,1)");
  }
  if (!(plateau_min_delta >= 0.0)) fail("plateau_min_delta < 0");
  if (!(min_lr >= 0.0 && min_lr <= max_lr)) fail("min_lr outside [0, max_lr]");
}

void init_params(ParamStore& params, std::mt19937_64& rng) {
  for (auto& p : params.params()) {
    Tensor& v = p.var.mutable_value();
    if (v.rank() >= 2) {
      std::size_t receptive = 1;
      for (std::size_t a = 2; a < v.rank(); ++a) receptive *= v.dim(a);
      const double fan_in = static_cast<double>(v.dim(1) * receptive);
      const double fan_out = static_cast<double>(v.dim(0) * receptive);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& x : v.values()) x = u(rng);
    } else if (ends_with(p.path, ".gamma")) {
      v.fill(1.0);
    } else {
      v.fill(0.0);
    }
  }
  for (auto& b : params.buffers()) {
    b.value.fill(ends_with(b.path, ".running_var") ? 1.0 : 0.0);
  }
}

double rampup_lr(double epoch, double max_lr, std::size_t rampup_epochs) {
  if (epoch < 0.0) throw std::invalid_argument("rampup_lr: negative epoch");
  return max_lr * ramp(epoch, rampup_epochs);
}

double consistency_weight(double epoch, const TrainConfig& cfg) {
  return cfg.consistency_weight_max * ramp(epoch, cfg.rampup_epochs);
}

void ema_update(ParamStore& teacher, const ParamStore& student, double alpha) {
  teacher.require_same_layout(student);
  const double beta = 1.0 - alpha;
  auto blend = [alpha, beta](Tensor& t, const Tensor& s) {
    double* tp = t.data();
    const double* sp = s.data();
    for (std::size_t i = 0; i < t.size(); ++i) tp[i] = alpha * tp[i] + beta * sp[i];
  };
  auto& tp = teacher.params();
  const auto& sp = student.params();
  for (std::size_t i = 0; i < tp.size(); ++i) {
    blend(tp[i].var.mutable_value(), sp[i].var.value());
  }
  auto& tb = teacher.buffers();
  const auto& sb = student.buffers();
  for (std::size_t i = 0; i < tb.size(); ++i) blend(tb[i].value, sb[i].value);
}

double ema_alpha(std::uint64_t step, double alpha) {
  return std::min(1.0 - 1.0 / static_cast<double>(step + 1), alpha);
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {
constexpr std::string_view kOptMagic = "SEDOPT01";
}

std::string encode_optimizer(const OptimizerState& s) {
  if (s.m.size() != s.v.size()) throw ShapeError("optimizer: m/v count differ");
  ByteWriter w;
  w.put_bytes(kOptMagic);
  w.put<std::uint64_t>(s.step);
  w.put<double>(s.lr);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    if (s.m[i].size() != s.v[i].size()) throw ShapeError("optimizer: m/v size");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.m[i].rank()));
    for (std::size_t d : s.m[i].shape()) w.put<std::uint64_t>(d);
    for (double x : s.m[i].values()) w.put<double>(x);
    for (double x : s.v[i].values()) w.put<double>(x);
  }
  return w.str();
}

OptimizerState decode_optimizer(std::string_view bytes,
                                const std::string& source) {
  ByteReader r(bytes, source);
  if (r.get_bytes(kOptMagic.size()) != kOptMagic) {
    throw IoError(source + ": not an optimizer state (bad magic)");
  }
  OptimizerState s;
  s.step = r.get<std::uint64_t>();
  s.lr = r.get<double>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> m(numel(shape)), v(numel(shape));
    for (double& x : m) x = r.get<double>();
    for (double& x : v) x = r.get<double>();
    s.m.emplace_back(shape, std::move(m));
    s.v.emplace_back(shape, std::move(v));
  }
  if (!r.done()) throw IoError(source + ": trailing bytes in optimizer state");
  return s;
}

Adam::Adam(ParamStore& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.params()) {
    state_.m.emplace_back(p.var.shape());
    state_.v.emplace_back(p.var.shape());
  }
}

void Adam::step() {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  auto& ps = params_->params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Var& var = ps[i].var;
    if (!var.has_grad()) continue;
    const Tensor& g = var.node()->grad;
    double* m = state_.m[i].data();
    double* v = state_.v[i].data();
    double* w = var.mutable_value().data();
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= state_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

void Adam::load_state(OptimizerState s) {
  const auto& ps = params_->params();
  if (s.m.size() != ps.size() || s.v.size() != ps.size()) {
    throw ShapeError("optimizer state has " + std::to_string(s.m.size()) +
                     " moments for " + std::to_string(ps.size()) + " params");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (s.m[i].shape() != ps[i].var.shape() ||
        s.v[i].shape() != ps[i].var.shape()) {
      throw ShapeError("optimizer moments do not fit " + ps[i].path);
    }
  }
  state_ = std::move(s);
}

double reduce_lr_on_plateau(double val_loss, double lr, PlateauState& state,
                            const TrainConfig& cfg) {
  if (!state.has_best || val_loss < state.best - cfg.plateau_min_delta) {
    state.best = val_loss;
    state.has_best = true;
    state.bad_epochs = 0;
    return lr;
  }
  if (++state.bad_epochs < cfg.plateau_patience) return lr;
  state.bad_epochs = 0;
  return std::max(lr * cfg.plateau_factor, cfg.min_lr);
}

// ---------------------------------------------------------------------------
// Losses and steps

BatchRoles batch_roles(const std::vector<const ClipRecord*>& batch) {
  BatchRoles r;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    switch (batch[i]->kind) {
      case LabelKind::kStrong: r.strong.push_back(i); break;
      case LabelKind::kWeak: r.weak.push_back(i); break;
      case LabelKind::kUnlabeled:
      case LabelKind::kPseudo: r.other.push_back(i); break;
    }
  }
  return r;
}

namespace {

Tensor stack_features(const std::vector<const ClipRecord*>& batch) {
  std::vector<const Tensor*> xs;
  xs.reserve(batch.size());
  for (const auto* c : batch) xs.push_back(&c->features);
  return stack_inputs(xs);
}

Var sum_vars(const std::vector<Var>& terms) {
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return acc;
}

}  // namespace

StepLosses mean_teacher_step(const std::vector<const ClipRecord*>& batch,
                             Rcrnn& student, Rcrnn& teacher, Adam& opt,
                             double consistency_w, double ema_decay,
                             std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("mean_teacher_step: empty batch");
  const std::size_t N = batch.size();
  const std::size_t T = student.config().output_frames();
  const std::size_t C = student.config().n_classes;
  const BatchRoles roles = batch_roles(batch);
  const Tensor inputs = stack_features(batch);

  Tensor strong_target({N, T, C});
  Tensor weak_target({N, C});
  for (std::size_t i : roles.strong) put_row(strong_target, i, batch[i]->strong_label);
  for (std::size_t i : roles.weak) put_row(weak_target, i, batch[i]->weak_label);

  ModelOutput t_out;
  {
    ad::NoGradGuard guard;
    t_out = teacher.forward(inputs, Mode::kInfer, rng);
  }
  const ModelOutput s_out = student.forward(inputs, Mode::kTrain, rng);

  StepLosses losses;
  std::vector<Var> terms;
  if (!roles.strong.empty()) {
    Var l = ops::scale(ops::bce_sum(s_out.strong, strong_target, roles.strong),
                       1.0 / static_cast<double>(roles.strong.size()));
    losses.strong = l.item();
    terms.push_back(l);
  }
  if (!roles.weak.empty()) {
    Var l = ops::scale(ops::bce_sum(s_out.weak, weak_target, roles.weak),
                       1.0 / static_cast<double>(roles.weak.size()));
    losses.weak = l.item();
    terms.push_back(l);
  }
  Var cons = ops::add(ops::mse(s_out.strong, t_out.strong.value()),
                      ops::mse(s_out.weak, t_out.weak.value()));
  losses.consistency = cons.item();
  terms.push_back(ops::scale(cons, consistency_w));
  Var loss = sum_vars(terms);
  losses.total = loss.item();
  if (!std::isfinite(losses.total)) {
    std::ostringstream os;
    os << "mean-teacher step " << opt.state().step + 1
       << ": non-finite loss (strong " << losses.strong << ", weak "
       << losses.weak << ", consistency " << losses.consistency << ")";
    throw NonFiniteError(os.str());
  }

  student.params().zero_grad();
  ad::backward(loss);
  opt.step();
  student.params().zero_grad();
  ema_update(teacher.params(), student.params(),
             ema_alpha(opt.state().step, ema_decay));
  return losses;
}

Tensor binarize_pseudo(const Tensor& probs, double threshold,
                       const Tensor* weak) {
  if (probs.rank() != 2) throw ShapeError("binarize_pseudo: probs must be rank 2");
  const std::size_t T = probs.dim(0), C = probs.dim(1);
  if (weak) require_shape(*weak, {C}, "binarize_pseudo weak label");
  Tensor out({T, C});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const bool allowed = !weak || (*weak)[c] > 0.5;
      out[t * C + c] = (allowed && probs[t * C + c] > threshold) ? 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<ClipRecord> pseudo_label(Rcrnn& teacher,
                                     const std::vector<const ClipRecord*>& clips,
                                     double threshold, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("pseudo_label: batch size 0");
  std::vector<ClipRecord> out;
  out.reserve(clips.size());
  for (std::size_t start = 0; start < clips.size(); start += batch_size) {
    const std::size_t end = std::min(clips.size(), start + batch_size);
    std::vector<const ClipRecord*> batch(clips.begin() + start,
                                         clips.begin() + end);
    const auto preds = teacher.predict(stack_features(batch));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const ClipRecord& src = *batch[i];
      ClipRecord r;
      r.id = src.id;
      r.features = src.features;
      r.kind = LabelKind::kPseudo;
      const bool weak = src.kind == LabelKind::kWeak;
      r.strong_label = binarize_pseudo(preds[i].strong, threshold,
                                       weak ? &src.weak_label : nullptr);
      if (weak) r.weak_label = src.weak_label;
      out.push_back(std::move(r));
    }
  }
  return out;
}

double bce_soft(const Tensor& pred, const Tensor& target) {
  require_shape(target, pred.shape(), "bce_soft target");
  if (pred.empty()) throw std::invalid_argument("bce_soft: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], ops::kProbFloor, 1.0 - ops::kProbFloor);
    const double y = target[i];
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return total / static_cast<double>(pred.size());
}

Tensor interpolate_target(const Tensor& student, const Tensor& teacher_binary,
                          double beta) {
  require_shape(teacher_binary, student.shape(), "interpolate_target");
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("interpolate_target: beta outside [0,1]");
  }
  Tensor out(student.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = beta * student[i] + (1.0 - beta) * teacher_binary[i];
  }
  return out;
}

Var semi_supervised_loss(const Var& pred, const Tensor& targets,
                         const std::vector<std::size_t>& strong_rows,
                         const std::vector<std::size_t>& pseudo_rows,
                         double beta) {
  require_shape(targets, pred.shape(), "semi_supervised_loss targets");
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("semi_supervised_loss: beta outside [0,1]");
  }
  const std::size_t N = pred.shape()[0];
  const std::size_t row = N == 0 ? 0 : pred.value().size() / N;
  std::vector<char> seen(N, 0);
  auto claim = [&](std::size_t r) {
    if (r >= N) throw ShapeError("semi_supervised_loss: row out of range");
    if (seen[r]) {
      throw std::invalid_argument("semi_supervised_loss: row " +
                                  std::to_string(r) + " listed twice");
    }
    seen[r] = 1;
  };
  for (std::size_t r : strong_rows) claim(r);
  for (std::size_t r : pseudo_rows) claim(r);
  for (std::size_t r = 0; r < N; ++r) {
    if (!seen[r]) {
      throw std::invalid_argument("semi_supervised_loss: row " +
                                  std::to_string(r) + " has no label");
    }
  }
  // The interpolated target is built from the prediction's value, so no
  // gradient flows through it.
  Tensor ybar = targets;
  const Tensor& p = pred.value();
  for (std::size_t r : pseudo_rows) {
    for (std::size_t j = r * row; j < (r + 1) * row; ++j) {
      ybar[j] = beta * p[j] + (1.0 - beta) * targets[j];
    }
  }
  std::vector<std::size_t> rows(N);
  std::iota(rows.begin(), rows.end(), 0);
  return ops::bce_sum(pred, ybar, rows);
}

NoisyBatch make_noisy_batch(const std::vector<const ClipRecord*>& batch,
                            const augment::AugmentConfig& aug, bool noise,
                            std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("make_noisy_batch: empty batch");
  NoisyBatch nb;
  const BatchRoles roles = batch_roles(batch);
  if (!roles.weak.empty()) {
    throw std::invalid_argument("make_noisy_batch: weak clip " +
                                batch[roles.weak.front()]->id +
                                " needs a pseudo label");
  }
  for (std::size_t i : roles.other) {
    if (batch[i]->kind != LabelKind::kPseudo) {
      throw std::invalid_argument("make_noisy_batch: clip " + batch[i]->id +
                                  " has no label");
    }
  }
  nb.roles = roles;

  std::vector<augment::Example> ex(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ex[i].spec = noise ? augment::spec_augment(batch[i]->features, aug, rng)
                       : batch[i]->features;
    ex[i].label = batch[i]->strong_label;
  }
  if (noise) {
    // Mixup pairs each clip with a random partner from its own group.
    for (const auto* group : {&roles.strong, &roles.other}) {
      if (group->size() < 2) continue;
      std::vector<std::size_t> partner(*group);
      std::shuffle(partner.begin(), partner.end(), rng);
      std::vector<augment::Example> mixed;
      mixed.reserve(group->size());
      for (std::size_t k = 0; k < group->size(); ++k) {
        const double lambda = augment::sample_beta(aug.mixup_alpha, rng);
        mixed.push_back(
            augment::mixup(ex[(*group)[k]], ex[partner[k]], lambda));
      }
      for (std::size_t k = 0; k < group->size(); ++k) {
        ex[(*group)[k]] = std::move(mixed[k]);
      }
    }
    for (auto& e : ex) e = augment::time_freq_shift(e, aug, rng);
  }

  const std::size_t N = batch.size();
  const Tensor& f0 = ex.front().spec;
  const Tensor& l0 = ex.front().label;
  nb.inputs = Tensor({N, 1, f0.dim(0), f0.dim(1)});
  nb.targets = Tensor({N, l0.dim(0), l0.dim(1)});
  for (std::size_t i = 0; i < N; ++i) {
    require_shape(ex[i].spec, f0.shape(), "noisy batch features");
    require_shape(ex[i].label, l0.shape(), "noisy batch label");
    put_row(nb.inputs, i, ex[i].spec);
    put_row(nb.targets, i, ex[i].label);
  }
  return nb;
}

double noisy_student_step(const NoisyBatch& batch, Rcrnn& student, Adam& opt,
                          double beta, std::mt19937_64& rng) {
  const ModelOutput out = student.forward(batch.inputs, Mode::kTrain, rng);
  Var loss = semi_supervised_loss(out.strong, batch.targets, batch.roles.strong,
                                  batch.roles.other, beta);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw NonFiniteError("noisy-student step " +
                         std::to_string(opt.state().step + 1) +
                         ": non-finite loss");
  }
  student.params().zero_grad();
  ad::backward(loss);
  opt.step();
  student.params().zero_grad();
  return value;
}

Validation validate_model(Rcrnn& model,
                          const std::vector<const ClipRecord*>& clips,
                          const TrainConfig& cfg, std::size_t batch_size) {
  if (clips.empty()) throw std::invalid_argument("validate_model: no clips");
  Validation v;
  eval::ClipEvents ref, est;
  double loss = 0.0;
  for (std::size_t start = 0; start < clips.size(); start += batch_size) {
    const std::size_t end = std::min(clips.size(), start + batch_size);
    std::vector<const ClipRecord*> batch(clips.begin() + start,
                                         clips.begin() + end);
    const auto preds = model.predict(stack_features(batch));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const ClipRecord& c = *batch[i];
      if (c.kind != LabelKind::kStrong) {
        throw std::invalid_argument("validate_model: clip " + c.id +
                                    " is not strongly labeled");
      }
      loss += bce_soft(preds[i].strong, c.strong_label);
      ref[c.id] = c.events;
      est[c.id] = eval::decode_events(preds[i].strong, cfg.threshold,
                                      cfg.median_len);
    }
  }
  v.loss = loss / static_cast<double>(clips.size());
  v.f1 = eval::event_f1(ref, est);
  return v;
}

std::string format_epoch_log(const EpochLog& e) {
  json j;
  j["stage"] = e.stage;
  j["round"] = e.round;
  j["epoch"] = e.epoch;
  j["lr"] = e.lr;
  j["train_loss"] = e.train.total;
  j["train_strong"] = e.train.strong;
  j["train_weak"] = e.train.weak;
  j["train_consistency"] = e.train.consistency;
  j["val_loss"] = e.val_loss;
  j["val_f1"] = e.val_f1;
  if (e.stage == "mt") j["teacher_val_f1"] = e.teacher_val_f1;
  j["best"] = e.best;
  return j.dump();
}

namespace {

json log_to_json(const EpochLog& e) { return json::parse(format_epoch_log(e)); }

EpochLog log_from_json(const json& j) {
  EpochLog e;
  e.stage = j.at("stage").get<std::string>();
  e.round = j.at("round").get<std::size_t>();
  e.epoch = j.at("epoch").get<std::size_t>();
  e.lr = j.at("lr").get<double>();
  e.train.total = j.at("train_loss").get<double>();
  e.train.strong = j.at("train_strong").get<double>();
  e.train.weak = j.at("train_weak").get<double>();
  e.train.consistency = j.at("train_consistency").get<double>();
  e.val_loss = j.at("val_loss").get<double>();
  e.val_f1 = j.at("val_f1").get<double>();
  if (j.contains("teacher_val_f1")) {
    e.teacher_val_f1 = j.at("teacher_val_f1").get<double>();
  }
  e.best = j.at("best").get<bool>();
  return e;
}

}  // namespace

BatchSampler::BatchSampler(std::vector<std::size_t> pool_sizes,
                           std::vector<std::size_t> batch_sizes)
    : sizes_(std::move(pool_sizes)), batch_(std::move(batch_sizes)) {
  if (sizes_.size() != batch_.size()) {
    throw std::invalid_argument("BatchSampler: pool and batch counts differ");
  }
  order_.resize(sizes_.size());
  cursor_.assign(sizes_.size(), 0);
  for (std::size_t k = 0; k < sizes_.size(); ++k) {
    if (sizes_[k] == 0 || batch_[k] == 0) continue;
    steps_ = std::max(steps_, (sizes_[k] + batch_[k] - 1) / batch_[k]);
  }
}

std::vector<std::vector<std::size_t>> BatchSampler::next(std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> out(sizes_.size());
  for (std::size_t k = 0; k < sizes_.size(); ++k) {
    if (sizes_[k] == 0) continue;
    for (std::size_t j = 0; j < batch_[k]; ++j) {
      if (cursor_[k] == order_[k].size()) {
        order_[k].resize(sizes_[k]);
        std::iota(order_[k].begin(), order_[k].end(), 0);
        std::shuffle(order_[k].begin(), order_[k].end(), rng);
        cursor_[k] = 0;
      }
      out[k].push_back(order_[k][cursor_[k]++]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage state on disk
//
// A stage directory holds "current/" with student.ckpt, teacher.ckpt,
// best_student.ckpt, best_teacher.ckpt, optimizer.bin and state.json. A new
// state is written to "next/" and swapped in, keeping the last complete
// state if the process stops mid-write.

namespace {

namespace fs = std::filesystem;

struct StageState {
  std::size_t epochs_done = 0;
  std::string rng;
  PlateauState plateau;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

struct StageModels {
  Rcrnn& student;
  Rcrnn* teacher;  // null in stage 2
  ParamStore& best_student;
  ParamStore& best_teacher;
  Adam& opt;
};

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void save_stage(const fs::path& dir, const std::string& fingerprint,
                const StageState& st, const StageModels& m) {
  const fs::path next = dir / "next", cur = dir / "current", prev = dir / "prev";
  fs::remove_all(next);
  fs::create_directories(next);
  save_checkpoint(next / "student.ckpt", m.student.params(), fingerprint);
  if (m.teacher) {
    save_checkpoint(next / "teacher.ckpt", m.teacher->params(), fingerprint);
  }
  save_checkpoint(next / "best_student.ckpt", m.best_student, fingerprint);
  save_checkpoint(next / "best_teacher.ckpt", m.best_teacher, fingerprint);
  write_file_atomic(next / "optimizer.bin", encode_optimizer(m.opt.state()));
  json j;
  j["fingerprint"] = fingerprint;
  j["epochs_done"] = st.epochs_done;
  j["rng"] = st.rng;
  j["plateau"] = {{"best", st.plateau.best},
                  {"has_best", st.plateau.has_best},
                  {"bad_epochs", st.plateau.bad_epochs}};
  j["best_f1"] = st.best_f1;
  j["best_epoch"] = st.best_epoch;
  j["log"] = json::array();
  for (const auto& e : st.log) j["log"].push_back(log_to_json(e));
  write_file_atomic(next / "state.json", j.dump(1) + "\n");
  fs::remove_all(prev);
  if (fs::exists(cur)) fs::rename(cur, prev);
  fs::rename(next, cur);
  fs::remove_all(prev);
}

// Returns false when no saved state exists.
bool load_stage(const fs::path& dir, const std::string& fingerprint,
                StageState& st, const StageModels& m) {
  fs::path src = dir / "current";
  if (!fs::exists(src / "state.json")) src = dir / "prev";
  if (!fs::exists(src / "state.json")) return false;
  const json j = json::parse(read_file(src / "state.json"));
  const auto saved = j.at("fingerprint").get<std::string>();
  if (saved != fingerprint) {
    throw std::runtime_error("resume state in " + dir.string() +
                             " was produced by a different configuration; "
                             "remove it or restore the original settings");
  }
  st.epochs_done = j.at("epochs_done").get<std::size_t>();
  st.rng = j.at("rng").get<std::string>();
  st.plateau.best = j.at("plateau").at("best").get<double>();
  st.plateau.has_best = j.at("plateau").at("has_best").get<bool>();
  st.plateau.bad_epochs = j.at("plateau").at("bad_epochs").get<std::size_t>();
  st.best_f1 = j.at("best_f1").get<double>();
  st.best_epoch = j.at("best_epoch").get<std::size_t>();
  st.log.clear();
  for (const auto& e : j.at("log")) st.log.push_back(log_from_json(e));
  load_checkpoint_into(src / "student.ckpt", m.student.params());
  if (m.teacher) load_checkpoint_into(src / "teacher.ckpt", m.teacher->params());
  load_checkpoint_into(src / "best_student.ckpt", m.best_student);
  load_checkpoint_into(src / "best_teacher.ckpt", m.best_teacher);
  m.opt.load_state(decode_optimizer(read_file(src / "optimizer.bin"),
                                    (src / "optimizer.bin").string()));
  return true;
}

void restore_rng(std::mt19937_64& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw IoError("resume state: malformed rng state");
}

std::vector<const ClipRecord*> pointers(const std::vector<ClipRecord>& v) {
  std::vector<const ClipRecord*> out;
  out.reserve(v.size());
  for (const auto& c : v) out.push_back(&c);
  return out;
}

void check_records(const std::vector<ClipRecord>& v, const ModelConfig& mcfg) {
  for (const auto& c : v) c.validate(mcfg.output_frames(), mcfg.n_classes);
}

// Saves the diverged student next to the stage state, then rethrows.
[[noreturn]] void abort_diverged(const ResumeOptions& resume,
                                 const Rcrnn& student, const NonFiniteError& e) {
  if (!resume.dir.empty()) {
    fs::create_directories(resume.dir);
    save_checkpoint(resume.dir / "diverged_student.ckpt", student.params(),
                    resume.fingerprint);
    throw NonFiniteError(std::string(e.what()) + "; student saved to " +
                         (resume.dir / "diverged_student.ckpt").string());
  }
  throw e;
}

}  // namespace

StageResult train_mean_teacher(const ModelConfig& mcfg, const TrainConfig& cfg,
                               const TrainData& data, ParamStore init,
                               std::uint64_t seed, const EpochCallback& on_epoch,
                               const ResumeOptions& resume) {
  cfg.validate();
  check_records(data.strong, mcfg);
  check_records(data.weak, mcfg);
  check_records(data.unlabeled, mcfg);
  check_records(data.selection, mcfg);
  if (data.selection.empty()) {
    throw std::invalid_argument("train_mean_teacher: empty selection set");
  }

  Rcrnn student(mcfg, std::move(init));
  Rcrnn teacher = student.clone();
  Adam opt(student.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  StageResult res;
  res.best_student = student.params().clone();
  res.best_teacher = teacher.params().clone();
  StageModels models{student, &teacher, res.best_student, res.best_teacher, opt};

  std::mt19937_64 rng(seed);
  StageState st;
  if (!resume.dir.empty() &&
      load_stage(resume.dir, resume.fingerprint, st, models)) {
    restore_rng(rng, st.rng);
  }

  const auto strong = pointers(data.strong);
  const auto weak = pointers(data.weak);
  const auto unlabeled = pointers(data.unlabeled);
  const auto selection = pointers(data.selection);

  for (std::size_t epoch = st.epochs_done; epoch < cfg.epochs_mt; ++epoch) {
    const double e = static_cast<double>(epoch);
    opt.set_lr(rampup_lr(e, cfg.max_lr, cfg.rampup_epochs));
    const double w = consistency_weight(e, cfg);
    BatchSampler sampler({strong.size(), weak.size(), unlabeled.size()},
                         {cfg.batch_strong, cfg.batch_weak, cfg.batch_unlabeled});
    if (sampler.steps_per_epoch() == 0) {
      throw std::invalid_argument("train_mean_teacher: no training clips");
    }
    StepLosses sum;
    for (std::size_t s = 0; s < sampler.steps_per_epoch(); ++s) {
      const auto idx = sampler.next(rng);
      std::vector<const ClipRecord*> batch;
      for (std::size_t i : idx[0]) batch.push_back(strong[i]);
      for (std::size_t i : idx[1]) batch.push_back(weak[i]);
      for (std::size_t i : idx[2]) batch.push_back(unlabeled[i]);
      StepLosses l;
      try {
        l = mean_teacher_step(batch, student, teacher, opt, w, cfg.ema_decay,
                              rng);
      } catch (const NonFiniteError& err) {
        abort_diverged(resume, student, err);
      }
      sum.total += l.total;
      sum.strong += l.strong;
      sum.weak += l.weak;
      sum.consistency += l.consistency;
    }
    const double steps = static_cast<double>(sampler.steps_per_epoch());
    EpochLog log;
    log.stage = "mt";
    log.epoch = epoch;
    log.lr = opt.lr();
    log.train = {sum.total / steps, sum.strong / steps, sum.weak / steps,
                 sum.consistency / steps};
    const Validation sv = validate_model(student, selection, cfg);
    const Validation tv = validate_model(teacher, selection, cfg);
    log.val_loss = sv.loss;
    log.val_f1 = sv.f1.f1;
    log.teacher_val_f1 = tv.f1.f1;
    if (tv.f1.f1 > st.best_f1) {
      st.best_f1 = tv.f1.f1;
      st.best_epoch = epoch;
      res.best_student.copy_values_from(student.params());
      res.best_teacher.copy_values_from(teacher.params());
      log.best = true;
    }
    st.log.push_back(log);
    st.epochs_done = epoch + 1;
    st.rng = rng_text(rng);
    if (!resume.dir.empty()) save_stage(resume.dir, resume.fingerprint, st, models);
    if (on_epoch) on_epoch(log);
  }
  res.best_f1 = st.best_f1;
  res.best_epoch = st.best_epoch;
  res.log = st.log;
  return res;
}

StageResult train_noisy_student_round(
    const ModelConfig& mcfg, const TrainConfig& cfg,
    const augment::AugmentConfig& aug, const TrainData& data,
    const std::vector<ClipRecord>& pseudo, const ParamStore& student_init,
    double beta, std::size_t round, std::uint64_t seed,
    const EpochCallback& on_epoch, const ResumeOptions& resume) {
  cfg.validate();
  aug.validate();
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("noisy student: beta outside [0,1]");
  }
  check_records(data.strong, mcfg);
  check_records(data.selection, mcfg);
  check_records(pseudo, mcfg);
  for (const auto& c : pseudo) {
    if (c.kind != LabelKind::kPseudo) {
      throw std::invalid_argument("noisy student: clip " + c.id +
                                  " is not pseudo-labeled");
    }
  }
  if (data.selection.empty()) {
    throw std::invalid_argument("noisy student: empty selection set");
  }

  Rcrnn student(mcfg, student_init.clone());
  Adam opt(student.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  opt.set_lr(cfg.max_lr);
  StageResult res;
  res.best_student = student.params().clone();
  res.best_teacher = student.params().clone();
  StageModels models{student, nullptr, res.best_student, res.best_teacher, opt};

  std::mt19937_64 rng(seed);
  StageState st;
  if (!resume.dir.empty() &&
      load_stage(resume.dir, resume.fingerprint, st, models)) {
    restore_rng(rng, st.rng);
  }

  const auto strong = pointers(data.strong);
  const auto pool = pointers(pseudo);
  const auto selection = pointers(data.selection);
  const std::size_t batch_pseudo = cfg.batch_weak + cfg.batch_unlabeled;

  for (std::size_t epoch = st.epochs_done; epoch < cfg.epochs_ns; ++epoch) {
    BatchSampler sampler({strong.size(), pool.size()},
                         {cfg.batch_strong, batch_pseudo});
    if (sampler.steps_per_epoch() == 0) {
      throw std::invalid_argument("noisy student: no training clips");
    }
    double sum = 0.0;
    for (std::size_t s = 0; s < sampler.steps_per_epoch(); ++s) {
      const auto idx = sampler.next(rng);
      std::vector<const ClipRecord*> batch;
      for (std::size_t i : idx[0]) batch.push_back(strong[i]);
      for (std::size_t i : idx[1]) batch.push_back(pool[i]);
      const NoisyBatch nb = make_noisy_batch(batch, aug, cfg.feature_noise, rng);
      try {
        sum += noisy_student_step(nb, student, opt, beta, rng);
      } catch (const NonFiniteError& err) {
        abort_diverged(resume, student, err);
      }
    }
    EpochLog log;
    log.stage = "ns";
    log.round = round;
    log.epoch = epoch;
    log.lr = opt.lr();
    log.train.total = sum / static_cast<double>(sampler.steps_per_epoch());
    const Validation v = validate_model(student, selection, cfg);
    log.val_loss = v.loss;
    log.val_f1 = v.f1.f1;
    if (v.f1.f1 > st.best_f1) {
      st.best_f1 = v.f1.f1;
      st.best_epoch = epoch;
      res.best_student.copy_values_from(student.params());
      res.best_teacher.copy_values_from(student.params());
      log.best = true;
    }
    opt.set_lr(reduce_lr_on_plateau(v.loss, opt.lr(), st.plateau, cfg));
    st.log.push_back(log);
    st.epochs_done = epoch + 1;
    st.rng = rng_text(rng);
    if (!resume.dir.empty()) save_stage(resume.dir, resume.fingerprint, st, models);
    if (on_epoch) on_epoch(log);
  }
  res.best_f1 = st.best_f1;
  res.best_epoch = st.best_epoch;
  res.log = st.log;
  return res;
}

SelfTrainingResult self_training(const ModelConfig& mcfg,
                                 const TrainConfig& cfg,
                                 const augment::AugmentConfig& aug,
                                 const TrainData& data,
                                 const ParamStore& stage1_student,
                                 const ParamStore& teacher, double beta,
                                 std::uint64_t seed,
                                 const EpochCallback& on_epoch,
                                 const ResumeOptions& resume) {
  cfg.validate();
  std::vector<const ClipRecord*> to_label;
  for (const auto& c : data.weak) to_label.push_back(&c);
  for (const auto& c : data.unlabeled) to_label.push_back(&c);
  if (to_label.empty()) {
    throw std::invalid_argument("self_training: no weak or unlabeled clips");
  }

  SelfTrainingResult out;
  ParamStore current_teacher = teacher.clone();
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    Rcrnn labeler(mcfg, current_teacher.clone());
    out.pseudo.push_back(pseudo_label(labeler, to_label, cfg.threshold));
    ResumeOptions rr;
    if (!resume.dir.empty()) {
      rr.dir = resume.dir / ("round" + std::to_string(r));
      rr.fingerprint = resume.fingerprint + "/round" + std::to_string(r);
    }
    out.rounds.push_back(train_noisy_student_round(
        mcfg, cfg, aug, data, out.pseudo.back(), stage1_student, beta, r,
        derive_seed(seed, r), on_epoch, rr));
    current_teacher = out.rounds.back().best_student.clone();
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0x9e3779b97f4a7c15ULL));
  return splitmix64(h ^ (c * 0xc2b2ae3d27d4eb4fULL));
}

}  // namespace sed::train
