// src/evaluation.cc

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

#include "sed/evaluation.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sed/io_util.h"

namespace sed::eval {

namespace {

const std::vector<Event> kNoEvents;

const std::vector<Event>& events_of(const ClipEvents& m, const std::string& id) {
  auto it = m.find(id);
  return it == m.end() ? kNoEvents : it->second;
}

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// Length of the part of [lo, hi) covered by the union of `spans`.
double covered(double lo, double hi,
               std::vector<std::pair<double, double>> spans) {
  std::sort(spans.begin(), spans.end());
  double total = 0.0, cur_lo = 0.0, cur_hi = -1.0;
  bool open = false;
  for (auto [a, b] : spans) {
    a = std::max(a, lo);
    b = std::min(b, hi);
    if (b <= a) continue;
    if (open && a <= cur_hi) {
      cur_hi = std::max(cur_hi, b);
      continue;
    }
    if (open) total += cur_hi - cur_lo;
    cur_lo = a;
    cur_hi = b;
    open = true;
  }
  if (open) total += cur_hi - cur_lo;
  return total;
}

// Kuhn's augmenting path search.
bool augment_path(std::size_t r, const std::vector<std::vector<std::size_t>>& adj,
                  std::vector<char>& seen, std::vector<long>& est_owner) {
  for (std::size_t e : adj[r]) {
    if (seen[e]) continue;
    seen[e] = 1;
    if (est_owner[e] < 0 ||
        augment_path(static_cast<std::size_t>(est_owner[e]), adj, seen,
                     est_owner)) {
      est_owner[e] = static_cast<long>(r);
      return true;
    }
  }
  return false;
}

bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.f1 != b.f1) return a.f1 > b.f1;
  if (a.fold != b.fold) return a.fold < b.fold;
  return a.beta_index < b.beta_index;
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw IoError(where + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

double frame_time(std::size_t frame, std::size_t frames, double clip_seconds) {
  return static_cast<double>(frame) * clip_seconds /
         static_cast<double>(frames);
}

Tensor events_to_grid(const std::vector<Event>& events, std::size_t frames,
                      std::size_t n_classes, double clip_seconds) {
  Tensor grid({frames, n_classes});
  const double rate = static_cast<double>(frames) / clip_seconds;
  // The slack keeps frame-aligned boundaries (as produced by decode_events)
  // from spilling into a neighbouring frame through rounding.
  constexpr double kSlack = 1e-9;
  for (const Event& e : events) {
    if (e.cls >= n_classes) {
      throw std::out_of_range("events_to_grid: class id " +
                              std::to_string(e.cls));
    }
    const auto lo = static_cast<std::size_t>(
        std::clamp(std::floor(e.onset * rate + kSlack), 0.0, static_cast<double>(frames)));
    const auto hi = static_cast<std::size_t>(
        std::clamp(std::ceil(e.offset * rate - kSlack), 0.0, static_cast<double>(frames)));
    for (std::size_t t = lo; t < hi; ++t) grid[t * n_classes + e.cls] = 1.0;
  }
  return grid;
}

std::vector<unsigned char> median_filter(const std::vector<unsigned char>& x,
                                         std::size_t len) {
  if (len % 2 == 0) throw std::invalid_argument("median_filter: even window");
  const long n = static_cast<long>(x.size());
  const long half = static_cast<long>(len / 2);
  std::vector<unsigned char> out(x.size());
  for (long i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (long k = i - half; k <= i + half; ++k) {
      ones += x[static_cast<std::size_t>(std::clamp(k, 0L, n - 1))] ? 1 : 0;
    }
    out[static_cast<std::size_t>(i)] = ones * 2 > len ? 1 : 0;
  }
  return out;
}

std::vector<Event> decode_events(const Tensor& probs, double threshold,
                                 std::size_t median_len, double clip_seconds) {
  if (probs.rank() != 2) {
    throw ShapeError("decode_events: expected [frames, classes], got " +
                     shape_str(probs.shape()));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("decode_events: threshold must be in (0, 1)");
  }
  const std::size_t T = probs.dim(0), C = probs.dim(1);
  std::vector<Event> out;
  std::vector<unsigned char> active(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) active[t] = probs[t * C + c] > threshold;
    const auto smooth = median_filter(active, median_len);
    std::size_t t = 0;
    while (t < T) {
      if (!smooth[t]) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end + 1 < T && smooth[end + 1]) ++end;
      out.push_back({c, frame_time(t, T, clip_seconds),
                     frame_time(end + 1, T, clip_seconds)});
      t = end + 1;
    }
  }
  return out;
}

bool collar_match(const Event& ref, const Event& est, const CollarConfig& cfg) {
  if (ref.cls != est.cls) return false;
  if (std::abs(ref.onset - est.onset) > cfg.onset_collar) return false;
  const double off_tol =
      std::max(cfg.offset_collar, cfg.offset_ratio * (ref.offset - ref.onset));
  return std::abs(ref.offset - est.offset) <= off_tol;
}

std::size_t match_count(const std::vector<Event>& ref,
                        const std::vector<Event>& est,
                        const CollarConfig& cfg) {
  std::vector<std::vector<std::size_t>> adj(ref.size());
  for (std::size_t r = 0; r < ref.size(); ++r) {
    for (std::size_t e = 0; e < est.size(); ++e) {
      if (collar_match(ref[r], est[e], cfg)) adj[r].push_back(e);
    }
  }
  std::vector<long> owner(est.size(), -1);
  std::size_t matched = 0;
  for (std::size_t r = 0; r < ref.size(); ++r) {
    std::vector<char> seen(est.size(), 0);
    if (augment_path(r, adj, seen, owner)) ++matched;
  }
  return matched;
}

F1Score event_f1(const ClipEvents& ref, const ClipEvents& est,
                 const CollarConfig& cfg) {
  F1Score s;
  std::vector<std::string> ids;
  for (const auto& [id, _] : ref) ids.push_back(id);
  for (const auto& [id, _] : est) {
    if (!ref.count(id)) ids.push_back(id);
  }
  for (const auto& id : ids) {
    const auto& r = events_of(ref, id);
    const auto& e = events_of(est, id);
    s.n_ref += r.size();
    s.n_est += e.size();
    s.true_positives += match_count(r, e, cfg);
  }
  const double tp = static_cast<double>(s.true_positives);
  s.precision = s.n_est ? tp / static_cast<double>(s.n_est) : 0.0;
  s.recall = s.n_ref ? tp / static_cast<double>(s.n_ref) : 0.0;
  s.f1 = s.precision + s.recall > 0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

void PsdsParams::validate() const {
  for (double rho : {rho_dtc, rho_gtc, rho_cttc}) {
    if (!(rho >= 0.0 && rho <= 1.0)) {
      throw std::invalid_argument("psds: rho values must lie in [0, 1]");
    }
  }
  if (!(alpha_ct >= 0.0) || !(alpha_st >= 0.0)) {
    throw std::invalid_argument("psds: alphas must be >= 0");
  }
  if (!(e_max > 0.0)) throw std::invalid_argument("psds: e_max must be > 0");
}

PsdsParams psds_scenario1() { return {0.7, 0.7, 0.0, 0.0, 1.0, 100.0}; }
PsdsParams psds_scenario2() { return {0.1, 0.1, 0.3, 0.5, 1.0, 100.0}; }

OperatingPoint operating_point(const ClipEvents& ref, const ClipEvents& est,
                               std::size_t n_classes, const PsdsParams& p,
                               double threshold, double clip_seconds) {
  p.validate();
  if (ref.empty()) throw std::invalid_argument("psds: empty reference set");
  const double hours =
      static_cast<double>(ref.size()) * clip_seconds / 3600.0;
  std::vector<double> n_gt(n_classes, 0.0), detected(n_classes, 0.0),
      fp(n_classes, 0.0);
  // ct[c][k]: detections of class c failing DTC that cross-trigger on k
  std::vector<std::vector<double>> ct(n_classes,
                                      std::vector<double>(n_classes, 0.0));
  for (const auto& [id, dets] : est) {
    if (!ref.count(id)) {
      throw std::invalid_argument("psds: detections for unknown clip " + id);
    }
  }
  for (const auto& [id, gts] : ref) {
    const auto& dets = events_of(est, id);
    for (const Event& g : gts) {
      if (g.cls >= n_classes) throw std::out_of_range("psds: class id");
    }
    std::vector<char> dtc_ok(dets.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const Event& det = dets[d];
      if (det.cls >= n_classes) throw std::out_of_range("psds: class id");
      const double dur = det.offset - det.onset;
      std::vector<double> inter(n_classes, 0.0);
      for (const Event& g : gts) {
        inter[g.cls] += overlap(det.onset, det.offset, g.onset, g.offset);
      }
      if (dur > 0 && inter[det.cls] / dur >= p.rho_dtc &&
          inter[det.cls] > 0) {
        dtc_ok[d] = 1;
        continue;
      }
      fp[det.cls] += 1.0;
      for (std::size_t k = 0; k < n_classes; ++k) {
        if (k == det.cls || inter[k] <= 0) continue;
        if (inter[k] / dur >= p.rho_cttc) ct[det.cls][k] += 1.0;
      }
    }
    for (const Event& g : gts) {
      n_gt[g.cls] += 1.0;
      std::vector<std::pair<double, double>> spans;
      for (std::size_t d = 0; d < dets.size(); ++d) {
        if (dtc_ok[d] && dets[d].cls == g.cls) {
          spans.emplace_back(dets[d].onset, dets[d].offset);
        }
      }
      const double dur = g.offset - g.onset;
      if (dur > 0 && covered(g.onset, g.offset, spans) / dur >= p.rho_gtc) {
        detected[g.cls] += 1.0;
      }
    }
  }
  OperatingPoint op;
  op.threshold = threshold;
  op.tpr.resize(n_classes);
  op.efpr.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    op.tpr[c] = n_gt[c] > 0 ? detected[c] / n_gt[c]
                            : std::numeric_limits<double>::quiet_NaN();
    double ct_mean = 0.0;
    if (n_classes > 1) {
      for (std::size_t k = 0; k < n_classes; ++k) {
        if (k != c) ct_mean += ct[c][k] / hours;
      }
      ct_mean /= static_cast<double>(n_classes - 1);
    }
    op.efpr[c] = fp[c] / hours + p.alpha_ct * ct_mean;
  }
  return op;
}

double psds_from_points(const std::vector<OperatingPoint>& points,
                        const PsdsParams& p) {
  p.validate();
  if (points.empty()) throw std::invalid_argument("psds: no operating points");
  const std::size_t C = points.front().tpr.size();
  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < C; ++c) {
    if (!std::isnan(points.front().tpr[c])) classes.push_back(c);
  }
  if (classes.empty()) {
    throw std::invalid_argument("psds: no class has ground truth");
  }
  // Breakpoints of the per-class step curves inside [0, e_max).
  std::vector<double> xs{0.0};
  for (const auto& op : points) {
    for (std::size_t c : classes) {
      if (op.efpr[c] < p.e_max) xs.push_back(op.efpr[c]);
    }
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  auto etpr_at = [&](double x) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t c : classes) {
      double best = 0.0;
      for (const auto& op : points) {
        if (op.efpr[c] <= x) best = std::max(best, op.tpr[c]);
      }
      sum += best;
      sq += best * best;
    }
    const double n = static_cast<double>(classes.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    return std::max(0.0, mean - p.alpha_st * std::sqrt(var));
  };
  double area = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double next = i + 1 < xs.size() ? xs[i + 1] : p.e_max;
    area += etpr_at(xs[i]) * (next - xs[i]);
  }
  return area / p.e_max;
}

double psds(const ClipEvents& ref, const std::vector<ThresholdedEvents>& sweep,
            std::size_t n_classes, const PsdsParams& p, double clip_seconds) {
  if (sweep.empty()) throw std::invalid_argument("psds: empty sweep");
  std::vector<OperatingPoint> points;
  points.reserve(sweep.size());
  for (const auto& s : sweep) {
    points.push_back(
        operating_point(ref, s.events, n_classes, p, s.threshold, clip_seconds));
  }
  return psds_from_points(points, p);
}

std::vector<double> psds_thresholds(std::size_t count, double lo, double hi) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = count == 1 ? lo
                        : lo + (hi - lo) * static_cast<double>(i) /
                                   static_cast<double>(count - 1);
  }
  return out;
}

StrongPrediction ensemble_combine(
    const std::vector<const StrongPrediction*>& members) {
  if (members.empty()) throw std::invalid_argument("ensemble: no members");
  StrongPrediction out = *members.front();
  // Running mean: identical members leave the value bit-exact.
  for (std::size_t i = 1; i < members.size(); ++i) {
    const StrongPrediction& m = *members[i];
    require_shape(m.strong, out.strong.shape(), "ensemble strong output");
    require_shape(m.weak, out.weak.shape(), "ensemble weak output");
    const double inv = 1.0 / static_cast<double>(i + 1);
    for (std::size_t j = 0; j < out.strong.size(); ++j) {
      out.strong[j] += (m.strong[j] - out.strong[j]) * inv;
    }
    for (std::size_t j = 0; j < out.weak.size(); ++j) {
      out.weak[j] += (m.weak[j] - out.weak[j]) * inv;
    }
  }
  return out;
}

std::vector<Candidate> select_topk(std::vector<Candidate> pool, std::size_t k) {
  if (k > pool.size()) {
    throw std::invalid_argument("select_topk: k=" + std::to_string(k) +
                                " exceeds " + std::to_string(pool.size()) +
                                " candidates");
  }
  std::stable_sort(pool.begin(), pool.end(), candidate_before);
  pool.resize(k);
  return pool;
}

std::vector<Candidate> select_per_fold_best(std::vector<Candidate> pool) {
  std::stable_sort(pool.begin(), pool.end(), candidate_before);
  std::map<std::size_t, Candidate> best;
  for (const auto& c : pool) best.emplace(c.fold, c);
  std::vector<Candidate> out;
  for (auto& [_, c] : best) out.push_back(c);
  return out;
}

std::string format_events(const ClipEvents& events,
                          const std::vector<std::string>& class_names) {
  std::string out = "clip_id\tonset\toffset\tclass\n";
  char buf[64];
  for (const auto& [id, list] : events) {
    for (const Event& e : list) {
      if (e.cls >= class_names.size()) {
        throw std::out_of_range("format_events: class id " +
                                std::to_string(e.cls));
      }
      out += id;
      std::snprintf(buf, sizeof(buf), "\t%.17g\t%.17g\t", e.onset, e.offset);
      out += buf;
      out += class_names[e.cls];
      out += '\n';
    }
  }
  return out;
}

ClipEvents parse_events(std::string_view text,
                        const std::vector<std::string>& class_names,
                        const std::string& source) {
  ClipEvents out;
  const auto lines = split(text, '\n');
  std::size_t lineno = 0;
  for (const auto& raw : lines) {
    ++lineno;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    auto cols = split(line, '\t');
    if (lineno == 1) {
      if (cols.size() != 4 || cols[0] != "clip_id") {
        throw IoError(where + ": expected header clip_id/onset/offset/class");
      }
      continue;
    }
    if (cols.size() != 4) {
      throw IoError(where + ": expected 4 columns, got " +
                    std::to_string(cols.size()));
    }
    auto it = std::find(class_names.begin(), class_names.end(), cols[3]);
    if (it == class_names.end()) {
      throw IoError(where + ": unknown class '" + cols[3] + "'");
    }
    Event e{static_cast<std::size_t>(it - class_names.begin()),
            parse_double(cols[1], where), parse_double(cols[2], where)};
    if (!(e.onset >= 0.0 && e.offset > e.onset)) {
      throw IoError(where + ": onset must be >= 0 and below offset");
    }
    out[cols[0]].push_back(e);
  }
  return out;
}

void write_events(const std::filesystem::path& path, const ClipEvents& events,
                  const std::vector<std::string>& class_names) {
  write_file_atomic(path, format_events(events, class_names));
}

ClipEvents read_events(const std::filesystem::path& path,
                       const std::vector<std::string>& class_names) {
  return parse_events(read_file(path), class_names, path.string());
}

}  // namespace sed::eval
