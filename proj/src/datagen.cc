// src/datagen.cc

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

#include "sed/datagen.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <stdexcept>

#include "sed/io_util.h"

namespace sed::datagen {

namespace {

const std::vector<std::string> kClassNames = {
    "Alarm_bell_ringing", "Blender",  "Cat",           "Dishes",
    "Dog",  "Electric_shaver_toothbrush", "Frying", "Running_water",
    "Speech", "Vacuum_cleaner"};

constexpr double kLowFreq = 300.0;
constexpr double kHighFreq = 5000.0;
constexpr double kFadeSeconds = 0.01;
constexpr std::size_t kBandPartials = 32;

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : std::sqrt(s / static_cast<double>(x.size()));
}

std::vector<double> render_template(Template kind, double f, std::size_t n,
                                    int sr, std::mt19937_64& rng) {
  std::vector<double> out(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  std::uniform_real_distribution<double> phase(0.0, two_pi);
  switch (kind) {
    case Template::kTone: {
      const double p0 = phase(rng), p1 = phase(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        out[i] = std::sin(two_pi * f * t + p0) +
                 0.3 * std::sin(two_pi * 2.0 * f * t + p1);
      }
      break;
    }
    case Template::kNoiseBand: {
      std::uniform_real_distribution<double> freq(0.8 * f, 1.25 * f);
      for (std::size_t k = 0; k < kBandPartials; ++k) {
        const double fk = freq(rng), pk = phase(rng);
        for (std::size_t i = 0; i < n; ++i) {
          out[i] += std::sin(two_pi * fk * static_cast<double>(i) / sr + pk);
        }
      }
      break;
    }
    case Template::kChirp: {
      // Linear sweep from f to 1.6 f over the event.
      const double dur = static_cast<double>(n) / sr;
      const double p0 = phase(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        out[i] = std::sin(two_pi * f * (t + 0.3 * t * t / dur) + p0);
      }
      break;
    }
  }
  const double r = rms(out);
  if (r > 0) {
    for (double& v : out) v /= r;
  }
  const std::size_t fade =
      std::min(n / 2, static_cast<std::size_t>(kFadeSeconds * sr));
  for (std::size_t i = 0; i < fade; ++i) {
    const double g =
        0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / fade);
    out[i] *= g;
    out[n - 1 - i] *= g;
  }
  return out;
}

std::string join_classes(const std::vector<std::size_t>& ids,
                         const std::vector<std::string>& names) {
  if (ids.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += names.at(ids[i]);
  }
  return out;
}

std::vector<std::size_t> weak_from_events(const std::vector<eval::Event>& ev) {
  std::set<std::size_t> s;
  for (const auto& e : ev) s.insert(e.cls);
  return {s.begin(), s.end()};
}

}  // namespace

std::string subset_name(Subset s) {
  switch (s) {
    case Subset::kStrong:
      return "strong";
    case Subset::kWeak:
      return "weak";
    case Subset::kUnlabeled:
      return "unlabeled";
    case Subset::kValidation:
      return "validation";
  }
  return "?";
}

Subset parse_subset(std::string_view s) {
  if (s == "strong") return Subset::kStrong;
  if (s == "weak") return Subset::kWeak;
  if (s == "unlabeled") return Subset::kUnlabeled;
  if (s == "validation") return Subset::kValidation;
  throw std::invalid_argument("unknown subset '" + std::string(s) + "'");
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& why) {
    throw std::invalid_argument("scene spec: " + why);
  };
  if (n_classes < 2 || n_classes > kClassNames.size()) {
    fail("n_classes must be in [2, 10]");
  }
  if (min_events > max_events) fail("min_events > max_events");
  if (!(min_duration > 0.0) || min_duration > max_duration) {
    fail("durations must satisfy 0 < min <= max");
  }
  if (!(clip_seconds > 0.0) || clip_seconds > 10.0) {
    fail("clip_seconds must be in (0, 10]");
  }
  if (max_duration > clip_seconds) fail("max_duration exceeds the clip");
  if (min_snr_db > max_snr_db) fail("min_snr_db > max_snr_db");
  if (!(background_level > 0.0)) fail("background_level must be > 0");
  if (sample_rate != features::kSourceRate &&
      sample_rate != features::kTargetRate) {
    fail("sample_rate must be 44100 or 16000");
  }
}

std::vector<std::string> class_names(std::size_t n_classes) {
  if (n_classes > kClassNames.size()) {
    throw std::invalid_argument("at most 10 classes are defined");
  }
  return {kClassNames.begin(),
          kClassNames.begin() + static_cast<long>(n_classes)};
}

Template class_template(std::size_t cls) {
  return static_cast<Template>(cls % 3);
}

double class_frequency(std::size_t cls, std::size_t n_classes) {
  if (n_classes < 2) return kLowFreq;
  const double r = static_cast<double>(cls) / static_cast<double>(n_classes - 1);
  return kLowFreq * std::pow(kHighFreq / kLowFreq, r);
}

std::uint64_t clip_seed(std::uint64_t seed, Subset subset, std::size_t index) {
  return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(subset) << 56)) ^
                    static_cast<std::uint64_t>(index));
}

ClipPlan plan_clip(const SceneSpec& spec, Subset subset, std::size_t index) {
  ClipPlan plan;
  char id[64];
  std::snprintf(id, sizeof(id), "%s_%04zu", subset_name(subset).c_str(), index);
  plan.id = id;
  plan.subset = subset;
  plan.seed = clip_seed(spec.seed, subset, index);
  std::mt19937_64 rng(plan.seed);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(
      spec.min_events, spec.max_events)(rng);
  const double sr = spec.sample_rate;
  for (std::size_t i = 0; i < n; ++i) {
    PlannedEvent pe;
    pe.event.cls =
        std::uniform_int_distribution<std::size_t>(0, spec.n_classes - 1)(rng);
    const double dur = std::uniform_real_distribution<double>(
        spec.min_duration, spec.max_duration)(rng);
    const double onset = std::uniform_real_distribution<double>(
        0.0, spec.clip_seconds - dur)(rng);
    const long long s0 = std::llround(onset * sr);
    const long long s1 = std::min(std::llround((onset + dur) * sr),
                                  std::llround(spec.clip_seconds * sr));
    pe.event.onset = static_cast<double>(s0) / sr;
    pe.event.offset = static_cast<double>(s1) / sr;
    pe.snr_db = std::uniform_real_distribution<double>(spec.min_snr_db,
                                                       spec.max_snr_db)(rng);
    plan.events.push_back(pe);
  }
  std::sort(plan.events.begin(), plan.events.end(),
            [](const PlannedEvent& a, const PlannedEvent& b) {
              if (a.event.onset != b.event.onset) {
                return a.event.onset < b.event.onset;
              }
              return a.event.cls < b.event.cls;
            });
  return plan;
}

std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng) {
  // Paul Kellet's refined pinking filter over white Gaussian noise.
  std::normal_distribution<double> white(0.0, 1.0);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = white(rng);
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    out[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  const double r = rms(out);
  if (r > 0) {
    for (double& v : out) v /= r;
  }
  return out;
}

features::AudioClip render_clip(const SceneSpec& spec, const ClipPlan& plan) {
  const int sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(spec.clip_seconds * sr));
  // A separate stream from the planner so plans and audio stay independent.
  std::mt19937_64 rng(splitmix64(plan.seed ^ 0x5eedULL));
  features::AudioClip clip;
  clip.sample_rate = sr;
  clip.samples = pink_noise(n, rng);
  for (double& v : clip.samples) v *= spec.background_level;
  for (const PlannedEvent& pe : plan.events) {
    const auto s0 = static_cast<std::size_t>(std::llround(pe.event.onset * sr));
    const auto s1 = static_cast<std::size_t>(std::llround(pe.event.offset * sr));
    const auto sig = render_template(
        class_template(pe.event.cls),
        class_frequency(pe.event.cls, spec.n_classes), s1 - s0, sr, rng);
    const double gain = spec.background_level * std::pow(10.0, pe.snr_db / 20.0);
    for (std::size_t i = 0; i < sig.size(); ++i) {
      clip.samples[s0 + i] += gain * sig[i];
    }
  }
  double peak = 0.0;
  for (double v : clip.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.99) {
    for (double& v : clip.samples) v *= 0.99 / peak;
  }
  return clip;
}

std::string format_manifest(const Manifest& m) {
  std::string out = "#classes\t";
  for (std::size_t i = 0; i < m.class_names.size(); ++i) {
    if (i) out += ',';
    out += m.class_names[i];
  }
  out += '\n';
  char buf[96];
  for (const auto& e : m.entries) {
    out += e.id + '\t' + e.path + '\t' + subset_name(e.subset) + '\t' +
           join_classes(e.weak_classes, m.class_names) + '\t';
    if (e.events.empty()) {
      out += '-';
    } else {
      for (std::size_t i = 0; i < e.events.size(); ++i) {
        if (i) out += ';';
        std::snprintf(buf, sizeof(buf), ":%.17g:%.17g", e.events[i].onset,
                      e.events[i].offset);
        out += m.class_names.at(e.events[i].cls) + buf;
      }
    }
    out += '\n';
  }
  return out;
}

Manifest parse_manifest(std::string_view text, const std::string& source) {
  Manifest m;
  std::size_t lineno = 0;
  auto class_id = [&](const std::string& name, const std::string& where) {
    auto it = std::find(m.class_names.begin(), m.class_names.end(), name);
    if (it == m.class_names.end()) {
      throw IoError(where + ": unknown class '" + name + "'");
    }
    return static_cast<std::size_t>(it - m.class_names.begin());
  };
  auto number = [](const std::string& s, const std::string& where) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw IoError(where + ": bad number '" + s + "'");
    }
    return v;
  };
  std::set<std::string> ids;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    auto cols = split(line, '\t');
    if (lineno == 1) {
      if (cols.size() != 2 || cols[0] != "#classes") {
        throw IoError(where + ": expected '#classes<TAB>names' header");
      }
      m.class_names = split(cols[1], ',');
      continue;
    }
    if (cols.size() != 5) {
      throw IoError(where + ": expected 5 columns, got " +
                    std::to_string(cols.size()));
    }
    ManifestEntry e;
    e.id = cols[0];
    e.path = cols[1];
    if (e.id.empty() || e.path.empty()) throw IoError(where + ": empty field");
    if (!ids.insert(e.id).second) {
      throw IoError(where + ": duplicate clip id " + e.id);
    }
    try {
      e.subset = parse_subset(cols[2]);
    } catch (const std::invalid_argument& ex) {
      throw IoError(where + ": " + ex.what());
    }
    if (cols[3] != "-") {
      for (const auto& name : split(cols[3], ',')) {
        e.weak_classes.push_back(class_id(name, where));
      }
      std::sort(e.weak_classes.begin(), e.weak_classes.end());
      e.weak_classes.erase(
          std::unique(e.weak_classes.begin(), e.weak_classes.end()),
          e.weak_classes.end());
    }
    if (cols[4] != "-") {
      for (const auto& item : split(cols[4], ';')) {
        auto parts = split(item, ':');
        if (parts.size() != 3) {
          throw IoError(where + ": event '" + item +
                        "' is not class:onset:offset");
        }
        eval::Event ev{class_id(parts[0], where), number(parts[1], where),
                       number(parts[2], where)};
        if (!(ev.onset >= 0.0 && ev.offset > ev.onset)) {
          throw IoError(where + ": event onset must be >= 0 and below offset");
        }
        e.events.push_back(ev);
      }
    }
    const bool strong_kind =
        e.subset == Subset::kStrong || e.subset == Subset::kValidation;
    if (!strong_kind && !e.events.empty()) {
      throw IoError(where + ": " + subset_name(e.subset) +
                    " rows cannot carry events");
    }
    if (e.subset == Subset::kUnlabeled && !e.weak_classes.empty()) {
      throw IoError(where + ": unlabeled rows cannot carry weak classes");
    }
    m.entries.push_back(std::move(e));
  }
  if (lineno == 0 || m.class_names.empty()) {
    throw IoError(source + ": missing '#classes' header");
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  write_file_atomic(path, format_manifest(m));
}

Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.string());
}

Manifest plan_manifest(const SceneSpec& spec) {
  spec.validate();
  Manifest m;
  m.class_names = class_names(spec.n_classes);
  const std::pair<Subset, std::size_t> subsets[] = {
      {Subset::kStrong, spec.n_strong},
      {Subset::kWeak, spec.n_weak},
      {Subset::kUnlabeled, spec.n_unlabeled},
      {Subset::kValidation, spec.n_validation}};
  for (auto [subset, count] : subsets) {
    for (std::size_t i = 0; i < count; ++i) {
      ClipPlan plan = plan_clip(spec, subset, i);
      ManifestEntry e;
      e.id = plan.id;
      e.path = "audio/" + subset_name(subset) + "/" + plan.id + ".wav";
      e.subset = subset;
      std::vector<eval::Event> events;
      for (const auto& pe : plan.events) events.push_back(pe.event);
      if (subset != Subset::kUnlabeled) e.weak_classes = weak_from_events(events);
      if (subset == Subset::kStrong || subset == Subset::kValidation) {
        e.events = std::move(events);
      }
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

Manifest generate(const SceneSpec& spec, const std::filesystem::path& root) {
  Manifest m = plan_manifest(spec);
  for (const auto& e : m.entries) {
    // Clip ids encode subset and index, so the plan is rebuilt from them.
    const std::size_t index = std::stoul(e.id.substr(e.id.rfind('_') + 1));
    const ClipPlan plan = plan_clip(spec, e.subset, index);
    features::write_wav(root / e.path, render_clip(spec, plan));
  }
  write_manifest(root / "manifest.tsv", m);
  return m;
}

std::vector<std::size_t> make_folds(const std::vector<ManifestEntry>& entries,
                                    std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("make_folds: k must be >= 1");
  if (entries.size() < k) {
    throw std::invalid_argument("make_folds: " + std::to_string(entries.size()) +
                                " clips cannot fill " + std::to_string(k) +
                                " folds");
  }
  std::map<std::vector<std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    groups[entries[i].weak_classes].push_back(i);
  }
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<std::size_t> fold(entries.size(), 0);
  std::size_t next = 0;
  for (auto& [_, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) fold[i] = next++ % k;
  }
  return fold;
}

}  // namespace sed::datagen
