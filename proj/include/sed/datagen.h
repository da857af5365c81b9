// sed/datagen.h

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

// Synthetic soundscapes: parametric event templates (tones, noise bands,
// chirps) placed over pink noise at a chosen SNR, with exact labels.
//
// Manifest format (tab separated, one clip per row):
//
//   #classes <TAB> name0,name1,...
//   clip_id <TAB> path <TAB> subset <TAB> weak_classes <TAB> events
//
// subset is strong|weak|unlabeled|validation; path is relative to the
// manifest directory; weak_classes is a comma list of class names;
// events is a ';' list of class:onset:offset. Empty lists are written "-".
// Weak rows carry no events and unlabeled rows carry neither column.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sed/evaluation.h"
#include "sed/features.h"

namespace sed::datagen {

enum class Subset { kStrong, kWeak, kUnlabeled, kValidation };

std::string subset_name(Subset s);
Subset parse_subset(std::string_view s);

enum class Template { kTone, kNoiseBand, kChirp };

struct SceneSpec {
  std::size_t n_strong = 60;
  std::size_t n_weak = 60;
  std::size_t n_unlabeled = 120;
  std::size_t n_validation = 40;
  std::size_t n_classes = 10;
  std::size_t min_events = 1;
  std::size_t max_events = 3;
  double min_duration = 0.8;  // seconds
  double max_duration = 3.0;
  double min_snr_db = 15.0;
  double max_snr_db = 25.0;
  double background_level = 0.02;  // background RMS
  int sample_rate = features::kSourceRate;
  double clip_seconds = 10.0;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on an inconsistent spec.
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

/// Sound event class names; the first n of the ten domestic classes.
std::vector<std::string> class_names(std::size_t n_classes);

/// Template kind and base frequency of class `cls` of `n_classes`.
Template class_template(std::size_t cls);
double class_frequency(std::size_t cls, std::size_t n_classes);

struct PlannedEvent {
  eval::Event event;
  double snr_db = 0.0;
};

struct ClipPlan {
  std::string id;
  Subset subset = Subset::kStrong;
  std::uint64_t seed = 0;  // drives rendering
  std::vector<PlannedEvent> events;
};

/// Seed of clip `index` of `subset`, a mix of the scene seed and both keys.
std::uint64_t clip_seed(std::uint64_t seed, Subset subset, std::size_t index);

ClipPlan plan_clip(const SceneSpec& spec, Subset subset, std::size_t index);

/// Renders the waveform. Event onsets and offsets fall on sample
/// boundaries, so labels are exact.
features::AudioClip render_clip(const SceneSpec& spec, const ClipPlan& plan);

/// Pink noise with unit RMS.
std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest directory
  Subset subset = Subset::kStrong;
  std::vector<std::size_t> weak_classes;  // sorted, unique
  std::vector<eval::Event> events;        // strong and validation rows

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  bool operator==(const Manifest&) const = default;
};

std::string format_manifest(const Manifest& m);
/// Throws IoError naming the line of any malformed row.
Manifest parse_manifest(std::string_view text, const std::string& source);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Writes every clip under `root`/audio/<subset>/ and `root`/manifest.tsv.
Manifest generate(const SceneSpec& spec, const std::filesystem::path& root);

/// Manifest rows of the scene without rendering audio.
Manifest plan_manifest(const SceneSpec& spec);

/// Assigns each entry a fold in [0, k). Entries are grouped by their set of
/// weak classes, shuffled within a group by `seed`, then dealt round-robin
/// with one running counter, so fold sizes differ by at most one.
/// Throws std::invalid_argument when there are fewer entries than folds.
std::vector<std::size_t> make_folds(const std::vector<ManifestEntry>& entries,
                                    std::size_t k, std::uint64_t seed);

}  // namespace sed::datagen
