// sed/config.h

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

// Experiment configuration: one JSON file per experiment. Every section and
// key is optional and defaults to the values below; unknown keys and
// wrongly typed values are errors naming the offending key.
//
//   {
//     "seed": 1,
//     "paths": {"data_root": "data", "cache_dir": "cache",
//               "checkpoint_dir": "checkpoints", "report_dir": "reports"},
//     "data":    { SceneSpec fields },
//     "model":   { ModelConfig fields },
//     "augment": { AugmentConfig fields },
//     "train":   { TrainConfig fields },
//     "eval":    {"onset_collar": 0.2, "offset_collar": 0.2,
//                 "offset_ratio": 0.2, "psds_thresholds": 50}
//   }
//
// Relative paths resolve against the directory holding the config file.
// The environment variable SED_CACHE_ROOT, when set, replaces cache_dir.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "sed/augment.h"
#include "sed/datagen.h"
#include "sed/evaluation.h"
#include "sed/model.h"
#include "sed/training.h"

namespace sed {

struct EvalConfig {
  eval::CollarConfig collars;
  std::size_t psds_thresholds = 50;

  void validate() const;
};

struct RunPaths {
  std::filesystem::path data_root = "data";
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path report_dir = "reports";
};

struct RunConfig {
  std::uint64_t seed = 1;
  RunPaths paths;
  datagen::SceneSpec data;
  ModelConfig model;
  augment::AugmentConfig augment;
  train::TrainConfig train;
  EvalConfig eval;

  /// Checks every section and the cross-section constraints.
  void validate() const;
};

inline constexpr const char* kCacheRootEnv = "SED_CACHE_ROOT";

/// Parses config text; relative paths are resolved against `base_dir`.
/// `seed_override` replaces the file's seed (and the data seed unless the
/// data section pins its own). Throws std::invalid_argument naming
/// `source` and the offending key.
RunConfig parse_config(std::string_view text, const std::string& source,
                       const std::filesystem::path& base_dir,
                       std::optional<std::uint64_t> seed_override = {});

/// Reads and parses a config file, then applies SED_CACHE_ROOT.
RunConfig load_config(const std::filesystem::path& path,
                      std::optional<std::uint64_t> seed_override = {});

/// Canonical JSON of every setting (paths excluded), used to fingerprint
/// resumable training state.
std::string settings_json(const RunConfig& cfg);

/// Full config as JSON, paths included.
std::string format_config(const RunConfig& cfg);

}  // namespace sed
