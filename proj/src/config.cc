// config.cc

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

#include "sed/config.h"

#include <cstdlib>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sed/io_util.h"

namespace sed {

using json = nlohmann::json;

namespace {

using FieldPtr =
    std::variant<double*, std::size_t*, int*, bool*,
                 std::vector<std::size_t>*, std::vector<double>*>;

struct Field {
  const char* key;
  FieldPtr ptr;
};

std::vector<Field> data_fields(datagen::SceneSpec& s) {
  return {{"n_strong", &s.n_strong},
          {"n_weak", &s.n_weak},
          {"n_unlabeled", &s.n_unlabeled},
          {"n_validation", &s.n_validation},
          {"n_classes", &s.n_classes},
          {"min_events", &s.min_events},
          {"max_events", &s.max_events},
          {"min_duration", &s.min_duration},
          {"max_duration", &s.max_duration},
          {"min_snr_db", &s.min_snr_db},
          {"max_snr_db", &s.max_snr_db},
          {"background_level", &s.background_level},
          {"sample_rate", &s.sample_rate},
          {"clip_seconds", &s.clip_seconds}};
}

std::vector<Field> model_fields(ModelConfig& m) {
  return {{"n_classes", &m.n_classes},
          {"input_frames", &m.input_frames},
          {"n_mels", &m.n_mels},
          {"stem_channels", &m.stem_channels},
          {"stem_kernel", &m.stem_kernel},
          {"residual_channels", &m.residual_channels},
          {"residual_kernel", &m.residual_kernel},
          {"gru_hidden", &m.gru_hidden},
          {"gru_layers", &m.gru_layers},
          {"dropout", &m.dropout},
          {"cbam_reduction", &m.cbam_reduction},
          {"cbam_kernel", &m.cbam_kernel},
          {"bn_momentum", &m.bn_momentum},
          {"bn_eps", &m.bn_eps}};
}

std::vector<Field> augment_fields(augment::AugmentConfig& a) {
  return {{"time_mask_max", &a.time_mask_max},
          {"freq_mask_max", &a.freq_mask_max},
          {"n_masks_per_axis", &a.n_masks_per_axis},
          {"mixup_alpha", &a.mixup_alpha},
          {"shift_std_freq", &a.shift_std_freq},
          {"shift_std_time", &a.shift_std_time}};
}

std::vector<Field> train_fields(train::TrainConfig& t) {
  return {{"max_lr", &t.max_lr},
          {"rampup_epochs", &t.rampup_epochs},
          {"epochs_mt", &t.epochs_mt},
          {"epochs_ns", &t.epochs_ns},
          {"ema_decay", &t.ema_decay},
          {"consistency_weight_max", &t.consistency_weight_max},
          {"batch_strong", &t.batch_strong},
          {"batch_weak", &t.batch_weak},
          {"batch_unlabeled", &t.batch_unlabeled},
          {"betas", &t.betas},
          {"threshold", &t.threshold},
          {"median_len", &t.median_len},
          {"folds", &t.folds},
          {"rounds", &t.rounds},
          {"adam_beta1", &t.adam_beta1},
          {"adam_beta2", &t.adam_beta2},
          {"adam_eps", &t.adam_eps},
          {"plateau_factor", &t.plateau_factor},
          {"plateau_patience", &t.plateau_patience},
          {"plateau_min_delta", &t.plateau_min_delta},
          {"min_lr", &t.min_lr},
          {"feature_noise", &t.feature_noise}};
}

std::vector<Field> eval_fields(EvalConfig& e) {
  return {{"onset_collar", &e.collars.onset_collar},
          {"offset_collar", &e.collars.offset_collar},
          {"offset_ratio", &e.collars.offset_ratio},
          {"psds_thresholds", &e.psds_thresholds}};
}

[[noreturn]] void bad(const std::string& where, const std::string& msg) {
  throw std::invalid_argument(where + ": " + msg);
}

std::size_t as_count(const json& v, const std::string& where) {
  if (!v.is_number_unsigned()) bad(where, "expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) bad(where, "expected a number");
  return v.get<double>();
}

void read_value(const json& v, const FieldPtr& ptr, const std::string& where) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          *p = as_double(v, where);
        } else if constexpr (std::is_same_v<T, std::size_t>) {
          *p = as_count(v, where);
        } else if constexpr (std::is_same_v<T, int>) {
          if (!v.is_number_integer()) bad(where, "expected an integer");
          *p = v.get<int>();
        } else if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) bad(where, "expected true or false");
          *p = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
          if (!v.is_array()) bad(where, "expected an array of integers");
          p->clear();
          for (const auto& x : v) p->push_back(as_count(x, where));
        } else {
          static_assert(std::is_same_v<T, std::vector<double>>);
          if (!v.is_array()) bad(where, "expected an array of numbers");
          p->clear();
          for (const auto& x : v) p->push_back(as_double(x, where));
        }
      },
      ptr);
}

json write_value(const FieldPtr& ptr) {
  return std::visit([](auto* p) { return json(*p); }, ptr);
}

void read_section(const json& obj, std::vector<Field> fields,
                  const std::string& where) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool found = false;
    for (const auto& f : fields) {
      if (key == f.key) {
        read_value(value, f.ptr, where + "." + key);
        found = true;
        break;
      }
    }
    if (!found) bad(where, "unknown key '" + key + "'");
  }
}

json write_section(std::vector<Field> fields) {
  json out = json::object();
  for (const auto& f : fields) out[f.key] = write_value(f.ptr);
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::filesystem::path& p) {
  return p.is_absolute() ? p : base / p;
}

json settings(RunConfig cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = write_section(data_fields(cfg.data));
  j["data"]["seed"] = cfg.data.seed;
  j["model"] = write_section(model_fields(cfg.model));
  j["augment"] = write_section(augment_fields(cfg.augment));
  j["train"] = write_section(train_fields(cfg.train));
  j["eval"] = write_section(eval_fields(cfg.eval));
  return j;
}

}  // namespace

void EvalConfig::validate() const {
  if (!(collars.onset_collar >= 0.0) || !(collars.offset_collar >= 0.0) ||
      !(collars.offset_ratio >= 0.0)) {
    throw std::invalid_argument("eval config: collars must be >= 0");
  }
  if (psds_thresholds < 2) {
    throw std::invalid_argument("eval config: psds_thresholds must be >= 2");
  }
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  augment.validate();
  train.validate();
  eval.validate();
  if (model.n_classes != data.n_classes) {
    throw std::invalid_argument(
        "config: model.n_classes (" + std::to_string(model.n_classes) +
        ") differs from data.n_classes (" + std::to_string(data.n_classes) +
        ")");
  }
  if (train.folds > data.n_strong) {
    throw std::invalid_argument("config: more folds than strong clips");
  }
}

RunConfig parse_config(std::string_view text, const std::string& source,
                       const std::filesystem::path& base_dir,
                       std::optional<std::uint64_t> seed_override) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  if (!j.is_object()) bad(source, "top level must be an object");
  RunConfig cfg;
  bool data_seed_set = false;
  for (const auto& [key, value] : j.items()) {
    const std::string where = source + ": " + key;
    if (key == "seed") {
      cfg.seed = as_count(value, where);
    } else if (key == "paths") {
      if (!value.is_object()) bad(where, "expected an object");
      for (const auto& [pk, pv] : value.items()) {
        if (!pv.is_string()) bad(where + "." + pk, "expected a string");
        const std::filesystem::path p = pv.get<std::string>();
        if (pk == "data_root") cfg.paths.data_root = p;
        else if (pk == "cache_dir") cfg.paths.cache_dir = p;
        else if (pk == "checkpoint_dir") cfg.paths.checkpoint_dir = p;
        else if (pk == "report_dir") cfg.paths.report_dir = p;
        else bad(where, "unknown key '" + pk + "'");
      }
    } else if (key == "data") {
      json rest = value;
      if (rest.is_object() && rest.contains("seed")) {
        cfg.data.seed = as_count(rest["seed"], where + ".seed");
        data_seed_set = true;
        rest.erase("seed");
      }
      read_section(rest, data_fields(cfg.data), where);
    } else if (key == "model") {
      read_section(value, model_fields(cfg.model), where);
    } else if (key == "augment") {
      read_section(value, augment_fields(cfg.augment), where);
    } else if (key == "train") {
      read_section(value, train_fields(cfg.train), where);
    } else if (key == "eval") {
      read_section(value, eval_fields(cfg.eval), where);
    } else {
      bad(source, "unknown key '" + key + "'");
    }
  }
  if (seed_override) cfg.seed = *seed_override;
  // The data seed follows the experiment seed unless pinned explicitly.
  if (!data_seed_set) cfg.data.seed = cfg.seed;
  cfg.paths.data_root = resolve(base_dir, cfg.paths.data_root);
  cfg.paths.cache_dir = resolve(base_dir, cfg.paths.cache_dir);
  cfg.paths.checkpoint_dir = resolve(base_dir, cfg.paths.checkpoint_dir);
  cfg.paths.report_dir = resolve(base_dir, cfg.paths.report_dir);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path,
                      std::optional<std::uint64_t> seed_override) {
  RunConfig cfg = parse_config(read_file(path), path.string(),
                               std::filesystem::absolute(path).parent_path(),
                               seed_override);
  if (const char* root = std::getenv(kCacheRootEnv); root && *root) {
    cfg.paths.cache_dir = root;
  }
  return cfg;
}

std::string settings_json(const RunConfig& cfg) { return settings(cfg).dump(); }

std::string format_config(const RunConfig& cfg) {
  json j = settings(cfg);
  j["paths"] = {{"data_root", cfg.paths.data_root.string()},
                {"cache_dir", cfg.paths.cache_dir.string()},
                {"checkpoint_dir", cfg.paths.checkpoint_dir.string()},
                {"report_dir", cfg.paths.report_dir.string()}};
  return j.dump(2) + "\n";
}

}  // namespace sed
