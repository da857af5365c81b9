// pipeline_test.cc

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

#include <gtest/gtest.h>

#include <cstdlib>
#include <memory>
#include <sys/wait.h>

#include "json.hpp"
#include "sed/config.h"
#include "sed/io_util.h"
#include "sed/model.h"
#include "sed/pipeline.h"
#include "test_util.h"

namespace sed::pipeline {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

constexpr const char* kSmokeConfig = R"({
  "seed": 3,
  "data": {"n_strong": 6, "n_weak": 6, "n_unlabeled": 6, "n_validation": 6,
           "n_classes": 3, "min_snr_db": 20, "max_snr_db": 30},
  "model": {"n_classes": 3, "stem_channels": [2, 4], "stem_kernel": 3,
            "residual_channels": [4, 4, 4, 4, 4, 4], "gru_hidden": 4},
  "train": {"epochs_mt": 2, "epochs_ns": 1, "rampup_epochs": 1, "folds": 2,
            "betas": [0.5], "rounds": 2, "batch_strong": 2, "batch_weak": 2,
            "batch_unlabeled": 2},
  "eval": {"psds_thresholds": 10}
})";

RunConfig config_in(const fs::path& dir, const std::string& text = kSmokeConfig) {
  fs::create_directories(dir);
  write_file_atomic(dir / "run.json", text);
  return load_config(dir / "run.json");
}

/// One generated, extracted and trained 24-clip experiment shared by the
/// pipeline tests.
class Smoke : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("smoke");
    cfg_ = std::make_unique<RunConfig>(config_in(dir_->path()));
    manifest_ = cmd_gen(*cfg_);
    first_extract_ = cmd_extract(*cfg_);
    mt_ = cmd_train(*cfg_, {Stage::kMeanTeacher, {}, {}, 1});
    cmd_pseudolabel(*cfg_, mt_dir(*cfg_, 0) / "teacher.ckpt",
                    cfg_->paths.report_dir / "pseudo.tsv");
    ns_ = cmd_train(*cfg_, {Stage::kNoisyStudent, {}, {}, 2});
  }
  static void TearDownTestSuite() {
    cfg_.reset();
    dir_.reset();
  }

  static std::unique_ptr<TempDir> dir_;
  static std::unique_ptr<RunConfig> cfg_;
  static datagen::Manifest manifest_;
  static ExtractSummary first_extract_;
  static std::vector<JobResult> mt_, ns_;
};

std::unique_ptr<TempDir> Smoke::dir_;
std::unique_ptr<RunConfig> Smoke::cfg_;
datagen::Manifest Smoke::manifest_;
ExtractSummary Smoke::first_extract_;
std::vector<JobResult> Smoke::mt_, Smoke::ns_;

TEST_F(Smoke, EveryStageLeavesItsOutputs) {
  EXPECT_EQ(manifest_.entries.size(), 24u);
  EXPECT_EQ(first_extract_.computed, 24u);
  EXPECT_EQ(first_extract_.written, 24u);
  ASSERT_EQ(mt_.size(), 2u);
  ASSERT_EQ(ns_.size(), 2u);
  for (std::size_t f = 0; f < 2; ++f) {
    for (const char* name : {"student.ckpt", "teacher.ckpt", "log.jsonl", "summary.json"}) {
      EXPECT_TRUE(fs::exists(mt_dir(*cfg_, f) / name)) << name;
    }
    for (const char* name : {"round1.ckpt", "round2.ckpt", "final.ckpt",
                             "pseudo_round1.tsv", "pseudo_round2.tsv", "log.jsonl"}) {
      EXPECT_TRUE(fs::exists(ns_dir(*cfg_, f, 0) / name)) << name;
    }
  }
  const auto log = split(read_file(ns_dir(*cfg_, 0, 0) / "log.jsonl"), '\n');
  std::size_t lines = 0;
  for (const auto& l : log) {
    if (l.empty()) continue;
    EXPECT_TRUE(nlohmann::json::parse(l).is_object());
    ++lines;
  }
  EXPECT_EQ(lines, 2u);  // one epoch in each of two rounds
  const auto pseudo = eval::read_events(cfg_->paths.report_dir / "pseudo.tsv",
                                        datagen::class_names(3));
  for (const auto& [id, _] : pseudo) {
    EXPECT_TRUE(id.starts_with("weak_") || id.starts_with("unlabeled_")) << id;
  }
}

TEST_F(Smoke, EvalWritesReportAndEvents) {
  const fs::path out = cfg_->paths.report_dir / "final.json";
  const ScoreReport r = cmd_eval(*cfg_, ns_dir(*cfg_, 0, 0) / "final.ckpt", out);
  EXPECT_EQ(r.n_clips, 6u);
  for (double v : {r.f1.f1, r.psds1, r.psds2}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto j = nlohmann::json::parse(read_file(out));
  EXPECT_EQ(j["f1"].get<double>(), r.f1.f1);
  EXPECT_TRUE(fs::exists(cfg_->paths.report_dir / "final.events.tsv"));
}

TEST_F(Smoke, IdentityEnsembleEqualsItsCheckpoint) {
  const fs::path ckpt = ns_dir(*cfg_, 1, 0) / "final.ckpt";
  eval::Candidate c;
  c.fold = 1;
  c.checkpoint = fs::relative(ckpt, cfg_->paths.checkpoint_dir).string();
  const fs::path spec = cfg_->paths.report_dir / "one.json";
  write_file_atomic(spec, format_ensemble_spec(EnsembleStrategy::kTop5, {c}));
  const ScoreReport a = cmd_eval(*cfg_, ckpt, cfg_->paths.report_dir / "a.json");
  const ScoreReport b = cmd_eval(*cfg_, spec, cfg_->paths.report_dir / "b.json");
  EXPECT_EQ(a.f1.f1, b.f1.f1);
  EXPECT_EQ(a.f1.true_positives, b.f1.true_positives);
  EXPECT_EQ(a.psds1, b.psds1);
  EXPECT_EQ(a.psds2, b.psds2);
  EXPECT_EQ(read_file(cfg_->paths.report_dir / "a.events.tsv"),
            read_file(cfg_->paths.report_dir / "b.events.tsv"));
}

TEST_F(Smoke, EnsembleStrategies) {
  const fs::path spec = cmd_ensemble(*cfg_, EnsembleStrategy::kPerFoldBest);
  const auto members = parse_ensemble_spec(read_file(spec), spec.string());
  ASSERT_EQ(members.size(), 2u);
  EXPECT_EQ(members[0].fold, 0u);
  EXPECT_EQ(members[1].fold, 1u);
  EXPECT_EQ(collect_candidates(*cfg_).size(), 2u);
  // Two finished models cannot fill a five-model ensemble.
  EXPECT_THROW(cmd_ensemble(*cfg_, EnsembleStrategy::kTop5), std::invalid_argument);
  const ScoreReport r = cmd_eval(*cfg_, spec, cfg_->paths.report_dir / "e.json");
  EXPECT_EQ(r.n_clips, 6u);
}

TEST_F(Smoke, ExtractRerunIsACacheHit) {
  const ExtractSummary again = cmd_extract(*cfg_);
  EXPECT_EQ(again.computed, 0u);
  EXPECT_EQ(again.reused, 24u);
  EXPECT_EQ(again.written, 0u);
  EXPECT_EQ(again.stats.mean, first_extract_.stats.mean);
}

TEST_F(Smoke, FinishedJobsAreNotRetrained) {
  const fs::path ckpt = mt_dir(*cfg_, 0) / "student.ckpt";
  const std::string before = read_file(ckpt);
  std::vector<std::string> lines;
  const auto again = cmd_train(*cfg_, {Stage::kMeanTeacher, 0, {}, 1},
                               [&](const std::string& l) { lines.push_back(l); });
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].selection_f1, mt_[0].selection_f1);
  EXPECT_EQ(read_file(ckpt), before);
  EXPECT_TRUE(lines.empty());
}

TEST_F(Smoke, RequestErrors) {
  EXPECT_THROW(cmd_train(*cfg_, {Stage::kMeanTeacher, 5, {}, 1}),
               std::invalid_argument);
  EXPECT_THROW(cmd_train(*cfg_, {Stage::kNoisyStudent, 0, 0.3, 1}),
               std::invalid_argument);
  EXPECT_EQ(beta_index(cfg_->train, 0.5), 0u);
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "no error";
}

TEST(MissingInputs, AreNamed) {
  TempDir dir("missing");
  const RunConfig cfg = config_in(dir.path());
  EXPECT_NE(error_of([&] { cmd_extract(cfg); }).find("manifest.tsv"),
            std::string::npos);
  EXPECT_NE(error_of([&] { load_dataset(cfg); }).find("run 'gen' first"),
            std::string::npos);
  datagen::Manifest m;
  m.class_names = datagen::class_names(3);
  datagen::ManifestEntry e;
  e.id = "strong_0000";
  e.path = "audio/strong/strong_0000.wav";
  e.weak_classes = {0};
  e.events = {{0, 1.0, 2.0}};
  m.entries.push_back(e);
  datagen::write_manifest(cfg.paths.data_root / "manifest.tsv", m);
  EXPECT_NE(error_of([&] { cmd_extract(cfg); }).find("strong_0000.wav"),
            std::string::npos);
  EXPECT_NE(error_of([&] { load_dataset(cfg); }).find("strong_0000.feat"),
            std::string::npos);
  EXPECT_NE(error_of([&] { cmd_ensemble(cfg, EnsembleStrategy::kTop5); })
                .find("train --stage ns"),
            std::string::npos);
}

TEST(Config, DefaultsAndOverrides) {
  const RunConfig d = parse_config("{}", "c.json", "/base");
  EXPECT_EQ(d.model.n_classes, 10u);
  EXPECT_EQ(d.paths.data_root, fs::path("/base/data"));
  EXPECT_EQ(d.data.seed, d.seed);
  const RunConfig o = parse_config(R"({"seed": 4})", "c.json", "/base", 9);
  EXPECT_EQ(o.seed, 9u);
  EXPECT_EQ(o.data.seed, 9u);
  const RunConfig pinned =
      parse_config(R"({"seed": 4, "data": {"seed": 2}})", "c.json", "/b", 9);
  EXPECT_EQ(pinned.data.seed, 2u);
  const RunConfig abs =
      parse_config(R"({"paths": {"cache_dir": "/x/cache"}})", "c.json", "/b");
  EXPECT_EQ(abs.paths.cache_dir, fs::path("/x/cache"));
}

TEST(Config, StrictParsingNamesTheKey) {
  auto msg = [](const std::string& text) {
    return error_of([&] { parse_config(text, "run.json", "/"); });
  };
  EXPECT_NE(msg(R"({"trian": {}})").find("unknown key 'trian'"), std::string::npos);
  EXPECT_NE(msg(R"({"train": {"max_lr": "fast"}})").find("train.max_lr"),
            std::string::npos);
  EXPECT_NE(msg(R"({"train": {"folds": -1}})").find("train.folds"),
            std::string::npos);
  EXPECT_NE(msg(R"({"model": {"n_classes": 3}})").find("n_classes"),
            std::string::npos);
  EXPECT_NE(msg("{").find("run.json"), std::string::npos);
  EXPECT_NE(msg(R"({"paths": {"tmp": "x"}})").find("unknown key 'tmp'"),
            std::string::npos);
}

TEST(Config, FormatRoundTrips) {
  const RunConfig a = parse_config(kSmokeConfig, "c.json", "/base");
  const RunConfig b = parse_config(format_config(a), "c2.json", "/elsewhere");
  EXPECT_EQ(settings_json(a), settings_json(b));
  EXPECT_EQ(b.paths.report_dir, a.paths.report_dir);
}

TEST(Config, CacheRootFromEnvironment) {
  TempDir dir("env");
  write_file_atomic(dir.path() / "run.json", "{}");
  ::setenv(kCacheRootEnv, "/tmp/elsewhere", 1);
  const RunConfig c = load_config(dir.path() / "run.json");
  ::unsetenv(kCacheRootEnv);
  EXPECT_EQ(c.paths.cache_dir, fs::path("/tmp/elsewhere"));
  EXPECT_EQ(load_config(dir.path() / "run.json").paths.cache_dir,
            dir.path() / "cache");
}

int run(const std::string& args, const fs::path& out) {
  const std::string cmd =
      std::string(SEDCTL_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitStatusAndOutput) {
  TempDir dir("cli");
  write_file_atomic(dir.path() / "run.json", "{}");
  write_file_atomic(dir.path() / "bad.json", R"({"modle": {}})");
  const fs::path out = dir.path() / "out.txt";
  const std::string cfg = "--config " + (dir.path() / "run.json").string();

  EXPECT_EQ(run(cfg + " describe", out), 0);
  const std::string table = read_file(out);
  EXPECT_NE(table.find("1x625x128"), std::string::npos);
  EXPECT_NE(table.find("156x10"), std::string::npos);

  EXPECT_EQ(run(cfg + " --seed 11 show-config", out), 0);
  EXPECT_EQ(nlohmann::json::parse(read_file(out))["seed"], 11);

  EXPECT_EQ(run("--config " + (dir.path() / "bad.json").string() + " describe", out), 1);
  EXPECT_NE(read_file(out).find("unknown key 'modle'"), std::string::npos);

  EXPECT_EQ(run(cfg + " extract", out), 1);
  EXPECT_NE(read_file(out).find("manifest.tsv"), std::string::npos);

  EXPECT_NE(run(cfg + " train --stage xx", out), 0);
  EXPECT_NE(run(cfg + " train --stage mt --beta 0.5", out), 0);
  EXPECT_NE(run(cfg + " eval", out), 0);
  EXPECT_NE(run(cfg, out), 0);
}

}  // namespace
}  // namespace sed::pipeline
