// sedctl.cc

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

// Command-line front end for the sound event detection pipeline.
//
//   sedctl --config run.json gen
//   sedctl --config run.json extract
//   sedctl --config run.json train --stage mt [--fold N] [--jobs N]
//   sedctl --config run.json train --stage ns [--fold N] [--beta F] [--jobs N]
//   sedctl --config run.json pseudolabel --checkpoint PATH [--out PATH]
//   sedctl --config run.json eval --checkpoint PATH|--ensemble SPEC [--out PATH]
//   sedctl --config run.json ensemble --strategy per-fold-best|top1-5|top1-10
//   sedctl --config run.json describe
//   sedctl --config run.json show-config
//
// Exit status is 0 on success and 1 on any error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sed/config.h"
#include "sed/model.h"
#include "sed/pipeline.h"

namespace {

void print_line(const std::string& s) { std::cout << s << "\n" << std::flush; }

}  // namespace

int main(int argc, char** argv) {
  sed::pipeline::tune_allocator();
  CLI::App app{"Semi-supervised sound event detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Overrides the config seed");

  auto* gen = app.add_subcommand("gen", "Generate the synthetic dataset");
  auto* extract = app.add_subcommand("extract", "Compute and cache features");

  auto* train = app.add_subcommand("train", "Train stage 1 or stage 2 models");
  std::string stage = "mt";
  std::optional<std::size_t> fold;
  std::optional<double> beta;
  std::size_t jobs = 1;
  train->add_option("--stage", stage, "mt (mean teacher) or ns (noisy student)")
      ->check(CLI::IsMember({"mt", "ns"}));
  train->add_option("--fold", fold, "Single fold; all folds when omitted");
  train->add_option("--beta", beta, "Single beta from the grid (stage ns)");
  train->add_option("--jobs", jobs, "Concurrent training jobs")
      ->check(CLI::PositiveNumber);

  auto* pseudo = app.add_subcommand("pseudolabel", "Write teacher pseudo labels");
  std::string pseudo_ckpt, pseudo_out;
  pseudo->add_option("--checkpoint", pseudo_ckpt, "Teacher checkpoint")
      ->required();
  pseudo->add_option("--out", pseudo_out, "Output event list");

  auto* evalc = app.add_subcommand("eval", "Score a model or an ensemble");
  std::string eval_ckpt, eval_spec, eval_out;
  auto* ck = evalc->add_option("--checkpoint", eval_ckpt, "Model checkpoint");
  auto* es = evalc->add_option("--ensemble", eval_spec, "Ensemble spec (JSON)");
  ck->excludes(es);
  evalc->add_option("--out", eval_out, "Report path (JSON)");

  auto* ens = app.add_subcommand("ensemble", "Select ensemble members");
  std::string strategy;
  ens->add_option("--strategy", strategy, "per-fold-best, top1-5 or top1-10")
      ->required()
      ->check(CLI::IsMember({"per-fold-best", "top1-5", "top1-10"}));

  auto* describe = app.add_subcommand("describe", "Print layer output shapes");
  auto* show = app.add_subcommand("show-config", "Print the resolved config");

  CLI11_PARSE(app, argc, argv);

  try {
    const sed::RunConfig cfg = sed::load_config(config_path, seed);
    if (gen->parsed()) {
      const auto m = sed::pipeline::cmd_gen(cfg);
      print_line("generated " + std::to_string(m.entries.size()) + " clips in " +
                 cfg.paths.data_root.string());
    } else if (extract->parsed()) {
      const auto s = sed::pipeline::cmd_extract(cfg, print_line);
      print_line("extract: " + std::to_string(s.computed) + " computed, " +
                 std::to_string(s.reused) + " cached, " +
                 std::to_string(s.written) + " files written");
    } else if (train->parsed()) {
      sed::pipeline::TrainRequest req;
      req.stage = sed::pipeline::parse_stage(stage);
      req.fold = fold;
      req.beta = beta;
      req.jobs = jobs;
      if (beta && req.stage != sed::pipeline::Stage::kNoisyStudent) {
        throw std::invalid_argument("--beta applies to --stage ns only");
      }
      for (const auto& r : sed::pipeline::cmd_train(cfg, req, print_line)) {
        print_line("done " + r.dir.string() + " selection_f1=" +
                   std::to_string(r.selection_f1));
      }
    } else if (pseudo->parsed()) {
      const std::string out = pseudo_out.empty()
          ? (cfg.paths.report_dir / "pseudo_labels.tsv").string()
          : pseudo_out;
      sed::pipeline::cmd_pseudolabel(cfg, pseudo_ckpt, out);
      print_line("wrote " + out);
    } else if (evalc->parsed()) {
      if (eval_ckpt.empty() && eval_spec.empty()) {
        throw std::invalid_argument("eval needs --checkpoint or --ensemble");
      }
      const std::string src = eval_ckpt.empty() ? eval_spec : eval_ckpt;
      const std::string out = eval_out.empty()
          ? (cfg.paths.report_dir / "report.json").string()
          : eval_out;
      const auto r = sed::pipeline::cmd_eval(cfg, src, out);
      std::cout << sed::pipeline::format_report(r);
    } else if (ens->parsed()) {
      const auto out = sed::pipeline::cmd_ensemble(
          cfg, sed::pipeline::parse_strategy(strategy));
      print_line("wrote " + out.string());
    } else if (describe->parsed()) {
      std::cout << sed::format_describe(sed::describe(cfg.model));
    } else if (show->parsed()) {
      std::cout << sed::format_config(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "sedctl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
