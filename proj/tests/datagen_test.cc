// datagen_test.cc

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

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "sed/datagen.h"
#include "sed/io_util.h"
#include "test_util.h"

namespace sed::datagen {
namespace {

using testing::TempDir;

SceneSpec tiny_spec() {
  SceneSpec s;
  s.n_strong = 3;
  s.n_weak = 2;
  s.n_unlabeled = 2;
  s.n_validation = 2;
  s.n_classes = 3;
  return s;
}

TEST(Generate, SubsetSizesAndLabels) {
  const SceneSpec spec = tiny_spec();
  TempDir dir("gen");
  const Manifest m = generate(spec, dir.path());
  EXPECT_EQ(m.class_names, class_names(3));
  std::map<Subset, std::size_t> count;
  for (const auto& e : m.entries) {
    ++count[e.subset];
    EXPECT_TRUE(std::filesystem::exists(dir.path() / e.path)) << e.path;
    const bool strong = e.subset == Subset::kStrong || e.subset == Subset::kValidation;
    EXPECT_EQ(!e.events.empty(), strong) << e.id;
    EXPECT_EQ(e.weak_classes.empty(), e.subset == Subset::kUnlabeled) << e.id;
    std::set<std::size_t> tags;
    for (const auto& ev : e.events) {
      EXPECT_GE(ev.onset, 0.0);
      EXPECT_LT(ev.onset, ev.offset);
      EXPECT_LE(ev.offset, spec.clip_seconds);
      tags.insert(ev.cls);
    }
    if (strong) {
      EXPECT_EQ(std::vector<std::size_t>(tags.begin(), tags.end()),
                e.weak_classes);
    }
  }
  EXPECT_EQ(count[Subset::kStrong], 3u);
  EXPECT_EQ(count[Subset::kWeak], 2u);
  EXPECT_EQ(count[Subset::kUnlabeled], 2u);
  EXPECT_EQ(count[Subset::kValidation], 2u);
  EXPECT_EQ(read_manifest(dir.path() / "manifest.tsv"), m);
}

TEST(Generate, SameSeedIsByteIdentical) {
  const SceneSpec spec = tiny_spec();
  TempDir a("gen_a"), b("gen_b");
  const Manifest ma = generate(spec, a.path());
  generate(spec, b.path());
  EXPECT_EQ(read_file(a.path() / "manifest.tsv"), read_file(b.path() / "manifest.tsv"));
  for (const auto& e : ma.entries) {
    EXPECT_EQ(read_file(a.path() / e.path), read_file(b.path() / e.path)) << e.id;
  }
  SceneSpec other = spec;
  other.seed = 2;
  EXPECT_NE(plan_manifest(other), ma);
}

TEST(Generate, PlanIsPureAndWeakRowsHideEvents) {
  const SceneSpec spec = tiny_spec();
  EXPECT_EQ(plan_manifest(spec), plan_manifest(spec));
  const ClipPlan a = plan_clip(spec, Subset::kWeak, 1);
  EXPECT_EQ(a.events.size(), plan_clip(spec, Subset::kWeak, 1).events.size());
  EXPECT_NE(clip_seed(1, Subset::kWeak, 1), clip_seed(1, Subset::kStrong, 1));
  EXPECT_NE(clip_seed(1, Subset::kWeak, 1), clip_seed(1, Subset::kWeak, 2));
  for (const auto& pe : a.events) {
    EXPECT_GE(pe.snr_db, spec.min_snr_db);
    EXPECT_LE(pe.snr_db, spec.max_snr_db);
    const double d = pe.event.offset - pe.event.onset;
    EXPECT_GE(d, spec.min_duration - 1.0 / spec.sample_rate);
    EXPECT_LE(d, spec.max_duration + 1.0 / spec.sample_rate);
  }
}

TEST(Generate, ToneEnergyStaysInsideItsLabel) {
  SceneSpec spec = tiny_spec();
  for (std::size_t cls : {0u, 1u, 2u}) {
    if (class_template(cls) != Template::kTone) continue;
    ClipPlan plan;
    plan.id = "tone";
    plan.seed = 77;
    plan.events.push_back({{cls, 3.0, 5.5}, 25.0});
    const auto clip = features::resample(render_clip(spec, plan));
    const Tensor power = features::power_spectrogram(
        features::pad_or_truncate(clip.samples, features::kClipSamples));
    const double bin_hz = double(features::kTargetRate) / features::kFftSize;
    const auto center = static_cast<std::size_t>(
        std::lround(class_frequency(cls, spec.n_classes) / bin_hz));
    double inside = 0.0, total = 0.0;
    for (std::size_t t = 0; t < features::kFrames; ++t) {
      double e = 0.0;
      for (std::size_t b = center - 3; b <= center + 3; ++b) e += power.at({t, b});
      const double time = double(t * features::kHop) / features::kTargetRate;
      total += e;
      if (time >= 3.0 && time <= 5.5) inside += e;
    }
    EXPECT_GE(inside / total, 0.9) << "class " << cls;
  }
}

TEST(Generate, RenderedLevelFollowsSnr) {
  SceneSpec spec = tiny_spec();
  ClipPlan quiet, loud;
  quiet.seed = loud.seed = 3;
  quiet.events.push_back({{0, 1.0, 9.0}, 0.0});
  loud.events.push_back({{0, 1.0, 9.0}, 20.0});
  auto rms = [](const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t i = 44100 * 2; i < 44100 * 8; ++i) s += x[i] * x[i];
    return std::sqrt(s / (44100 * 6));
  };
  EXPECT_GT(rms(render_clip(spec, loud).samples),
            3.0 * rms(render_clip(spec, quiet).samples));
}

TEST(Spec, Validation) {
  SceneSpec s = tiny_spec();
  EXPECT_NO_THROW(s.validate());
  s.n_classes = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = tiny_spec();
  s.max_duration = 11.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = tiny_spec();
  s.min_events = 4;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_EQ(class_names(10).size(), 10u);
  EXPECT_EQ(parse_subset(subset_name(Subset::kUnlabeled)), Subset::kUnlabeled);
  EXPECT_THROW(parse_subset("train"), std::invalid_argument);
}

std::vector<ManifestEntry> entries_with_tags(
    const std::vector<std::vector<std::size_t>>& tags) {
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    ManifestEntry e;
    e.id = "c" + std::to_string(i);
    e.weak_classes = tags[i];
    out.push_back(e);
  }
  return out;
}

TEST(Folds, PartitionBalancedAndSeeded) {
  std::mt19937_64 rng(1);
  std::vector<std::vector<std::size_t>> tags;
  for (int i = 0; i < 63; ++i) tags.push_back({std::size_t(rng() % 4)});
  const auto entries = entries_with_tags(tags);
  const auto f = make_folds(entries, 5, 9);
  ASSERT_EQ(f.size(), 63u);
  std::vector<std::size_t> size(5, 0);
  for (std::size_t x : f) {
    ASSERT_LT(x, 5u);
    ++size[x];
  }
  EXPECT_LE(*std::max_element(size.begin(), size.end()) -
                *std::min_element(size.begin(), size.end()),
            1u);
  EXPECT_EQ(make_folds(entries, 5, 9), f);
  EXPECT_NE(make_folds(entries, 5, 10), f);
}

TEST(Folds, StratifiedCountsWhenDivisible) {
  // Every class-set group holds a multiple of 5 clips, so each fold receives
  // the same number of clips of every class.
  std::vector<std::vector<std::size_t>> tags;
  for (int i = 0; i < 10; ++i) tags.push_back({0});
  for (int i = 0; i < 5; ++i) tags.push_back({1});
  for (int i = 0; i < 15; ++i) tags.push_back({0, 2});
  for (int i = 0; i < 5; ++i) tags.push_back({1, 2});
  std::mt19937_64 rng(2);
  std::shuffle(tags.begin(), tags.end(), rng);
  const auto f = make_folds(entries_with_tags(tags), 5, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<std::size_t> per(5, 0);
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (std::count(tags[i].begin(), tags[i].end(), c)) ++per[f[i]];
    }
    EXPECT_EQ(*std::max_element(per.begin(), per.end()) -
                  *std::min_element(per.begin(), per.end()),
              0u)
        << "class " << c;
  }
}

TEST(Folds, DegenerateAndErrors) {
  const auto entries = entries_with_tags({{0}, {1}, {0}});
  EXPECT_EQ(make_folds(entries, 1, 1), (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_THROW(make_folds(entries, 4, 1), std::invalid_argument);
}

TEST(Manifest, RoundTripAndEmpty) {
  const Manifest m = plan_manifest(tiny_spec());
  EXPECT_EQ(parse_manifest(format_manifest(m), "m"), m);
  Manifest empty;
  empty.class_names = class_names(2);
  EXPECT_EQ(parse_manifest(format_manifest(empty), "m"), empty);
  TempDir dir("manifest");
  write_manifest(dir.path() / "m.tsv", m);
  EXPECT_EQ(read_manifest(dir.path() / "m.tsv"), m);
}

std::string parse_error(const std::string& text) {
  try {
    parse_manifest(text, "data/manifest.tsv");
  } catch (const IoError& e) {
    return e.what();
  }
  return "no error";
}

TEST(Manifest, CorruptRowsNameTheLine) {
  const std::string good = format_manifest(plan_manifest(tiny_spec()));
  auto lines = split(good, '\n');
  ASSERT_GT(lines.size(), 4u);
  auto with_line3 = [&](const std::string& row) {
    auto copy = lines;
    copy[2] = row;
    std::string out;
    for (const auto& l : copy) out += l + "\n";
    return out;
  };
  for (const std::string& bad :
       {std::string("strong_0009\taudio/x.wav\tstrong"),
        std::string("strong_0009\taudio/x.wav\tbogus\t-\t-"),
        std::string("strong_0009\taudio/x.wav\tstrong\tLion\tLion:1:2"),
        std::string("strong_0009\taudio/x.wav\tstrong\tCat\tCat:3:2"),
        std::string("strong_0009\taudio/x.wav\tstrong\tCat\tCat:1")}) {
    const std::string msg = parse_error(with_line3(bad));
    EXPECT_NE(msg.find("data/manifest.tsv:3"), std::string::npos)
        << bad << " -> " << msg;
  }
  EXPECT_NE(parse_error("clip\tpath\n").find("data/manifest.tsv:1"),
            std::string::npos);
}

}  // namespace
}  // namespace sed::datagen
