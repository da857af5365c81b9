// features_test.cc

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

#include <cmath>
#include <numbers>
#include <random>

#include "sed/features.h"
#include "sed/io_util.h"
#include "test_util.h"

namespace sed::features {
namespace {

using testing::random_tensor;

std::vector<double> sine(double hz, int rate, std::size_t n, double amp = 0.5) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  }
  return s;
}

/// Direct DFT power at bin k of a Hann-windowed segment.
double dft_power(const std::vector<double>& x, std::size_t start,
                 std::size_t n, std::size_t k) {
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    const double a = -2.0 * std::numbers::pi * k * i / n;
    re += w * x[start + i] * std::cos(a);
    im += w * x[start + i] * std::sin(a);
  }
  return re * re + im * im;
}

TEST(Resample, DcStaysDc) {
  const AudioClip in{std::vector<double>(44100, 1.0), kSourceRate};
  const AudioClip out = resample(in);
  EXPECT_EQ(out.sample_rate, kTargetRate);
  // Away from the zero-extended edges the DC gain is one.
  for (std::size_t i = 200; i + 200 < out.samples.size(); ++i) {
    ASSERT_NEAR(out.samples[i], 1.0, 1e-3) << "sample " << i;
  }
}

TEST(Resample, LengthFollowsRateRatio) {
  const AudioClip in{std::vector<double>(441000, 0.0), kSourceRate};
  const std::size_t n = resample(in).samples.size();
  EXPECT_GE(n, 159999u);
  EXPECT_LE(n, 160001u);
}

TEST(Resample, SinePeakStaysPut) {
  const AudioClip in{sine(1000.0, kSourceRate, 44100), kSourceRate};
  const AudioClip out = resample(in);
  std::size_t best = 0;
  double best_power = -1.0;
  for (std::size_t k = 110; k <= 146; ++k) {
    const double p = dft_power(out.samples, 4000, 2048, k);
    if (p > best_power) {
      best_power = p;
      best = k;
    }
  }
  EXPECT_NEAR(static_cast<double>(best), 128.0, 1.0);
}

TEST(Resample, UnsupportedRateRejected) {
  EXPECT_THROW(resample(AudioClip{{0.0}, 22050}), std::invalid_argument);
  const AudioClip same{{0.25, 0.5}, kTargetRate};
  EXPECT_EQ(resample(same).samples, same.samples);
}

TEST(Spectrogram, FrameCount) {
  const Tensor p = power_spectrogram(std::vector<double>(kClipSamples, 0.1));
  EXPECT_EQ(p.shape(), (Shape{625, 1025}));
}

TEST(Spectrogram, SilenceIsZero) {
  const Tensor p = power_spectrogram(std::vector<double>(kClipSamples, 0.0));
  for (double v : p.values()) ASSERT_EQ(v, 0.0);
}

TEST(Spectrogram, SineLandsInExpectedBin) {
  const Tensor p = power_spectrogram(sine(1000.0, kTargetRate, kClipSamples));
  for (std::size_t t : {10u, 300u, 600u}) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kBins; ++k) {
      if (p.at({t, k}) > p.at({t, best})) best = k;
    }
    EXPECT_EQ(best, 128u) << "frame " << t;
  }
}

TEST(Spectrogram, MatchesDirectDft) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> x(kClipSamples);
  for (double& v : x) v = g(rng);
  const Tensor p = power_spectrogram(x);
  // Frame 100 is centered at sample 100 * 256 and lies fully inside.
  for (std::size_t k : {0u, 17u, 512u, 1024u}) {
    const double ref = dft_power(x, 100 * kHop - kFftSize / 2, kFftSize, k);
    EXPECT_NEAR(p.at({100, k}), ref, 1e-9 * std::max(1.0, ref));
  }
}

TEST(PadOrTruncate, ExactLength) {
  EXPECT_EQ(pad_or_truncate(std::vector<double>(10, 1.0)).size(), kClipSamples);
  const auto t = pad_or_truncate(std::vector<double>(kClipSamples + 5, 1.0));
  EXPECT_EQ(t.size(), kClipSamples);
  const auto p = pad_or_truncate({1.0, 2.0}, 4);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0, 0.0, 0.0}));
}

TEST(Mel, ZeroPowerGivesLogEps) {
  const Tensor m = mel_project(Tensor({3, kBins}));
  EXPECT_EQ(m.shape(), (Shape{3, 128}));
  for (double v : m.values()) EXPECT_DOUBLE_EQ(v, std::log(kLogEps));
}

TEST(Mel, FilterAreasAreOne) {
  // Each triangle has unit area in Hz; summing its samples times the bin
  // spacing approximates that area once the triangle spans many bins.
  const Tensor& fb = mel_filterbank();
  const double df = static_cast<double>(kTargetRate) / kFftSize;
  std::size_t checked = 0;
  for (std::size_t m = 0; m < kMels; ++m) {
    double sum = 0.0;
    std::size_t support = 0;
    for (std::size_t k = 0; k < kBins; ++k) {
      const double w = fb.at({m, k});
      EXPECT_GE(w, 0.0);
      sum += w;
      if (w > 0.0) ++support;
    }
    EXPECT_GT(support, 0u) << "empty mel band " << m;
    if (support >= 20) {
      EXPECT_NEAR(sum * df, 1.0, 0.01) << "band " << m;
      ++checked;
    }
  }
  EXPECT_GT(checked, 30u);
}

TEST(Mel, WhiteNoiseIsFinite) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.1);
  AudioClip c{std::vector<double>(kClipSamples), kTargetRate};
  for (double& v : c.samples) v = g(rng);
  const MelSpectrogram m = extract(c);
  EXPECT_EQ(m.frames.shape(), (Shape{625, 128}));
  EXPECT_TRUE(all_finite(m.frames.values()));
}

TEST(Extract, ShortAndLongClipsGiveFixedGrid) {
  for (std::size_t n : {1000u, 441000u, 500000u}) {
    const AudioClip c{std::vector<double>(n, 0.01), kSourceRate};
    EXPECT_EQ(extract(c).frames.shape(), (Shape{625, 128}));
  }
}

TEST(Extract, PureFunction) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  AudioClip c{std::vector<double>(50000), kSourceRate};
  for (double& v : c.samples) v = u(rng);
  EXPECT_EQ(extract(c).frames, extract(c).frames);
}

TEST(NormStats, TwoConstantClips) {
  const Tensor a({2, 2}, 0.0), b({2, 2}, 2.0);
  const NormStats s = fit_norm_stats({&a, &b});
  EXPECT_DOUBLE_EQ(s.mean, 1.0);
  EXPECT_DOUBLE_EQ(s.std, 1.0);
  EXPECT_FALSE(s.floored);
}

TEST(NormStats, ConstantCorpusIsFloored) {
  const Tensor a({3, 3}, 4.0);
  const NormStats s = fit_norm_stats({&a});
  EXPECT_DOUBLE_EQ(s.mean, 4.0);
  EXPECT_EQ(s.std, kStdFloor);
  EXPECT_TRUE(s.floored);
}

TEST(NormStats, EmptyCorpusRejected) {
  EXPECT_THROW(fit_norm_stats({}), std::invalid_argument);
}

TEST(NormStats, MatchesTwoPassOracle) {
  std::mt19937_64 rng(4);
  std::vector<Tensor> corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back(random_tensor({7, 9}, rng, -30, 5));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : corpus) ptrs.push_back(&t);
  long double sum = 0.0L;
  std::size_t n = 0;
  for (const auto& t : corpus)
    for (double v : t.values()) {
      sum += v;
      ++n;
    }
  const long double mean = sum / n;
  long double ss = 0.0L;
  for (const auto& t : corpus)
    for (double v : t.values()) ss += (v - mean) * (v - mean);
  const NormStats s = fit_norm_stats(ptrs);
  EXPECT_NEAR(s.mean, static_cast<double>(mean), 1e-10);
  EXPECT_NEAR(s.std, static_cast<double>(std::sqrt(ss / n)), 1e-10);
}

TEST(Normalize, KnownPointsAndRoundTrip) {
  std::mt19937_64 rng(5);
  const NormStats s{-7.5, 3.25, false};
  MelSpectrogram m{random_tensor({4, 6}, rng, -20, 5), false};
  m.frames[0] = s.mean;
  m.frames[1] = s.mean + s.std;
  const MelSpectrogram n = normalize(m, s);
  EXPECT_TRUE(n.normalized);
  EXPECT_DOUBLE_EQ(n.frames[0], 0.0);
  EXPECT_DOUBLE_EQ(n.frames[1], 1.0);
  const MelSpectrogram back = denormalize(n, s);
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    EXPECT_NEAR(back.frames[i], m.frames[i], 1e-12);
  }
  EXPECT_THROW(normalize(n, s), std::invalid_argument);
  EXPECT_THROW(normalize(m, NormStats{0.0, 0.0, false}), std::invalid_argument);
}

TEST(Wav, RoundTripWithinQuantization) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.99, 0.99);
  AudioClip c{std::vector<double>(1234), kSourceRate};
  for (double& v : c.samples) v = u(rng);
  const AudioClip d = decode_wav(encode_wav(c), "mem");
  EXPECT_EQ(d.sample_rate, kSourceRate);
  ASSERT_EQ(d.samples.size(), c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    EXPECT_NEAR(d.samples[i], c.samples[i], 0.5 / 32768 + 1e-15);
  }
  EXPECT_THROW(decode_wav("RIFF", "short"), IoError);
}

TEST(FeatureCache, RoundTripAndCorruption) {
  std::mt19937_64 rng(7);
  CachedFeature f;
  f.source_hash = 0x1234abcdULL;
  f.stats = {-3.0, 2.0, false};
  f.raw = random_tensor({kFrames, kMels}, rng);
  const std::string bytes = encode_feature(f);
  const CachedFeature g = decode_feature(bytes, "mem");
  EXPECT_EQ(g.source_hash, f.source_hash);
  EXPECT_EQ(g.raw, f.raw);
  EXPECT_EQ(g.stats.mean, -3.0);
  EXPECT_THROW(decode_feature(bytes.substr(0, 100), "mem"), IoError);
  EXPECT_THROW(decode_feature(bytes + "x", "mem"), IoError);
}

}  // namespace
}  // namespace sed::features
