// src/features.cc

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

#include "sed/features.h"

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "sed/io_util.h"

namespace sed::features {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::string_view kFeatureMagic = "SEDFEAT1";

// Polyphase ratio 16000/44100 = 160/441.
constexpr std::size_t kUp = 160;
constexpr std::size_t kDown = 441;
constexpr double kRolloff = 0.94;
constexpr int kZeroCrossings = 24;
constexpr double kKaiserBeta = 8.6;

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

std::uint16_t get_u16(std::string_view b, std::size_t at) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + at, 2);
  return v;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Per-phase filter taps for the 160/441 polyphase resampler. Phase p holds
// the taps for an output sample whose input position has fractional part
// p / kUp; each phase is normalized to unit DC gain.
struct Polyphase {
  std::size_t half;              // taps on each side of the center
  std::vector<std::vector<double>> taps;  // [kUp][2 * half + 1]
};

const Polyphase& polyphase() {
  static const Polyphase bank = [] {
    Polyphase b;
    const double cutoff = kRolloff * static_cast<double>(kUp) / kDown;
    const double width = kZeroCrossings / cutoff;  // input samples
    b.half = static_cast<std::size_t>(std::ceil(width));
    const double i0 = std::cyl_bessel_i(0.0, kKaiserBeta);
    b.taps.assign(kUp, std::vector<double>(2 * b.half + 1));
    for (std::size_t p = 0; p < kUp; ++p) {
      const double frac = static_cast<double>(p) / kUp;
      double total = 0.0;
      for (std::size_t k = 0; k < 2 * b.half + 1; ++k) {
        // distance from the output position to input sample (center + k - half)
        const double d = static_cast<double>(k) - static_cast<double>(b.half) -
                         frac;
        double v = 0.0;
        if (std::abs(d) < width) {
          const double x = cutoff * d;
          const double sinc =
              x == 0.0 ? 1.0
                       : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
          const double r = d / width;
          const double win =
              std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0;
          v = cutoff * sinc * win;
        }
        b.taps[p][k] = v;
        total += v;
      }
      for (double& v : b.taps[p]) v /= total;
    }
    return b;
  }();
  return bank;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kFftSize);
    for (std::size_t i = 0; i < kFftSize; ++i) {
      v[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFftSize);
    }
    return v;
  }();
  return w;
}

}  // namespace

AudioClip decode_wav(std::string_view b, const std::string& source) {
  auto fail = [&](const std::string& why) -> IoError {
    return IoError(source + ": " + why);
  };
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
    throw fail("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  int rate = 0;
  AudioClip clip;
  while (pos + 8 <= b.size()) {
    std::string_view id = b.substr(pos, 4);
    const std::size_t len = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw fail("chunk overruns file");
    if (id == "fmt ") {
      if (len < 16) throw fail("short fmt chunk");
      const auto format = get_u16(b, body);
      const auto channels = get_u16(b, body + 2);
      rate = static_cast<int>(get_u32(b, body + 4));
      const auto bits = get_u16(b, body + 14);
      if (format != 1) throw fail("only PCM is supported");
      if (channels != 1) throw fail("only mono is supported");
      if (bits != 16) throw fail("only 16-bit samples are supported");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      clip.sample_rate = rate;
      clip.samples.resize(len / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        std::int16_t s;
        std::memcpy(&s, b.data() + body + 2 * i, 2);
        clip.samples[i] = s / 32768.0;
      }
      return clip;
    }
    pos = body + len + (len & 1);
  }
  throw fail("no data chunk");
}

AudioClip read_wav(const std::filesystem::path& path) {
  return decode_wav(read_file(path), path.string());
}

std::string encode_wav(const AudioClip& clip) {
  const std::uint32_t data_len =
      static_cast<std::uint32_t>(clip.samples.size() * 2);
  ByteWriter w;
  w.put_bytes("RIFF");
  w.put<std::uint32_t>(36 + data_len);
  w.put_bytes("WAVE");
  w.put_bytes("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate * 2));
  w.put<std::uint16_t>(2);
  w.put<std::uint16_t>(16);
  w.put_bytes("data");
  w.put<std::uint32_t>(data_len);
  for (double v : clip.samples) {
    const double c = std::clamp(v, -1.0, 1.0);
    w.put<std::int16_t>(static_cast<std::int16_t>(
        std::clamp(std::lround(c * 32768.0), -32768L, 32767L)));
  }
  return w.str();
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  write_file_atomic(path, encode_wav(clip));
}

AudioClip resample(const AudioClip& clip) {
  if (clip.sample_rate == kTargetRate) return clip;
  if (clip.sample_rate != kSourceRate) {
    throw std::invalid_argument("resample: unsupported sample rate " +
                                std::to_string(clip.sample_rate));
  }
  const Polyphase& bank = polyphase();
  const std::size_t n = clip.samples.size();
  const std::size_t out_len = (n * kUp + kDown - 1) / kDown;
  AudioClip out;
  out.sample_rate = kTargetRate;
  out.samples.resize(out_len);
  const long long half = static_cast<long long>(bank.half);
  for (std::size_t m = 0; m < out_len; ++m) {
    // output m sits at input position m * kDown / kUp
    const std::size_t num = m * kDown;
    const long long center = static_cast<long long>(num / kUp);
    const std::vector<double>& taps = bank.taps[num % kUp];
    double acc = 0.0;
    for (long long k = 0; k < 2 * half + 1; ++k) {
      const long long idx = center + k - half;
      if (idx < 0 || idx >= static_cast<long long>(n)) continue;
      acc += taps[static_cast<std::size_t>(k)] *
             clip.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[m] = acc;
  }
  return out;
}

std::vector<double> pad_or_truncate(const std::vector<double>& samples,
                                    std::size_t length) {
  std::vector<double> out(length, 0.0);
  std::copy_n(samples.begin(), std::min(length, samples.size()), out.begin());
  return out;
}

Tensor power_spectrogram(const std::vector<double>& samples) {
  if (samples.size() != kClipSamples) {
    throw ShapeError("power_spectrogram: expected " +
                     std::to_string(kClipSamples) + " samples, got " +
                     std::to_string(samples.size()));
  }
  // Centered frames: reflect n_fft/2 samples at both ends.
  const std::size_t pad = kFftSize / 2;
  std::vector<double> padded(kClipSamples + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    padded[i] = samples[pad - i];
    padded[pad + kClipSamples + i] = samples[kClipSamples - 2 - i];
  }
  std::copy(samples.begin(), samples.end(), padded.begin() + pad);

  const auto& win = hann_window();
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(kFftSize);
  std::vector<std::complex<double>> spec;
  Tensor out({kFrames, kBins});
  for (std::size_t t = 0; t < kFrames; ++t) {
    const double* src = padded.data() + t * kHop;
    for (std::size_t i = 0; i < kFftSize; ++i) frame[i] = src[i] * win[i];
    fft.fwd(spec, frame);
    double* row = out.data() + t * kBins;
    for (std::size_t k = 0; k < kBins; ++k) row[k] = std::norm(spec[k]);
  }
  return out;
}

Tensor make_mel_filterbank(std::size_t n_mels, std::size_t n_fft,
                           double sample_rate, double f_min, double f_max) {
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<double> hz(n_mels + 2);
  const double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
  for (std::size_t i = 0; i < n_mels + 2; ++i) {
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                               static_cast<double>(n_mels + 1));
  }
  Tensor fb({n_mels, bins});
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = hz[m], center = hz[m + 1], right = hz[m + 2];
    const double norm = 2.0 / (right - left);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = sample_rate * static_cast<double>(k) / n_fft;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb[m * bins + k] = norm * std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

const Tensor& mel_filterbank() {
  static const Tensor fb =
      make_mel_filterbank(kMels, kFftSize, kTargetRate, 0.0, kTargetRate / 2.0);
  return fb;
}

Tensor mel_project(const Tensor& power) {
  if (power.rank() != 2 || power.dim(1) != kBins) {
    throw ShapeError("mel_project: expected [frames, 1025], got " +
                     shape_str(power.shape()));
  }
  const Tensor& fb = mel_filterbank();
  const std::size_t frames = power.dim(0);
  Tensor out({frames, kMels});
  Eigen::Map<RowMat> Y(out.data(), frames, kMels);
  Y.noalias() = Eigen::Map<const RowMat>(power.data(), frames, kBins) *
                Eigen::Map<const RowMat>(fb.data(), kMels, kBins).transpose();
  Y = (Y.array() + kLogEps).log();
  return out;
}

MelSpectrogram extract(const AudioClip& clip) {
  for (double v : clip.samples) {
    if (!std::isfinite(v)) throw NonFiniteError("extract: non-finite sample");
  }
  AudioClip at16 = resample(clip);
  MelSpectrogram out;
  out.frames =
      mel_project(power_spectrogram(pad_or_truncate(at16.samples)));
  return out;
}

NormStats fit_norm_stats(const std::vector<const Tensor*>& corpus) {
  if (corpus.empty()) {
    throw std::invalid_argument("fit_norm_stats: empty corpus");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (const Tensor* t : corpus) {
    for (double v : t->values()) total += v;
    count += t->size();
  }
  if (count == 0) throw std::invalid_argument("fit_norm_stats: no cells");
  NormStats s;
  s.mean = total / static_cast<double>(count);
  double ss = 0.0;
  for (const Tensor* t : corpus) {
    for (double v : t->values()) ss += (v - s.mean) * (v - s.mean);
  }
  s.std = std::sqrt(ss / static_cast<double>(count));
  if (!(s.std >= kStdFloor)) {
    s.std = kStdFloor;
    s.floored = true;
  }
  return s;
}

namespace {

void check_stats(const NormStats& stats, const char* op) {
  if (!std::isfinite(stats.mean) || !std::isfinite(stats.std) ||
      !(stats.std > 0.0)) {
    throw std::invalid_argument(std::string(op) + ": unusable norm stats");
  }
}

}  // namespace

MelSpectrogram normalize(const MelSpectrogram& spec, const NormStats& stats) {
  check_stats(stats, "normalize");
  if (spec.normalized) throw std::invalid_argument("normalize: already done");
  MelSpectrogram out{spec.frames, true};
  for (double& v : out.frames.values()) v = (v - stats.mean) / stats.std;
  return out;
}

MelSpectrogram denormalize(const MelSpectrogram& spec, const NormStats& stats) {
  check_stats(stats, "denormalize");
  if (!spec.normalized) {
    throw std::invalid_argument("denormalize: input is not normalized");
  }
  MelSpectrogram out{spec.frames, false};
  for (double& v : out.frames.values()) v = v * stats.std + stats.mean;
  return out;
}

std::string encode_feature(const CachedFeature& f) {
  require_shape(f.raw, {kFrames, kMels}, "feature cache grid");
  ByteWriter w;
  w.put_bytes(kFeatureMagic);
  w.put<std::uint64_t>(f.source_hash);
  w.put<double>(f.stats.mean);
  w.put<double>(f.stats.std);
  w.put<std::uint8_t>(f.stats.floored ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kFrames));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kMels));
  for (double v : f.raw.values()) w.put<double>(v);
  return w.str();
}

CachedFeature decode_feature(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.get_bytes(kFeatureMagic.size()) != kFeatureMagic) {
    throw IoError(source + ": not a feature cache file");
  }
  CachedFeature f;
  f.source_hash = r.get<std::uint64_t>();
  f.stats.mean = r.get<double>();
  f.stats.std = r.get<double>();
  f.stats.floored = r.get<std::uint8_t>() != 0;
  const auto frames = r.get<std::uint32_t>();
  const auto mels = r.get<std::uint32_t>();
  if (frames != kFrames || mels != kMels) {
    throw IoError(source + ": unexpected grid " + std::to_string(frames) + "x" +
                  std::to_string(mels));
  }
  std::vector<double> data(kFrames * kMels);
  for (double& v : data) v = r.get<double>();
  if (!r.done()) throw IoError(source + ": trailing bytes");
  f.raw = Tensor({kFrames, kMels}, std::move(data));
  return f;
}

void save_feature(const std::filesystem::path& path, const CachedFeature& f) {
  write_file_atomic(path, encode_feature(f));
}

CachedFeature load_feature(const std::filesystem::path& path) {
  return decode_feature(read_file(path), path.string());
}

MelSpectrogram load_normalized(const std::filesystem::path& path) {
  CachedFeature f = load_feature(path);
  return normalize(MelSpectrogram{std::move(f.raw), false}, f.stats);
}

}  // namespace sed::features
