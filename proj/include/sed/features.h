// sed/features.h

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

// Log-mel feature extraction.
//
//   44.1 kHz mono -> windowed-sinc polyphase resampling -> 16 kHz
//   pad or truncate to 10 s (160000 samples)
//   centered STFT: reflection padding of n_fft/2, periodic Hann window,
//     2048-point FFT, hop 256, first 625 frames, power spectrum (1025 bins)
//   128 triangular mel bands (HTK mel scale, area normalized)
//   log(x + 1e-10)
//   global mean/std normalization over the training corpus
//
// Feature cache file layout (little-endian):
//
//   bytes  "SEDFEAT1"
//   u64    FNV-1a hash of the source audio file bytes
//   f64    normalization mean
//   f64    normalization std
//   u8     1 if the std was floored, else 0
//   u32    frames (625)
//   u32    mel bins (128)
//   f64    frames * bins raw log-mel values, row-major (time major)

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sed/tensor.h"

namespace sed::features {

constexpr int kSourceRate = 44100;
constexpr int kTargetRate = 16000;
constexpr std::size_t kClipSamples = 160000;
constexpr std::size_t kFftSize = 2048;
constexpr std::size_t kHop = 256;
constexpr std::size_t kFrames = 625;
constexpr std::size_t kBins = kFftSize / 2 + 1;
constexpr std::size_t kMels = 128;
constexpr double kLogEps = 1e-10;
constexpr double kStdFloor = 1e-8;

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = kTargetRate;
};

struct MelSpectrogram {
  Tensor frames;  // [625, 128], time major
  bool normalized = false;
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  bool floored = false;  // the corpus std was below kStdFloor
};

/// Reads 16-bit PCM mono WAV. Throws IoError on anything else.
AudioClip read_wav(const std::filesystem::path& path);
AudioClip decode_wav(std::string_view bytes, const std::string& source);

/// Encodes as 16-bit PCM mono WAV; samples are clipped to [-1, 1].
std::string encode_wav(const AudioClip& clip);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// 44.1 kHz -> 16 kHz band-limited resampling. 16 kHz input is returned
/// unchanged; any other rate throws std::invalid_argument.
AudioClip resample(const AudioClip& clip);

/// Zero pads or truncates to exactly `length` samples.
std::vector<double> pad_or_truncate(const std::vector<double>& samples,
                                    std::size_t length = kClipSamples);

/// Power spectrogram [625, 1025] of a 160000-sample 16 kHz signal.
Tensor power_spectrogram(const std::vector<double>& samples);

/// Mel filterbank [128, 1025].
const Tensor& mel_filterbank();

/// Builds a filterbank for arbitrary settings (HTK mel, area normalized).
Tensor make_mel_filterbank(std::size_t n_mels, std::size_t n_fft,
                           double sample_rate, double f_min, double f_max);

/// log(power x filterbank^T + eps): [frames, 1025] -> [frames, 128].
Tensor mel_project(const Tensor& power);

/// Full chain from audio at 44.1 or 16 kHz to the unnormalized grid.
MelSpectrogram extract(const AudioClip& clip);

/// Global mean and population std over every cell of every grid. Throws
/// std::invalid_argument on an empty corpus. A std below kStdFloor is
/// raised to the floor and reported through `floored`.
NormStats fit_norm_stats(const std::vector<const Tensor*>& corpus);

/// (x - mean) / std. Throws std::invalid_argument when already normalized
/// or when the stats are unusable.
MelSpectrogram normalize(const MelSpectrogram& spec, const NormStats& stats);
MelSpectrogram denormalize(const MelSpectrogram& spec, const NormStats& stats);

struct CachedFeature {
  std::uint64_t source_hash = 0;
  NormStats stats;
  Tensor raw;  // [625, 128] unnormalized
};

std::string encode_feature(const CachedFeature& f);
CachedFeature decode_feature(std::string_view bytes, const std::string& source);
void save_feature(const std::filesystem::path& path, const CachedFeature& f);
CachedFeature load_feature(const std::filesystem::path& path);

/// Loads a cache file and returns the normalized model input.
MelSpectrogram load_normalized(const std::filesystem::path& path);

}  // namespace sed::features
