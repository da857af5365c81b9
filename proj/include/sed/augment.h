// sed/augment.h

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

// Feature noise for the noisy student: zero-valued time and frequency
// masks, mixup, and circular time-frequency shifts. Spectrograms are
// [frames, bins] grids; strong labels are [label_frames, classes] grids.
// Applied in the order masking, mixup, shift.

#pragma once

#include <random>

#include "sed/tensor.h"

namespace sed::augment {

struct AugmentConfig {
  std::size_t time_mask_max = 30;  // frames
  std::size_t freq_mask_max = 16;  // bins
  std::size_t n_masks_per_axis = 1;
  double mixup_alpha = 0.2;
  double shift_std_freq = 4.0;   // bins
  double shift_std_time = 32.0;  // input frames

  /// Throws std::invalid_argument on a negative or non-finite setting.
  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

/// Zeroes frames [t0, t1) across every bin.
void mask_time(Tensor& spec, std::size_t t0, std::size_t t1);
/// Zeroes bins [f0, f1) across every frame.
void mask_freq(Tensor& spec, std::size_t f0, std::size_t f1);

/// Draws n_masks_per_axis masks per axis: width uniform in [0, max], start
/// uniform over the admissible positions. Throws ShapeError when a maximum
/// is not below the corresponding extent.
Tensor spec_augment(const Tensor& spec, const AugmentConfig& cfg,
                    std::mt19937_64& rng);

/// Expected masked fraction of cells for one mask per axis.
double expected_mask_fraction(const AugmentConfig& cfg, std::size_t frames,
                              std::size_t bins);

/// Sample of Beta(alpha, alpha).
double sample_beta(double alpha, std::mt19937_64& rng);

/// lambda * a + (1 - lambda) * b. Throws ShapeError on a shape mismatch and
/// std::invalid_argument when lambda is outside [0, 1].
Tensor mix(const Tensor& a, const Tensor& b, double lambda);

struct Example {
  Tensor spec;   // [frames, bins]
  Tensor label;  // [label_frames, classes], or [classes] for clip labels
};

/// Convex combination of both specs and both labels with weight lambda on a.
Example mixup(const Example& a, const Example& b, double lambda);

/// Label shift in output frames for an input-frame shift: nearest rounding
/// of dt * label_frames / frames.
long long label_shift(long long dt, std::size_t frames,
                      std::size_t label_frames);

/// Circularly shifts the spectrogram by dt frames and df bins (positive moves
/// content to later frames / higher bins) and a rank-2 label by the
/// matching number of label frames. Rank-1 labels are left unchanged.
Example circular_shift(const Example& ex, long long dt, long long df);

/// Draws dt ~ round(N(0, shift_std_time)) and df ~ round(N(0,
/// shift_std_freq)) and applies circular_shift.
Example time_freq_shift(const Example& ex, const AugmentConfig& cfg,
                        std::mt19937_64& rng);

}  // namespace sed::augment
