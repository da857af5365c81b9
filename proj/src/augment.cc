// src/augment.cc

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

#include "sed/augment.h"

#include <cmath>
#include <stdexcept>

namespace sed::augment {

namespace {

void require_grid(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected a rank-2 grid, got " +
                     shape_str(t.shape()));
  }
}

std::size_t wrap(long long v, std::size_t n) {
  const long long m = static_cast<long long>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(mixup_alpha > 0.0) || !std::isfinite(mixup_alpha)) {
    throw std::invalid_argument("augment: mixup_alpha must be > 0");
  }
  if (!(shift_std_freq >= 0.0) || !(shift_std_time >= 0.0) ||
      !std::isfinite(shift_std_freq) || !std::isfinite(shift_std_time)) {
    throw std::invalid_argument("augment: shift stds must be >= 0");
  }
}

void mask_time(Tensor& spec, std::size_t t0, std::size_t t1) {
  require_grid(spec, "mask_time");
  const std::size_t F = spec.dim(1);
  t1 = std::min(t1, spec.dim(0));
  for (std::size_t t = t0; t < t1; ++t) {
    std::fill_n(spec.data() + t * F, F, 0.0);
  }
}

void mask_freq(Tensor& spec, std::size_t f0, std::size_t f1) {
  require_grid(spec, "mask_freq");
  const std::size_t T = spec.dim(0), F = spec.dim(1);
  f1 = std::min(f1, F);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = f0; f < f1; ++f) spec[t * F + f] = 0.0;
  }
}

Tensor spec_augment(const Tensor& spec, const AugmentConfig& cfg,
                    std::mt19937_64& rng) {
  require_grid(spec, "spec_augment");
  const std::size_t T = spec.dim(0), F = spec.dim(1);
  if (cfg.time_mask_max >= T || cfg.freq_mask_max >= F) {
    throw ShapeError("spec_augment: mask maximum must be below the extent of " +
                     shape_str(spec.shape()));
  }
  Tensor out = spec;
  auto draw = [&rng](std::size_t max_width, std::size_t extent,
                     std::size_t& start, std::size_t& width) {
    width = std::uniform_int_distribution<std::size_t>(0, max_width)(rng);
    start = std::uniform_int_distribution<std::size_t>(0, extent - width)(rng);
  };
  for (std::size_t m = 0; m < cfg.n_masks_per_axis; ++m) {
    std::size_t s, w;
    draw(cfg.time_mask_max, T, s, w);
    mask_time(out, s, s + w);
    draw(cfg.freq_mask_max, F, s, w);
    mask_freq(out, s, s + w);
  }
  return out;
}

double expected_mask_fraction(const AugmentConfig& cfg, std::size_t frames,
                              std::size_t bins) {
  // One stripe per axis, widths uniform on [0, max] and independent, so the
  // union covers a + b - ab of the grid.
  const double a = 0.5 * static_cast<double>(cfg.time_mask_max) / frames;
  const double b = 0.5 * static_cast<double>(cfg.freq_mask_max) / bins;
  return a + b - a * b;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng);
  const double y = g(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

Tensor mix(const Tensor& a, const Tensor& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mixup: lambda must lie in [0, 1]");
  }
  require_shape(b, a.shape(), "mixup operand");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  }
  return out;
}

Example mixup(const Example& a, const Example& b, double lambda) {
  return {mix(a.spec, b.spec, lambda), mix(a.label, b.label, lambda)};
}

long long label_shift(long long dt, std::size_t frames,
                      std::size_t label_frames) {
  return std::llround(static_cast<double>(dt) *
                      static_cast<double>(label_frames) /
                      static_cast<double>(frames));
}

Example circular_shift(const Example& ex, long long dt, long long df) {
  require_grid(ex.spec, "time_freq_shift");
  const std::size_t T = ex.spec.dim(0), F = ex.spec.dim(1);
  Example out{Tensor(ex.spec.shape()), ex.label};
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t tt = wrap(static_cast<long long>(t) + dt, T);
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t ff = wrap(static_cast<long long>(f) + df, F);
      out.spec[tt * F + ff] = ex.spec[t * F + f];
    }
  }
  if (ex.label.rank() == 2) {
    const std::size_t L = ex.label.dim(0), C = ex.label.dim(1);
    const long long dl = label_shift(dt, T, L);
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t tt = wrap(static_cast<long long>(t) + dl, L);
      std::copy_n(ex.label.data() + t * C, C, out.label.data() + tt * C);
    }
  }
  return out;
}

Example time_freq_shift(const Example& ex, const AugmentConfig& cfg,
                        std::mt19937_64& rng) {
  std::normal_distribution<double> nt(0.0, cfg.shift_std_time);
  std::normal_distribution<double> nf(0.0, cfg.shift_std_freq);
  const long long dt = cfg.shift_std_time > 0 ? std::llround(nt(rng)) : 0;
  const long long df = cfg.shift_std_freq > 0 ? std::llround(nf(rng)) : 0;
  return circular_shift(ex, dt, df);
}

}  // namespace sed::augment
