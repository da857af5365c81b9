// sed/model.h

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

// Residual convolutional recurrent network (RCRNN) for frame-level sound
// event detection.
//
//   input [N,1,T,F]
//   stem: (conv kxk -> BN -> GLU -> 2x2 avg pool) per stem channel count
//   residual rows: (conv 3x3 -> BN -> ReLU) x2 + skip -> CBAM -> 1x2 avg pool
//   frequency axis averaged away (it is already 1 for the default layout)
//   BiGRU layers with ReLU on the outputs
//   linear + sigmoid per frame          -> strong [N,T',C]
//   linear-softmax pooling over time    -> weak   [N,C]
//
// Dropout sits on the recurrent input and on the classifier input.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "sed/ops.h"
#include "sed/params.h"

namespace sed {

struct ModelConfig {
  std::size_t n_classes = 10;
  std::size_t input_frames = 625;
  std::size_t n_mels = 128;
  std::vector<std::size_t> stem_channels{16, 32};
  std::size_t stem_kernel = 7;
  std::vector<std::size_t> residual_channels{64, 128, 128, 128, 128, 128};
  std::size_t residual_kernel = 3;
  std::size_t gru_hidden = 128;
  std::size_t gru_layers = 2;
  double dropout = 0.5;
  std::size_t cbam_reduction = 8;
  std::size_t cbam_kernel = 7;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// Frames after the two stem poolings.
  std::size_t output_frames() const;
  /// Throws std::invalid_argument on an unusable layout.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class Mode { kTrain, kInfer };

/// Per-clip detector output.
struct StrongPrediction {
  Tensor strong;  // [frames, classes], probabilities
  Tensor weak;    // [classes]
};

/// Batched forward output.
struct ModelOutput {
  ad::Var strong;  // [N, frames, classes]
  ad::Var weak;    // [N, classes]
};

struct LayerShape {
  std::string name;
  Shape shape;  // per clip, no batch axis
};

std::string format_shape(const Shape& shape);

/// Creates every learnable tensor and buffer for `cfg`. Weights and biases
/// start at zero, BN scales at one and running variances at one.
ParamStore build_params(const ModelConfig& cfg);

class Rcrnn {
 public:
  explicit Rcrnn(ModelConfig cfg);
  Rcrnn(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// `input` is [N,1,frames,mels]. Training mode uses batch statistics,
  /// updates BN running statistics and applies dropout drawn from `rng`.
  /// When `trace` is given, per-block output shapes are appended to it.
  ModelOutput forward(const ad::Var& input, Mode mode, std::mt19937_64& rng,
                      std::vector<LayerShape>* trace = nullptr);
  ModelOutput forward(const Tensor& input, Mode mode, std::mt19937_64& rng);

  /// Inference without graph recording, split per clip.
  std::vector<StrongPrediction> predict(const Tensor& input);

  Rcrnn clone() const { return Rcrnn(cfg_, params_.clone()); }

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

/// Channel-then-spatial attention over x[N,C,H,W] using the parameters
/// under `prefix` ("<prefix>.mlp1.weight", ...).
ad::Var cbam(const ad::Var& x, const ParamStore& params,
             const std::string& prefix, std::size_t spatial_kernel);

/// One residual row: two conv-BN-ReLU layers plus skip, CBAM, then pooling.
ad::Var residual_block(const ad::Var& x, ParamStore& params,
                       const std::string& prefix, const ModelConfig& cfg,
                       bool training);

/// Output shape of every block for one clip, obtained by running the model
/// on a zero input: rows "input", "stem.i", "res.i", "recurrent" (reported
/// feature-major as 2H x frames), "strong" and "weak".
std::vector<LayerShape> describe(const ModelConfig& cfg);

std::string format_describe(const std::vector<LayerShape>& rows);

/// Stacks per-clip [frames, mels] grids into [N,1,frames,mels].
Tensor stack_inputs(const std::vector<const Tensor*>& clips);

}  // namespace sed
