// sed/ops.h

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

// Differentiable primitives. Image-like tensors are laid out as
// [batch, channel, time, frequency]; sequences as [batch, time, feature].

#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "sed/autograd.h"

namespace sed::ops {

using ad::Var;

struct Pair {
  std::size_t h = 1;
  std::size_t w = 1;
};

/// Cross-correlation of x[N,Cin,H,W] with w[Cout,Cin,kh,kw]. `bias` may be
/// an undefined Var.
Var conv2d(const Var& x, const Var& w, const Var& bias, Pair stride = {1, 1},
           Pair padding = {0, 0});

/// Padding that keeps H and W unchanged for an odd kernel at stride 1.
Pair same_padding(std::size_t kh, std::size_t kw);

/// Non-overlapping average pooling over the last two axes of [N,C,H,W].
/// A window larger than the input extent is clamped to that extent.
Var avg_pool2d(const Var& x, Pair window);

/// Output shape of avg_pool2d without running it.
Shape avg_pool2d_shape(const Shape& in, Pair window);

/// Gated linear unit over axis 1: first half * sigmoid(second half).
Var glu(const Var& x);

/// Per-channel batch normalisation, channel axis 1. In training mode the
/// batch statistics are used and the running statistics are updated with
/// `momentum` (running variance uses the unbiased estimate).
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               double momentum = 0.1, double eps = 1e-5);

Var relu(const Var& x);
Var sigmoid(const Var& x);

/// Elementwise ops with broadcasting over size-1 axes (equal ranks).
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& perm);
Var concat(const std::vector<Var>& xs, std::size_t axis);

/// Reductions keep the reduced axes with extent 1.
Var reduce_mean(const Var& x, const std::vector<std::size_t>& axes);
/// Max reduction; ties go to the first index in row-major order.
Var reduce_max(const Var& x, const std::vector<std::size_t>& axes);

Var sum(const Var& x);
Var mean(const Var& x);

/// x[M,K] * w[N,K]^T + b[N]. `bias` may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias);

/// Inverted dropout; identity when `training` is false or p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training);

struct GruWeights {
  Var w_ih;  // [3H, F], gate order r, z, n
  Var w_hh;  // [3H, H]
  Var b_ih;  // [3H]
  Var b_hh;  // [3H]
};

/// Bidirectional GRU over x[N,T,F] from a zero initial state. Returns the
/// raw hidden states [N,T,2H], forward direction first.
Var gru_bidirectional(const Var& x, const GruWeights& fwd,
                      const GruWeights& bwd);

/// Linear-softmax pooling over time: p[N,T,C] -> [N,C] with
/// out = sum_t p^2 / sum_t p and 0/0 defined as 0.
Var weighted_pool(const Var& p);

/// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] inside the
/// cross-entropy losses.
inline constexpr double kProbFloor = 1e-7;

/// Binary cross-entropy against a constant target of the same shape,
/// averaged over every cell of each listed row (axis 0) and summed over
/// the rows.
Var bce_sum(const Var& pred, const Tensor& target,
            const std::vector<std::size_t>& rows);

/// Binary cross-entropy averaged over all cells.
Var bce_mean(const Var& pred, const Tensor& target);

/// Mean squared error against a constant target.
Var mse(const Var& a, const Tensor& target);

}  // namespace sed::ops
