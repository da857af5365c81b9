// src/model.cc

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

#include "sed/model.h"

#include <algorithm>
#include <stdexcept>

namespace sed {

using ad::Var;

namespace {

constexpr ops::Pair kStemPool{2, 2};
constexpr ops::Pair kResidualPool{1, 2};

std::string idx(const std::string& prefix, std::size_t i) {
  return prefix + "." + std::to_string(i);
}

void add_conv(ParamStore& p, const std::string& prefix, std::size_t cout,
              std::size_t cin, std::size_t k) {
  p.add_param(prefix + ".weight", Tensor({cout, cin, k, k}));
  p.add_param(prefix + ".bias", Tensor({cout}));
}

void add_bn(ParamStore& p, const std::string& prefix, std::size_t c) {
  p.add_param(prefix + ".gamma", Tensor({c}, 1.0));
  p.add_param(prefix + ".beta", Tensor({c}));
  p.add_buffer(prefix + ".running_mean", Tensor({c}));
  p.add_buffer(prefix + ".running_var", Tensor({c}, 1.0));
}

void add_gru_direction(ParamStore& p, const std::string& prefix,
                       std::size_t in, std::size_t h) {
  p.add_param(prefix + ".w_ih", Tensor({3 * h, in}));
  p.add_param(prefix + ".w_hh", Tensor({3 * h, h}));
  p.add_param(prefix + ".b_ih", Tensor({3 * h}));
  p.add_param(prefix + ".b_hh", Tensor({3 * h}));
}

ops::GruWeights gru_weights(const ParamStore& p, const std::string& prefix) {
  return {p.param(prefix + ".w_ih"), p.param(prefix + ".w_hh"),
          p.param(prefix + ".b_ih"), p.param(prefix + ".b_hh")};
}

Var conv_same(const Var& x, const ParamStore& p, const std::string& prefix) {
  const Var& w = p.param(prefix + ".weight");
  const std::size_t k = w.shape()[2];
  return ops::conv2d(x, w, p.param(prefix + ".bias"), {1, 1},
                     ops::same_padding(k, w.shape()[3]));
}

Var bn(const Var& x, ParamStore& p, const std::string& prefix,
       const ModelConfig& cfg, bool training) {
  return ops::batch_norm(x, p.param(prefix + ".gamma"),
                         p.param(prefix + ".beta"),
                         p.buffer(prefix + ".running_mean"),
                         p.buffer(prefix + ".running_var"), training,
                         cfg.bn_momentum, cfg.bn_eps);
}

std::size_t cbam_hidden(std::size_t c, std::size_t reduction) {
  return std::max<std::size_t>(1, c / reduction);
}

Shape drop_batch(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

}  // namespace

std::size_t ModelConfig::output_frames() const {
  std::size_t t = input_frames;
  for (std::size_t i = 0; i < stem_channels.size(); ++i) {
    t /= std::min(kStemPool.h, t);
  }
  return t;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) {
    throw std::invalid_argument("model config: " + m);
  };
  if (n_classes == 0) fail("n_classes must be positive");
  if (input_frames == 0 || n_mels == 0) fail("input dims must be positive");
  if (stem_channels.empty()) fail("at least one stem block required");
  if (stem_kernel % 2 == 0 || residual_kernel % 2 == 0 || cbam_kernel % 2 == 0)
    fail("kernel sizes must be odd");
  for (std::size_t c : stem_channels)
    if (c == 0) fail("stem channels must be positive");
  for (std::size_t c : residual_channels)
    if (c == 0) fail("residual channels must be positive");
  if (gru_layers == 0 || gru_hidden == 0) fail("recurrent block is empty");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0,1)");
  if (cbam_reduction == 0) fail("cbam reduction must be positive");
}

std::string format_shape(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s;
}

ParamStore build_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamStore p;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < cfg.stem_channels.size(); ++i) {
    const std::size_t c = cfg.stem_channels[i];
    const std::string pre = idx("stem", i);
    add_conv(p, pre + ".conv", 2 * c, cin, cfg.stem_kernel);
    add_bn(p, pre + ".bn", 2 * c);
    cin = c;
  }
  for (std::size_t i = 0; i < cfg.residual_channels.size(); ++i) {
    const std::size_t c = cfg.residual_channels[i];
    const std::string pre = idx("res", i);
    add_conv(p, pre + ".conv1", c, cin, cfg.residual_kernel);
    add_bn(p, pre + ".bn1", c);
    add_conv(p, pre + ".conv2", c, c, cfg.residual_kernel);
    add_bn(p, pre + ".bn2", c);
    if (cin != c) add_conv(p, pre + ".proj", c, cin, 1);
    const std::size_t hid = cbam_hidden(c, cfg.cbam_reduction);
    p.add_param(pre + ".cbam.mlp1.weight", Tensor({hid, c}));
    p.add_param(pre + ".cbam.mlp1.bias", Tensor({hid}));
    p.add_param(pre + ".cbam.mlp2.weight", Tensor({c, hid}));
    p.add_param(pre + ".cbam.mlp2.bias", Tensor({c}));
    add_conv(p, pre + ".cbam.spatial", 1, 2, cfg.cbam_kernel);
    cin = c;
  }
  std::size_t in = cin;
  for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
    add_gru_direction(p, idx("gru", l) + ".fwd", in, cfg.gru_hidden);
    add_gru_direction(p, idx("gru", l) + ".bwd", in, cfg.gru_hidden);
    in = 2 * cfg.gru_hidden;
  }
  p.add_param("fc.weight", Tensor({cfg.n_classes, in}));
  p.add_param("fc.bias", Tensor({cfg.n_classes}));
  return p;
}

Rcrnn::Rcrnn(ModelConfig cfg) : cfg_(std::move(cfg)), params_(build_params(cfg_)) {}

Rcrnn::Rcrnn(ModelConfig cfg, ParamStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  params_.require_same_layout(build_params(cfg_));
}

Var cbam(const Var& x, const ParamStore& p, const std::string& prefix,
         std::size_t spatial_kernel) {
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1];
  auto mlp = [&](const Var& v) {
    Var h = ops::relu(ops::linear(v, p.param(prefix + ".mlp1.weight"),
                                  p.param(prefix + ".mlp1.bias")));
    return ops::linear(h, p.param(prefix + ".mlp2.weight"),
                       p.param(prefix + ".mlp2.bias"));
  };
  Var avg = ops::reshape(ops::reduce_mean(x, {2, 3}), {N, C});
  Var mx = ops::reshape(ops::reduce_max(x, {2, 3}), {N, C});
  Var channel_att =
      ops::reshape(ops::sigmoid(ops::add(mlp(avg), mlp(mx))), {N, C, 1, 1});
  Var y = ops::mul(x, channel_att);

  Var pooled = ops::concat({ops::reduce_mean(y, {1}), ops::reduce_max(y, {1})}, 1);
  Var spatial_att = ops::sigmoid(ops::conv2d(
      pooled, p.param(prefix + ".spatial.weight"),
      p.param(prefix + ".spatial.bias"), {1, 1},
      ops::same_padding(spatial_kernel, spatial_kernel)));
  return ops::mul(y, spatial_att);
}

Var residual_block(const Var& x, ParamStore& p, const std::string& prefix,
                   const ModelConfig& cfg, bool training) {
  Var h = ops::relu(bn(conv_same(x, p, prefix + ".conv1"), p, prefix + ".bn1",
                       cfg, training));
  h = ops::relu(bn(conv_same(h, p, prefix + ".conv2"), p, prefix + ".bn2", cfg,
                   training));
  Var skip = p.has_param(prefix + ".proj.weight")
                 ? conv_same(x, p, prefix + ".proj")
                 : x;
  Var y = cbam(ops::add(h, skip), p, prefix + ".cbam", cfg.cbam_kernel);
  return ops::avg_pool2d(y, kResidualPool);
}

ModelOutput Rcrnn::forward(const Var& input, Mode mode, std::mt19937_64& rng,
                           std::vector<LayerShape>* trace) {
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.input_frames ||
      s[3] != cfg_.n_mels) {
    throw ShapeError("model input must be [N,1," +
                     std::to_string(cfg_.input_frames) + "," +
                     std::to_string(cfg_.n_mels) + "], got " + shape_str(s));
  }
  const bool training = mode == Mode::kTrain;
  auto note = [&](const std::string& name, const Shape& shape) {
    if (trace) trace->push_back({name, shape});
  };
  note("input", drop_batch(s));

  Var x = input;
  for (std::size_t i = 0; i < cfg_.stem_channels.size(); ++i) {
    const std::string pre = idx("stem", i);
    x = bn(conv_same(x, params_, pre + ".conv"), params_, pre + ".bn", cfg_,
           training);
    x = ops::avg_pool2d(ops::glu(x), kStemPool);
    note(pre, drop_batch(x.shape()));
  }
  for (std::size_t i = 0; i < cfg_.residual_channels.size(); ++i) {
    const std::string pre = idx("res", i);
    x = residual_block(x, params_, pre, cfg_, training);
    note(pre, drop_batch(x.shape()));
  }

  // [N,C,T,F] -> [N,T,C]
  const std::size_t N = x.shape()[0], C = x.shape()[1], T = x.shape()[2];
  if (x.shape()[3] != 1) x = ops::reduce_mean(x, {3});
  x = ops::permute(ops::reshape(x, {N, C, T}), {0, 2, 1});
  x = ops::dropout(x, cfg_.dropout, rng, training);
  for (std::size_t l = 0; l < cfg_.gru_layers; ++l) {
    const std::string pre = idx("gru", l);
    x = ops::relu(ops::gru_bidirectional(x, gru_weights(params_, pre + ".fwd"),
                                         gru_weights(params_, pre + ".bwd")));
  }
  note("recurrent", {x.shape()[2], x.shape()[1]});
  x = ops::dropout(x, cfg_.dropout, rng, training);

  const std::size_t H2 = x.shape()[2];
  Var logits = ops::linear(ops::reshape(x, {N * T, H2}),
                           params_.param("fc.weight"), params_.param("fc.bias"));
  Var strong = ops::sigmoid(ops::reshape(logits, {N, T, cfg_.n_classes}));
  Var weak = ops::weighted_pool(strong);
  note("strong", drop_batch(strong.shape()));
  note("weak", {1, cfg_.n_classes});
  return {strong, weak};
}

ModelOutput Rcrnn::forward(const Tensor& input, Mode mode,
                           std::mt19937_64& rng) {
  return forward(Var::constant(input), mode, rng);
}

std::vector<StrongPrediction> Rcrnn::predict(const Tensor& input) {
  ad::NoGradGuard guard;
  std::mt19937_64 rng(0);
  ModelOutput out = forward(input, Mode::kInfer, rng);
  const Tensor& s = out.strong.value();
  const Tensor& w = out.weak.value();
  const std::size_t N = s.dim(0), T = s.dim(1), C = s.dim(2);
  std::vector<StrongPrediction> preds(N);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> strong(s.data() + n * T * C, s.data() + (n + 1) * T * C);
    std::vector<double> weak(w.data() + n * C, w.data() + (n + 1) * C);
    preds[n].strong = Tensor({T, C}, std::move(strong));
    preds[n].weak = Tensor({C}, std::move(weak));
  }
  return preds;
}

std::vector<LayerShape> describe(const ModelConfig& cfg) {
  Rcrnn model(cfg);
  std::vector<LayerShape> rows;
  ad::NoGradGuard guard;
  std::mt19937_64 rng(0);
  model.forward(Var::constant(Tensor({1, 1, cfg.input_frames, cfg.n_mels})),
                Mode::kInfer, rng, &rows);
  return rows;
}

std::string format_describe(const std::vector<LayerShape>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.name + "\t" + format_shape(r.shape) + "\n";
  return out;
}

Tensor stack_inputs(const std::vector<const Tensor*>& clips) {
  if (clips.empty()) throw ShapeError("stack_inputs: no clips");
  const Shape& s = clips[0]->shape();
  if (s.size() != 2) throw ShapeError("stack_inputs: clips must be 2-D");
  Tensor out({clips.size(), 1, s[0], s[1]});
  const std::size_t n = clips[0]->size();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    require_shape(*clips[i], s, "stack_inputs");
    std::copy(clips[i]->data(), clips[i]->data() + n, out.data() + i * n);
  }
  return out;
}

}  // namespace sed
