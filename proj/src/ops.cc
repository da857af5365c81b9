// src/ops.cc

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

#include "sed/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

namespace sed::ops {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using ad::Node;

// Gradient buffer of parent `i`, or nullptr if it does not need one.
Tensor* parent_grad(Node& n, std::size_t i) {
  Node& p = *n.parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.grad_buffer();
}

const Tensor& parent_value(const Node& n, std::size_t i) {
  return n.parents[i]->value;
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `in` when indexed by a broadcast output shape: zero where the
// input has extent 1.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  auto st = strides_of(in);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == 1 && out[i] != 1) st[i] = 0;
  }
  return st;
}

// Calls fn(i, ja, jb) for every flat output index i of `shape`, where ja and
// jb are the offsets under strides sa and sb.
template <class F>
void walk2(const Shape& shape, const std::vector<std::size_t>& sa,
           const std::vector<std::size_t>& sb, F&& fn) {
  const std::size_t total = numel(shape);
  if (total == 0) return;
  const std::size_t rank = shape.size();
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t last = shape[rank - 1];
  const std::size_t la = sa[rank - 1], lb = sb[rank - 1];
  std::size_t ja = 0, jb = 0;
  for (std::size_t i = 0; i < total; i += last) {
    for (std::size_t k = 0; k < last; ++k) fn(i + k, ja + k * la, jb + k * lb);
    // advance all but the last axis
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      ja += sa[ax];
      jb += sb[ax];
      if (idx[ax] < shape[ax]) break;
      ja -= sa[ax] * shape[ax];
      jb -= sb[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                       " with " + shape_str(b));
    }
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

struct ConvGeom {
  std::size_t cin, h, w, cout, kh, kw, ho, wo;
  Pair stride, pad;
  std::size_t krows() const { return cin * kh * kw; }
  std::size_t ocols() const { return ho * wo; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride.h == 1 && stride.w == 1 &&
           pad.h == 0 && pad.w == 0;
  }
};

// Valid output range [lo, hi) along one axis for kernel offset k.
void valid_range(std::size_t k, std::size_t s, std::size_t p, std::size_t in,
                 std::size_t out, std::size_t& lo, std::size_t& hi) {
  // need 0 <= o*s + k - p < in
  long long off = static_cast<long long>(k) - static_cast<long long>(p);
  long long l = off >= 0 ? 0 : (-off + static_cast<long long>(s) - 1) / s;
  long long h = (static_cast<long long>(in) - 1 - off);
  h = h < 0 ? 0 : h / static_cast<long long>(s) + 1;
  lo = static_cast<std::size_t>(std::min<long long>(l, out));
  hi = static_cast<std::size_t>(std::min<long long>(std::max(h, l), out));
}

// Column block for output rows [oh0, oh1): cols is [krows, (oh1-oh0)*wo].
void im2col(const double* x, const ConvGeom& g, std::size_t oh0,
            std::size_t oh1, double* cols) {
  const std::size_t ncol = (oh1 - oh0) * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      std::size_t oh_lo, oh_hi;
      valid_range(i, g.stride.h, g.pad.h, g.h, g.ho, oh_lo, oh_hi);
      oh_lo = std::max(oh_lo, oh0);
      oh_hi = std::min(oh_hi, oh1);
      for (std::size_t j = 0; j < g.kw; ++j) {
        std::size_t ow_lo, ow_hi;
        valid_range(j, g.stride.w, g.pad.w, g.w, g.wo, ow_lo, ow_hi);
        double* dst = cols + ((c * g.kh + i) * g.kw + j) * ncol;
        // Only cells that read padding are zeroed.
        const std::size_t top = oh_lo > oh0 ? oh_lo - oh0 : 0;
        const std::size_t bottom = oh_hi > oh0 ? oh_hi - oh0 : 0;
        if (bottom <= top) {
          std::fill(dst, dst + ncol, 0.0);
          continue;
        }
        std::fill(dst, dst + top * g.wo, 0.0);
        std::fill(dst + bottom * g.wo, dst + ncol, 0.0);
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          const std::size_t ih = oh * g.stride.h + i - g.pad.h;
          const double* src = x + (c * g.h + ih) * g.w;
          double* row = dst + (oh - oh0) * g.wo;
          std::fill(row, row + ow_lo, 0.0);
          std::fill(row + std::max(ow_hi, ow_lo), row + g.wo, 0.0);
          if (g.stride.w == 1) {
            const std::size_t base = ow_lo + j - g.pad.w;
            std::copy(src + base, src + base + (ow_hi - ow_lo), row + ow_lo);
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
              row[ow] = src[ow * g.stride.w + j - g.pad.w];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, std::size_t oh0,
                std::size_t oh1, double* x) {
  const std::size_t ncol = (oh1 - oh0) * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      std::size_t oh_lo, oh_hi;
      valid_range(i, g.stride.h, g.pad.h, g.h, g.ho, oh_lo, oh_hi);
      oh_lo = std::max(oh_lo, oh0);
      oh_hi = std::min(oh_hi, oh1);
      for (std::size_t j = 0; j < g.kw; ++j) {
        std::size_t ow_lo, ow_hi;
        valid_range(j, g.stride.w, g.pad.w, g.w, g.wo, ow_lo, ow_hi);
        const double* src = cols + ((c * g.kh + i) * g.kw + j) * ncol;
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          const std::size_t ih = oh * g.stride.h + i - g.pad.h;
          double* dst = x + (c * g.h + ih) * g.w;
          const double* row = src + (oh - oh0) * g.wo;
          if (g.stride.w == 1) {
            double* d = dst + j - g.pad.w;
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) d[ow] += row[ow];
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
              dst[ow * g.stride.w + j - g.pad.w] += row[ow];
            }
          }
        }
      }
    }
  }
}

// Output rows per column block, sized so one block of im2col columns stays
// around 256 KiB.
std::size_t rows_per_block(const ConvGeom& g) {
  const std::size_t per_row = g.krows() * g.wo;
  return std::clamp<std::size_t>(32768 / std::max<std::size_t>(per_row, 1), 1,
                                 g.ho);
}

using StridedMap =
    Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using ConstStridedMap =
    Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

template <class F, class D>
Var unary(const Var& x, F&& f, D&& df, const char* op) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return ad::record(
      std::move(out), {x},
      [df](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        const Tensor& xin = parent_value(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          (*gx)[i] += n.grad[i] * df(xin[i], n.value[i]);
        }
      },
      op);
}

}  // namespace

Pair same_padding(std::size_t kh, std::size_t kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("same padding needs odd kernel sizes");
  }
  return {kh / 2, kw / 2};
}

Var conv2d(const Var& x, const Var& w, const Var& bias, Pair stride,
           Pair padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d kernel");
  if (xv.dim(1) != wv.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(xv.dim(1)) +
                     " channels but kernel " + shape_str(wv.shape()) +
                     " expects " + std::to_string(wv.dim(1)));
  }
  if (stride.h == 0 || stride.w == 0) throw ShapeError("conv2d: zero stride");
  ConvGeom g{};
  g.cin = xv.dim(1);
  g.h = xv.dim(2);
  g.w = xv.dim(3);
  g.cout = wv.dim(0);
  g.kh = wv.dim(2);
  g.kw = wv.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (g.h + 2 * padding.h < g.kh || g.w + 2 * padding.w < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(wv.shape()) +
                     " larger than padded input " + shape_str(xv.shape()));
  }
  g.ho = (g.h + 2 * padding.h - g.kh) / stride.h + 1;
  g.wo = (g.w + 2 * padding.w - g.kw) / stride.w + 1;
  const bool has_bias = bias.defined();
  if (has_bias) require_shape(bias.value(), {g.cout}, "conv2d bias");

  const std::size_t batch = xv.dim(0);
  const std::size_t in_size = g.cin * g.h * g.w;
  const std::size_t out_size = g.cout * g.ocols();
  const std::size_t block = rows_per_block(g);
  Tensor out({batch, g.cout, g.ho, g.wo});
  ConstMapMat W(wv.data(), g.cout, g.krows());
  Storage cols(g.pointwise() ? 0 : g.krows() * block * g.wo);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xn = xv.data() + n * in_size;
    double* yn = out.data() + n * out_size;
    if (g.pointwise()) {
      MapMat(yn, g.cout, g.ocols()).noalias() =
          W * ConstMapMat(xn, g.krows(), g.ocols());
    } else {
      for (std::size_t oh0 = 0; oh0 < g.ho; oh0 += block) {
        const std::size_t oh1 = std::min(g.ho, oh0 + block);
        const std::size_t nc = (oh1 - oh0) * g.wo;
        im2col(xn, g, oh0, oh1, cols.data());
        StridedMap Y(yn + oh0 * g.wo, g.cout, nc,
                     Eigen::OuterStride<>(g.ocols()));
        Y.noalias() = W * ConstMapMat(cols.data(), g.krows(), nc);
      }
    }
    if (has_bias) {
      MapMat Y(yn, g.cout, g.ocols());
      for (std::size_t c = 0; c < g.cout; ++c) {
        Y.row(c).array() += bias.value()[c];
      }
    }
  }

  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return ad::record(
      std::move(out), std::move(parents),
      [g, batch, in_size, out_size, has_bias, block](Node& node) {
        const Tensor& xin = parent_value(node, 0);
        const Tensor& win = parent_value(node, 1);
        Tensor* gx = parent_grad(node, 0);
        Tensor* gw = parent_grad(node, 1);
        Tensor* gb = has_bias ? parent_grad(node, 2) : nullptr;
        ConstMapMat W(win.data(), g.cout, g.krows());
        Storage cols(g.pointwise() ? 0 : g.krows() * block * g.wo);
        Storage dcols(cols.size());
        for (std::size_t n = 0; n < batch; ++n) {
          const double* dyn = node.grad.data() + n * out_size;
          const double* xn = xin.data() + n * in_size;
          if (gb) {
            ConstMapMat dY(dyn, g.cout, g.ocols());
            for (std::size_t c = 0; c < g.cout; ++c) (*gb)[c] += dY.row(c).sum();
          }
          if (g.pointwise()) {
            ConstMapMat dY(dyn, g.cout, g.ocols());
            if (gw) {
              MapMat(gw->data(), g.cout, g.krows()).noalias() +=
                  dY * ConstMapMat(xn, g.krows(), g.ocols()).transpose();
            }
            if (gx) {
              MapMat(gx->data() + n * in_size, g.cin, g.ocols()).noalias() +=
                  W.transpose() * dY;
            }
            continue;
          }
          for (std::size_t oh0 = 0; oh0 < g.ho; oh0 += block) {
            const std::size_t oh1 = std::min(g.ho, oh0 + block);
            const std::size_t nc = (oh1 - oh0) * g.wo;
            ConstStridedMap dY(dyn + oh0 * g.wo, g.cout, nc,
                               Eigen::OuterStride<>(g.ocols()));
            if (gw) {
              im2col(xn, g, oh0, oh1, cols.data());
              MapMat(gw->data(), g.cout, g.krows()).noalias() +=
                  dY * ConstMapMat(cols.data(), g.krows(), nc).transpose();
            }
            if (gx) {
              MapMat dC(dcols.data(), g.krows(), nc);
              dC.noalias() = W.transpose() * dY;
              col2im_add(dcols.data(), g, oh0, oh1, gx->data() + n * in_size);
            }
          }
        }
      },
      "conv2d");
}

Shape avg_pool2d_shape(const Shape& in, Pair window) {
  if (in.size() != 4) throw ShapeError("avg_pool2d: expected rank 4");
  if (window.h == 0 || window.w == 0) {
    throw ShapeError("avg_pool2d: window dims must be >= 1");
  }
  std::size_t kh = std::min(window.h, in[2]);
  std::size_t kw = std::min(window.w, in[3]);
  return {in[0], in[1], in[2] / kh, in[3] / kw};
}

Var avg_pool2d(const Var& x, Pair window) {
  const Tensor& xv = x.value();
  Shape os = avg_pool2d_shape(xv.shape(), window);
  const std::size_t kh = std::min(window.h, xv.dim(2));
  const std::size_t kw = std::min(window.w, xv.dim(3));
  const std::size_t planes = xv.dim(0) * xv.dim(1);
  const std::size_t H = xv.dim(2), W = xv.dim(3), Ho = os[2], Wo = os[3];
  const double inv = 1.0 / static_cast<double>(kh * kw);
  Tensor out(os);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t i = 0; i < kh; ++i) {
        const double* row = src + (oh * kh + i) * W;
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double s = 0.0;
          for (std::size_t j = 0; j < kw; ++j) s += row[ow * kw + j];
          dst[oh * Wo + ow] += s;
        }
      }
    }
  }
  for (double& v : out.values()) v *= inv;
  return ad::record(
      std::move(out), {x},
      [=](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        for (std::size_t p = 0; p < planes; ++p) {
          const double* g = n.grad.data() + p * Ho * Wo;
          double* dst = gx->data() + p * H * W;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t i = 0; i < kh; ++i) {
              double* row = dst + (oh * kh + i) * W;
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const double v = g[oh * Wo + ow] * inv;
                for (std::size_t j = 0; j < kw; ++j) row[ow * kw + j] += v;
              }
            }
          }
        }
      },
      "avg_pool2d");
}

Var glu(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || xv.dim(1) % 2 != 0) {
    throw ShapeError("glu: channel axis must be even, got " +
                     shape_str(xv.shape()));
  }
  Shape os = xv.shape();
  os[1] /= 2;
  const std::size_t batch = xv.dim(0);
  const std::size_t half = numel(os) / batch;  // elements per half
  Tensor out(os);
  Tensor gate(os);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* a = xv.data() + n * 2 * half;
    const double* b = a + half;
    double* o = out.data() + n * half;
    double* s = gate.data() + n * half;
    auto gv = Eigen::Map<Eigen::ArrayXd>(s, half);
    gv = (1.0 + (-Eigen::Map<const Eigen::ArrayXd>(b, half)).exp()).inverse();
    Eigen::Map<Eigen::ArrayXd>(o, half) =
        Eigen::Map<const Eigen::ArrayXd>(a, half) * gv;
  }
  return ad::record(
      std::move(out), {x},
      [gate = std::move(gate), batch, half](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        const Tensor& xin = parent_value(n, 0);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* a = xin.data() + b * 2 * half;
          const double* s = gate.data() + b * half;
          const double* g = n.grad.data() + b * half;
          double* da = gx->data() + b * 2 * half;
          double* db = da + half;
          for (std::size_t i = 0; i < half; ++i) {
            da[i] += g[i] * s[i];
            db[i] += g[i] * a[i] * s[i] * (1.0 - s[i]);
          }
        }
      },
      "glu");
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               double momentum, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("batch_norm: rank must be >= 2");
  const std::size_t N = xv.dim(0), C = xv.dim(1);
  const std::size_t inner = xv.size() / (N * C);
  const Shape cs{C};
  require_shape(gamma.value(), cs, "batch_norm gamma");
  require_shape(beta.value(), cs, "batch_norm beta");
  require_shape(running_mean, cs, "batch_norm running mean");
  require_shape(running_var, cs, "batch_norm running var");
  const double m = static_cast<double>(N * inner);

  std::vector<double> mu(C), invstd(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        s += ConstVec(xv.data() + (n * C + c) * inner, inner).sum();
      }
      const double mean = s / m;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        ss += (ConstVec(xv.data() + (n * C + c) * inner, inner).array() - mean)
                  .square()
                  .sum();
      }
      const double var = ss / m;
      mu[c] = mean;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? ss / (m - 1) : var;
      running_mean[c] = (1 - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1 - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean[c];
      invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor out(xv.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * inner;
      const double k = gamma.value()[c] * invstd[c];
      const double b = beta.value()[c] - k * mu[c];
      Eigen::Map<Eigen::ArrayXd>(out.data() + off, inner) =
          ConstVec(xv.data() + off, inner).array() * k + b;
    }
  }
  // The normalized input is recomputed from x during the backward pass.
  return ad::record(
      std::move(out), {x, gamma, beta},
      [mu = std::move(mu), invstd = std::move(invstd), N, C, inner, m,
       training](Node& node) {
        Tensor* gx = parent_grad(node, 0);
        Tensor* gg = parent_grad(node, 1);
        Tensor* gbeta = parent_grad(node, 2);
        const Tensor& xin = parent_value(node, 0);
        const Tensor& gam = parent_value(node, 1);
        const Tensor& dy = node.grad;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_x = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * inner;
            ConstVec d(dy.data() + off, inner);
            sum_dy += d.sum();
            sum_dy_x += d.dot(ConstVec(xin.data() + off, inner));
          }
          // sum(dy * xhat) = (sum(dy * x) - mu * sum(dy)) * invstd
          const double sum_dy_xhat = (sum_dy_x - mu[c] * sum_dy) * invstd[c];
          if (gg) (*gg)[c] += sum_dy_xhat;
          if (gbeta) (*gbeta)[c] += sum_dy;
          if (!gx) continue;
          const double k = gam[c] * invstd[c];
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * inner;
            auto gxa = Eigen::Map<Eigen::ArrayXd>(gx->data() + off, inner);
            auto d = ConstVec(dy.data() + off, inner).array();
            if (training) {
              auto xh = (ConstVec(xin.data() + off, inner).array() - mu[c]) *
                        invstd[c];
              gxa += k / m * (m * d - sum_dy - xh * sum_dy_xhat);
            } else {
              gxa += k * d;
            }
          }
        }
      },
      "batch_norm");
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double in, double) { return in > 0 ? 1.0 : 0.0; }, "relu");
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return sigmoid_scalar(v); },
      [](double, double out) { return out * (1.0 - out); }, "sigmoid");
}

Var add(const Var& a, const Var& b) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), "add");
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  Tensor out(os);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  walk2(os, sa, sb, [&](std::size_t i, std::size_t ja, std::size_t jb) {
    out[i] = av[ja] + bv[jb];
  });
  return ad::record(
      std::move(out), {a, b},
      [os, sa, sb](Node& n) {
        Tensor* ga = parent_grad(n, 0);
        Tensor* gb = parent_grad(n, 1);
        walk2(os, sa, sb, [&](std::size_t i, std::size_t ja, std::size_t jb) {
          if (ga) (*ga)[ja] += n.grad[i];
          if (gb) (*gb)[jb] += n.grad[i];
        });
      },
      "add");
}

Var mul(const Var& a, const Var& b) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), "mul");
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  Tensor out(os);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  walk2(os, sa, sb, [&](std::size_t i, std::size_t ja, std::size_t jb) {
    out[i] = av[ja] * bv[jb];
  });
  return ad::record(
      std::move(out), {a, b},
      [os, sa, sb](Node& n) {
        Tensor* ga = parent_grad(n, 0);
        Tensor* gb = parent_grad(n, 1);
        const Tensor& av = parent_value(n, 0);
        const Tensor& bv = parent_value(n, 1);
        walk2(os, sa, sb, [&](std::size_t i, std::size_t ja, std::size_t jb) {
          if (ga) (*ga)[ja] += n.grad[i] * bv[jb];
          if (gb) (*gb)[jb] += n.grad[i] * av[ja];
        });
      },
      "mul");
}

Var scale(const Var& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; }, "scale");
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return ad::record(
      std::move(out), {x},
      [](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += n.grad[i];
      },
      "reshape");
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  if (perm.size() != in.size()) throw ShapeError("permute: rank mismatch");
  std::vector<bool> used(perm.size(), false);
  Shape os(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= in.size() || used[perm[i]]) {
      throw ShapeError("permute: invalid axis permutation");
    }
    used[perm[i]] = true;
    os[i] = in[perm[i]];
  }
  auto in_strides = strides_of(in);
  std::vector<std::size_t> src(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) src[i] = in_strides[perm[i]];
  std::vector<std::size_t> zero(perm.size(), 0);
  Tensor out(os);
  const double* xv = x.value().data();
  walk2(os, src, zero, [&](std::size_t i, std::size_t j, std::size_t) {
    out[i] = xv[j];
  });
  return ad::record(
      std::move(out), {x},
      [os, src, zero](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        walk2(os, src, zero, [&](std::size_t i, std::size_t j, std::size_t) {
          (*gx)[j] += n.grad[i];
        });
      },
      "permute");
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape os = xs[0].shape();
  if (axis >= os.size()) throw ShapeError("concat: axis out of range");
  os[axis] = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != os.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != xs[0].shape()[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " +
                         shape_str(xs[0].shape()));
      }
    }
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= os[i];
  for (std::size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
  std::vector<std::size_t> widths;
  for (const Var& v : xs) widths.push_back(v.shape()[axis] * inner);
  const std::size_t total = os[axis] * inner;
  Tensor out(os);
  std::size_t col = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double* src = xs[k].value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * widths[k], src + (o + 1) * widths[k],
                out.data() + o * total + col);
    }
    col += widths[k];
  }
  return ad::record(
      std::move(out), xs,
      [widths, outer, total](Node& n) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (Tensor* g = parent_grad(n, k)) {
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = n.grad.data() + o * total + col;
              double* dst = g->data() + o * widths[k];
              for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
            }
          }
          col += widths[k];
        }
      },
      "concat");
}

namespace {

Shape reduced_shape(const Shape& in, const std::vector<std::size_t>& axes) {
  Shape os = in;
  for (std::size_t a : axes) {
    if (a >= in.size()) throw ShapeError("reduce: axis out of range");
    os[a] = 1;
  }
  return os;
}

}  // namespace

Var reduce_mean(const Var& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const Shape os = reduced_shape(in, axes);
  auto so = broadcast_strides(os, in);
  std::vector<std::size_t> si = strides_of(in);
  const double inv =
      static_cast<double>(numel(os)) / static_cast<double>(numel(in));
  Tensor out(os);
  const double* xv = x.value().data();
  walk2(in, si, so, [&](std::size_t, std::size_t ji, std::size_t jo) {
    out[jo] += xv[ji];
  });
  for (double& v : out.values()) v *= inv;
  return ad::record(
      std::move(out), {x},
      [in, si, so, inv](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        walk2(in, si, so, [&](std::size_t, std::size_t ji, std::size_t jo) {
          (*gx)[ji] += n.grad[jo] * inv;
        });
      },
      "reduce_mean");
}

Var reduce_max(const Var& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const Shape os = reduced_shape(in, axes);
  auto so = broadcast_strides(os, in);
  std::vector<std::size_t> si = strides_of(in);
  Tensor out(os, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(numel(os), 0);
  const double* xv = x.value().data();
  walk2(in, si, so, [&](std::size_t, std::size_t ji, std::size_t jo) {
    if (xv[ji] > out[jo]) {
      out[jo] = xv[ji];
      arg[jo] = ji;
    }
  });
  return ad::record(
      std::move(out), {x},
      [arg = std::move(arg)](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < arg.size(); ++o) {
          (*gx)[arg[o]] += n.grad[o];
        }
      },
      "reduce_max");
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return ad::record(
      Tensor({1}, std::vector<double>{s}), {x},
      [](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        for (double& v : gx->values()) v += n.grad[0];
      },
      "sum");
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_rank(xv, 2, "linear input");
  require_rank(wv, 2, "linear weight");
  if (xv.dim(1) != wv.dim(1)) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) +
                     " incompatible with weight " + shape_str(wv.shape()));
  }
  const std::size_t M = xv.dim(0), K = xv.dim(1), N = wv.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias) require_shape(bias.value(), {N}, "linear bias");
  Tensor out({M, N});
  MapMat Y(out.data(), M, N);
  Y.noalias() = ConstMapMat(xv.data(), M, K) *
                ConstMapMat(wv.data(), N, K).transpose();
  if (has_bias) {
    for (std::size_t r = 0; r < M; ++r) {
      for (std::size_t c = 0; c < N; ++c) out[r * N + c] += bias.value()[c];
    }
  }
  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return ad::record(
      std::move(out), std::move(parents),
      [M, K, N, has_bias](Node& n) {
        ConstMapMat dY(n.grad.data(), M, N);
        if (Tensor* gx = parent_grad(n, 0)) {
          MapMat(gx->data(), M, K).noalias() +=
              dY * ConstMapMat(parent_value(n, 1).data(), N, K);
        }
        if (Tensor* gw = parent_grad(n, 1)) {
          MapMat(gw->data(), N, K).noalias() +=
              dY.transpose() * ConstMapMat(parent_value(n, 0).data(), M, K);
        }
        if (has_bias) {
          if (Tensor* gb = parent_grad(n, 2)) {
            for (std::size_t c = 0; c < N; ++c) (*gb)[c] += dY.col(c).sum();
          }
        }
      },
      "linear");
}

Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training) {
  if (!training || p == 0.0) return x;
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p in [0,1)");
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor mask(x.shape());
  for (double& m : mask.values()) m = u(rng) < p ? 0.0 : keep_scale;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  return ad::record(
      std::move(out), {x},
      [mask = std::move(mask)](Node& n) {
        Tensor* gx = parent_grad(n, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < mask.size(); ++i) {
          (*gx)[i] += n.grad[i] * mask[i];
        }
      },
      "dropout");
}

namespace {

// Saved activations of one GRU direction.
struct GruTape {
  Tensor r, z, cand, hn, hprev;  // each [N*T, H], row index n*T + t
};

void check_gru_weights(const GruWeights& w, std::size_t F, std::size_t H) {
  require_shape(w.w_ih.value(), {3 * H, F}, "gru w_ih");
  require_shape(w.w_hh.value(), {3 * H, H}, "gru w_hh");
  require_shape(w.b_ih.value(), {3 * H}, "gru b_ih");
  require_shape(w.b_hh.value(), {3 * H}, "gru b_hh");
}

void gru_forward(const Tensor& x, const GruWeights& w, bool reverse,
                 std::size_t H, std::size_t col_offset, Tensor& out,
                 GruTape& tape) {
  const std::size_t N = x.dim(0), T = x.dim(1), F = x.dim(2);
  const std::size_t rows = N * T;
  RowMat gx = ConstMapMat(x.data(), rows, F) *
              ConstMapMat(w.w_ih.value().data(), 3 * H, F).transpose();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < 3 * H; ++k) gx(r, k) += w.b_ih.value()[k];
  }
  ConstMapMat Whh(w.w_hh.value().data(), 3 * H, H);
  tape.r = Tensor({rows, H});
  tape.z = Tensor({rows, H});
  tape.cand = Tensor({rows, H});
  tape.hn = Tensor({rows, H});
  tape.hprev = Tensor({rows, H});
  RowMat h = RowMat::Zero(N, H);
  RowMat gh(N, 3 * H);
  const std::size_t out_w = out.dim(2);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    gh.noalias() = h * Whh.transpose();
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t row = n * T + t;
      for (std::size_t k = 0; k < H; ++k) {
        const double hr = gh(n, k) + w.b_hh.value()[k];
        const double hz = gh(n, H + k) + w.b_hh.value()[H + k];
        const double hn = gh(n, 2 * H + k) + w.b_hh.value()[2 * H + k];
        const double r = sigmoid_scalar(gx(row, k) + hr);
        const double z = sigmoid_scalar(gx(row, H + k) + hz);
        const double c = std::tanh(gx(row, 2 * H + k) + r * hn);
        const double hp = h(n, k);
        tape.r[row * H + k] = r;
        tape.z[row * H + k] = z;
        tape.cand[row * H + k] = c;
        tape.hn[row * H + k] = hn;
        tape.hprev[row * H + k] = hp;
        const double hnew = (1.0 - z) * c + z * hp;
        h(n, k) = hnew;
        out[(n * T + t) * out_w + col_offset + k] = hnew;
      }
    }
  }
}

void gru_backward(const Tensor& x, const GruWeights& w, const GruTape& tape,
                  bool reverse, std::size_t H, std::size_t col_offset,
                  const Tensor& dout, Tensor* dx, Tensor* dwih, Tensor* dwhh,
                  Tensor* dbih, Tensor* dbhh) {
  const std::size_t N = x.dim(0), T = x.dim(1), F = x.dim(2);
  const std::size_t rows = N * T;
  const std::size_t out_w = dout.dim(2);
  ConstMapMat Whh(w.w_hh.value().data(), 3 * H, H);
  RowMat dgx(rows, 3 * H);  // input-side pre-activation grads
  RowMat dgh(rows, 3 * H);  // hidden-side pre-activation grads
  RowMat dh = RowMat::Zero(N, H);
  RowMat dgh_t(N, 3 * H);
  for (std::size_t s = T; s-- > 0;) {
    const std::size_t t = reverse ? T - 1 - s : s;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t row = n * T + t;
      for (std::size_t k = 0; k < H; ++k) {
        const std::size_t i = row * H + k;
        const double g = dh(n, k) + dout[(n * T + t) * out_w + col_offset + k];
        const double r = tape.r[i], z = tape.z[i], c = tape.cand[i];
        const double dc = g * (1.0 - z);
        const double dz = g * (tape.hprev[i] - c);
        const double dac = dc * (1.0 - c * c);
        const double dr = dac * tape.hn[i];
        const double dar = dr * r * (1.0 - r);
        const double daz = dz * z * (1.0 - z);
        dgx(row, k) = dar;
        dgx(row, H + k) = daz;
        dgx(row, 2 * H + k) = dac;
        dgh_t(n, k) = dar;
        dgh_t(n, H + k) = daz;
        dgh_t(n, 2 * H + k) = dac * r;
        dh(n, k) = g * z;  // direct path through the update gate
      }
      dgh.row(row) = dgh_t.row(n);
    }
    dh.noalias() += dgh_t * Whh;
  }
  if (dwhh) {
    MapMat(dwhh->data(), 3 * H, H).noalias() +=
        dgh.transpose() * ConstMapMat(tape.hprev.data(), rows, H);
  }
  if (dbhh) {
    for (std::size_t k = 0; k < 3 * H; ++k) (*dbhh)[k] += dgh.col(k).sum();
  }
  if (dwih) {
    MapMat(dwih->data(), 3 * H, F).noalias() +=
        dgx.transpose() * ConstMapMat(x.data(), rows, F);
  }
  if (dbih) {
    for (std::size_t k = 0; k < 3 * H; ++k) (*dbih)[k] += dgx.col(k).sum();
  }
  if (dx) {
    MapMat(dx->data(), rows, F).noalias() +=
        dgx * ConstMapMat(w.w_ih.value().data(), 3 * H, F);
  }
}

}  // namespace

Var gru_bidirectional(const Var& x, const GruWeights& fwd,
                      const GruWeights& bwd) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "gru input");
  const std::size_t N = xv.dim(0), T = xv.dim(1), F = xv.dim(2);
  if (T == 0) throw ShapeError("gru: empty sequence");
  const std::size_t H = fwd.w_hh.value().dim(1);
  check_gru_weights(fwd, F, H);
  check_gru_weights(bwd, F, H);
  Tensor out({N, T, 2 * H});
  auto tapes = std::make_shared<std::array<GruTape, 2>>();
  gru_forward(xv, fwd, false, H, 0, out, (*tapes)[0]);
  gru_forward(xv, bwd, true, H, H, out, (*tapes)[1]);
  return ad::record(
      std::move(out),
      {x, fwd.w_ih, fwd.w_hh, fwd.b_ih, fwd.b_hh, bwd.w_ih, bwd.w_hh, bwd.b_ih,
       bwd.b_hh},
      [tapes, H](Node& n) {
        const Tensor& xin = parent_value(n, 0);
        Tensor* dx = parent_grad(n, 0);
        for (std::size_t d = 0; d < 2; ++d) {
          const std::size_t base = 1 + 4 * d;
          GruWeights w{ad::Var(n.parents[base]), ad::Var(n.parents[base + 1]),
                       ad::Var(n.parents[base + 2]),
                       ad::Var(n.parents[base + 3])};
          gru_backward(xin, w, (*tapes)[d], d == 1, H, d * H, n.grad, dx,
                       parent_grad(n, base), parent_grad(n, base + 1),
                       parent_grad(n, base + 2), parent_grad(n, base + 3));
        }
      },
      "gru_bidirectional");
}

Var weighted_pool(const Var& p) {
  const Tensor& pv = p.value();
  require_rank(pv, 3, "weighted_pool");
  const std::size_t N = pv.dim(0), T = pv.dim(1), C = pv.dim(2);
  Tensor out({N, C});
  Tensor s1({N, C}), s2({N, C});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const double v = pv[(n * T + t) * C + c];
        s1[n * C + c] += v;
        s2[n * C + c] += v * v;
      }
    }
  }
  for (std::size_t i = 0; i < N * C; ++i) {
    out[i] = s1[i] == 0.0 ? 0.0 : s2[i] / s1[i];
  }
  return ad::record(
      std::move(out), {p},
      [s1 = std::move(s1), s2 = std::move(s2), N, T, C](Node& n) {
        Tensor* gp = parent_grad(n, 0);
        if (!gp) return;
        const Tensor& pin = parent_value(n, 0);
        for (std::size_t b = 0; b < N; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const double a = s1[b * C + c];
            if (a == 0.0) continue;
            const double q = s2[b * C + c];
            const double g = n.grad[b * C + c];
            for (std::size_t t = 0; t < T; ++t) {
              const std::size_t i = (b * T + t) * C + c;
              (*gp)[i] += g * (2.0 * pin[i] * a - q) / (a * a);
            }
          }
        }
      },
      "weighted_pool");
}

namespace {

Var bce_weighted(const Var& pred, const Tensor& target,
                 std::vector<double> cell_weight, std::size_t row_size) {
  require_shape(target, pred.shape(), "bce target");
  const Tensor& pv = pred.value();
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double w = cell_weight[i / row_size];
    if (w == 0.0) continue;
    const double p = std::clamp(pv[i], kProbFloor, 1.0 - kProbFloor);
    const double y = target[i];
    total += -w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return ad::record(
      Tensor({1}, std::vector<double>{total}), {pred},
      [target, cell_weight = std::move(cell_weight), row_size](Node& n) {
        Tensor* gp = parent_grad(n, 0);
        if (!gp) return;
        const Tensor& pin = parent_value(n, 0);
        const double g = n.grad[0];
        for (std::size_t i = 0; i < pin.size(); ++i) {
          const double w = cell_weight[i / row_size];
          if (w == 0.0) continue;
          const double p = pin[i];
          if (p < kProbFloor || p > 1.0 - kProbFloor) continue;  // clamped
          const double y = target[i];
          (*gp)[i] += g * w * (p - y) / (p * (1.0 - p));
        }
      },
      "bce");
}

}  // namespace

Var bce_sum(const Var& pred, const Tensor& target,
            const std::vector<std::size_t>& rows) {
  if (pred.value().rank() < 1) throw ShapeError("bce_sum: needs rank >= 1");
  const std::size_t N = pred.shape()[0];
  const std::size_t row_size = N == 0 ? 1 : pred.value().size() / N;
  std::vector<double> weight(N, 0.0);
  for (std::size_t r : rows) {
    if (r >= N) throw ShapeError("bce_sum: row index out of range");
    weight[r] += 1.0 / static_cast<double>(row_size);
  }
  return bce_weighted(pred, target, std::move(weight), row_size);
}

Var bce_mean(const Var& pred, const Tensor& target) {
  const std::size_t n = pred.value().size();
  return bce_weighted(pred, target, {1.0 / static_cast<double>(n)}, n);
}

Var mse(const Var& a, const Tensor& target) {
  require_shape(target, a.shape(), "mse target");
  const Tensor& av = a.value();
  const double inv = 1.0 / static_cast<double>(av.size());
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - target[i];
    total += d * d;
  }
  return ad::record(
      Tensor({1}, std::vector<double>{total * inv}), {a},
      [target, inv](Node& n) {
        Tensor* ga = parent_grad(n, 0);
        if (!ga) return;
        const Tensor& av = parent_value(n, 0);
        for (std::size_t i = 0; i < av.size(); ++i) {
          (*ga)[i] += n.grad[0] * 2.0 * (av[i] - target[i]) * inv;
        }
      },
      "mse");
}

}  // namespace sed::ops
