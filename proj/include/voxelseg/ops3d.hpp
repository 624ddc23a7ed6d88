/* Copyright 2026 The voxelseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "voxelseg/conv3d.hpp"
#include "voxelseg/errors.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

enum class Mode { kTrain, kEval };

namespace detail {

inline const char* axis_name(std::size_t a) { return a == 0 ? "depth" : (a == 1 ? "height" : "width"); }

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + " expects [C,D,H,W], got " + shape_str(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Max pooling

struct PoolSpec {
  Extent3 window{2, 2, 2};
  Extent3 stride{2, 2, 2};
};

template <typename T>
struct MaxPoolResult {
  Tensor<T> y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
  Shape input_shape;
};

template <typename T>
MaxPoolResult<T> maxpool3d(const Tensor<T>& x, const PoolSpec& spec = {}) {
  detail::require_rank4(x, "maxpool3d");
  const Extent3 in = x.spatial();
  std::size_t out[3];
  for (std::size_t a = 0; a < 3; ++a) {
    if (spec.window[a] == 0 || spec.stride[a] == 0) throw ConfigError("maxpool3d window/stride must be positive");
    if (in[a] < spec.window[a] || (in[a] - spec.window[a]) % spec.stride[a] != 0 ||
        (spec.window[a] == spec.stride[a] && in[a] % spec.window[a] != 0)) {
      throw ShapeError("maxpool3d: " + std::string(detail::axis_name(a)) + " extent " + std::to_string(in[a]) +
                       " is not divisible by window " + std::to_string(spec.window[a]));
    }
    out[a] = (in[a] - spec.window[a]) / spec.stride[a] + 1;
  }
  MaxPoolResult<T> r;
  r.input_shape = x.shape();
  r.y = Tensor<T>({x.channels(), out[0], out[1], out[2]});
  r.argmax.resize(r.y.size());
  std::size_t k = 0;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t od = 0; od < out[0]; ++od) {
      for (std::size_t oh = 0; oh < out[1]; ++oh) {
        for (std::size_t ow = 0; ow < out[2]; ++ow, ++k) {
          std::size_t best = 0;
          T best_v = T(0);
          bool first = true;
          // Scan in increasing flat order; strict > keeps the lowest index on ties.
          for (std::size_t i = 0; i < spec.window.d; ++i) {
            for (std::size_t j = 0; j < spec.window.h; ++j) {
              for (std::size_t l = 0; l < spec.window.w; ++l) {
                const std::size_t d = od * spec.stride.d + i, h = oh * spec.stride.h + j,
                                  w = ow * spec.stride.w + l;
                const std::size_t idx = ((c * in.d + d) * in.h + h) * in.w + w;
                if (first || x[idx] > best_v) {
                  best_v = x[idx];
                  best = idx;
                  first = false;
                }
              }
            }
          }
          r.y[k] = best_v;
          r.argmax[k] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const MaxPoolResult<T>& fwd, const Tensor<T>& dy) {
  fwd.y.require_same_shape(dy, "maxpool3d_backward");
  Tensor<T> dx(fwd.input_shape);
  for (std::size_t k = 0; k < dy.size(); ++k) dx[fwd.argmax[k]] += dy[k];
  return dx;
}

// ---------------------------------------------------------------------------
// Adaptive average pooling: axis of length n split into `bins` cells with
// boundaries floor(i * n / bins).

template <typename T>
Tensor<T> adaptive_avgpool3d(const Tensor<T>& x, const Extent3& bins) {
  detail::require_rank4(x, "adaptive_avgpool3d");
  const Extent3 in = x.spatial();
  for (std::size_t a = 0; a < 3; ++a) {
    if (bins[a] == 0) throw ConfigError("adaptive_avgpool3d: zero bins on " + std::string(detail::axis_name(a)));
    if (bins[a] > in[a]) {
      throw ConfigError("adaptive_avgpool3d: " + std::to_string(bins[a]) + " bins exceed " +
                        std::string(detail::axis_name(a)) + " extent " + std::to_string(in[a]));
    }
  }
  auto lo = [](std::size_t i, std::size_t n, std::size_t b) { return i * n / b; };
  Tensor<T> y({x.channels(), bins.d, bins.h, bins.w});
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t bd = 0; bd < bins.d; ++bd) {
      for (std::size_t bh = 0; bh < bins.h; ++bh) {
        for (std::size_t bw = 0; bw < bins.w; ++bw) {
          T s = T(0);
          std::size_t n = 0;
          for (std::size_t d = lo(bd, in.d, bins.d); d < lo(bd + 1, in.d, bins.d); ++d) {
            for (std::size_t h = lo(bh, in.h, bins.h); h < lo(bh + 1, in.h, bins.h); ++h) {
              for (std::size_t w = lo(bw, in.w, bins.w); w < lo(bw + 1, in.w, bins.w); ++w) {
                s += x.at(c, d, h, w);
                ++n;
              }
            }
          }
          y.at(c, bd, bh, bw) = s / static_cast<T>(n);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> adaptive_avgpool3d_backward(const Shape& input_shape, const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  const Extent3 in = dx.spatial();
  const Extent3 bins = dy.spatial();
  auto lo = [](std::size_t i, std::size_t n, std::size_t b) { return i * n / b; };
  for (std::size_t c = 0; c < dx.channels(); ++c) {
    for (std::size_t bd = 0; bd < bins.d; ++bd) {
      const std::size_t d0 = lo(bd, in.d, bins.d), d1 = lo(bd + 1, in.d, bins.d);
      for (std::size_t bh = 0; bh < bins.h; ++bh) {
        const std::size_t h0 = lo(bh, in.h, bins.h), h1 = lo(bh + 1, in.h, bins.h);
        for (std::size_t bw = 0; bw < bins.w; ++bw) {
          const std::size_t w0 = lo(bw, in.w, bins.w), w1 = lo(bw + 1, in.w, bins.w);
          const T share = dy.at(c, bd, bh, bw) / static_cast<T>((d1 - d0) * (h1 - h0) * (w1 - w0));
          for (std::size_t d = d0; d < d1; ++d)
            for (std::size_t h = h0; h < h1; ++h)
              for (std::size_t w = w0; w < w1; ++w) dx.at(c, d, h, w) += share;
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour resampling. Output index o reads input floor(o * in / out),
// which for out = in * f is plain f-fold replication.

template <typename T>
Tensor<T> resize_nearest3d(const Tensor<T>& x, const Extent3& target) {
  detail::require_rank4(x, "resize_nearest3d");
  const Extent3 in = x.spatial();
  if (target.numel() == 0) throw ShapeError("resize_nearest3d: zero target extent");
  Tensor<T> y({x.channels(), target.d, target.h, target.w});
  std::vector<std::size_t> mh(target.h), mw(target.w);
  for (std::size_t h = 0; h < target.h; ++h) mh[h] = h * in.h / target.h;
  for (std::size_t w = 0; w < target.w; ++w) mw[w] = w * in.w / target.w;
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t d = 0; d < target.d; ++d) {
      const std::size_t sd = d * in.d / target.d;
      for (std::size_t h = 0; h < target.h; ++h)
        for (std::size_t w = 0; w < target.w; ++w) y.at(c, d, h, w) = x.at(c, sd, mh[h], mw[w]);
    }
  return y;
}

template <typename T>
Tensor<T> resize_nearest3d_backward(const Shape& input_shape, const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  const Extent3 in = dx.spatial();
  const Extent3 out = dy.spatial();
  for (std::size_t c = 0; c < dx.channels(); ++c)
    for (std::size_t d = 0; d < out.d; ++d)
      for (std::size_t h = 0; h < out.h; ++h)
        for (std::size_t w = 0; w < out.w; ++w)
          dx.at(c, d * in.d / out.d, h * in.h / out.h, w * in.w / out.w) += dy.at(c, d, h, w);
  return dx;
}

template <typename T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x, const Extent3& factor) {
  detail::require_rank4(x, "upsample_nearest3d");
  for (std::size_t a = 0; a < 3; ++a) {
    if (factor[a] == 0) throw ShapeError("upsample_nearest3d: zero factor on " + std::string(detail::axis_name(a)));
  }
  const Extent3 in = x.spatial();
  return resize_nearest3d(x, {in.d * factor.d, in.h * factor.h, in.w * factor.w});
}

template <typename T>
Tensor<T> upsample_nearest3d_backward(const Shape& input_shape, const Tensor<T>& dy) {
  return resize_nearest3d_backward(input_shape, dy);
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { kRelu, kSigmoid };

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y = x;
  if (kind == Activation::kRelu) {
    for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  } else {
    for (auto& v : y.data()) v = sigmoid(v);
  }
  return y;
}

// relu uses the forward input (derivative 0 at 0); sigmoid uses the forward output.
template <typename T>
Tensor<T> activation_backward(Activation kind, const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  if (kind == Activation::kRelu) {
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(x[i] > T(0))) dx[i] = T(0);
    }
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (T(1) - y[i]);
  }
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::kRelu);
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  return activation_backward(Activation::kRelu, x, x, dy);
}

// ---------------------------------------------------------------------------
// Inverted dropout: train mode keeps each element with probability 1 - rate and
// scales survivors by 1 / (1 - rate); eval mode is the identity.

template <typename T>
struct DropoutResult {
  Tensor<T> y;
  std::vector<T> scale;  // per-element multiplier; empty means identity
};

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Mode mode, RngStream& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  DropoutResult<T> r{x, {}};
  if (mode == Mode::kEval || rate == 0.0) return r;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  r.scale.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.scale[i] = rng.uniform() < rate ? T(0) : keep_scale;
    r.y[i] *= r.scale[i];
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const std::vector<T>& scale, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  if (!scale.empty()) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Per-channel normalization with learnable scale/shift. With no batch axis the
// statistics are taken over each channel's voxels, in both modes.

template <typename T>
struct BatchNormResult {
  Tensor<T> y;
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <typename T>
BatchNormResult<T> batchnorm3d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_rank4(x, "batchnorm3d");
  if (gamma.size() != x.channels() || beta.size() != x.channels()) {
    throw ShapeError("batchnorm3d: scale/shift length must equal channel count " + std::to_string(x.channels()));
  }
  const std::size_t C = x.channels(), N = x.size() / C;
  BatchNormResult<T> r{Tensor<T>(x.shape()), Tensor<T>(x.shape()), std::vector<T>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    const T* p = x.channel_ptr(c);
    T mean = T(0);
    for (std::size_t v = 0; v < N; ++v) mean += p[v];
    mean /= static_cast<T>(N);
    T var = T(0);
    for (std::size_t v = 0; v < N; ++v) var += (p[v] - mean) * (p[v] - mean);
    var /= static_cast<T>(N);
    const T inv = T(1) / std::sqrt(var + eps);
    r.inv_std[c] = inv;
    T* xh = r.xhat.channel_ptr(c);
    T* y = r.y.channel_ptr(c);
    for (std::size_t v = 0; v < N; ++v) {
      xh[v] = (p[v] - mean) * inv;
      y[v] = gamma[c] * xh[v] + beta[c];
    }
  }
  return r;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
BatchNormGrads<T> batchnorm3d_backward(const BatchNormResult<T>& fwd, const Tensor<T>& gamma, const Tensor<T>& dy) {
  const std::size_t C = dy.channels(), N = dy.size() / C;
  BatchNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>({C}), Tensor<T>({C})};
  for (std::size_t c = 0; c < C; ++c) {
    const T* d = dy.channel_ptr(c);
    const T* xh = fwd.xhat.channel_ptr(c);
    T sum_d = T(0), sum_dx = T(0);
    for (std::size_t v = 0; v < N; ++v) {
      sum_d += d[v];
      sum_dx += d[v] * xh[v];
    }
    g.dbeta[c] = sum_d;
    g.dgamma[c] = sum_dx;
    const T k = gamma[c] * fwd.inv_std[c] / static_cast<T>(N);
    T* dx = g.dx.channel_ptr(c);
    for (std::size_t v = 0; v < N; ++v) {
      dx[v] = k * (static_cast<T>(N) * d[v] - sum_d - xh[v] * sum_dx);
    }
  }
  return g;
}

}  // namespace voxelseg
