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

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "voxelseg/conv3d.hpp"
#include "voxelseg/errors.hpp"
#include "voxelseg/ops3d.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

// ===========================================================================
// Concurrent channel and spatial squeeze-and-excitation (csSE).
//
//   channel gate  g_c = sigmoid(W2 relu(W1 avgpool(x) + b1) + b2)   one per channel
//   spatial gate  g_s = sigmoid(1x1x1 conv(x; wS, bS))              one per voxel
//   out = g_c * x + g_s * x   (kAdd)   or   max(g_c * x, g_s * x)   (kMax)
// ===========================================================================

enum class CsSECombine { kAdd, kMax };

template <typename T>
struct CsSEParams {
  Tensor<T> fc1_weight;      // [C/r, C]
  Tensor<T> fc1_bias;        // [C/r]
  Tensor<T> fc2_weight;      // [C, C/r]
  Tensor<T> fc2_bias;        // [C]
  Tensor<T> spatial_weight;  // [1, C, 1, 1, 1]
  Tensor<T> spatial_bias;    // [1]
  CsSECombine combine = CsSECombine::kAdd;

  std::size_t channels() const { return fc1_weight.extent(1); }
};

inline std::size_t csse_hidden(std::size_t channels, std::size_t reduction) {
  if (reduction == 0) throw ConfigError("csSE reduction ratio must be >= 1");
  if (channels % reduction != 0) {
    throw ConfigError("csSE channel count " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
  return channels / reduction;
}

template <typename T>
CsSEParams<T> make_csse_params(std::size_t channels, std::size_t reduction, CsSECombine combine) {
  const std::size_t hidden = csse_hidden(channels, reduction);
  return {Tensor<T>({hidden, channels}), Tensor<T>({hidden}), Tensor<T>({channels, hidden}),
          Tensor<T>({channels}),         Tensor<T>({1, channels, 1, 1, 1}), Tensor<T>({1}),
          combine};
}

template <typename T>
struct CsSECache {
  Tensor<T> x;
  std::vector<T> squeeze;     // [C]
  std::vector<T> hidden_pre;  // [C/r]
  std::vector<T> hidden;      // [C/r]
  std::vector<T> gate_c;      // [C]
  std::vector<T> gate_s;      // [D*H*W]
};

template <typename T>
struct CsSEResult {
  Tensor<T> y;
  CsSECache<T> cache;
};

template <typename T>
struct CsSEGrads {
  Tensor<T> dx;
  CsSEParams<T> dparams;
};

template <typename T>
CsSEResult<T> csse_apply(const Tensor<T>& x, const CsSEParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("csse_apply expects [C,D,H,W], got " + shape_str(x.shape()));
  const std::size_t C = p.channels();
  const std::size_t R = p.fc1_weight.extent(0);
  if (x.channels() != C) {
    throw ShapeError("csse_apply: input has " + std::to_string(x.channels()) + " channels, block expects " +
                     std::to_string(C));
  }
  const std::size_t N = x.size() / C;
  CsSEResult<T> r;
  CsSECache<T>& k = r.cache;
  k.x = x;
  k.squeeze.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    const T* xp = x.channel_ptr(c);
    T s = T(0);
    for (std::size_t v = 0; v < N; ++v) s += xp[v];
    k.squeeze[c] = s / static_cast<T>(N);
  }
  k.hidden_pre.assign(R, T(0));
  k.hidden.assign(R, T(0));
  for (std::size_t j = 0; j < R; ++j) {
    T s = p.fc1_bias[j];
    for (std::size_t c = 0; c < C; ++c) s += p.fc1_weight[j * C + c] * k.squeeze[c];
    k.hidden_pre[j] = s;
    k.hidden[j] = s > T(0) ? s : T(0);
  }
  k.gate_c.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    T s = p.fc2_bias[c];
    for (std::size_t j = 0; j < R; ++j) s += p.fc2_weight[c * R + j] * k.hidden[j];
    k.gate_c[c] = sigmoid(s);
  }
  k.gate_s.assign(N, p.spatial_bias[0]);
  for (std::size_t c = 0; c < C; ++c) {
    const T wc = p.spatial_weight[c];
    const T* xp = x.channel_ptr(c);
    for (std::size_t v = 0; v < N; ++v) k.gate_s[v] += wc * xp[v];
  }
  for (auto& g : k.gate_s) g = sigmoid(g);

  r.y = Tensor<T>(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T* xp = x.channel_ptr(c);
    T* yp = r.y.channel_ptr(c);
    const T gc = k.gate_c[c];
    if (p.combine == CsSECombine::kAdd) {
      for (std::size_t v = 0; v < N; ++v) yp[v] = gc * xp[v] + k.gate_s[v] * xp[v];
    } else {
      for (std::size_t v = 0; v < N; ++v) yp[v] = std::max(gc * xp[v], k.gate_s[v] * xp[v]);
    }
  }
  return r;
}

template <typename T>
CsSEGrads<T> csse_backward(const CsSEParams<T>& p, const CsSECache<T>& k, const Tensor<T>& dy) {
  k.x.require_same_shape(dy, "csse_backward");
  const std::size_t C = p.channels();
  const std::size_t R = p.fc1_weight.extent(0);
  const std::size_t N = dy.size() / C;
  CsSEGrads<T> g{Tensor<T>(dy.shape()), make_csse_params<T>(C, C / R, p.combine)};

  // Split the upstream gradient between the two branches.
  std::vector<T> dgate_c(C, T(0));
  std::vector<T> dgate_s(N, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    const T* xp = k.x.channel_ptr(c);
    const T* d = dy.channel_ptr(c);
    T* dx = g.dx.channel_ptr(c);
    const T gc = k.gate_c[c];
    T acc = T(0);
    for (std::size_t v = 0; v < N; ++v) {
      const T gs = k.gate_s[v];
      T to_c = d[v], to_s = d[v];
      if (p.combine == CsSECombine::kMax) {
        const bool channel_wins = gc * xp[v] >= gs * xp[v];
        to_c = channel_wins ? d[v] : T(0);
        to_s = channel_wins ? T(0) : d[v];
      }
      dx[v] = gc * to_c + gs * to_s;
      acc += to_c * xp[v];
      dgate_s[v] += to_s * xp[v];
    }
    dgate_c[c] = acc;
  }

  // Channel branch back through the excitation MLP and the squeeze.
  std::vector<T> dhidden(R, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    const T da = dgate_c[c] * k.gate_c[c] * (T(1) - k.gate_c[c]);
    g.dparams.fc2_bias[c] = da;
    for (std::size_t j = 0; j < R; ++j) {
      g.dparams.fc2_weight[c * R + j] = da * k.hidden[j];
      dhidden[j] += p.fc2_weight[c * R + j] * da;
    }
  }
  std::vector<T> dsqueeze(C, T(0));
  for (std::size_t j = 0; j < R; ++j) {
    const T da = k.hidden_pre[j] > T(0) ? dhidden[j] : T(0);
    g.dparams.fc1_bias[j] = da;
    for (std::size_t c = 0; c < C; ++c) {
      g.dparams.fc1_weight[j * C + c] = da * k.squeeze[c];
      dsqueeze[c] += p.fc1_weight[j * C + c] * da;
    }
  }

  // Spatial branch back through the 1x1x1 projection.
  T dbias = T(0);
  for (std::size_t v = 0; v < N; ++v) {
    dgate_s[v] *= k.gate_s[v] * (T(1) - k.gate_s[v]);
    dbias += dgate_s[v];
  }
  g.dparams.spatial_bias[0] = dbias;
  for (std::size_t c = 0; c < C; ++c) {
    const T* xp = k.x.channel_ptr(c);
    T* dx = g.dx.channel_ptr(c);
    const T wc = p.spatial_weight[c];
    const T dmean = dsqueeze[c] / static_cast<T>(N);
    T dw = T(0);
    for (std::size_t v = 0; v < N; ++v) {
      dw += dgate_s[v] * xp[v];
      dx[v] += wc * dgate_s[v] + dmean;
    }
    g.dparams.spatial_weight[c] = dw;
  }
  return g;
}

// ===========================================================================
// Pyramid pooling.
//
// For every bin setting b: adaptive average pool to b, 1x1x1 conv C -> Cb,
// relu, nearest resize back to the input extents. The input and all branch
// maps are concatenated and fused by a 1x1x1 conv back to C channels + relu.
// ===========================================================================

inline std::size_t pyp_branch_channels(std::size_t channels, std::size_t branches) {
  if (branches == 0) throw ConfigError("pyramid pooling needs at least one bin setting");
  return std::max<std::size_t>(1, channels / branches);
}

template <typename T>
struct PyPParams {
  std::vector<Extent3> bins;
  std::vector<ConvParams<T>> branches;  // 1x1x1, C -> Cb
  ConvParams<T> fuse;                   // 1x1x1, C + n*Cb -> C

  std::size_t channels() const { return fuse.weight.extent(0); }
};

inline void check_pyp_bins(const std::vector<Extent3>& bins) {
  if (bins.empty()) throw ConfigError("pyramid pooling needs at least one bin setting");
  for (std::size_t i = 1; i < bins.size(); ++i) {
    if (!(bins[i].d > bins[i - 1].d && bins[i].h > bins[i - 1].h && bins[i].w > bins[i - 1].w)) {
      throw ConfigError("pyramid pooling bins must be strictly increasing");
    }
  }
}

template <typename T>
PyPParams<T> make_pyp_params(std::size_t channels, const std::vector<Extent3>& bins) {
  check_pyp_bins(bins);
  const std::size_t cb = pyp_branch_channels(channels, bins.size());
  PyPParams<T> p;
  p.bins = bins;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    p.branches.push_back({Tensor<T>({cb, channels, 1, 1, 1}), Tensor<T>({cb}), ConvOptions::valid()});
  }
  p.fuse = {Tensor<T>({channels, channels + bins.size() * cb, 1, 1, 1}), Tensor<T>({channels}), ConvOptions::valid()};
  return p;
}

template <typename T>
struct PyPBranchCache {
  Tensor<T> pooled;
  Tensor<T> pre;  // conv output before relu
  Shape act_shape;
};

template <typename T>
struct PyPCache {
  Shape x_shape;
  std::vector<PyPBranchCache<T>> branches;
  Tensor<T> cat;
  Tensor<T> fuse_pre;
};

template <typename T>
struct PyPResult {
  Tensor<T> y;
  PyPCache<T> cache;
};

template <typename T>
struct PyPGrads {
  Tensor<T> dx;
  std::vector<ConvGrads<T>> branches;  // dx fields unused
  ConvGrads<T> fuse;
};

template <typename T>
PyPResult<T> pyramid_pool_apply(const Tensor<T>& x, const PyPParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("pyramid_pool_apply expects [C,D,H,W], got " + shape_str(x.shape()));
  if (x.channels() != p.channels()) {
    throw ShapeError("pyramid_pool_apply: input has " + std::to_string(x.channels()) + " channels, block expects " +
                     std::to_string(p.channels()));
  }
  const Extent3 ext = x.spatial();
  for (const auto& b : p.bins) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (b[a] > ext[a]) {
        throw ConfigError("pyramid bin " + std::to_string(b[a]) + " exceeds " + detail::axis_name(a) + " extent " +
                          std::to_string(ext[a]));
      }
    }
  }
  PyPResult<T> r;
  r.cache.x_shape = x.shape();
  Tensor<T> cat = x;
  for (std::size_t i = 0; i < p.bins.size(); ++i) {
    PyPBranchCache<T> bc;
    bc.pooled = adaptive_avgpool3d(x, p.bins[i]);
    bc.pre = conv3d(bc.pooled, p.branches[i]);
    Tensor<T> act = relu(bc.pre);
    bc.act_shape = act.shape();
    cat = concat_channels(cat, resize_nearest3d(act, ext));
    r.cache.branches.push_back(std::move(bc));
  }
  r.cache.fuse_pre = conv3d(cat, p.fuse);
  r.cache.cat = std::move(cat);
  r.y = relu(r.cache.fuse_pre);
  return r;
}

template <typename T>
PyPGrads<T> pyramid_pool_backward(const PyPParams<T>& p, const PyPCache<T>& k, const Tensor<T>& dy) {
  PyPGrads<T> g;
  const Tensor<T> dpre = relu_backward(k.fuse_pre, dy);
  g.fuse = conv3d_backward(k.cat, p.fuse.weight, p.fuse.options, dpre);
  const std::size_t C = p.channels();
  g.dx = slice_channels(g.fuse.dx, 0, C);
  std::size_t offset = C;
  for (std::size_t i = 0; i < p.bins.size(); ++i) {
    const auto& bc = k.branches[i];
    const std::size_t cb = bc.act_shape[0];
    const Tensor<T> dup = slice_channels(g.fuse.dx, offset, offset + cb);
    offset += cb;
    const Tensor<T> dact = resize_nearest3d_backward(bc.act_shape, dup);
    const Tensor<T> dbranch = relu_backward(bc.pre, dact);
    ConvGrads<T> cg = conv3d_backward(bc.pooled, p.branches[i].weight, p.branches[i].options, dbranch);
    g.dx += adaptive_avgpool3d_backward(k.x_shape, cg.dx);
    g.branches.push_back(std::move(cg));
  }
  g.fuse.dx = Tensor<T>();
  return g;
}

}  // namespace voxelseg
