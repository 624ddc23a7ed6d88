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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "voxelseg/arch.hpp"
#include "voxelseg/attention.hpp"
#include "voxelseg/conv3d.hpp"
#include "voxelseg/errors.hpp"
#include "voxelseg/model_params.hpp"
#include "voxelseg/ops3d.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

// ---------------------------------------------------------------------------
// Parameter layout
//
//   enc{l}.conv{k}.weight/bias   enc{l}.bn{k}.gamma/beta   enc{l}.proj.weight/bias
//   enc{l}.csse.{fc1,fc2,spatial}.weight/bias               enc{l}.pyp.branch{i}/fuse
//   bottleneck.*                  (same sub-layout as an encoder level)
//   dec{l}.up.weight/bias         dec{l}.conv{k}.* ...       head.weight/bias
// ---------------------------------------------------------------------------

namespace detail {

inline std::string level_name(const char* kind, std::size_t l) { return std::string(kind) + std::to_string(l); }

// Input channels seen by conv k of a block with `cin` inputs and `f` filters.
inline std::size_t unit_in_channels(const ArchSpec& s, std::size_t cin, std::size_t f, std::size_t k) {
  if (k == 0) return cin;
  return s.block_kind == BlockKind::kDense ? cin + k * f : f;
}

inline bool block_has_projection(const ArchSpec& s, std::size_t cin, std::size_t f) {
  return s.block_kind == BlockKind::kResidual && cin != f;
}

template <typename T>
Tensor<T> normal_matrix(std::size_t rows, std::size_t cols, RngStream& rng) {
  Tensor<T> m({rows, cols});
  const double stddev = std::sqrt(2.0 / static_cast<double>(cols));
  for (auto& v : m.data()) v = static_cast<T>(stddev * rng.normal());
  return m;
}

template <typename T>
void add_block_params(ModelParams<T>& P, const ArchSpec& s, const std::string& prefix, std::size_t cin,
                      std::size_t f, RngStream& rng) {
  for (std::size_t k = 0; k < s.convs_per_block; ++k) {
    const std::size_t ci = unit_in_channels(s, cin, f, k);
    const std::string conv = prefix + ".conv" + std::to_string(k + 1);
    P.add(conv + ".weight", he_init<T>({f, ci, 3, 3, 3}, rng));
    P.add(conv + ".bias", Tensor<T>({f}));
    if (s.use_batchnorm) {
      const std::string bn = prefix + ".bn" + std::to_string(k + 1);
      P.add(bn + ".gamma", Tensor<T>({f}, T(1)));
      P.add(bn + ".beta", Tensor<T>({f}));
    }
  }
  if (block_has_projection(s, cin, f)) {
    P.add(prefix + ".proj.weight", he_init<T>({f, cin, 1, 1, 1}, rng));
    P.add(prefix + ".proj.bias", Tensor<T>({f}));
  }
  if (s.use_csse) {
    const std::size_t hidden = csse_hidden(f, s.csse_reduction);
    P.add(prefix + ".csse.fc1.weight", normal_matrix<T>(hidden, f, rng));
    P.add(prefix + ".csse.fc1.bias", Tensor<T>({hidden}));
    P.add(prefix + ".csse.fc2.weight", normal_matrix<T>(f, hidden, rng));
    P.add(prefix + ".csse.fc2.bias", Tensor<T>({f}));
    P.add(prefix + ".csse.spatial.weight", he_init<T>({1, f, 1, 1, 1}, rng));
    P.add(prefix + ".csse.spatial.bias", Tensor<T>({1}));
  }
}

template <typename T>
void add_pyp_params(ModelParams<T>& P, const ArchSpec& s, const std::string& prefix, std::size_t c, RngStream& rng) {
  const std::size_t cb = pyp_branch_channels(c, s.pyp_bins.size());
  for (std::size_t i = 0; i < s.pyp_bins.size(); ++i) {
    const std::string br = prefix + ".pyp.branch" + std::to_string(i);
    P.add(br + ".weight", he_init<T>({cb, c, 1, 1, 1}, rng));
    P.add(br + ".bias", Tensor<T>({cb}));
  }
  const std::size_t cat = c + s.pyp_bins.size() * cb;
  P.add(prefix + ".pyp.fuse.weight", he_init<T>({c, cat, 1, 1, 1}, rng));
  P.add(prefix + ".pyp.fuse.bias", Tensor<T>({c}));
}

template <typename T>
CsSEParams<T> gather_csse(const ModelParams<T>& P, const ArchSpec& s, const std::string& prefix) {
  return {P.get(prefix + ".csse.fc1.weight"),     P.get(prefix + ".csse.fc1.bias"),
          P.get(prefix + ".csse.fc2.weight"),     P.get(prefix + ".csse.fc2.bias"),
          P.get(prefix + ".csse.spatial.weight"), P.get(prefix + ".csse.spatial.bias"),
          s.csse_combine};
}

template <typename T>
void scatter_csse(ModelParams<T>& G, const std::string& prefix, const CsSEParams<T>& d) {
  G.get(prefix + ".csse.fc1.weight") += d.fc1_weight;
  G.get(prefix + ".csse.fc1.bias") += d.fc1_bias;
  G.get(prefix + ".csse.fc2.weight") += d.fc2_weight;
  G.get(prefix + ".csse.fc2.bias") += d.fc2_bias;
  G.get(prefix + ".csse.spatial.weight") += d.spatial_weight;
  G.get(prefix + ".csse.spatial.bias") += d.spatial_bias;
}

template <typename T>
PyPParams<T> gather_pyp(const ModelParams<T>& P, const ArchSpec& s, const std::string& prefix) {
  PyPParams<T> p;
  p.bins = s.pyp_bin_extents();
  for (std::size_t i = 0; i < s.pyp_bins.size(); ++i) {
    const std::string br = prefix + ".pyp.branch" + std::to_string(i);
    p.branches.push_back({P.get(br + ".weight"), P.get(br + ".bias"), ConvOptions::valid()});
  }
  p.fuse = {P.get(prefix + ".pyp.fuse.weight"), P.get(prefix + ".pyp.fuse.bias"), ConvOptions::valid()};
  return p;
}

template <typename T>
void scatter_pyp(ModelParams<T>& G, const std::string& prefix, const PyPGrads<T>& g) {
  for (std::size_t i = 0; i < g.branches.size(); ++i) {
    const std::string br = prefix + ".pyp.branch" + std::to_string(i);
    G.get(br + ".weight") += g.branches[i].dw;
    G.get(br + ".bias") += g.branches[i].db;
  }
  G.get(prefix + ".pyp.fuse.weight") += g.fuse.dw;
  G.get(prefix + ".pyp.fuse.bias") += g.fuse.db;
}

}  // namespace detail

template <typename T>
ModelParams<T> build_model(const ArchSpec& spec, RngStream& rng) {
  validate(spec);
  ModelParams<T> P;
  const auto& f = spec.filters;
  std::size_t cin = spec.in_channels;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::string prefix = detail::level_name("enc", l);
    detail::add_block_params(P, spec, prefix, cin, f[l], rng);
    if (spec.use_pyp && spec.pyp_placement == PyPPlacement::kEveryEncoderLevel) {
      detail::add_pyp_params(P, spec, prefix, f[l], rng);
    }
    cin = f[l];
  }
  detail::add_block_params(P, spec, "bottleneck", cin, f[spec.depth], rng);
  if (spec.use_pyp) detail::add_pyp_params(P, spec, "bottleneck", f[spec.depth], rng);
  for (std::size_t li = spec.depth; li-- > 0;) {
    const std::string prefix = detail::level_name("dec", li);
    P.add(prefix + ".up.weight", he_init<T>({f[li + 1], f[li], 2, 2, 2}, rng));
    P.add(prefix + ".up.bias", Tensor<T>({f[li]}));
    detail::add_block_params(P, spec, prefix, 2 * f[li], f[li], rng);
  }
  P.add("head.weight", he_init<T>({1, f[0], 1, 1, 1}, rng));
  P.add("head.bias", Tensor<T>({1}));
  return P;
}

// Raises ConfigError naming the first tensor whose presence or shape disagrees
// with what build_model would produce for `spec`.
template <typename T>
void check_params_match(const ModelParams<T>& P, const ArchSpec& spec) {
  RngStream rng(0);
  const ModelParams<T> ref = build_model<T>(spec, rng);
  if (ref.size() != P.size()) {
    throw ConfigError("parameter count " + std::to_string(P.size()) + " does not match architecture '" + spec.name +
                      "' (" + std::to_string(ref.size()) + ")");
  }
  for (const auto& [name, t] : ref) {
    if (!P.contains(name)) throw ConfigError("architecture expects parameter '" + name + "'");
    if (P.get(name).shape() != t.shape()) {
      throw ConfigError("parameter '" + name + "' has shape " + shape_str(P.get(name).shape()) + ", expected " +
                        shape_str(t.shape()));
    }
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct UnitCache {
  Tensor<T> conv_input;
  std::optional<BatchNormResult<T>> bn;
  Tensor<T> pre;  // relu input
  std::vector<T> drop_scale;
};

template <typename T>
struct BlockCache {
  std::size_t in_channels = 0;
  std::vector<UnitCache<T>> units;
  std::optional<Tensor<T>> proj_input;
  std::optional<CsSECache<T>> csse;
  std::optional<PyPCache<T>> pyp;
};

template <typename T>
struct ForwardCache {
  std::vector<BlockCache<T>> encoder;
  std::vector<MaxPoolResult<T>> pools;
  BlockCache<T> bottleneck;
  std::vector<Tensor<T>> up_inputs;  // indexed by level
  std::vector<BlockCache<T>> decoder;  // indexed by level
  Tensor<T> head_input;
};

template <typename T>
struct ForwardResult {
  Tensor<T> prob;    // [1, D, H, W], sigmoid of logits
  Tensor<T> logits;  // [1, D, H, W]
  ForwardCache<T> cache;
};

namespace detail {

template <typename T>
class NetworkRunner {
 public:
  NetworkRunner(const ModelParams<T>& P, const ArchSpec& s) : P_(P), s_(s) {}

  Tensor<T> unit_forward(const std::string& prefix, std::size_t k, const Tensor<T>& x, Mode mode, RngStream& rng,
                         UnitCache<T>& uc) const {
    const std::string id = std::to_string(k + 1);
    const Tensor<T>& w = P_.get(prefix + ".conv" + id + ".weight");
    Tensor<T> y = conv3d(x, w, P_.get(prefix + ".conv" + id + ".bias"), ConvOptions::same({3, 3, 3}));
    uc.conv_input = x;
    if (s_.use_batchnorm) {
      uc.bn = batchnorm3d(y, P_.get(prefix + ".bn" + id + ".gamma"), P_.get(prefix + ".bn" + id + ".beta"));
      y = uc.bn->y;
    }
    Tensor<T> a = relu(y);
    uc.pre = std::move(y);
    DropoutResult<T> d = dropout(a, s_.dropout_rate, mode, rng);
    uc.drop_scale = std::move(d.scale);
    return std::move(d.y);
  }

  Tensor<T> unit_backward(const std::string& prefix, std::size_t k, const UnitCache<T>& uc, const Tensor<T>& dy,
                          ModelParams<T>& G) const {
    const std::string id = std::to_string(k + 1);
    Tensor<T> d = relu_backward(uc.pre, dropout_backward(uc.drop_scale, dy));
    if (uc.bn) {
      BatchNormGrads<T> bg = batchnorm3d_backward(*uc.bn, P_.get(prefix + ".bn" + id + ".gamma"), d);
      G.get(prefix + ".bn" + id + ".gamma") += bg.dgamma;
      G.get(prefix + ".bn" + id + ".beta") += bg.dbeta;
      d = std::move(bg.dx);
    }
    const std::string conv = prefix + ".conv" + id;
    ConvGrads<T> cg = conv3d_backward(uc.conv_input, P_.get(conv + ".weight"), ConvOptions::same({3, 3, 3}), d);
    G.get(conv + ".weight") += cg.dw;
    G.get(conv + ".bias") += cg.db;
    return std::move(cg.dx);
  }

  Tensor<T> block_forward(const std::string& prefix, const Tensor<T>& x, Mode mode, RngStream& rng,
                          BlockCache<T>& bc) const {
    bc.in_channels = x.channels();
    bc.units.resize(s_.convs_per_block);
    Tensor<T> out;
    if (s_.block_kind == BlockKind::kDense) {
      Tensor<T> cur = x;
      for (std::size_t k = 0; k < s_.convs_per_block; ++k) {
        Tensor<T> h = unit_forward(prefix, k, cur, mode, rng, bc.units[k]);
        if (k + 1 < s_.convs_per_block) {
          cur = concat_channels(cur, h);
        } else {
          out = std::move(h);
        }
      }
    } else {
      out = x;
      for (std::size_t k = 0; k < s_.convs_per_block; ++k) out = unit_forward(prefix, k, out, mode, rng, bc.units[k]);
      if (s_.block_kind == BlockKind::kResidual) {
        if (P_.contains(prefix + ".proj.weight")) {
          out += conv3d(x, P_.get(prefix + ".proj.weight"), P_.get(prefix + ".proj.bias"), ConvOptions::valid());
          bc.proj_input = x;
        } else {
          out += x;
        }
      }
    }
    if (s_.use_csse) {
      CsSEResult<T> r = csse_apply(out, gather_csse(P_, s_, prefix));
      bc.csse = std::move(r.cache);
      out = std::move(r.y);
    }
    return out;
  }

  Tensor<T> block_backward(const std::string& prefix, const BlockCache<T>& bc, Tensor<T> dout,
                           ModelParams<T>& G) const {
    if (bc.csse) {
      CsSEGrads<T> g = csse_backward(gather_csse(P_, s_, prefix), *bc.csse, dout);
      scatter_csse(G, prefix, g.dparams);
      dout = std::move(g.dx);
    }
    const std::size_t n = s_.convs_per_block;
    if (s_.block_kind == BlockKind::kDense) {
      Tensor<T> dcur = unit_backward(prefix, n - 1, bc.units[n - 1], dout, G);
      for (std::size_t k = n - 1; k > 0; --k) {
        // cur_k = concat(cur_{k-1}, h_{k-1})
        const std::size_t prev = bc.units[k - 1].conv_input.channels();
        Tensor<T> dprev = slice_channels(dcur, 0, prev);
        const Tensor<T> dh = slice_channels(dcur, prev, dcur.channels());
        dprev += unit_backward(prefix, k - 1, bc.units[k - 1], dh, G);
        dcur = std::move(dprev);
      }
      return dcur;
    }
    Tensor<T> dx;
    if (s_.block_kind == BlockKind::kResidual) {
      if (bc.proj_input) {
        ConvGrads<T> pg =
            conv3d_backward(*bc.proj_input, P_.get(prefix + ".proj.weight"), ConvOptions::valid(), dout);
        G.get(prefix + ".proj.weight") += pg.dw;
        G.get(prefix + ".proj.bias") += pg.db;
        dx = std::move(pg.dx);
      } else {
        dx = dout;
      }
    }
    Tensor<T> d = std::move(dout);
    for (std::size_t k = n; k-- > 0;) d = unit_backward(prefix, k, bc.units[k], d, G);
    if (dx.empty()) return d;
    dx += d;
    return dx;
  }

  Tensor<T> pyp_forward(const std::string& prefix, const Tensor<T>& x, std::optional<PyPCache<T>>& cache) const {
    PyPResult<T> r = pyramid_pool_apply(x, gather_pyp(P_, s_, prefix));
    cache = std::move(r.cache);
    return std::move(r.y);
  }

  Tensor<T> pyp_backward(const std::string& prefix, const PyPCache<T>& cache, const Tensor<T>& dy,
                         ModelParams<T>& G) const {
    PyPGrads<T> g = pyramid_pool_backward(gather_pyp(P_, s_, prefix), cache, dy);
    scatter_pyp(G, prefix, g);
    return std::move(g.dx);
  }

 private:
  const ModelParams<T>& P_;
  const ArchSpec& s_;
};

template <typename T>
void check_network_input(const ArchSpec& spec, const Tensor<T>& x) {
  if (x.rank() != 4 || x.channels() != spec.in_channels) {
    throw ShapeError("network input must be [" + std::to_string(spec.in_channels) + ",D,H,W], got " +
                     shape_str(x.shape()));
  }
  const std::size_t m = spec.required_multiple();
  const Extent3 e = x.spatial();
  for (std::size_t a = 0; a < 3; ++a) {
    if (e[a] % m != 0) {
      throw ShapeError(std::string(axis_name(a)) + " extent " + std::to_string(e[a]) +
                       " must be a multiple of " + std::to_string(m) + " (2^depth)");
    }
  }
}

}  // namespace detail

// Runs the network on x = [in_channels, D, H, W]. Train mode draws dropout
// masks from `rng` in a fixed order, so equal seeds reproduce the same pass.
template <typename T>
ForwardResult<T> forward(const ModelParams<T>& P, const ArchSpec& spec, const Tensor<T>& x, Mode mode,
                         RngStream& rng) {
  detail::check_network_input(spec, x);
  const detail::NetworkRunner<T> net(P, spec);
  ForwardResult<T> r;
  ForwardCache<T>& c = r.cache;
  c.encoder.resize(spec.depth);
  c.decoder.resize(spec.depth);
  c.up_inputs.resize(spec.depth);
  std::vector<Tensor<T>> skips(spec.depth);

  Tensor<T> h = x;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::string prefix = detail::level_name("enc", l);
    h = net.block_forward(prefix, h, mode, rng, c.encoder[l]);
    if (spec.use_pyp && spec.pyp_placement == PyPPlacement::kEveryEncoderLevel) {
      h = net.pyp_forward(prefix, h, c.encoder[l].pyp);
    }
    c.pools.push_back(maxpool3d(h));
    skips[l] = std::move(h);
    h = c.pools.back().y;
  }
  h = net.block_forward("bottleneck", h, mode, rng, c.bottleneck);
  if (spec.use_pyp) h = net.pyp_forward("bottleneck", h, c.bottleneck.pyp);
  for (std::size_t l = spec.depth; l-- > 0;) {
    const std::string prefix = detail::level_name("dec", l);
    Tensor<T> up = conv_transpose3d(h, P.get(prefix + ".up.weight"), P.get(prefix + ".up.bias"),
                                    ConvOptions{{2, 2, 2}, {0, 0, 0}});
    c.up_inputs[l] = std::move(h);
    h = net.block_forward(prefix, concat_channels(skips[l], up), mode, rng, c.decoder[l]);
  }
  r.logits = conv3d(h, P.get("head.weight"), P.get("head.bias"), ConvOptions::valid());
  c.head_input = std::move(h);
  r.prob = activation(r.logits, Activation::kSigmoid);
  return r;
}

// Gradients of a scalar loss with respect to every parameter, given the loss
// gradient with respect to the output probabilities.
template <typename T>
ModelParams<T> backward(const ModelParams<T>& P, const ArchSpec& spec, const ForwardResult<T>& fwd,
                        const Tensor<T>& dprob) {
  fwd.prob.require_same_shape(dprob, "network backward");
  const detail::NetworkRunner<T> net(P, spec);
  const ForwardCache<T>& c = fwd.cache;
  ModelParams<T> G = P.zeros_like();

  const Tensor<T> dlogits = activation_backward(Activation::kSigmoid, fwd.logits, fwd.prob, dprob);
  ConvGrads<T> hg = conv3d_backward(c.head_input, P.get("head.weight"), ConvOptions::valid(), dlogits);
  G.get("head.weight") += hg.dw;
  G.get("head.bias") += hg.db;
  Tensor<T> dh = std::move(hg.dx);

  std::vector<Tensor<T>> dskips(spec.depth);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::string prefix = detail::level_name("dec", l);
    const Tensor<T> dcat = net.block_backward(prefix, c.decoder[l], std::move(dh), G);
    const std::size_t f = spec.filters[l];
    dskips[l] = slice_channels(dcat, 0, f);
    ConvGrads<T> ug = conv_transpose3d_backward(c.up_inputs[l], P.get(prefix + ".up.weight"),
                                                ConvOptions{{2, 2, 2}, {0, 0, 0}}, slice_channels(dcat, f, 2 * f));
    G.get(prefix + ".up.weight") += ug.dw;
    G.get(prefix + ".up.bias") += ug.db;
    dh = std::move(ug.dx);
  }
  if (c.bottleneck.pyp) dh = net.pyp_backward("bottleneck", *c.bottleneck.pyp, dh, G);
  dh = net.block_backward("bottleneck", c.bottleneck, std::move(dh), G);
  for (std::size_t l = spec.depth; l-- > 0;) {
    const std::string prefix = detail::level_name("enc", l);
    Tensor<T> d = maxpool3d_backward(c.pools[l], dh);
    d += dskips[l];
    if (c.encoder[l].pyp) d = net.pyp_backward(prefix, *c.encoder[l].pyp, d, G);
    dh = net.block_backward(prefix, c.encoder[l], std::move(d), G);
  }
  return G;
}

}  // namespace voxelseg
