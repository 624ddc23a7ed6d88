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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "voxelseg/attention.hpp"
#include "voxelseg/conv3d.hpp"
#include "voxelseg/network.hpp"
#include "voxelseg/ops3d.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"
#include "voxelseg/training.hpp"

namespace voxelseg {

// Central finite-difference checks of every analytic backward rule, run in
// double precision. Each op is reduced to a scalar L = sum(r * y) with a fixed
// random r, so the analytic input gradients come straight from the backward
// rule fed with dL/dy = r.
//
// Error metric per element: |analytic - numeric| / max(|analytic|, |numeric|, floor).

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;

  bool passed() const { return max_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-4;
  double op_tolerance = 1e-5;
  double network_tolerance = 1e-4;
  std::size_t network_samples = 50;
};

inline double grad_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Perturbs entries of `t` in place and compares the central difference of
// `loss` against `analytic`. Checks every entry, or `samples` random ones.
template <typename Loss>
double check_entries(Tensor<double>& t, const Tensor<double>& analytic, Loss&& loss, const GradCheckOptions& opt,
                     std::size_t& checked, std::size_t samples = 0, RngStream* rng = nullptr) {
  t.require_same_shape(analytic, "check_entries");
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (samples > 0 && samples < idx.size() && rng) {
    for (std::size_t i = 0; i < samples; ++i) std::swap(idx[i], idx[i + rng->uniform_index(idx.size() - i)]);
    idx.resize(samples);
  }
  double worst = 0.0;
  for (std::size_t i : idx) {
    const double orig = t[i];
    t[i] = orig + opt.step;
    const double up = loss();
    t[i] = orig - opt.step;
    const double down = loss();
    t[i] = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    worst = std::max(worst, grad_error(analytic[i], numeric, opt.floor));
    ++checked;
  }
  return worst;
}

namespace detail {

inline Tensor<double> random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Values with magnitude in [0.1, 1], away from relu's kink.
inline Tensor<double> kink_free_tensor(const Shape& shape, RngStream& rng) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = (0.1 + 0.9 * rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline GradCheckResult gradcheck_conv3d(RngStream& rng, const GradCheckOptions& opt, const ConvOptions& conv,
                                        const std::string& name) {
  Tensor<double> x = detail::random_tensor({2, 4, 4, 4}, rng);
  Tensor<double> w = detail::random_tensor({3, 2, 3, 3, 3}, rng);
  Tensor<double> b = detail::random_tensor({3}, rng);
  const Tensor<double> r = detail::random_tensor(conv3d(x, w, b, conv).shape(), rng);
  const ConvGrads<double> g = conv3d_backward(x, w, conv, r);
  auto loss = [&] { return detail::dot(r, conv3d(x, w, b, conv)); };
  GradCheckResult res{name, 0.0, opt.op_tolerance, 0};
  res.max_error = std::max({check_entries(x, g.dx, loss, opt, res.checked), check_entries(w, g.dw, loss, opt, res.checked),
                            check_entries(b, g.db, loss, opt, res.checked)});
  return res;
}

inline GradCheckResult gradcheck_conv_transpose3d(RngStream& rng, const GradCheckOptions& opt) {
  const ConvOptions conv{{2, 2, 2}, {0, 0, 0}};
  Tensor<double> x = detail::random_tensor({3, 2, 2, 2}, rng);
  Tensor<double> w = detail::random_tensor({3, 2, 2, 2, 2}, rng);
  Tensor<double> b = detail::random_tensor({2}, rng);
  const Tensor<double> r = detail::random_tensor(conv_transpose3d(x, w, b, conv).shape(), rng);
  const ConvGrads<double> g = conv_transpose3d_backward(x, w, conv, r);
  auto loss = [&] { return detail::dot(r, conv_transpose3d(x, w, b, conv)); };
  GradCheckResult res{"conv_transpose3d", 0.0, opt.op_tolerance, 0};
  res.max_error = std::max({check_entries(x, g.dx, loss, opt, res.checked), check_entries(w, g.dw, loss, opt, res.checked),
                            check_entries(b, g.db, loss, opt, res.checked)});
  return res;
}

inline GradCheckResult gradcheck_maxpool3d(RngStream& rng, const GradCheckOptions& opt) {
  // Entries spaced at least 1e-3 apart so no perturbation flips an argmax.
  Tensor<double> x({2, 4, 4, 4});
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 2.0 * static_cast<double>(i) / vals.size();
  for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.uniform_index(i)]);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = vals[i];
  const MaxPoolResult<double> fwd = maxpool3d(x);
  const Tensor<double> r = detail::random_tensor(fwd.y.shape(), rng);
  const Tensor<double> dx = maxpool3d_backward(fwd, r);
  auto loss = [&] { return detail::dot(r, maxpool3d(x).y); };
  GradCheckResult res{"maxpool3d", 0.0, opt.op_tolerance, 0};
  res.max_error = check_entries(x, dx, loss, opt, res.checked);
  return res;
}

inline GradCheckResult gradcheck_adaptive_avgpool3d(RngStream& rng, const GradCheckOptions& opt) {
  Tensor<double> x = detail::random_tensor({2, 5, 6, 7}, rng);
  const Extent3 bins{2, 3, 4};
  const Tensor<double> r = detail::random_tensor({2, 2, 3, 4}, rng);
  const Tensor<double> dx = adaptive_avgpool3d_backward(x.shape(), r);
  auto loss = [&] { return detail::dot(r, adaptive_avgpool3d(x, bins)); };
  GradCheckResult res{"adaptive_avgpool3d", 0.0, opt.op_tolerance, 0};
  res.max_error = check_entries(x, dx, loss, opt, res.checked);
  return res;
}

inline GradCheckResult gradcheck_upsample(RngStream& rng, const GradCheckOptions& opt) {
  Tensor<double> x = detail::random_tensor({2, 2, 3, 2}, rng);
  const Extent3 factor{2, 2, 3};
  const Tensor<double> r = detail::random_tensor(upsample_nearest3d(x, factor).shape(), rng);
  const Tensor<double> dx = upsample_nearest3d_backward(x.shape(), r);
  auto loss = [&] { return detail::dot(r, upsample_nearest3d(x, factor)); };
  GradCheckResult res{"upsample_nearest3d", 0.0, opt.op_tolerance, 0};
  res.max_error = check_entries(x, dx, loss, opt, res.checked);
  return res;
}

inline GradCheckResult gradcheck_activation(RngStream& rng, const GradCheckOptions& opt, Activation kind) {
  Tensor<double> x = kind == Activation::kRelu ? detail::kink_free_tensor({2, 3, 3, 3}, rng)
                                               : detail::random_tensor({2, 3, 3, 3}, rng, -4.0, 4.0);
  const Tensor<double> r = detail::random_tensor(x.shape(), rng);
  const Tensor<double> dx = activation_backward(kind, x, activation(x, kind), r);
  auto loss = [&] { return detail::dot(r, activation(x, kind)); };
  GradCheckResult res{kind == Activation::kRelu ? "relu" : "sigmoid", 0.0, opt.op_tolerance, 0};
  res.max_error = check_entries(x, dx, loss, opt, res.checked);
  return res;
}

inline GradCheckResult gradcheck_dropout(RngStream& rng, const GradCheckOptions& opt) {
  Tensor<double> x = detail::random_tensor({2, 3, 3, 3}, rng);
  const std::uint64_t mask_seed = rng.next_u64();
  const Tensor<double> r = detail::random_tensor(x.shape(), rng);
  auto run = [&] {
    RngStream m(mask_seed);
    return dropout(x, 0.4, Mode::kTrain, m);
  };
  const Tensor<double> dx = dropout_backward(run().scale, r);
  auto loss = [&] { return detail::dot(r, run().y); };
  GradCheckResult res{"dropout (fixed mask)", 0.0, opt.op_tolerance, 0};
  res.max_error = check_entries(x, dx, loss, opt, res.checked);
  return res;
}

inline GradCheckResult gradcheck_batchnorm(RngStream& rng, const GradCheckOptions& opt) {
  Tensor<double> x = detail::random_tensor({3, 3, 3, 3}, rng);
  Tensor<double> gamma = detail::random_tensor({3}, rng, 0.5, 1.5);
  Tensor<double> beta = detail::random_tensor({3}, rng);
  const Tensor<double> r = detail::random_tensor(x.shape(), rng);
  const BatchNormGrads<double> g = batchnorm3d_backward(batchnorm3d(x, gamma, beta), gamma, r);
  auto loss = [&] { return detail::dot(r, batchnorm3d(x, gamma, beta).y); };
  GradCheckResult res{"batchnorm3d", 0.0, opt.op_tolerance, 0};
  res.max_error = std::max({check_entries(x, g.dx, loss, opt, res.checked),
                            check_entries(gamma, g.dgamma, loss, opt, res.checked),
                            check_entries(beta, g.dbeta, loss, opt, res.checked)});
  return res;
}

inline GradCheckResult gradcheck_csse(RngStream& rng, const GradCheckOptions& opt, CsSECombine combine) {
  const std::size_t C = 4;
  CsSEParams<double> p = make_csse_params<double>(C, 2, combine);
  for (Tensor<double>* t : {&p.fc1_weight, &p.fc1_bias, &p.fc2_weight, &p.fc2_bias, &p.spatial_weight, &p.spatial_bias}) {
    *t = detail::random_tensor(t->shape(), rng);
  }
  Tensor<double> x = detail::random_tensor({C, 3, 3, 3}, rng);
  const Tensor<double> r = detail::random_tensor(x.shape(), rng);
  const CsSEGrads<double> g = csse_backward(p, csse_apply(x, p).cache, r);
  auto loss = [&] { return detail::dot(r, csse_apply(x, p).y); };
  GradCheckResult res{combine == CsSECombine::kAdd ? "csse (add)" : "csse (max)", 0.0, opt.op_tolerance, 0};
  res.max_error = std::max({check_entries(x, g.dx, loss, opt, res.checked),
                            check_entries(p.fc1_weight, g.dparams.fc1_weight, loss, opt, res.checked),
                            check_entries(p.fc1_bias, g.dparams.fc1_bias, loss, opt, res.checked),
                            check_entries(p.fc2_weight, g.dparams.fc2_weight, loss, opt, res.checked),
                            check_entries(p.fc2_bias, g.dparams.fc2_bias, loss, opt, res.checked),
                            check_entries(p.spatial_weight, g.dparams.spatial_weight, loss, opt, res.checked),
                            check_entries(p.spatial_bias, g.dparams.spatial_bias, loss, opt, res.checked)});
  return res;
}

inline GradCheckResult gradcheck_pyp(RngStream& rng, const GradCheckOptions& opt) {
  const std::size_t C = 6;
  PyPParams<double> p = make_pyp_params<double>(C, {{1, 1, 1}, {2, 2, 2}, {4, 4, 4}});
  for (auto& br : p.branches) {
    br.weight = detail::random_tensor(br.weight.shape(), rng);
    br.bias = detail::random_tensor(br.bias.shape(), rng, 0.2, 0.5);
  }
  p.fuse.weight = detail::random_tensor(p.fuse.weight.shape(), rng);
  p.fuse.bias = detail::random_tensor(p.fuse.bias.shape(), rng, -0.2, 0.2);
  Tensor<double> x = detail::random_tensor({C, 4, 4, 4}, rng);
  const Tensor<double> r = detail::random_tensor(x.shape(), rng);
  const PyPGrads<double> g = pyramid_pool_backward(p, pyramid_pool_apply(x, p).cache, r);
  auto loss = [&] { return detail::dot(r, pyramid_pool_apply(x, p).y); };
  GradCheckResult res{"pyramid_pool", 0.0, opt.op_tolerance, 0};
  double worst = check_entries(x, g.dx, loss, opt, res.checked);
  for (std::size_t i = 0; i < p.branches.size(); ++i) {
    worst = std::max(worst, check_entries(p.branches[i].weight, g.branches[i].dw, loss, opt, res.checked));
    worst = std::max(worst, check_entries(p.branches[i].bias, g.branches[i].db, loss, opt, res.checked));
  }
  worst = std::max(worst, check_entries(p.fuse.weight, g.fuse.dw, loss, opt, res.checked));
  worst = std::max(worst, check_entries(p.fuse.bias, g.fuse.db, loss, opt, res.checked));
  res.max_error = worst;
  return res;
}

inline GradCheckResult gradcheck_dice_loss(RngStream& rng, const GradCheckOptions& opt) {
  Tensor<double> prob = detail::random_tensor({1, 4, 4, 4}, rng, 0.05, 0.95);
  Tensor<double> truth({1, 4, 4, 4});
  for (auto& v : truth.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  const DiceLoss<double> dl = dice_loss(prob, truth, 1.0);
  auto loss = [&] { return dice_loss(prob, truth, 1.0).loss; };
  GradCheckResult res{"dice_loss", 0.0, opt.op_tolerance, 0};
  res.max_error = check_entries(prob, dl.grad, loss, opt, res.checked);
  return res;
}

// Full tiny network (depth 2, filters [4, 8, 16], 8^3 input) under the Dice
// loss, train mode with the dropout masks pinned by reseeding every pass.
inline GradCheckResult gradcheck_network(RngStream& rng, const GradCheckOptions& opt, const std::string& arch,
                                         bool batchnorm = false) {
  ArchSpec base;
  base.depth = 2;
  base.filters = {4, 8, 16};
  base.pyp_bins = {1, 2};
  base.use_batchnorm = batchnorm;
  const ArchSpec spec = make_arch(arch, base);
  ModelParams<double> P = build_model<double>(spec, rng);
  for (auto& [name, t] : P) {
    if (name.ends_with(".bias")) {
      for (auto& v : t.data()) v = 0.1 * rng.normal();
    }
  }
  Tensor<double> x = detail::random_tensor({1, 8, 8, 8}, rng, 0.0, 1.0);
  Tensor<double> truth({1, 8, 8, 8});
  for (auto& v : truth.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  const std::uint64_t mask_seed = rng.next_u64();
  auto run = [&] {
    RngStream m(mask_seed);
    return forward(P, spec, x, Mode::kTrain, m);
  };
  const ForwardResult<double> fwd = run();
  const ModelParams<double> G = backward(P, spec, fwd, dice_loss(fwd.prob, truth, 1.0).grad);
  auto loss = [&] { return dice_loss(run().prob, truth, 1.0).loss; };

  // Sample `network_samples` (parameter, index) pairs uniformly over all elements.
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  const std::size_t total = P.element_count();
  for (std::size_t s = 0; s < opt.network_samples; ++s) {
    std::size_t flat = rng.uniform_index(total);
    std::size_t e = 0;
    while (flat >= P.entry(e).second.size()) flat -= P.entry(e++).second.size();
    picks.emplace_back(e, flat);
  }
  std::string label = "network composite (" + arch + (batchnorm ? ", batchnorm" : "") + ")";
  GradCheckResult res{label, 0.0, opt.network_tolerance, 0};
  for (const auto& [e, i] : picks) {
    Tensor<double>& t = P.entry(e).second;
    const double analytic = G.entry(e).second[i];
    const double orig = t[i];
    t[i] = orig + opt.step;
    const double up = loss();
    t[i] = orig - opt.step;
    const double down = loss();
    t[i] = orig;
    res.max_error = std::max(res.max_error, grad_error(analytic, (up - down) / (2.0 * opt.step), opt.floor));
    ++res.checked;
  }
  return res;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  RngStream root(seed);
  std::vector<GradCheckResult> out;
  auto next = [&root, n = std::uint64_t{0}]() mutable { return root.derive(n++); };
  {
    RngStream r = next();
    out.push_back(gradcheck_conv3d(r, opt, ConvOptions::same({3, 3, 3}), "conv3d"));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_conv3d(r, opt, ConvOptions{{2, 2, 2}, {1, 1, 1}}, "conv3d (stride 2)"));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_conv_transpose3d(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_maxpool3d(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_adaptive_avgpool3d(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_upsample(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_activation(r, opt, Activation::kRelu));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_activation(r, opt, Activation::kSigmoid));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_dropout(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_batchnorm(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_csse(r, opt, CsSECombine::kAdd));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_csse(r, opt, CsSECombine::kMax));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_pyp(r, opt));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_dice_loss(r, opt));
  }
  for (const char* arch : {"PyP3DUcsSENet", "3D U-Net", "ResU-Net", "DenseU-Net"}) {
    RngStream r = next();
    out.push_back(gradcheck_network(r, opt, arch));
  }
  {
    RngStream r = next();
    out.push_back(gradcheck_network(r, opt, "PyP3DUcsSENet", true));
  }
  return out;
}

}  // namespace voxelseg
