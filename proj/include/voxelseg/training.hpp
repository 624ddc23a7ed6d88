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
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "voxelseg/arch.hpp"
#include "voxelseg/errors.hpp"
#include "voxelseg/model_params.hpp"
#include "voxelseg/network.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"
#include "voxelseg/volume_case.hpp"

namespace voxelseg {

// ---------------------------------------------------------------------------
// Dice loss and score

template <typename T>
bool is_binary(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return v == T(0) || v == T(1); });
}

template <typename T>
struct DiceLoss {
  T loss;
  Tensor<T> grad;  // d loss / d prob
};

// loss = 1 - (2 sum(p g) + eps) / (sum p + sum g + eps)
template <typename T>
DiceLoss<T> dice_loss(const Tensor<T>& prob, const Tensor<T>& truth, T smooth = T(1)) {
  prob.require_same_shape(truth, "dice_loss");
  if (!is_binary(truth)) throw ValidationError("dice_loss: ground truth must be binary");
  T inter = T(0), sp = T(0), sg = T(0);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += prob[i] * truth[i];
    sp += prob[i];
    sg += truth[i];
  }
  const T num = T(2) * inter + smooth;
  const T den = sp + sg + smooth;
  if (den == T(0)) throw ValidationError("dice_loss: empty prediction and truth need a positive smoothing term");
  DiceLoss<T> r{T(1) - num / den, Tensor<T>(prob.shape())};
  const T inv_den2 = T(1) / (den * den);
  for (std::size_t i = 0; i < prob.size(); ++i) r.grad[i] = -(T(2) * truth[i] * den - num) * inv_den2;
  return r;
}

// 2|A n B| / (|A| + |B|), defined as 1 when both masks are empty.
template <typename T>
double dice_score(const Tensor<T>& pred, const Tensor<T>& truth) {
  pred.require_same_shape(truth, "dice_score");
  if (!is_binary(pred)) throw ValidationError("dice_score: prediction mask is not binary");
  if (!is_binary(truth)) throw ValidationError("dice_score: ground truth mask is not binary");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == T(1), g = truth[i] == T(1);
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

// ---------------------------------------------------------------------------
// Adam

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.90;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 100;
  double dice_smooth = 1.0;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(c.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(c.dice_smooth >= 0.0)) throw ConfigError("dice_smooth must be non-negative");
}

template <typename T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::size_t step = 0;

  AdamState() = default;
  explicit AdamState(const ModelParams<T>& params) : m(params.zeros_like()), v(params.zeros_like()) {}
};

// One bias-corrected Adam update. Gradients are scanned for non-finite values
// before anything is modified.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw TrainingError("gradient/state layout does not match parameters");
  }
  for (const auto& [name, g] : grads) {
    for (T v : g.data()) {
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient in parameter '" + name + "'");
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, theta] = params.entry(i);
    const Tensor<T>& g = grads.get(name);
    Tensor<T>& m = state.m.get(name);
    Tensor<T>& v = state.v.get(name);
    theta.require_same_shape(g, "adam_step");
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1, vhat = vk / bc2;
      theta[k] = static_cast<T>(theta[k] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// k-fold cross-validation plan

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

// Shuffles ids with the seeded stream, then cuts k contiguous test blocks with
// boundaries floor(i * n / k). For n = 80, k = 5 every fold is 64 / 16.
inline FoldPlan kfold_split(const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (k < 2) throw ConfigError("k-fold split needs k >= 2");
  if (k > n) throw ConfigError("k-fold split: k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " ids");
  std::vector<std::string> order = ids;
  RngStream rng = RngStream(seed).derive("kfold");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  FoldPlan plan;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k, hi = (f + 1) * n / k;
    Fold fold;
    for (std::size_t i = 0; i < n; ++i) (i >= lo && i < hi ? fold.test : fold.train).push_back(order[i]);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRecord {
  std::size_t epoch;
  std::string case_id;
  double loss;
};

template <typename T>
struct FitResult {
  ModelParams<T> params;
  std::vector<double> epoch_loss;  // mean training loss of each epoch
  std::vector<LogRecord> records;
};

struct FitOptions {
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
  std::function<void(const LogRecord&)> on_record;
};

template <typename T>
void check_training_case(const ArchSpec& spec, const VolumeCase<T>& c) {
  if (!c.mask) throw ValidationError("case '" + c.id + "' has no ground-truth mask");
  c.image.require_same_shape(*c.mask, "training case");
  try {
    detail::check_network_input(spec, c.image);
  } catch (const ShapeError& e) {
    throw ShapeError("case '" + c.id + "': " + e.what());
  }
}

// Trains from `init` (or a fresh seeded model) for cfg.epochs passes over
// `cases`, one case per step in a freshly shuffled order each epoch.
template <typename T>
FitResult<T> fit(const ArchSpec& spec, const TrainConfig& cfg, const std::vector<VolumeCase<T>>& cases,
                 const FitOptions& options = {}, const ModelParams<T>* init = nullptr) {
  validate(spec);
  validate(cfg);
  if (cases.empty()) throw ConfigError("fit needs at least one training case");
  for (const auto& c : cases) check_training_case(spec, c);

  const RngStream root(cfg.seed);
  RngStream init_rng = root.derive("init");
  RngStream shuffle_rng = root.derive("shuffle");
  RngStream dropout_rng = root.derive("dropout");

  FitResult<T> r;
  r.params = init ? *init : build_model<T>(spec, init_rng);
  AdamState<T> adam(r.params);
  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    double total = 0.0;
    for (std::size_t idx : order) {
      const VolumeCase<T>& c = cases[idx];
      try {
        ForwardResult<T> fwd = forward(r.params, spec, c.image, Mode::kTrain, dropout_rng);
        DiceLoss<T> dl = dice_loss(fwd.prob, *c.mask, static_cast<T>(cfg.dice_smooth));
        const ModelParams<T> grads = backward(r.params, spec, fwd, dl.grad);
        adam_step(r.params, grads, adam, cfg);
        LogRecord rec{epoch, c.id, static_cast<double>(dl.loss)};
        if (options.on_record) options.on_record(rec);
        r.records.push_back(std::move(rec));
        total += static_cast<double>(dl.loss);
      } catch (const Error& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", case '" + c.id + "': " + e.what());
      }
    }
    r.epoch_loss.push_back(total / static_cast<double>(cases.size()));
    if (options.on_epoch) options.on_epoch(epoch, r.epoch_loss.back());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

template <typename T>
Tensor<T> predict(const ModelParams<T>& params, const ArchSpec& spec, const Tensor<T>& image) {
  RngStream unused(0);
  return forward(params, spec, image, Mode::kEval, unused).prob;
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

inline Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("cannot summarize an empty list");
  Summary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

struct CaseScore {
  std::string id;
  double dsc;
};

struct EvalReport {
  std::vector<CaseScore> cases;
  Summary summary;
};

inline EvalReport make_report(std::vector<CaseScore> scores) {
  std::vector<double> v;
  for (const auto& c : scores) v.push_back(c.dsc);
  EvalReport r{std::move(scores), summarize(v)};
  return r;
}

template <typename T>
Tensor<T> threshold_mask(const Tensor<T>& prob, double threshold) {
  Tensor<T> m(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = static_cast<double>(prob[i]) > threshold ? T(1) : T(0);
  return m;
}

// Scores precomputed probability volumes against the case masks after
// binarizing at `threshold` (strict >).
template <typename T>
EvalReport evaluate_predictions(const std::vector<Tensor<T>>& probs, const std::vector<VolumeCase<T>>& cases,
                                double threshold = 0.5) {
  if (cases.empty()) throw ConfigError("evaluate needs at least one case");
  if (probs.size() != cases.size()) throw ConfigError("prediction count does not match case count");
  std::vector<CaseScore> scores;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    if (!c.mask) throw ValidationError("case '" + c.id + "' has no ground-truth mask");
    scores.push_back({c.id, dice_score(threshold_mask(probs[i], threshold), *c.mask)});
  }
  return make_report(std::move(scores));
}

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const ArchSpec& spec, const std::vector<VolumeCase<T>>& cases,
                    double threshold = 0.5) {
  if (cases.empty()) throw ConfigError("evaluate needs at least one case");
  std::vector<Tensor<T>> probs;
  for (const auto& c : cases) probs.push_back(predict(params, spec, c.image));
  return evaluate_predictions(probs, cases, threshold);
}

}  // namespace voxelseg
