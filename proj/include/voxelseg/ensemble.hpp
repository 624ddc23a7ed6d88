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

#include "voxelseg/errors.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

// Per-voxel fusion of K foreground-probability volumes.
//
//   kAverage   fused = mean_k p_k
//   kWeighted  fused = sum_k w_k p_k, weights renormalized to sum 1
//   kVote      each p_k binarized at the threshold; fused = vote fraction and
//              mask = votes > K/2 (even-K ties go to background)
//   kMax       fused = max_k p_k
//
// Outside vote mode the mask is fused > threshold.
enum class EnsembleMode { kAverage, kWeighted, kVote, kMax };

inline EnsembleMode parse_ensemble_mode(const std::string& s) {
  if (s == "avg" || s == "average") return EnsembleMode::kAverage;
  if (s == "wavg" || s == "weighted") return EnsembleMode::kWeighted;
  if (s == "vote" || s == "majority") return EnsembleMode::kVote;
  if (s == "max") return EnsembleMode::kMax;
  throw ConfigError("unknown ensemble mode '" + s + "' (expected avg|wavg|vote|max)");
}

inline const char* to_string(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::kAverage: return "avg";
    case EnsembleMode::kWeighted: return "wavg";
    case EnsembleMode::kVote: return "vote";
    case EnsembleMode::kMax: return "max";
  }
  return "avg";
}

template <typename T>
struct EnsembleRequest {
  std::vector<Tensor<T>> probs;
  EnsembleMode mode = EnsembleMode::kAverage;
  std::vector<double> weights;  // used by kWeighted only
  double threshold = 0.5;
};

template <typename T>
struct EnsembleResult {
  Tensor<T> fused;
  Tensor<T> mask;
};

inline void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
}

// 1 where prob > threshold, else 0.
template <typename T>
Tensor<T> binarize(const Tensor<T>& prob, double threshold = 0.5) {
  check_threshold(threshold);
  Tensor<T> m(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = static_cast<double>(prob[i]) > threshold ? T(1) : T(0);
  return m;
}

template <typename T>
EnsembleResult<T> fuse(const EnsembleRequest<T>& req) {
  const std::size_t K = req.probs.size();
  if (K < 2) throw ValidationError("ensemble needs at least two probability volumes, got " + std::to_string(K));
  check_threshold(req.threshold);
  for (std::size_t k = 0; k < K; ++k) {
    if (req.probs[k].shape() != req.probs[0].shape()) {
      throw ValidationError("ensemble input " + std::to_string(k) + " has shape " + shape_str(req.probs[k].shape()) +
                            ", expected " + shape_str(req.probs[0].shape()));
    }
    for (T v : req.probs[k].data()) {
      if (!(v >= T(0) && v <= T(1))) {
        throw ValidationError("ensemble input " + std::to_string(k) + " has a value outside [0, 1]");
      }
    }
  }
  std::vector<double> w;
  if (req.mode == EnsembleMode::kWeighted) {
    if (req.weights.size() != K) {
      throw ValidationError("ensemble got " + std::to_string(req.weights.size()) + " weights for " +
                            std::to_string(K) + " inputs");
    }
    double total = 0.0;
    for (double x : req.weights) {
      if (!(x >= 0.0)) throw ValidationError("ensemble weights must be non-negative");
      total += x;
    }
    if (total <= 0.0) throw ValidationError("ensemble weights are all zero");
    for (double x : req.weights) w.push_back(x / total);
  }

  const std::size_t n = req.probs[0].size();
  EnsembleResult<T> r{Tensor<T>(req.probs[0].shape()), Tensor<T>(req.probs[0].shape())};
  std::vector<double> scratch(K);
  for (std::size_t i = 0; i < n; ++i) {
    double fused = 0.0;
    switch (req.mode) {
      case EnsembleMode::kAverage:
        // Summed in sorted order so the result does not depend on input order.
        for (std::size_t k = 0; k < K; ++k) scratch[k] = static_cast<double>(req.probs[k][i]);
        std::sort(scratch.begin(), scratch.end());
        for (double v : scratch) fused += v;
        fused /= static_cast<double>(K);
        break;
      case EnsembleMode::kWeighted:
        for (std::size_t k = 0; k < K; ++k) fused += w[k] * static_cast<double>(req.probs[k][i]);
        fused = std::clamp(fused, 0.0, 1.0);
        break;
      case EnsembleMode::kMax:
        for (std::size_t k = 0; k < K; ++k) fused = std::max(fused, static_cast<double>(req.probs[k][i]));
        break;
      case EnsembleMode::kVote: {
        std::size_t votes = 0;
        for (std::size_t k = 0; k < K; ++k) votes += static_cast<double>(req.probs[k][i]) > req.threshold;
        fused = static_cast<double>(votes) / static_cast<double>(K);
        r.mask[i] = 2 * votes > K ? T(1) : T(0);
        break;
      }
    }
    r.fused[i] = static_cast<T>(fused);
    if (req.mode != EnsembleMode::kVote) r.mask[i] = fused > req.threshold ? T(1) : T(0);
  }
  return r;
}

}  // namespace voxelseg
