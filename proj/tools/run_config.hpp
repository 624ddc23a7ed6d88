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

// JSON run configuration for the command-line tool. Every key is optional and
// falls back to the documented default; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "voxelseg/voxelseg.hpp"

namespace voxelseg::cli {

struct RunConfig {
  ArchSpec arch;                              // name is filled in from --arch
  TrainConfig train;                          // learning_rate replaced per arch unless set
  std::optional<double> learning_rate;        // null -> default_learning_rate(arch)
  double threshold = 0.5;
  IntensityWindow window;
  std::size_t folds = 5;
  std::string manifest;
  std::string output_dir = "runs";
};

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "depth",    "filters",   "in_channels", "convs_per_block", "dropout_rate", "block_kind", "use_batchnorm",
      "csse_reduction", "csse_combine", "pyp_placement", "pyp_bins", "learning_rate", "beta1", "beta2", "epsilon",
      "epochs",   "dice_smooth", "threshold", "hu_window", "seed", "folds", "manifest", "output_dir"};
  return keys;
}

template <typename V>
V get_as(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig c;
  auto has = [&j](const char* k) { return j.contains(k); };
  if (has("depth")) c.arch.depth = get_as<std::size_t>(j, "depth");
  if (has("filters")) c.arch.filters = get_as<std::vector<std::size_t>>(j, "filters");
  if (has("in_channels")) c.arch.in_channels = get_as<std::size_t>(j, "in_channels");
  if (has("convs_per_block")) c.arch.convs_per_block = get_as<std::size_t>(j, "convs_per_block");
  if (has("dropout_rate")) c.arch.dropout_rate = get_as<double>(j, "dropout_rate");
  if (has("block_kind")) c.arch.block_kind = parse_block_kind(get_as<std::string>(j, "block_kind"));
  if (has("use_batchnorm")) c.arch.use_batchnorm = get_as<bool>(j, "use_batchnorm");
  if (has("csse_reduction")) c.arch.csse_reduction = get_as<std::size_t>(j, "csse_reduction");
  if (has("csse_combine")) c.arch.csse_combine = parse_csse_combine(get_as<std::string>(j, "csse_combine"));
  if (has("pyp_placement")) c.arch.pyp_placement = parse_pyp_placement(get_as<std::string>(j, "pyp_placement"));
  if (has("pyp_bins")) c.arch.pyp_bins = get_as<std::vector<std::size_t>>(j, "pyp_bins");
  if (has("learning_rate") && !j.at("learning_rate").is_null()) c.learning_rate = get_as<double>(j, "learning_rate");
  if (has("beta1")) c.train.beta1 = get_as<double>(j, "beta1");
  if (has("beta2")) c.train.beta2 = get_as<double>(j, "beta2");
  if (has("epsilon")) c.train.epsilon = get_as<double>(j, "epsilon");
  if (has("epochs")) c.train.epochs = get_as<std::size_t>(j, "epochs");
  if (has("dice_smooth")) c.train.dice_smooth = get_as<double>(j, "dice_smooth");
  if (has("seed")) c.train.seed = get_as<std::uint64_t>(j, "seed");
  if (has("threshold")) c.threshold = get_as<double>(j, "threshold");
  if (has("hu_window")) {
    const auto w = get_as<std::vector<double>>(j, "hu_window");
    if (w.size() != 2) throw ConfigError("config key 'hu_window' needs two numbers [lo, hi]");
    c.window = {w[0], w[1]};
  }
  if (has("folds")) c.folds = get_as<std::size_t>(j, "folds");
  if (has("manifest")) c.manifest = get_as<std::string>(j, "manifest");
  if (has("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir");
  check_threshold(c.threshold);
  if (!(c.window.lo < c.window.hi)) throw ConfigError("config key 'hu_window' needs lo < hi");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

// Resolved settings for one architecture: registry features, config overrides
// and the per-architecture learning rate unless the config pins one.
inline std::pair<ArchSpec, TrainConfig> resolve(const RunConfig& c, const std::string& arch_name) {
  ArchSpec spec = make_arch(arch_name, c.arch);
  TrainConfig train = c.train;
  train.learning_rate = c.learning_rate ? *c.learning_rate : default_learning_rate(spec);
  validate(train);
  return {spec, train};
}

inline nlohmann::json to_json(const RunConfig& c, const ArchSpec& spec, const TrainConfig& t) {
  return {{"depth", spec.depth},
          {"filters", spec.filters},
          {"in_channels", spec.in_channels},
          {"convs_per_block", spec.convs_per_block},
          {"dropout_rate", spec.dropout_rate},
          {"block_kind", to_string(spec.block_kind)},
          {"use_batchnorm", spec.use_batchnorm},
          {"csse_reduction", spec.csse_reduction},
          {"csse_combine", to_string(spec.csse_combine)},
          {"pyp_placement", to_string(spec.pyp_placement)},
          {"pyp_bins", spec.pyp_bins},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"epochs", t.epochs},
          {"dice_smooth", t.dice_smooth},
          {"threshold", c.threshold},
          {"hu_window", {c.window.lo, c.window.hi}},
          {"seed", t.seed},
          {"folds", c.folds},
          {"manifest", c.manifest},
          {"output_dir", c.output_dir}};
}

}  // namespace voxelseg::cli
