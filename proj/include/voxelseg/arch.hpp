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

#include <charconv>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "voxelseg/attention.hpp"
#include "voxelseg/errors.hpp"

namespace voxelseg {

enum class BlockKind { kPlain, kResidual, kDense };
enum class PyPPlacement { kBottleneck, kEveryEncoderLevel };

// Declarative description of one network variant. Defaults are the full-scale
// PyP3DUcsSENet: four pooling stages, 32..512 filters, two 3x3x3 convolutions
// per block, dropout 0.4 after every hidden relu.
struct ArchSpec {
  std::string name = "PyP3DUcsSENet";
  std::size_t depth = 4;
  std::vector<std::size_t> filters{32, 64, 128, 256, 512};
  std::size_t in_channels = 1;
  std::size_t convs_per_block = 2;
  double dropout_rate = 0.4;
  BlockKind block_kind = BlockKind::kPlain;
  bool use_batchnorm = false;
  bool use_csse = true;
  std::size_t csse_reduction = 2;
  CsSECombine csse_combine = CsSECombine::kAdd;
  bool use_pyp = true;
  PyPPlacement pyp_placement = PyPPlacement::kBottleneck;
  std::vector<std::size_t> pyp_bins{1, 2, 4};

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;

  std::size_t required_multiple() const { return std::size_t{1} << depth; }

  std::vector<Extent3> pyp_bin_extents() const {
    std::vector<Extent3> out;
    for (std::size_t b : pyp_bins) out.push_back({b, b, b});
    return out;
  }
};

inline void validate(const ArchSpec& s) {
  if (s.name.empty() || s.name.find('\n') != std::string::npos) throw ConfigError("arch field 'name' is invalid");
  if (s.depth < 1 || s.depth > 8) throw ConfigError("arch field 'depth' must be in [1, 8]");
  if (s.filters.size() != s.depth + 1) {
    throw ConfigError("arch field 'filters' must list depth+1 = " + std::to_string(s.depth + 1) + " entries, got " +
                      std::to_string(s.filters.size()));
  }
  for (std::size_t f : s.filters) {
    if (f == 0) throw ConfigError("arch field 'filters' contains a zero entry");
  }
  if (s.in_channels == 0) throw ConfigError("arch field 'in_channels' must be positive");
  if (s.convs_per_block == 0) throw ConfigError("arch field 'convs_per_block' must be positive");
  if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0)) throw ConfigError("arch field 'dropout_rate' must be in [0, 1)");
  if (s.use_csse) {
    if (s.csse_reduction == 0) throw ConfigError("arch field 'csse_reduction' must be >= 1");
    for (std::size_t f : s.filters) {
      if (f % s.csse_reduction != 0) {
        throw ConfigError("arch field 'csse_reduction' does not divide filter count " + std::to_string(f));
      }
    }
  }
  if (s.use_pyp) {
    if (s.pyp_bins.empty()) throw ConfigError("arch field 'pyp_bins' is empty");
    for (std::size_t i = 0; i < s.pyp_bins.size(); ++i) {
      if (s.pyp_bins[i] == 0) throw ConfigError("arch field 'pyp_bins' contains zero");
      if (i > 0 && s.pyp_bins[i] <= s.pyp_bins[i - 1]) {
        throw ConfigError("arch field 'pyp_bins' must be strictly increasing");
      }
    }
  }
}

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::kPlain: return "plain";
    case BlockKind::kResidual: return "residual";
    case BlockKind::kDense: return "dense";
  }
  return "plain";
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "plain") return BlockKind::kPlain;
  if (s == "residual") return BlockKind::kResidual;
  if (s == "dense") return BlockKind::kDense;
  throw ConfigError("unknown block kind '" + s + "'");
}

inline const char* to_string(PyPPlacement p) {
  return p == PyPPlacement::kBottleneck ? "bottleneck" : "every_encoder_level";
}

inline PyPPlacement parse_pyp_placement(const std::string& s) {
  if (s == "bottleneck") return PyPPlacement::kBottleneck;
  if (s == "every_encoder_level") return PyPPlacement::kEveryEncoderLevel;
  throw ConfigError("unknown pyramid pooling placement '" + s + "'");
}

inline const char* to_string(CsSECombine c) { return c == CsSECombine::kAdd ? "add" : "max"; }

inline CsSECombine parse_csse_combine(const std::string& s) {
  if (s == "add") return CsSECombine::kAdd;
  if (s == "max") return CsSECombine::kMax;
  throw ConfigError("unknown csSE combine '" + s + "'");
}

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("field '" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(item, key));
  return out;
}

inline bool parse_flag(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError("field '" + key + "' expects 0/1, got '" + s + "'");
}

}  // namespace detail

// Canonical text form: one `key=value` line per field in a fixed order.
inline std::string to_canonical_text(const ArchSpec& s) {
  char rate[64];
  std::snprintf(rate, sizeof rate, "%.17g", s.dropout_rate);
  std::ostringstream os;
  os << "name=" << s.name << '\n'
     << "depth=" << s.depth << '\n'
     << "filters=" << detail::join_sizes(s.filters) << '\n'
     << "in_channels=" << s.in_channels << '\n'
     << "convs_per_block=" << s.convs_per_block << '\n'
     << "dropout_rate=" << rate << '\n'
     << "block_kind=" << to_string(s.block_kind) << '\n'
     << "use_batchnorm=" << (s.use_batchnorm ? 1 : 0) << '\n'
     << "use_csse=" << (s.use_csse ? 1 : 0) << '\n'
     << "csse_reduction=" << s.csse_reduction << '\n'
     << "csse_combine=" << to_string(s.csse_combine) << '\n'
     << "use_pyp=" << (s.use_pyp ? 1 : 0) << '\n'
     << "pyp_placement=" << to_string(s.pyp_placement) << '\n'
     << "pyp_bins=" << detail::join_sizes(s.pyp_bins) << '\n';
  return os.str();
}

inline ArchSpec parse_canonical_text(const std::string& text) {
  ArchSpec s;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("arch line without '=': '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (!seen.insert(key).second) throw FormatError("duplicate arch key '" + key + "'");
    if (key == "name") s.name = value;
    else if (key == "depth") s.depth = detail::parse_size(value, key);
    else if (key == "filters") s.filters = detail::parse_size_list(value, key);
    else if (key == "in_channels") s.in_channels = detail::parse_size(value, key);
    else if (key == "convs_per_block") s.convs_per_block = detail::parse_size(value, key);
    else if (key == "dropout_rate") {
      try {
        std::size_t used = 0;
        s.dropout_rate = std::stod(value, &used);
        if (used != value.size()) throw ConfigError("trailing characters");
      } catch (const std::exception&) {
        throw ConfigError("field 'dropout_rate' expects a number, got '" + value + "'");
      }
    } else if (key == "block_kind") s.block_kind = parse_block_kind(value);
    else if (key == "use_batchnorm") s.use_batchnorm = detail::parse_flag(value, key);
    else if (key == "use_csse") s.use_csse = detail::parse_flag(value, key);
    else if (key == "csse_reduction") s.csse_reduction = detail::parse_size(value, key);
    else if (key == "csse_combine") s.csse_combine = parse_csse_combine(value);
    else if (key == "use_pyp") s.use_pyp = detail::parse_flag(value, key);
    else if (key == "pyp_placement") s.pyp_placement = parse_pyp_placement(value);
    else if (key == "pyp_bins") s.pyp_bins = detail::parse_size_list(value, key);
    else throw FormatError("unknown arch key '" + key + "'");
  }
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Registry of named variants. Each factory receives a base spec carrying depth,
// filters and the shared hyperparameters and switches on its own features.

using ArchFactory = std::function<ArchSpec(ArchSpec)>;

inline std::map<std::string, ArchFactory>& arch_registry() {
  static std::map<std::string, ArchFactory> registry = [] {
    std::map<std::string, ArchFactory> r;
    auto plain = [](ArchSpec s, const char* name, BlockKind kind) {
      s.name = name;
      s.block_kind = kind;
      s.use_csse = false;
      s.use_pyp = false;
      return s;
    };
    r["3D U-Net"] = [plain](ArchSpec s) { return plain(std::move(s), "3D U-Net", BlockKind::kPlain); };
    r["ResU-Net"] = [plain](ArchSpec s) { return plain(std::move(s), "ResU-Net", BlockKind::kResidual); };
    r["DenseU-Net"] = [plain](ArchSpec s) { return plain(std::move(s), "DenseU-Net", BlockKind::kDense); };
    r["PyP3DUcsSENet"] = [](ArchSpec s) {
      s.name = "PyP3DUcsSENet";
      s.block_kind = BlockKind::kPlain;
      s.use_csse = true;
      s.use_pyp = true;
      return s;
    };
    return r;
  }();
  return registry;
}

inline void register_arch(const std::string& name, ArchFactory factory) { arch_registry()[name] = std::move(factory); }

inline std::vector<std::string> arch_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : arch_registry()) out.push_back(k);
  return out;
}

inline ArchSpec make_arch(const std::string& name, ArchSpec base = {}) {
  const auto it = arch_registry().find(name);
  if (it == arch_registry().end()) {
    std::string known;
    for (const auto& n : arch_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown architecture '" + name + "' (known: " + known + ")");
  }
  ArchSpec s = it->second(std::move(base));
  validate(s);
  return s;
}

// Learning rate the recipe uses for each variant: 1e-6 for the pyramid/csSE
// network, 1e-4 for the others.
inline double default_learning_rate(const ArchSpec& s) { return (s.use_pyp && s.use_csse) ? 1e-6 : 1e-4; }

}  // namespace voxelseg
