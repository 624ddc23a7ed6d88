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
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxelseg/errors.hpp"
#include "voxelseg/nifti.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"
#include "voxelseg/volume_case.hpp"

namespace voxelseg {

// ---------------------------------------------------------------------------
// Intensity windowing

struct IntensityWindow {
  double lo = -1000.0;
  double hi = 1000.0;
};

// Clips to [lo, hi] and maps linearly onto [0, 1].
template <typename T>
Tensor<T> normalize_intensity(const Tensor<T>& raw, const IntensityWindow& window = {}) {
  if (!(window.lo < window.hi)) {
    throw ConfigError("intensity window needs lo < hi, got [" + std::to_string(window.lo) + ", " +
                      std::to_string(window.hi) + "]");
  }
  Tensor<T> out(raw.shape());
  const double span = window.hi - window.lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::clamp(static_cast<double>(raw[i]), window.lo, window.hi);
    out[i] = static_cast<T>((v - window.lo) / span);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Divisibility by 2^depth via centred zero-padding or cropping.

struct AxisFit {
  std::size_t original = 0;
  std::size_t fitted = 0;
  // Output index i reads input index i - shift: shift > 0 pads in front, shift < 0 crops.
  std::ptrdiff_t shift = 0;
};

struct FitTransform {
  std::array<AxisFit, 3> axes;  // depth, height, width
};

// Nearest positive multiple of m; ties round up.
inline std::size_t nearest_multiple(std::size_t n, std::size_t m) {
  const std::size_t down = n / m * m, up = down + m;
  if (down == 0) return up;
  return (n - down < up - n) ? down : up;
}

namespace detail {

template <typename T>
Tensor<T> shift_copy(const Tensor<T>& x, const std::array<std::size_t, 3>& out_ext,
                     const std::array<std::ptrdiff_t, 3>& shift) {
  const Extent3 in = x.spatial();
  Tensor<T> y({x.channels(), out_ext[0], out_ext[1], out_ext[2]});
  const std::ptrdiff_t ind = static_cast<std::ptrdiff_t>(in.d), inh = static_cast<std::ptrdiff_t>(in.h),
                       inw = static_cast<std::ptrdiff_t>(in.w);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t d = 0; d < out_ext[0]; ++d) {
      const std::ptrdiff_t sd = static_cast<std::ptrdiff_t>(d) - shift[0];
      if (sd < 0 || sd >= ind) continue;
      for (std::size_t h = 0; h < out_ext[1]; ++h) {
        const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h) - shift[1];
        if (sh < 0 || sh >= inh) continue;
        for (std::size_t w = 0; w < out_ext[2]; ++w) {
          const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w) - shift[2];
          if (sw < 0 || sw >= inw) continue;
          y.at(c, d, h, w) = x.at(c, static_cast<std::size_t>(sd), static_cast<std::size_t>(sh),
                                  static_cast<std::size_t>(sw));
        }
      }
    }
  return y;
}

}  // namespace detail

inline FitTransform plan_fit(const Extent3& extent, std::size_t depth) {
  const std::size_t m = std::size_t{1} << depth;
  FitTransform t;
  for (std::size_t a = 0; a < 3; ++a) {
    AxisFit& f = t.axes[a];
    f.original = extent[a];
    f.fitted = nearest_multiple(extent[a], m);
    f.shift = (static_cast<std::ptrdiff_t>(f.fitted) - static_cast<std::ptrdiff_t>(f.original)) / 2;
  }
  return t;
}

template <typename T>
Tensor<T> apply_fit(const Tensor<T>& x, const FitTransform& t) {
  return detail::shift_copy(x, {t.axes[0].fitted, t.axes[1].fitted, t.axes[2].fitted},
                            {t.axes[0].shift, t.axes[1].shift, t.axes[2].shift});
}

// Maps a fitted-space volume (e.g. a prediction) back to the original extents.
template <typename T>
Tensor<T> invert_fit(const Tensor<T>& y, const FitTransform& t) {
  return detail::shift_copy(y, {t.axes[0].original, t.axes[1].original, t.axes[2].original},
                            {-t.axes[0].shift, -t.axes[1].shift, -t.axes[2].shift});
}

template <typename T>
struct FittedCase {
  VolumeCase<T> fitted;
  FitTransform transform;
};

template <typename T>
FittedCase<T> fit_divisible(const VolumeCase<T>& c, std::size_t depth) {
  FittedCase<T> r;
  r.transform = plan_fit(c.image.spatial(), depth);
  r.fitted.id = c.id;
  r.fitted.spacing = c.spacing;
  r.fitted.image = apply_fit(c.image, r.transform);
  if (c.mask) r.fitted.mask = apply_fit(*c.mask, r.transform);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic phantoms: a smooth random curve through the volume, swept with a
// slowly varying radius into a tube. The image is a bright tube over a darker
// background with a smooth intensity bias and Gaussian noise, clipped to [0, 1].

struct PhantomOptions {
  std::size_t control_points = 5;
  double radius_min = 1.8;   // voxels at size 32, scaled linearly with size
  double radius_max = 3.2;
  double background = 0.25;
  double contrast = 0.40;
  double bias_amplitude = 0.06;
  double noise_sd = 0.05;
};

namespace detail {

struct Point3 {
  double d, h, w;
};

inline Point3 catmull_rom(const Point3& p0, const Point3& p1, const Point3& p2, const Point3& p3, double t) {
  auto f = [t](double a, double b, double c, double d) {
    const double t2 = t * t, t3 = t2 * t;
    return 0.5 * ((2 * b) + (-a + c) * t + (2 * a - 5 * b + 4 * c - d) * t2 + (-a + 3 * b - 3 * c + d) * t3);
  };
  return {f(p0.d, p1.d, p2.d, p3.d), f(p0.h, p1.h, p2.h, p3.h), f(p0.w, p1.w, p2.w, p3.w)};
}

}  // namespace detail

template <typename T>
VolumeCase<T> synth_phantom_case(std::size_t size, std::uint64_t seed, std::size_t index,
                                 const PhantomOptions& opt = {}) {
  if (size < 16) throw ConfigError("phantom size must be at least 16, got " + std::to_string(size));
  RngStream rng = RngStream(seed).derive(index);
  const double n = static_cast<double>(size);
  const double scale = n / 32.0;

  // Control points advance along depth while wandering in-plane, giving an S-like course.
  std::vector<detail::Point3> ctrl;
  const std::size_t k = std::max<std::size_t>(opt.control_points, 2);
  for (std::size_t i = 0; i < k; ++i) {
    const double along = 0.18 + 0.64 * static_cast<double>(i) / static_cast<double>(k - 1);
    ctrl.push_back({n * (along + 0.04 * (rng.uniform() - 0.5)), n * (0.25 + 0.5 * rng.uniform()),
                    n * (0.25 + 0.5 * rng.uniform())});
  }
  std::vector<detail::Point3> curve;
  const std::size_t per_segment = 8 * size;
  for (std::size_t s = 0; s + 1 < ctrl.size(); ++s) {
    const auto& p0 = ctrl[s == 0 ? 0 : s - 1];
    const auto& p3 = ctrl[std::min(s + 2, ctrl.size() - 1)];
    for (std::size_t j = 0; j < per_segment; ++j) {
      curve.push_back(detail::catmull_rom(p0, ctrl[s], ctrl[s + 1], p3,
                                          static_cast<double>(j) / static_cast<double>(per_segment)));
    }
  }
  curve.push_back(ctrl.back());

  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  const double cycles = 1.0 + 2.0 * rng.uniform();
  const double rmin = opt.radius_min * scale, rmax = opt.radius_max * scale;

  VolumeCase<T> c;
  char id[32];
  std::snprintf(id, sizeof id, "phantom_%03zu", index);
  c.id = id;
  Tensor<T> mask({1, size, size, size});
  const auto clampi = [size](double v) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(size - 1)));
  };
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(curve.size() - 1);
    const double r = rmin + (rmax - rmin) * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * cycles * t + phase));
    const auto& p = curve[i];
    for (std::size_t d = clampi(std::floor(p.d - r)); d <= clampi(std::ceil(p.d + r)); ++d)
      for (std::size_t h = clampi(std::floor(p.h - r)); h <= clampi(std::ceil(p.h + r)); ++h)
        for (std::size_t w = clampi(std::floor(p.w - r)); w <= clampi(std::ceil(p.w + r)); ++w) {
          const double dd = static_cast<double>(d) - p.d, dh = static_cast<double>(h) - p.h,
                       dw = static_cast<double>(w) - p.w;
          if (dd * dd + dh * dh + dw * dw <= r * r) mask.at(0, d, h, w) = T(1);
        }
  }

  // Low-frequency bias field.
  double fq[3], ph[3];
  for (std::size_t a = 0; a < 3; ++a) {
    fq[a] = 0.5 + rng.uniform();
    ph[a] = 2.0 * std::numbers::pi * rng.uniform();
  }
  Tensor<T> image({1, size, size, size});
  for (std::size_t d = 0; d < size; ++d)
    for (std::size_t h = 0; h < size; ++h)
      for (std::size_t w = 0; w < size; ++w) {
        const double bias =
            opt.bias_amplitude / 3.0 *
            (std::sin(2.0 * std::numbers::pi * fq[0] * static_cast<double>(d) / n + ph[0]) +
             std::sin(2.0 * std::numbers::pi * fq[1] * static_cast<double>(h) / n + ph[1]) +
             std::sin(2.0 * std::numbers::pi * fq[2] * static_cast<double>(w) / n + ph[2]));
        const double v = opt.background + bias + opt.contrast * static_cast<double>(mask.at(0, d, h, w)) +
                         opt.noise_sd * rng.normal();
        image.at(0, d, h, w) = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
  c.image = std::move(image);
  c.mask = std::move(mask);
  c.spacing = {1.0, 1.0, 1.0};
  return c;
}

// `count` phantoms; case i depends only on (seed, i).
template <typename T>
std::vector<VolumeCase<T>> synth_phantom(std::size_t size, std::uint64_t seed, std::size_t count,
                                         const PhantomOptions& opt = {}) {
  std::vector<VolumeCase<T>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_phantom_case<T>(size, seed, i, opt));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest: CSV with header "id,image,mask". Relative paths resolve
// against the manifest's directory; the mask column may be empty.

struct ManifestEntry {
  std::string id;
  std::string image;
  std::string mask;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (line.back() == ',') cols.emplace_back();
    if (lineno == 1 && !cols.empty() && cols[0] == "id") continue;
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() || cols[1].empty()) {
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + ": expected id,image[,mask]");
    }
    out.push_back({cols[0], resolve(cols[1]), cols.size() > 2 ? resolve(cols[2]) : std::string()});
  }
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest '" + path + "' for writing");
  out << "id,image,mask\n";
  for (const auto& e : entries) out << e.id << ',' << e.image << ',' << e.mask << '\n';
}

// Reads one manifest entry. The image is windowed into [0, 1] when a window is
// given; the mask is binarized at 0.5.
template <typename T>
VolumeCase<T> load_case(const ManifestEntry& entry, const std::optional<IntensityWindow>& window) {
  NiftiVolume<T> img = read_nifti<T>(entry.image);
  VolumeCase<T> c;
  c.id = entry.id;
  c.spacing = img.header.spacing();
  c.image = window ? normalize_intensity(img.volume, *window) : std::move(img.volume);
  if (!entry.mask.empty()) {
    Tensor<T> m = read_nifti<T>(entry.mask).volume;
    c.image.require_same_shape(m, ("case '" + entry.id + "' image/mask").c_str());
    for (auto& v : m.data()) v = v > T(0.5) ? T(1) : T(0);
    c.mask = std::move(m);
  }
  return c;
}

}  // namespace voxelseg
