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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "voxelseg/errors.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

// NIfTI-1 datatype codes this reader/writer understands.
enum class NiftiType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kFloat32 = 16,
  kFloat64 = 64,
};

struct NiftiHeader {
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::string magic;  // "n+1" (single file) or "ni1" (header/image pair)
  bool big_endian = false;

  // (x, y, z) spacing in millimetres.
  std::array<double, 3> spacing() const { return {pixdim[1], pixdim[2], pixdim[3]}; }
};

template <typename T>
struct NiftiVolume {
  Tensor<T> volume;  // [1, D, H, W] with W <- x (dim[1]), H <- y (dim[2]), D <- z (dim[3])
  NiftiHeader header;
};

namespace detail {

inline constexpr std::size_t kNiftiHeaderSize = 348;

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Reads a whole file; gzip streams (leading bytes 0x1f 0x8b) are inflated,
// anything else is passed through unchanged.
inline std::vector<unsigned char> read_maybe_gzipped(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  while (true) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      int errnum = 0;
      const std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw FormatError("corrupt gzip stream in '" + path + "': " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

inline void write_maybe_gzipped(const std::string& path, const std::vector<unsigned char>& bytes) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    std::size_t done = 0;
    while (done < bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw IoError("failed writing '" + path + "'");
      }
      done += chunk;
    }
    if (gzclose(f) != Z_OK) throw IoError("failed closing '" + path + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Reads a value stored in the given byte order.
template <typename U>
U load_scalar(const unsigned char* p, bool big_endian) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, p, sizeof(U));
  const bool native_big = std::endian::native == std::endian::big;
  if (big_endian != native_big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

template <typename U>
void store_le(unsigned char* p, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  std::memcpy(p, b, sizeof(U));
}

inline std::size_t nifti_type_size(std::int16_t datatype) {
  switch (static_cast<NiftiType>(datatype)) {
    case NiftiType::kUint8: return 1;
    case NiftiType::kInt16: return 2;
    case NiftiType::kFloat32: return 4;
    case NiftiType::kFloat64: return 8;
  }
  throw FormatError("unsupported NIfTI datatype code " + std::to_string(datatype));
}

inline NiftiHeader parse_nifti_header(const std::vector<unsigned char>& bytes, const std::string& path) {
  if (bytes.size() < kNiftiHeaderSize) {
    throw FormatError("'" + path + "' is " + std::to_string(bytes.size()) + " bytes, shorter than the 348-byte header");
  }
  const unsigned char* p = bytes.data();
  NiftiHeader h;
  // dim[0] must be 1..7; if it is not, the file was written on the other endianness.
  bool big = false;
  std::int16_t d0 = load_scalar<std::int16_t>(p + 40, false);
  if (d0 < 1 || d0 > 7) {
    big = true;
    d0 = load_scalar<std::int16_t>(p + 40, true);
    if (d0 < 1 || d0 > 7) throw FormatError("'" + path + "': dim[0] is not in 1..7 in either byte order");
  }
  h.big_endian = big;
  if (load_scalar<std::int32_t>(p, big) != 348) throw FormatError("'" + path + "': sizeof_hdr is not 348");
  const std::string magic(reinterpret_cast<const char*>(p + 344), 4);
  if (magic != std::string("n+1\0", 4) && magic != std::string("ni1\0", 4)) {
    throw FormatError("'" + path + "': bad magic (expected \"n+1\" or \"ni1\")");
  }
  h.magic = magic.substr(0, 3);
  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = load_scalar<std::int16_t>(p + 40 + 2 * i, big);
  h.datatype = load_scalar<std::int16_t>(p + 70, big);
  h.bitpix = load_scalar<std::int16_t>(p + 72, big);
  for (std::size_t i = 0; i < 8; ++i) h.pixdim[i] = load_scalar<float>(p + 76 + 4 * i, big);
  h.vox_offset = load_scalar<float>(p + 108, big);
  h.scl_slope = load_scalar<float>(p + 112, big);
  h.scl_inter = load_scalar<float>(p + 116, big);
  nifti_type_size(h.datatype);
  return h;
}

}  // namespace detail

// Reads a NIfTI-1 volume (.nii, .nii.gz, or .hdr/.img pair). Stored values v
// are returned as scl_slope * v + scl_inter, with a zero slope read as 1.
template <typename T>
NiftiVolume<T> read_nifti(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::read_maybe_gzipped(path);
  NiftiVolume<T> out;
  NiftiHeader& h = out.header;
  h = detail::parse_nifti_header(bytes, path);
  const bool big = h.big_endian;

  std::size_t ext[3] = {1, 1, 1};
  for (int i = 1; i <= h.dim[0]; ++i) {
    if (h.dim[i] < 1) throw FormatError("'" + path + "': dim[" + std::to_string(i) + "] is not positive");
    if (i <= 3) {
      ext[i - 1] = static_cast<std::size_t>(h.dim[i]);
    } else if (h.dim[i] != 1) {
      throw FormatError("'" + path + "': only 3-D volumes are supported (dim[" + std::to_string(i) + "] = " +
                        std::to_string(h.dim[i]) + ")");
    }
  }
  const std::size_t n = ext[0] * ext[1] * ext[2];
  const std::size_t width = detail::nifti_type_size(h.datatype);

  std::vector<unsigned char> image_file;
  const std::vector<unsigned char>* src = &bytes;
  std::size_t offset = static_cast<std::size_t>(std::max(0.0f, h.vox_offset));
  if (h.magic == "ni1") {
    std::string img = path;
    const auto pos = img.rfind(".hdr");
    if (pos == std::string::npos) throw FormatError("'" + path + "': \"ni1\" header needs a .hdr/.img pair");
    img.replace(pos, 4, ".img");
    image_file = detail::read_maybe_gzipped(img);
    src = &image_file;
  } else if (offset < detail::kNiftiHeaderSize) {
    throw FormatError("'" + path + "': vox_offset " + std::to_string(offset) + " lies inside the header");
  }
  if (src->size() < offset || src->size() - offset < n * width) {
    throw FormatError("'" + path + "': truncated voxel data (need " + std::to_string(n * width) + " bytes at offset " +
                      std::to_string(offset) + ", file has " + std::to_string(src->size()) + ")");
  }
  const double slope = h.scl_slope == 0.0f || !std::isfinite(h.scl_slope) ? 1.0 : h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  const bool identity = slope == 1.0 && inter == 0.0;

  out.volume = Tensor<T>({1, ext[2], ext[1], ext[0]});
  const unsigned char* p = src->data() + offset;
  for (std::size_t i = 0; i < n; ++i, p += width) {
    double v = 0.0;
    switch (static_cast<NiftiType>(h.datatype)) {
      case NiftiType::kUint8: v = *p; break;
      case NiftiType::kInt16: v = detail::load_scalar<std::int16_t>(p, big); break;
      case NiftiType::kFloat32: v = detail::load_scalar<float>(p, big); break;
      case NiftiType::kFloat64: v = detail::load_scalar<double>(p, big); break;
    }
    out.volume[i] = static_cast<T>(identity ? v : slope * v + inter);
  }
  return out;
}

// Writes a single-channel [1, D, H, W] tensor as a single-file NIfTI-1 volume,
// gzip-compressed when the path ends in ".gz". Integer types are rounded and
// clamped to their range.
template <typename T>
void write_nifti(const Tensor<T>& volume, const std::array<double, 3>& spacing, const std::string& path,
                 NiftiType datatype = NiftiType::kFloat32) {
  if (volume.rank() != 4 || volume.channels() != 1) {
    throw ShapeError("write_nifti expects a [1,D,H,W] tensor, got " + shape_str(volume.shape()));
  }
  const Extent3 e = volume.spatial();
  for (std::size_t a = 0; a < 3; ++a) {
    if (e[a] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max())) {
      throw ShapeError("write_nifti: extent too large for NIfTI-1");
    }
    if (!(spacing[a] > 0.0)) throw ConfigError("write_nifti: spacing must be positive");
  }
  const std::size_t width = detail::nifti_type_size(static_cast<std::int16_t>(datatype));
  std::vector<unsigned char> bytes(352 + volume.size() * width, 0);
  unsigned char* p = bytes.data();
  detail::store_le<std::int32_t>(p, 348);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(e.w), static_cast<std::int16_t>(e.h),
                                static_cast<std::int16_t>(e.d), 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) detail::store_le<std::int16_t>(p + 40 + 2 * i, dims[i]);
  detail::store_le<std::int16_t>(p + 70, static_cast<std::int16_t>(datatype));
  detail::store_le<std::int16_t>(p + 72, static_cast<std::int16_t>(width * 8));
  const float pixdim[8] = {1.0f, static_cast<float>(spacing[0]), static_cast<float>(spacing[1]),
                           static_cast<float>(spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (std::size_t i = 0; i < 8; ++i) detail::store_le<float>(p + 76 + 4 * i, pixdim[i]);
  detail::store_le<float>(p + 108, 352.0f);
  detail::store_le<float>(p + 112, 1.0f);
  detail::store_le<float>(p + 116, 0.0f);
  p[123] = 2;                                  // xyzt_units: millimetres
  detail::store_le<std::int16_t>(p + 252, 1);  // qform_code: scanner
  std::memcpy(p + 344, "n+1\0", 4);

  unsigned char* q = bytes.data() + 352;
  for (std::size_t i = 0; i < volume.size(); ++i, q += width) {
    const double v = static_cast<double>(volume[i]);
    switch (datatype) {
      case NiftiType::kUint8: *q = static_cast<unsigned char>(std::clamp(std::round(v), 0.0, 255.0)); break;
      case NiftiType::kInt16:
        detail::store_le<std::int16_t>(q, static_cast<std::int16_t>(std::clamp(std::round(v), -32768.0, 32767.0)));
        break;
      case NiftiType::kFloat32: detail::store_le<float>(q, static_cast<float>(v)); break;
      case NiftiType::kFloat64: detail::store_le<double>(q, v); break;
    }
  }
  detail::write_maybe_gzipped(path, bytes);
}

}  // namespace voxelseg
