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
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "voxelseg/arch.hpp"
#include "voxelseg/errors.hpp"
#include "voxelseg/model_params.hpp"
#include "voxelseg/network.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

// Checkpoint layout (all integers little-endian):
//
//   "VSEG"                     4 bytes
//   version                    u32 (= 1)
//   arch spec                  u32 byte length + canonical UTF-8 text
//   parameter count            u32
//   per parameter:
//     name                     u16 byte length + UTF-8
//     dtype                    u8  (1 = f32, 2 = f64)
//     rank                     u8
//     extents                  u32 x rank
//     data                     raw little-endian values
//   CRC-32 (zlib polynomial)   u32 over every preceding byte

inline constexpr char kCheckpointMagic[4] = {'V', 'S', 'E', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class SpecMismatchError : public Error {
 public:
  explicit SpecMismatchError(const std::string& what) : Error("spec mismatch: " + what) {}
};

template <typename T>
struct Checkpoint {
  ModelParams<T> params;
  ArchSpec spec;
};

namespace detail {

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 1 : 2;
}

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    bytes_.insert(bytes_.end(), b, b + sizeof(U));
  }
  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    unsigned char b[sizeof(U)];
    std::memcpy(b, data_ + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (size_ - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint reading ") + what + " at byte offset " +
                        std::to_string(pos_));
    }
  }

  std::size_t pos() const { return pos_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

template <typename T>
std::vector<unsigned char> encode_checkpoint(const ModelParams<T>& params, const ArchSpec& spec) {
  detail::ByteWriter w;
  for (char c : kCheckpointMagic) w.put(c);
  w.put(kCheckpointVersion);
  const std::string text = to_canonical_text(spec);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xffff) throw FormatError("parameter name too long: " + name);
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put(detail::dtype_code<T>());
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) w.put(static_cast<std::uint32_t>(e));
    for (T v : t.data()) w.put(v);
  }
  const std::uint32_t crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
  w.put(crc);
  return std::move(w.bytes());
}

// Parses a checkpoint image. Nothing is returned unless every byte checks out.
template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  const std::string magic = r.get_string(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) throw FormatError("bad magic at byte offset 0");
  const std::size_t version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " at byte offset " +
                      std::to_string(version_at));
  }
  if (bytes.size() < 4) throw FormatError("truncated checkpoint");
  const std::size_t body = bytes.size() - 4;
  {
    detail::ByteReader tail(bytes.data() + body, 4);
    const auto stored = tail.get<std::uint32_t>("crc");
    if (stored != detail::crc32_of(bytes.data(), body)) {
      throw FormatError("CRC mismatch (checksum at byte offset " + std::to_string(body) + ")");
    }
  }
  detail::ByteReader b(bytes.data(), body);
  b.get_string(8, "header");
  const auto text_len = b.get<std::uint32_t>("arch length");
  const std::size_t text_at = b.pos();
  Checkpoint<T> ck;
  try {
    ck.spec = parse_canonical_text(b.get_string(text_len, "arch text"));
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("invalid arch spec at byte offset ") + std::to_string(text_at) + ": " + e.what());
  }
  const auto count = b.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = b.get<std::uint16_t>("name length");
    std::string name = b.get_string(name_len, "name");
    const std::size_t dtype_at = b.pos();
    const auto dtype = b.get<std::uint8_t>("dtype");
    if (dtype != 1 && dtype != 2) {
      throw FormatError("unknown dtype code " + std::to_string(dtype) + " at byte offset " + std::to_string(dtype_at));
    }
    const auto rank = b.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(b.get<std::uint32_t>("extent"));
    const std::size_t data_at = b.pos();
    try {
      check_shape(shape);
    } catch (const ShapeError& e) {
      throw FormatError("bad extents for '" + name + "' before byte offset " + std::to_string(data_at));
    }
    const std::size_t n = shape_numel(shape);
    b.need(n * (dtype == 1 ? 4 : 8), "tensor data");
    std::vector<T> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      data[k] = dtype == 1 ? static_cast<T>(b.get<float>("value")) : static_cast<T>(b.get<double>("value"));
    }
    try {
      ck.params.add(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
    } catch (const ConfigError& e) {
      throw FormatError(std::string(e.what()) + " at byte offset " + std::to_string(dtype_at));
    }
  }
  if (b.pos() != body) throw FormatError("trailing bytes at byte offset " + std::to_string(b.pos()));
  try {
    check_params_match(ck.params, ck.spec);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("parameters inconsistent with stored architecture: ") + e.what());
  }
  return ck;
}

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const ArchSpec& spec, const std::string& path) {
  const std::vector<unsigned char> bytes = encode_checkpoint(params, spec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

// Loads and requires the stored architecture to equal `expected`.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path, const ArchSpec& expected) {
  Checkpoint<T> ck = load_checkpoint<T>(path);
  if (!(ck.spec == expected)) {
    throw SpecMismatchError("checkpoint holds '" + ck.spec.name + "' (depth " + std::to_string(ck.spec.depth) +
                            "), requested '" + expected.name + "' (depth " + std::to_string(expected.depth) + ")");
  }
  return ck;
}

}  // namespace voxelseg
