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
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "voxelseg/errors.hpp"
#include "voxelseg/rng.hpp"

namespace voxelseg {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty extent list");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in " + shape_str(shape));
  }
}

// Spatial extents of an activation, in [depth, height, width] order.
struct Extent3 {
  std::size_t d = 1, h = 1, w = 1;

  std::size_t numel() const { return d * h * w; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

// Dense row-major tensor with value semantics.
//
// Activations use [channels, depth, height, width]; convolution kernels use
// [out_channels, in_channels, kd, kh, kw]. There is no batch axis.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T value = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), value);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match " +
                       shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 activation accessors.
  std::size_t channels() const { return shape_.at(0); }
  Extent3 spatial() const {
    if (shape_.size() != 4) throw ShapeError("expected [C,D,H,W], got " + shape_str(shape_));
    return {shape_[1], shape_[2], shape_[3]};
  }
  T& at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return data_[((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return data_[((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w];
  }
  T* channel_ptr(std::size_t c) { return data_.data() + c * (size() / shape_[0]); }
  const T* channel_ptr(std::size_t c) const { return data_.data() + c * (size() / shape_[0]); }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(op) + ": " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    }
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> create_filled(const Shape& shape, T value) {
  return Tensor<T>(shape, value);
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), T(0));
}

// He-normal initialization for a rank-5 kernel: N(0, 2 / fan_in) with
// fan_in = in_channels * kd * kh * kw.
template <typename T>
Tensor<T> he_init(const Shape& kernel_shape, RngStream& rng) {
  if (kernel_shape.size() != 5) {
    throw ShapeError("he_init expects a rank-5 kernel shape, got " + shape_str(kernel_shape));
  }
  Tensor<T> out(kernel_shape);
  const double fan_in = static_cast<double>(kernel_shape[1] * kernel_shape[2] * kernel_shape[3] * kernel_shape[4]);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : out.data()) v = static_cast<T>(stddev * rng.normal());
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4) throw ShapeError("concat_channels expects rank-4 tensors");
  if (a.spatial() != b.spatial()) {
    throw ShapeError("concat_channels spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] = a.channels() + b.channels();
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor<T>(std::move(shape), std::move(data));
}

// Channels [begin, end) of a rank-4 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 4) throw ShapeError("slice_channels expects a rank-4 tensor");
  if (begin >= end || end > x.channels()) {
    throw ShapeError("channel slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(x.shape()));
  }
  const std::size_t per = x.size() / x.channels();
  Shape shape = x.shape();
  shape[0] = end - begin;
  return Tensor<T>(std::move(shape),
                   std::vector<T>(x.data().begin() + begin * per, x.data().begin() + end * per));
}

}  // namespace voxelseg
