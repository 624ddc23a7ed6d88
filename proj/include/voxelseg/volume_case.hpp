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

#include <array>
#include <optional>
#include <string>

#include "voxelseg/tensor.hpp"

namespace voxelseg {

// One sample: normalized intensity volume, optional binary ground truth and
// voxel spacing in millimetres, ordered (x, y, z) = (width, height, depth)
// axes as in NIfTI pixdim.
template <typename T>
struct VolumeCase {
  std::string id;
  Tensor<T> image;                 // [1, D, H, W]
  std::optional<Tensor<T>> mask;   // [1, D, H, W], values in {0, 1}
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

}  // namespace voxelseg
