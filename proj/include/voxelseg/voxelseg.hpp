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

#include "voxelseg/arch.hpp"
#include "voxelseg/attention.hpp"
#include "voxelseg/checkpoint.hpp"
#include "voxelseg/conv3d.hpp"
#include "voxelseg/data.hpp"
#include "voxelseg/ensemble.hpp"
#include "voxelseg/errors.hpp"
#include "voxelseg/gradcheck.hpp"
#include "voxelseg/model_params.hpp"
#include "voxelseg/network.hpp"
#include "voxelseg/nifti.hpp"
#include "voxelseg/ops3d.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"
#include "voxelseg/training.hpp"
#include "voxelseg/volume_case.hpp"
