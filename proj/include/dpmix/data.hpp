// Copyright 2026 The dpmix Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpmix/augment.hpp"
#include "dpmix/tensor.hpp"

namespace dpmix {

/// Per-channel statistics applied to a dataset. Identity until applied.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std_dev;
  bool applied = false;
};

/// Immutable after load; safe for concurrent reads.
struct Dataset {
  std::vector<std::size_t> image_shape;  // {C, H, W}
  std::vector<double> images;            // N * C * H * W row-major
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels_per_image() const { return shape_size(image_shape); }
  Tensor image(std::size_t i) const;
  LabeledExample example(std::size_t i) const;  // one-hot label
};

std::vector<double> one_hot(std::size_t label, std::size_t num_classes);

/// CIFAR-10 binary batches: 3073-byte records, label byte then R/G/B planes
/// of a row-major 32 x 32 image. Pixels are scaled to [0, 1].
Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& paths);

enum class PixelType : std::uint8_t { kU8 = 0, kF32 = 1 };

/// DPMIXDS1 container: 8-byte magic, u32 version, u32 N/C/H/W, u8 dtype
/// (0 = u8, 1 = f32), u32 num_classes, then N u32 labels and N*C*H*W pixels.
/// All multi-byte fields little-endian. Declared sizes must match the file
/// length exactly.
Dataset load_container(const std::filesystem::path& path);
void save_container(const Dataset& dataset, const std::filesystem::path& path, PixelType dtype);

/// Loads a container as a class-indexed pool. Classes with no samples are
/// recorded in missing_classes rather than rejected.
SyntheticPool load_synthetic_pool(const std::filesystem::path& path,
                                  std::size_t expected_num_classes);

SyntheticPool pool_from_dataset(const Dataset& dataset, std::size_t expected_num_classes,
                                std::string provenance);

Normalization compute_normalization(const Dataset& dataset);
Dataset normalize(const Dataset& dataset, const Normalization& stats);

/// Class-conditioned Gaussian blobs: per-class template of norm `separation`
/// plus unit pixel noise, squashed into [0, 1]. Linearly separable when
/// separation is large.
struct ToySpec {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t image_size = 8;
  std::size_t channels = 1;
  double separation = 6.0;
  std::uint64_t seed = 0;
};

Dataset make_toy_dataset(const ToySpec& spec);

/// Train/test/pool triple sharing one template set. The pool's templates are
/// perturbed by `pool_shift` to emulate a synthetic-data domain gap.
struct ToyBundleSpec {
  ToySpec base;
  std::size_t per_class_test = 50;
  std::size_t per_class_pool = 0;
  double pool_shift = 0.0;
};

struct ToyBundle {
  Dataset train;
  Dataset test;
  Dataset pool;  // empty when per_class_pool == 0
};

ToyBundle make_toy_bundle(const ToyBundleSpec& spec);

}  // namespace dpmix
