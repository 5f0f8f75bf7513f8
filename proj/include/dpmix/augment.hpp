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

#include <cstddef>
#include <string>
#include <vector>

#include "dpmix/rng.hpp"
#include "dpmix/tensor.hpp"

namespace dpmix {

/// Single-sample randomized transforms: horizontal flip and random crop after
/// reflect padding. Output shape and value range equal the input's.
struct TransformPipeline {
  double flip_probability = 0.5;
  std::size_t crop_padding = 4;  // reflect padding, pixels per side
  bool flip_enabled = true;
  bool crop_enabled = true;
};

Tensor apply_pipeline(const TransformPipeline& pipeline, const Tensor& image, Rng& rng);

struct MixupConfig {
  double alpha = 0.2;  // Beta(alpha, alpha) mixing coefficient
};

/// Mixing coefficient lambda ~ Beta(alpha, alpha) in [0, 1].
double sample_lambda(Rng& rng, const MixupConfig& config);

/// Convex combination of two examples: features and labels both mixed with
/// the same lambda. lambda in {0, 1} returns the endpoint exactly.
LabeledExample mixup(const LabeledExample& a, const LabeledExample& b, double lambda);

/// Pre-generated labeled samples produced without touching the private data,
/// so drawing from them carries no privacy cost.
struct SyntheticPool {
  std::vector<LabeledExample> samples;  // one-hot labels
  std::size_t num_classes = 0;
  std::string provenance;
  std::vector<std::size_t> missing_classes;  // classes with zero samples
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Augmentation counts: ka base self-augmentations, km mixup outputs, kd pool
/// draws. k_total = ka + km + kd is the K that gradients are averaged over.
struct AugmentationConfig {
  std::size_t ka = 16;
  std::size_t km = 0;
  std::size_t kd = 0;
  std::size_t k_total() const { return ka + km + kd; }
};

/// Throws ConfigError when the counts are unusable (k_total == 0, mixup with
/// an empty base set, or kd > 0 without a nonempty pool).
void validate_augmentation(const AugmentationConfig& config, const SyntheticPool* pool);

/// ka independently transformed copies of x; labels unchanged.
std::vector<LabeledExample> self_augment(const LabeledExample& x, std::size_t ka,
                                         const TransformPipeline& pipeline, Rng& rng);

/// The full augmentation set S u S' for one example: ka self-augmentations,
/// kd uniform pool draws, then km mixups of pairs drawn without replacement
/// from the first ka + kd elements, each with a fresh lambda. Reads exactly
/// one training example.
std::vector<LabeledExample> build_augmentation_set(const LabeledExample& x,
                                                   const SyntheticPool* pool,
                                                   const AugmentationConfig& config,
                                                   const TransformPipeline& pipeline,
                                                   const MixupConfig& mix, Rng& rng);

}  // namespace dpmix
