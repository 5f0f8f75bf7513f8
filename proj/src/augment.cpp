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

#include "dpmix/augment.hpp"

#include <algorithm>
#include <cstddef>

namespace dpmix {
namespace {

// Mirror index without repeating the edge pixel (period 2n - 2).
std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * (static_cast<long long>(n) - 1);
  long long m = ((i % period) + period) % period;
  if (m >= static_cast<long long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

Tensor random_crop_reflect(const Tensor& image, std::size_t padding, Rng& rng) {
  const std::size_t channels = image.shape[0];
  const std::size_t height = image.shape[1];
  const std::size_t width = image.shape[2];
  const std::size_t dy = rng.below(2 * padding + 1);
  const std::size_t dx = rng.below(2 * padding + 1);
  Tensor out(image.shape);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = image.data.data() + c * height * width;
    double* dst = out.data.data() + c * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy =
          reflect_index(static_cast<long long>(y + dy) - static_cast<long long>(padding), height);
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t sx =
            reflect_index(static_cast<long long>(x + dx) - static_cast<long long>(padding), width);
        dst[y * width + x] = plane[sy * width + sx];
      }
    }
  }
  return out;
}

void flip_horizontal(Tensor& image) {
  const std::size_t channels = image.shape[0];
  const std::size_t height = image.shape[1];
  const std::size_t width = image.shape[2];
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = image.data.data() + c * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      std::reverse(plane + y * width, plane + (y + 1) * width);
    }
  }
}

}  // namespace

Tensor apply_pipeline(const TransformPipeline& pipeline, const Tensor& image, Rng& rng) {
  if (image.shape.size() != 3) throw ShapeError("apply_pipeline: image must be C x H x W");
  // Draw order is fixed (crop offsets, then flip) so seeded runs replay.
  Tensor out = (pipeline.crop_enabled && pipeline.crop_padding > 0)
                   ? random_crop_reflect(image, pipeline.crop_padding, rng)
                   : image;
  if (pipeline.flip_enabled && rng.bernoulli(pipeline.flip_probability)) {
    flip_horizontal(out);
  }
  return out;
}

double sample_lambda(Rng& rng, const MixupConfig& config) {
  if (!(config.alpha > 0.0)) throw DomainError("mixup alpha must be positive");
  return rng.beta(config.alpha, config.alpha);
}

LabeledExample mixup(const LabeledExample& a, const LabeledExample& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("mixup: lambda outside [0, 1]");
  if (!a.features.same_shape(b.features) || a.label.size() != b.label.size()) {
    throw ShapeError("mixup: inputs disagree in shape");
  }
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;

  LabeledExample out;
  out.features = Tensor(a.features.shape);
  for (std::size_t i = 0; i < a.features.size(); ++i) {
    out.features[i] = lambda * a.features[i] + (1.0 - lambda) * b.features[i];
  }
  if (a.label == b.label) {
    out.label = a.label;  // mixing a label with itself is the identity
  } else {
    out.label.resize(a.label.size());
    for (std::size_t i = 0; i < a.label.size(); ++i) {
      out.label[i] = lambda * a.label[i] + (1.0 - lambda) * b.label[i];
    }
  }
  return out;
}

void validate_augmentation(const AugmentationConfig& config, const SyntheticPool* pool) {
  if (config.k_total() == 0) {
    throw ConfigError("augmentation: ka + km + kd must be at least 1");
  }
  if (config.km > 0 && config.ka + config.kd == 0) {
    throw ConfigError("augmentation.km: mixup needs a nonempty base set (ka + kd >= 1)");
  }
  if (config.kd > 0 && (pool == nullptr || pool->empty())) {
    throw ConfigError("augmentation.kd: requires a nonempty synthetic pool");
  }
}

std::vector<LabeledExample> self_augment(const LabeledExample& x, std::size_t ka,
                                         const TransformPipeline& pipeline, Rng& rng) {
  if (ka == 0) throw ConfigError("self_augment: ka must be at least 1");
  std::vector<LabeledExample> out;
  out.reserve(ka);
  for (std::size_t i = 0; i < ka; ++i) {
    out.push_back({apply_pipeline(pipeline, x.features, rng), x.label});
  }
  return out;
}

std::vector<LabeledExample> build_augmentation_set(const LabeledExample& x,
                                                   const SyntheticPool* pool,
                                                   const AugmentationConfig& config,
                                                   const TransformPipeline& pipeline,
                                                   const MixupConfig& mix, Rng& rng) {
  validate_augmentation(config, pool);
  std::vector<LabeledExample> set;
  set.reserve(config.k_total());
  for (std::size_t i = 0; i < config.ka; ++i) {
    set.push_back({apply_pipeline(pipeline, x.features, rng), x.label});
  }
  for (std::size_t i = 0; i < config.kd; ++i) {
    set.push_back(pool->samples[rng.below(pool->size())]);
  }
  const std::size_t base = config.ka + config.kd;
  for (std::size_t i = 0; i < config.km; ++i) {
    const double lambda = sample_lambda(rng, mix);
    std::size_t first = 0;
    std::size_t second = 0;
    if (base >= 2) {
      // Distinct pair, uniform without replacement; repeats across draws allowed.
      first = rng.below(base);
      second = rng.below(base - 1);
      if (second >= first) ++second;
    }
    set.push_back(mixup(set[first], set[second], lambda));
  }
  return set;
}

}  // namespace dpmix
