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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dpmix/augment.hpp"
#include "dpmix/data.hpp"
#include "dpmix/rng.hpp"

using namespace dpmix;

namespace {

// Quadrature oracle for P(X < t), X ~ Beta(a, a). Substituting u = x^a turns
// the singular density integral into the smooth (1/a) int_0^{t^a}
// (1 - u^(1/a))^(a-1) du, which composite Simpson handles directly.
double beta_cdf_oracle(double a, double t) {
  const double upper = std::pow(t, a);
  const int n = 20000;  // even
  const double h = upper / n;
  auto f = [a](double u) { return std::pow(1.0 - std::pow(u, 1.0 / a), a - 1.0); };
  double sum = f(0.0) + f(upper);
  for (int i = 1; i < n; ++i) sum += f(i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  const double integral = sum * h / 3.0 / a;
  const double log_beta = 2.0 * std::lgamma(a) - std::lgamma(2.0 * a);
  return integral / std::exp(log_beta);
}

LabeledExample constant_example(double pixel, std::vector<double> label,
                                std::vector<std::size_t> shape = {1, 2, 2}) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = pixel;
  return {std::move(t), std::move(label)};
}

TransformPipeline identity_pipeline() {
  TransformPipeline p;
  p.flip_probability = 0.0;
  p.crop_padding = 0;
  return p;
}

SyntheticPool marker_pool(std::size_t size, std::size_t num_classes, double marker,
                          std::vector<std::size_t> shape = {1, 2, 2}) {
  SyntheticPool pool;
  pool.num_classes = num_classes;
  for (std::size_t i = 0; i < size; ++i) {
    pool.samples.push_back(
        constant_example(marker, one_hot(i % num_classes, num_classes), shape));
  }
  return pool;
}

}  // namespace

TEST_CASE("lambda draws stay in the unit interval") {
  Rng rng(1);
  const MixupConfig mix;
  for (int i = 0; i < 1000; ++i) {
    const double lambda = sample_lambda(rng, mix);
    CHECK(lambda >= 0.0);
    CHECK(lambda <= 1.0);
  }
}

TEST_CASE("lambda is symmetric around one half") {
  Rng rng(2);
  const MixupConfig mix;  // alpha = 0.2
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += sample_lambda(rng, mix);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("lambda tail mass matches the numeric Beta CDF") {
  // Both tails of Beta(0.2, 0.2): P(X < 0.1) + P(X > 0.9) = 2 * P(X < 0.1).
  const double oracle = 2.0 * beta_cdf_oracle(0.2, 0.1);
  CHECK(oracle == doctest::Approx(0.67337955686011425).epsilon(1e-6));

  Rng rng(3);
  const MixupConfig mix;
  const int n = 100000;
  int tail = 0;
  for (int i = 0; i < n; ++i) {
    const double lambda = sample_lambda(rng, mix);
    if (lambda < 0.1 || lambda > 0.9) ++tail;
  }
  CHECK(static_cast<double>(tail) / n == doctest::Approx(oracle).epsilon(0.015));
}

TEST_CASE("mixup endpoints return the inputs exactly") {
  const LabeledExample a = constant_example(0.25, {1.0, 0.0});
  const LabeledExample b = constant_example(0.75, {0.0, 1.0});
  const LabeledExample at_one = mixup(a, b, 1.0);
  CHECK(at_one.features.data == a.features.data);
  CHECK(at_one.label == a.label);
  const LabeledExample at_zero = mixup(a, b, 0.0);
  CHECK(at_zero.features.data == b.features.data);
  CHECK(at_zero.label == b.label);
}

TEST_CASE("mixup arithmetic follows the convex combination") {
  const LabeledExample a = constant_example(0.0, {1.0, 0.0});
  const LabeledExample b = constant_example(1.0, {0.0, 1.0});
  const LabeledExample mixed = mixup(a, b, 0.25);
  for (double v : mixed.features.data) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(mixed.label[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(mixed.label[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("mixup rejects bad lambda and mismatched shapes") {
  const LabeledExample a = constant_example(0.0, {1.0, 0.0});
  const LabeledExample b = constant_example(1.0, {0.0, 1.0});
  CHECK_THROWS_AS(mixup(a, b, -0.1), DomainError);
  CHECK_THROWS_AS(mixup(a, b, 1.1), DomainError);
  const LabeledExample c = constant_example(1.0, {0.0, 1.0}, {1, 1, 4});
  CHECK_THROWS_AS(mixup(a, c, 0.5), ShapeError);
}

TEST_CASE("mixup convexity holds over random draws") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    LabeledExample a = constant_example(0.0, {0.0, 0.0, 0.0});
    LabeledExample b = constant_example(0.0, {0.0, 0.0, 0.0});
    for (double& v : a.features.data) v = rng.uniform();
    for (double& v : b.features.data) v = rng.uniform();
    a.label = one_hot(rng.below(3), 3);
    b.label = one_hot(rng.below(3), 3);
    const double lambda = rng.uniform();
    const LabeledExample m = mixup(a, b, lambda);
    for (std::size_t i = 0; i < m.features.size(); ++i) {
      CHECK(m.features[i] >= std::min(a.features[i], b.features[i]) - 1e-12);
      CHECK(m.features[i] <= std::max(a.features[i], b.features[i]) + 1e-12);
    }
    CHECK(is_probability_vector(m.label));
  }
}

TEST_CASE("identity pipeline returns the example unchanged") {
  const LabeledExample x = constant_example(0.5, {1.0, 0.0});
  Rng rng(4);
  const auto augs = self_augment(x, 1, identity_pipeline(), rng);
  REQUIRE(augs.size() == 1);
  CHECK(augs[0].features.data == x.features.data);
  CHECK(augs[0].label == x.label);
}

TEST_CASE("sixteen self-augmentations all keep the label") {
  LabeledExample x = constant_example(0.0, {0.0, 1.0}, {1, 4, 4});
  Rng seed_rng(5);
  for (double& v : x.features.data) v = seed_rng.uniform();
  TransformPipeline pipeline;
  pipeline.crop_padding = 1;
  Rng rng(6);
  const auto augs = self_augment(x, 16, pipeline, rng);
  REQUIRE(augs.size() == 16);
  for (const auto& aug : augs) {
    CHECK(aug.label == x.label);
    CHECK(aug.features.shape == x.features.shape);
  }
}

TEST_CASE("self augmentation replays under the same seed") {
  LabeledExample x = constant_example(0.0, {0.0, 1.0}, {1, 4, 4});
  Rng fill(7);
  for (double& v : x.features.data) v = fill.uniform();
  TransformPipeline pipeline;
  pipeline.crop_padding = 2;
  Rng rng_a(8);
  Rng rng_b(8);
  const auto first = self_augment(x, 8, pipeline, rng_a);
  const auto second = self_augment(x, 8, pipeline, rng_b);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].features.data == second[i].features.data);
  }
}

TEST_CASE("horizontal flip reverses rows") {
  Tensor img({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  TransformPipeline pipeline;
  pipeline.crop_enabled = false;
  pipeline.flip_probability = 1.0;
  Rng rng(9);
  const Tensor out = apply_pipeline(pipeline, img, rng);
  CHECK(out.data == std::vector<double>{2.0, 1.0, 4.0, 3.0});
}

TEST_CASE("crop keeps shape and value range") {
  Rng fill(10);
  Tensor img({3, 8, 8});
  for (double& v : img.data) v = fill.uniform();
  TransformPipeline pipeline;
  pipeline.crop_padding = 4;
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor out = apply_pipeline(pipeline, img, rng);
    CHECK(out.shape == img.shape);
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    for (double v : out.data) {
      CHECK(v >= *lo);
      CHECK(v <= *hi);
    }
  }
}

TEST_CASE("self-aug configuration is the km=kd=0 special case") {
  LabeledExample x = constant_example(0.3, {1.0, 0.0});
  TransformPipeline pipeline;
  pipeline.crop_padding = 1;
  AugmentationConfig config;
  config.ka = 16;
  config.km = 0;
  config.kd = 0;
  Rng rng_a(12);
  Rng rng_b(12);
  const auto via_builder =
      build_augmentation_set(x, nullptr, config, pipeline, MixupConfig{}, rng_a);
  const auto via_self_aug = self_augment(x, 16, pipeline, rng_b);
  REQUIRE(via_builder.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(via_builder[i].features.data == via_self_aug[i].features.data);
    CHECK(via_builder[i].label == via_self_aug[i].label);
  }
}

TEST_CASE("ka=16 km=18 kd=2 yields 36 elements with two pool draws") {
  const LabeledExample x = constant_example(0.25, {1.0, 0.0});
  const SyntheticPool pool = marker_pool(40, 2, 7.0);
  AugmentationConfig config;
  config.ka = 16;
  config.km = 18;
  config.kd = 2;
  Rng rng(13);
  const auto set =
      build_augmentation_set(x, &pool, config, identity_pipeline(), MixupConfig{}, rng);
  REQUIRE(set.size() == 36);
  // Pool draws sit right after the self-augmentations and carry the marker.
  for (std::size_t i = 16; i < 18; ++i) {
    CHECK(set[i].features[0] == 7.0);
    CHECK(is_probability_vector(set[i].label));
  }
}

TEST_CASE("ka=8 km=8 kd=4 yields 20 elements") {
  const LabeledExample x = constant_example(0.25, {1.0, 0.0});
  const SyntheticPool pool = marker_pool(10, 2, 3.0);
  AugmentationConfig config;
  config.ka = 8;
  config.km = 8;
  config.kd = 4;
  Rng rng(14);
  const auto set =
      build_augmentation_set(x, &pool, config, identity_pipeline(), MixupConfig{}, rng);
  CHECK(set.size() == 20);
}

TEST_CASE("set size law holds for random configurations") {
  Rng rng(15);
  const SyntheticPool pool = marker_pool(12, 3, 2.0);
  const LabeledExample x = constant_example(0.5, one_hot(0, 3));
  TransformPipeline pipeline;
  pipeline.crop_padding = 1;
  for (int trial = 0; trial < 100; ++trial) {
    AugmentationConfig config;
    config.ka = 1 + rng.below(8);
    config.km = rng.below(8);
    config.kd = rng.below(4);
    const auto set = build_augmentation_set(x, &pool, config, pipeline, MixupConfig{}, rng);
    CHECK(set.size() == config.k_total());
  }
}

TEST_CASE("self-mix keeps the label exactly when kd is zero") {
  Rng rng(16);
  TransformPipeline pipeline;
  pipeline.crop_padding = 1;
  for (int trial = 0; trial < 20; ++trial) {
    LabeledExample x = constant_example(0.0, one_hot(rng.below(4), 4), {1, 4, 4});
    for (double& v : x.features.data) v = rng.uniform();
    AugmentationConfig config;
    config.ka = 1 + rng.below(6);
    config.km = 1 + rng.below(6);
    config.kd = 0;
    const auto set = build_augmentation_set(x, nullptr, config, pipeline, MixupConfig{}, rng);
    for (const auto& element : set) CHECK(element.label == x.label);
  }
}

TEST_CASE("builder output depends only on the example, pool, and seed") {
  // Byte-level locality audit: two datasets sharing one example but differing
  // everywhere else produce identical augmentation sets for that example.
  ToySpec spec;
  spec.classes = 3;
  spec.per_class = 4;
  spec.image_size = 4;
  spec.separation = 4.0;
  spec.seed = 21;
  const Dataset world_a = make_toy_dataset(spec);
  spec.seed = 22;  // a different world
  Dataset world_b = make_toy_dataset(spec);
  world_b.labels[0] = world_a.labels[0];
  std::copy_n(world_a.images.begin(), world_a.pixels_per_image(), world_b.images.begin());

  const SyntheticPool pool = marker_pool(9, 3, 1.5, {1, 4, 4});
  AugmentationConfig config;
  config.ka = 4;
  config.km = 4;
  config.kd = 2;
  TransformPipeline pipeline;
  pipeline.crop_padding = 1;

  Rng rng_a(33);
  Rng rng_b(33);
  const auto set_a =
      build_augmentation_set(world_a.example(0), &pool, config, pipeline, MixupConfig{}, rng_a);
  const auto set_b =
      build_augmentation_set(world_b.example(0), &pool, config, pipeline, MixupConfig{}, rng_b);
  REQUIRE(set_a.size() == set_b.size());
  for (std::size_t i = 0; i < set_a.size(); ++i) {
    CHECK(set_a[i].features.data == set_b[i].features.data);
    CHECK(set_a[i].label == set_b[i].label);
  }
}

TEST_CASE("kd without a pool is a configuration error") {
  const LabeledExample x = constant_example(0.5, {1.0, 0.0});
  AugmentationConfig config;
  config.ka = 2;
  config.kd = 1;
  Rng rng(18);
  CHECK_THROWS_AS(
      build_augmentation_set(x, nullptr, config, identity_pipeline(), MixupConfig{}, rng),
      ConfigError);
  SyntheticPool empty;
  empty.num_classes = 2;
  CHECK_THROWS_AS(
      build_augmentation_set(x, &empty, config, identity_pipeline(), MixupConfig{}, rng),
      ConfigError);
}

TEST_CASE("empty augmentation configurations are rejected") {
  AugmentationConfig config;
  config.ka = 0;
  config.km = 0;
  config.kd = 0;
  CHECK_THROWS_AS(validate_augmentation(config, nullptr), ConfigError);
  config.km = 3;  // mixup with an empty base set
  CHECK_THROWS_AS(validate_augmentation(config, nullptr), ConfigError);
}
