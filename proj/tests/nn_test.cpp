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

#include <cmath>
#include <filesystem>
#include <limits>

#include "dpmix/data.hpp"
#include "dpmix/model.hpp"
#include "dpmix/rng.hpp"

using namespace dpmix;

namespace {

ModelConfig logistic_config(std::size_t channels, std::size_t side, std::size_t classes) {
  ModelConfig mc;
  mc.kind = ArchKind::kLogisticRegression;
  mc.input_shape = {channels, side, side};
  mc.num_classes = classes;
  return mc;
}

Tensor random_image(const ModelConfig& mc, Rng& rng) {
  Tensor x(mc.input_shape);
  for (double& v : x.data) v = rng.uniform();
  return x;
}

std::vector<double> random_soft_label(std::size_t k, Rng& rng) {
  std::vector<double> y(k);
  double sum = 0.0;
  for (double& v : y) {
    v = rng.uniform() + 1e-3;
    sum += v;
  }
  for (double& v : y) v /= sum;
  return y;
}

double max_relative_error(const Tensor& analytic, const Tensor& estimate) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - estimate[i]) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("logistic regression with zero weights gives zero logits") {
  const ModelConfig mc = logistic_config(1, 2, 3);
  const Model model = make_zero_model(mc);
  Rng rng(9);
  const Tensor logits = forward(model, random_image(mc, rng));
  REQUIRE(logits.size() == 3);
  for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("logistic regression with identity weights reproduces the input") {
  ModelConfig mc;
  mc.kind = ArchKind::kLogisticRegression;
  mc.input_shape = {3, 1, 1};
  mc.num_classes = 3;
  Model model = make_zero_model(mc);
  for (std::size_t i = 0; i < 3; ++i) model.params[i * 3 + i] = 1.0;  // W = I, bias 0
  const Tensor x({3, 1, 1}, {0.3, -1.2, 2.5});
  const Tensor logits = forward(model, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(logits[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("mlp(4) forward matches a straight-line recomputation") {
  ModelConfig mc;
  mc.kind = ArchKind::kMlp;
  mc.input_shape = {1, 1, 3};
  mc.num_classes = 2;
  mc.hidden = {4};
  const Model model = make_model(mc, 123);
  const Tensor x({1, 1, 3}, {0.25, -0.5, 0.75});

  // Independent straight-line chain over the documented flat layout:
  // W1 (4x3) at 0, b1 at 12, W2 (2x4) at 16, b2 at 24.
  const auto& p = model.params.data;
  double hidden[4];
  for (int i = 0; i < 4; ++i) {
    double z = p[12 + i];
    for (int j = 0; j < 3; ++j) z += p[i * 3 + j] * x[j];
    hidden[i] = std::tanh(z);
  }
  double expected[2];
  for (int i = 0; i < 2; ++i) {
    double z = p[24 + i];
    for (int j = 0; j < 4; ++j) z += p[16 + i * 4 + j] * hidden[j];
    expected[i] = z;
  }

  const Tensor logits = forward(model, x);
  CHECK(logits[0] == doctest::Approx(expected[0]).epsilon(1e-12));
  CHECK(logits[1] == doctest::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("forward rejects shape mismatches and non-finite input") {
  const ModelConfig mc = logistic_config(1, 2, 3);
  const Model model = make_zero_model(mc);
  CHECK_THROWS_AS(forward(model, Tensor({1, 3, 2})), ShapeError);
  Tensor bad(mc.input_shape);
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward(model, bad), NumericError);
}

TEST_CASE("forward is bitwise deterministic") {
  ModelConfig mc;
  mc.kind = ArchKind::kSmallCnn;
  mc.input_shape = {3, 6, 6};
  mc.num_classes = 4;
  mc.conv_channels = 4;
  const Model model = make_model(mc, 77);
  Rng rng(5);
  const Tensor x = random_image(mc, rng);
  const Tensor a = forward(model, x);
  const Tensor b = forward(model, x);
  CHECK(a.data == b.data);
}

TEST_CASE("loss of uniform logits with a one-hot label is ln(k)") {
  for (std::size_t k : {2u, 5u, 10u}) {
    Tensor logits({k});
    std::vector<double> label(k, 0.0);
    label[0] = 1.0;
    CHECK(loss(logits, label) == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
  }
}

TEST_CASE("saturated correct class drives the loss to zero") {
  const Tensor logits({3}, {50.0, 0.0, 0.0});
  const std::vector<double> label{1.0, 0.0, 0.0};
  CHECK(loss(logits, label) < 1e-9);
  CHECK(loss(logits, label) >= 0.0);
}

TEST_CASE("soft-label loss matches the scalar formula") {
  const Tensor logits({2}, {1.0, 0.0});
  const std::vector<double> label{0.25, 0.75};
  // -0.25 ln sigma(z)_1 - 0.75 ln sigma(z)_2 = 0.75 + ln(1 + e^-1)
  CHECK(loss(logits, label) == doctest::Approx(1.0632616875182228).epsilon(1e-12));
}

TEST_CASE("loss dominates the label entropy") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(8);
    Tensor logits({k});
    for (double& v : logits.data) v = 4.0 * (rng.uniform() - 0.5);
    const auto label = random_soft_label(k, rng);
    const double value = loss(logits, label);
    CHECK(value >= 0.0);
    CHECK(value - entropy(label) >= -1e-12);
  }
}

TEST_CASE("loss rejects length mismatches and non-finite logits") {
  CHECK_THROWS_AS(loss(Tensor({3}), std::vector<double>{0.5, 0.5}), ShapeError);
  Tensor bad({2});
  bad[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(loss(bad, std::vector<double>{0.5, 0.5}), NumericError);
}

TEST_CASE("tensors reject shape/data mismatches") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK(Tensor({2, 3}).size() == 6);
}

TEST_CASE("logistic gradient at zero weights matches the closed form") {
  ModelConfig mc;
  mc.kind = ArchKind::kLogisticRegression;
  mc.input_shape = {1, 1, 3};
  mc.num_classes = 2;
  const Model model = make_zero_model(mc);
  const LabeledExample ex{Tensor({1, 1, 3}, {0.2, 0.4, 0.8}), {1.0, 0.0}};
  const Tensor grad = per_example_gradient(model, ex);
  // dz = p - y with p = (0.5, 0.5); dW = dz (x) x, db = dz.
  const double dz[2] = {-0.5, 0.5};
  for (int c = 0; c < 2; ++c) {
    for (int j = 0; j < 3; ++j) {
      CHECK(grad[c * 3 + j] == doctest::Approx(dz[c] * ex.features[j]).epsilon(1e-15));
    }
    CHECK(grad[6 + c] == doctest::Approx(dz[c]).epsilon(1e-15));
  }
}

TEST_CASE("label equal to softmax makes the logistic gradient vanish") {
  ModelConfig mc = logistic_config(1, 2, 4);
  const Model model = make_model(mc, 2024);
  Rng rng(8);
  const Tensor x = random_image(mc, rng);
  const LabeledExample ex{x, softmax(forward(model, x).data)};
  const Tensor grad = per_example_gradient(model, ex);
  for (double v : grad.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("mlp(8) analytic gradient agrees with central differences") {
  ModelConfig mc;
  mc.kind = ArchKind::kMlp;
  mc.input_shape = {1, 4, 4};
  mc.num_classes = 3;
  mc.hidden = {8};
  const Model model = make_model(mc, 55);
  Rng rng(56);
  const LabeledExample ex{random_image(mc, rng), one_hot(1, 3)};
  const Tensor analytic = per_example_gradient(model, ex);
  const Tensor fd = finite_difference_gradient(model, ex, 1e-5);
  CHECK(max_relative_error(analytic, fd) < 1e-4);
}

TEST_CASE("halving h shrinks the central-difference error about 4x") {
  ModelConfig mc;
  mc.kind = ArchKind::kMlp;
  mc.input_shape = {1, 2, 2};
  mc.num_classes = 2;
  mc.hidden = {4};
  const Model model = make_model(mc, 60);
  Rng rng(61);
  const LabeledExample ex{random_image(mc, rng), {1.0, 0.0}};
  const Tensor analytic = per_example_gradient(model, ex);

  auto fd_error = [&](double h) {
    const Tensor fd = finite_difference_gradient(model, ex, h);
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      sum_sq += (fd[i] - analytic[i]) * (fd[i] - analytic[i]);
    }
    return std::sqrt(sum_sq);
  };
  const double coarse = fd_error(2e-3);
  const double fine = fd_error(1e-3);
  CHECK(fine < coarse);
  CHECK(coarse / fine == doctest::Approx(4.0).epsilon(0.25));
}

TEST_CASE("central differences track the analytic gradient near zero weights") {
  ModelConfig mc = logistic_config(1, 2, 2);
  Model model = make_zero_model(mc);
  Rng rng(14);
  const LabeledExample ex{random_image(mc, rng), {0.0, 1.0}};
  const Tensor analytic = per_example_gradient(model, ex);
  const Tensor fd = finite_difference_gradient(model, ex, 1e-5);
  CHECK(max_relative_error(analytic, fd) < 1e-8);
}

TEST_CASE("gradients match central differences across architectures") {
  std::vector<ModelConfig> configs;
  configs.push_back(logistic_config(1, 4, 4));
  {
    ModelConfig mc;
    mc.kind = ArchKind::kMlp;
    mc.input_shape = {1, 4, 4};
    mc.num_classes = 4;
    mc.hidden = {8};
    configs.push_back(mc);
  }
  {
    ModelConfig mc;
    mc.kind = ArchKind::kSmallCnn;
    mc.input_shape = {3, 6, 6};
    mc.num_classes = 4;
    mc.conv_channels = 4;
    mc.kernel = 3;
    mc.pool = 2;
    configs.push_back(mc);
  }

  Rng rng(99);
  for (const ModelConfig& mc : configs) {
    for (int trial = 0; trial < 100; ++trial) {
      const Model model = make_model(mc, rng.raw());
      LabeledExample ex{random_image(mc, rng), one_hot(rng.below(mc.num_classes), mc.num_classes)};
      const Tensor analytic = per_example_gradient(model, ex);
      const Tensor fd = finite_difference_gradient(model, ex, 1e-5);
      REQUIRE(max_relative_error(analytic, fd) < 1e-4);
    }
  }
}

TEST_CASE("parameter counts match the architecture arithmetic") {
  CHECK(param_count(logistic_config(3, 32, 10)) == 10 * 3 * 32 * 32 + 10);
  ModelConfig mlp;
  mlp.kind = ArchKind::kMlp;
  mlp.input_shape = {1, 8, 8};
  mlp.num_classes = 10;
  mlp.hidden = {32, 16};
  CHECK(param_count(mlp) == (32 * 64 + 32) + (16 * 32 + 16) + (10 * 16 + 10));
  ModelConfig cnn;
  cnn.kind = ArchKind::kSmallCnn;
  cnn.input_shape = {3, 8, 8};
  cnn.num_classes = 10;
  cnn.conv_channels = 4;
  cnn.kernel = 3;
  cnn.pool = 2;  // conv out 6x6, pooled 3x3
  CHECK(param_count(cnn) == (4 * 3 * 3 * 3 + 4) + (10 * 4 * 3 * 3 + 10));
}

TEST_CASE("model save/load round trip preserves parameters bitwise") {
  ModelConfig mc;
  mc.kind = ArchKind::kMlp;
  mc.input_shape = {1, 4, 4};
  mc.num_classes = 3;
  mc.hidden = {6};
  const Model model = make_model(mc, 4242);
  const auto path = std::filesystem::temp_directory_path() / "dpmix_model_test.bin";
  save_model(model, path);
  const Model loaded = load_model(path);
  CHECK(loaded.config.kind == mc.kind);
  CHECK(loaded.config.hidden == mc.hidden);
  CHECK(loaded.params.data == model.params.data);
  std::filesystem::remove(path);
}
