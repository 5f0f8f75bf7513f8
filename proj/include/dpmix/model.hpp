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
#include <span>
#include <vector>

#include "dpmix/tensor.hpp"

namespace dpmix {

enum class ArchKind : std::uint8_t {
  kLogisticRegression = 0,
  kMlp = 1,
  kSmallCnn = 2,
};

/// Small differentiable classifiers. All take C x H x W inputs; logistic
/// regression and the MLP flatten them, the CNN is one valid-padding conv +
/// tanh + non-overlapping average pool + a fully connected output layer.
struct ModelConfig {
  ArchKind kind = ArchKind::kLogisticRegression;
  std::vector<std::size_t> input_shape;  // {C, H, W}
  std::size_t num_classes = 0;
  std::vector<std::size_t> hidden;  // MLP hidden layer widths
  std::size_t conv_channels = 8;    // small-cnn
  std::size_t kernel = 3;
  std::size_t pool = 2;
};

struct Model {
  ModelConfig config;
  Tensor params;  // flat, layout documented in model.cpp
};

std::size_t param_count(const ModelConfig& config);
std::size_t input_size(const ModelConfig& config);

/// Per-layer uniform(-s, s) init with s = 1/sqrt(fan_in), drawn from the
/// master seed's init substream.
Model make_model(const ModelConfig& config, std::uint64_t master_seed);
Model make_zero_model(const ModelConfig& config);

/// Logits for one input. Deterministic function of (params, x).
Tensor forward(const Model& model, const Tensor& x);

std::vector<double> softmax(std::span<const double> logits);

/// Softmax cross-entropy supporting soft labels: H(y, softmax(z)).
double loss(const Tensor& logits, std::span<const double> label);

double entropy(std::span<const double> label);

/// Flat gradient of loss(forward(model, x), y) with respect to params.
/// Optionally writes the loss value to loss_out.
Tensor per_example_gradient(const Model& model, const LabeledExample& example,
                            double* loss_out = nullptr);

/// Central-difference oracle: (L(theta + h e_i) - L(theta - h e_i)) / (2h).
Tensor finite_difference_gradient(const Model& model, const LabeledExample& example, double h);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace dpmix
