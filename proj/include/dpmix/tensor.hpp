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
#include <span>
#include <vector>

#include "dpmix/error.hpp"

namespace dpmix {

/// Dense row-major tensor of 64-bit floats. Invariant: product(shape) == data.size().
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double l2_norm() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::size_t shape_size(std::span<const std::size_t> shape);

bool all_finite(std::span<const double> values);

/// Throws NumericError if any value is NaN or Inf.
void check_finite(std::span<const double> values, const char* context);

/// Image features plus a probability-vector label (one-hot or mixed).
struct LabeledExample {
  Tensor features;
  std::vector<double> label;
};

bool is_probability_vector(std::span<const double> label, double tol = 1e-9);
void check_probability_vector(std::span<const double> label, const char* context);

}  // namespace dpmix
