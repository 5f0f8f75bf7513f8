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

#include "dpmix/tensor.hpp"

#include <cmath>
#include <string>

namespace dpmix {

std::size_t shape_size(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  data.assign(shape_size(shape), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor: shape does not match data length");
  }
}

double Tensor::l2_norm() const {
  double sum = 0.0;
  for (double v : data) sum += v * v;
  return std::sqrt(sum);
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(std::span<const double> values, const char* context) {
  if (!all_finite(values)) {
    throw NumericError(std::string("non-finite value in ") + context);
  }
}

bool is_probability_vector(std::span<const double> label, double tol) {
  double sum = 0.0;
  for (double v : label) {
    if (!(v >= 0.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

void check_probability_vector(std::span<const double> label, const char* context) {
  if (!is_probability_vector(label)) {
    throw DomainError(std::string("label is not a probability vector in ") + context);
  }
}

}  // namespace dpmix
