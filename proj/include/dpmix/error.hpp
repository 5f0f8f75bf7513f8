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

#include <stdexcept>
#include <string>

namespace dpmix {

/// Mismatched or invalid shapes at a public boundary.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside its mathematical domain.
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf crossed a public boundary.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Inconsistent or invalid run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated, or out-of-range data files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Noise calibration could not reach the target within its search range.
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dpmix
