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
#include <random>

namespace dpmix {

/// Seedable statistical RNG with hand-rolled samplers so draw sequences are
/// stable across standard-library implementations. Not a cryptographic source.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal (Box-Muller, pairs cached).
  double normal();

  /// Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled by boosting.
  double gamma(double alpha);

  /// Beta(a, b) from two gamma draws.
  double beta(double a, double b);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Named substreams fanned out from one master seed. Keeping streams separate
/// means toggling one feature never perturbs another's draws, so paired runs
/// share data order, init, and noise exactly.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSampling = 2,
  kAugment = 3,
  kNoise = 4,
  kToyData = 5,
  kGradStats = 6,
};

/// Counter-based split: mixes (master, stream, a, b) through an avalanche
/// finalizer. Distinct keys give statistically independent substreams.
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

Rng substream(std::uint64_t master, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace dpmix
