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

#include "dpmix/rng.hpp"

#include <cmath>

#include "dpmix/error.hpp"

namespace dpmix {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// splitmix64 avalanche finalizer.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t absorb(std::uint64_t h, std::uint64_t k) {
  return mix64(h + 0x9e3779b97f4a7c15ull + k);
}

}  // namespace

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::below: n must be positive");
  // Lemire multiply-shift; bias is at most n / 2^64.
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(engine_()) * static_cast<unsigned __int128>(n)) >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(kTwoPi * u2);
  has_spare_ = true;
  return r * std::cos(kTwoPi * u2);
}

double Rng::gamma(double alpha) {
  if (!(alpha > 0.0)) throw DomainError("Rng::gamma: alpha must be positive");
  if (alpha < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    double u = 1.0 - uniform();
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  // Marsaglia-Tsang squeeze.
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  const double s = x + y;
  if (s <= 0.0) return 0.5;  // both draws underflowed to zero
  return x / s;
}

std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = mix64(master);
  h = absorb(h, static_cast<std::uint64_t>(stream));
  h = absorb(h, a);
  h = absorb(h, b);
  return h;
}

Rng substream(std::uint64_t master, Stream stream, std::uint64_t a, std::uint64_t b) {
  return Rng(derive_seed(master, stream, a, b));
}

}  // namespace dpmix
