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

namespace dpmix {

/// Default Renyi order grid used for accounting.
std::vector<double> default_rdp_orders();

struct AccountantParams {
  double q = 0.0;       // Poisson sampling rate, expected-batch / N
  double sigma = 1.0;   // noise multiplier, > 0
  std::size_t steps = 0;
  double delta = 1e-5;
  std::vector<double> orders = default_rdp_orders();
};

struct RdpCurve {
  std::vector<double> orders;
  std::vector<double> eps_rdp;
};

/// Single-step RDP of the Poisson-subsampled Gaussian mechanism at one order.
///
/// Integer orders use the exact binomial expansion
///   (1/(a-1)) log sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 sigma^2))
/// evaluated in log space. Fractional orders are upper-bounded by the value
/// at the ceiling integer order (RDP is non-decreasing in the order), which
/// is conservative.
double rdp_subsampled_gaussian(double q, double sigma, double order);

RdpCurve rdp_curve(double q, double sigma, std::span<const double> orders);

/// RDP composes additively: steps repetitions multiply each entry by steps.
RdpCurve compose(const RdpCurve& curve, std::size_t steps);

struct DpPoint {
  double eps;
  double order;  // the minimizing Renyi order
};

/// Classic conversion: eps = min over orders of eps_rdp(a) + log(1/delta)/(a-1).
DpPoint rdp_to_dp(const RdpCurve& curve, double delta);

/// Full pipeline: single-step curve, compose over params.steps, convert.
DpPoint accountant_epsilon(const AccountantParams& params);

/// Bisection over sigma in [1e-2, 1e3] until the accounted epsilon lands in
/// [0.99 target, target]. The returned sigma never exceeds the target's
/// budget. Throws CalibrationError when the window is unreachable.
double calibrate_sigma(double target_eps, const AccountantParams& params);

}  // namespace dpmix
