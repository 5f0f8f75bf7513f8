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

#include "dpmix/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpmix/error.hpp"

namespace dpmix {
namespace {

double log_binomial(long long n, long long k) {
  return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
         std::lgamma(static_cast<double>(n - k + 1));
}

double log_sum_exp(const std::vector<double>& terms) {
  const double m = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

void check_params(double q, double sigma, double order) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("accountant: q must be in [0, 1]");
  if (!(sigma > 0.0)) throw DomainError("accountant: sigma must be positive");
  if (!(order > 1.0)) throw DomainError("accountant: Renyi order must exceed 1");
}

}  // namespace

std::vector<double> default_rdp_orders() {
  return {1.25, 1.5, 1.75, 2,  2.5, 3,  4,  5,  6,   8,
          10,   12,  16,   20, 24,  32, 48, 64, 128, 256};
}

double rdp_subsampled_gaussian(double q, double sigma, double order) {
  check_params(q, sigma, order);
  if (q == 0.0) return 0.0;

  // Fractional orders are bounded by the ceiling integer order.
  const long long a = static_cast<long long>(std::ceil(order - 1e-12));
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
  if (q == 1.0) return static_cast<double>(a) * inv_two_sigma_sq;

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> terms(static_cast<std::size_t>(a) + 1);
  for (long long k = 0; k <= a; ++k) {
    // k(k-1) == 0 contributes nothing; skip it so a tiny sigma (infinite
    // 1/(2 sigma^2)) cannot produce 0 * inf.
    const double pairs = static_cast<double>(k) * static_cast<double>(k - 1);
    terms[static_cast<std::size_t>(k)] =
        log_binomial(a, k) + static_cast<double>(a - k) * log_1mq +
        static_cast<double>(k) * log_q + (pairs > 0.0 ? pairs * inv_two_sigma_sq : 0.0);
  }
  // The k-exponential factors are all >= 1, so the sum is >= 1 and the RDP
  // value is nonnegative; clamp away rounding residue.
  const double eps = log_sum_exp(terms) / (static_cast<double>(a) - 1.0);
  return std::max(0.0, eps);
}

RdpCurve rdp_curve(double q, double sigma, std::span<const double> orders) {
  if (orders.empty()) throw DomainError("accountant: order grid is empty");
  if (!std::is_sorted(orders.begin(), orders.end(),
                      [](double lhs, double rhs) { return lhs <= rhs; })) {
    // strictly ascending check: is_sorted with <= comparator flags duplicates
    throw DomainError("accountant: orders must be strictly ascending");
  }
  RdpCurve curve;
  curve.orders.assign(orders.begin(), orders.end());
  curve.eps_rdp.reserve(orders.size());
  for (double a : orders) curve.eps_rdp.push_back(rdp_subsampled_gaussian(q, sigma, a));
  return curve;
}

RdpCurve compose(const RdpCurve& curve, std::size_t steps) {
  RdpCurve out = curve;
  for (double& e : out.eps_rdp) e *= static_cast<double>(steps);
  return out;
}

DpPoint rdp_to_dp(const RdpCurve& curve, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("accountant: delta must be in (0, 1)");
  if (curve.orders.empty() || curve.orders.size() != curve.eps_rdp.size()) {
    throw DomainError("accountant: malformed RDP curve");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  DpPoint best{std::numeric_limits<double>::infinity(), 0.0};
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    const double eps = curve.eps_rdp[i] + log_inv_delta / (curve.orders[i] - 1.0);
    if (eps < best.eps) best = {eps, curve.orders[i]};
  }
  return best;
}

DpPoint accountant_epsilon(const AccountantParams& params) {
  return rdp_to_dp(compose(rdp_curve(params.q, params.sigma, params.orders), params.steps),
                   params.delta);
}

double calibrate_sigma(double target_eps, const AccountantParams& params) {
  if (!(target_eps > 0.0)) throw DomainError("calibrate: target epsilon must be positive");
  constexpr double kSigmaLow = 1e-2;
  constexpr double kSigmaHigh = 1e3;
  constexpr int kMaxIterations = 60;
  constexpr double kWindow = 0.99;

  auto eps_at = [&](double sigma) {
    AccountantParams p = params;
    p.sigma = sigma;
    return accountant_epsilon(p).eps;
  };

  double lo = kSigmaLow;
  double hi = kSigmaHigh;
  if (eps_at(hi) > target_eps) {
    throw CalibrationError("calibrate: target epsilon unreachable with sigma <= 1e3");
  }
  const double eps_lo = eps_at(lo);
  if (eps_lo <= target_eps) {
    // Even the smallest sigma stays within budget; accept it only if tight.
    if (eps_lo >= kWindow * target_eps) return lo;
    throw CalibrationError("calibrate: target epsilon unreachable with sigma >= 1e-2");
  }
  for (int i = 0; i < kMaxIterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double eps_mid = eps_at(mid);
    if (eps_mid > target_eps) {
      lo = mid;
    } else {
      hi = mid;
      if (eps_mid >= kWindow * target_eps) return hi;
    }
  }
  throw CalibrationError("calibrate: bisection did not land in the tolerance window");
}

}  // namespace dpmix
