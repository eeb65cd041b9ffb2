#include "curvlink/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "curvlink/errors.hpp"

namespace curvlink {

std::vector<double> default_orders() {
  std::vector<double> o{1.5, 1.75};
  for (int a = 2; a <= 64; ++a) o.push_back(a);
  for (int a = 128; a <= 4096; a *= 2) o.push_back(a);
  return o;
}

namespace {

double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

// log E[(mu(z)/mu0(z))^alpha] for integer alpha >= 1.
double log_moment_int(double q, double sigma, int alpha) {
  if (alpha <= 1) return 0.0;
  const double log_q = std::log(q);
  const double log_1mq = q < 1.0 ? std::log1p(-q) : -INFINITY;
  double acc = -INFINITY;
  for (int k = 0; k <= alpha; ++k) {
    if (alpha - k > 0 && log_1mq == -INFINITY) continue;
    const double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(k + 1.0) - std::lgamma(alpha - k + 1.0);
    const double term = log_binom + k * log_q + (alpha - k) * (alpha - k > 0 ? log_1mq : 0.0) +
                        (static_cast<double>(k) * k - k) / (2.0 * sigma * sigma);
    acc = log_add(acc, term);
  }
  return acc;
}

}  // namespace

std::vector<RdpPoint> rdp_subsampled_gaussian(double q, double sigma, std::int64_t steps,
                                              std::span<const double> orders,
                                              std::vector<std::string>* warnings) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling rate q must lie in (0, 1]");
  if (!(sigma > 0.0)) throw ConfigError("noise multiplier sigma must be > 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  std::vector<RdpPoint> out;
  out.reserve(orders.size());
  for (double a : orders) {
    if (!(a > 1.0)) throw ConfigError("RDP orders must be > 1");
    double log_m;
    if (a == std::floor(a)) {
      log_m = log_moment_int(q, sigma, static_cast<int>(a));
    } else {
      const int lo = static_cast<int>(std::floor(a));
      const double t = a - lo;
      log_m = (1.0 - t) * log_moment_int(q, sigma, lo) + t * log_moment_int(q, sigma, lo + 1);
    }
    const double per_step = log_m / (a - 1.0);
    const double value = per_step * static_cast<double>(steps);
    if (!std::isfinite(value)) {
      if (warnings) warnings->push_back("dropped RDP order " + std::to_string(a) + ": non-finite value");
      continue;
    }
    out.push_back({a, std::max(0.0, value)});
  }
  return out;
}

EpsilonAtOrder rdp_to_eps(std::span<const RdpPoint> rdp, double delta) {
  if (rdp.empty()) throw ConfigError("empty RDP list");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  EpsilonAtOrder best{std::numeric_limits<double>::infinity(), 0.0};
  const double log_inv_delta = std::log(1.0 / delta);
  for (const auto& p : rdp) {
    const double eps = p.value + log_inv_delta / (p.order - 1.0);
    if (eps < best.epsilon) best = {eps, p.order};
  }
  return best;
}

PrivacyBudget account(double q, double sigma, std::int64_t steps, double delta,
                      std::span<const double> orders) {
  PrivacyBudget b;
  b.q = q;
  b.sigma = sigma;
  b.steps = steps;
  b.delta = delta;
  b.rdp = rdp_subsampled_gaussian(q, sigma, steps, orders);
  const auto e = rdp_to_eps(b.rdp, delta);
  b.epsilon = e.epsilon;
  b.best_order = e.best_order;
  return b;
}

double calibrate_noise(double target_eps, double delta, double q, std::int64_t steps,
                       std::span<const double> orders) {
  if (!(target_eps > 0.0)) throw ConfigError("target epsilon must be > 0");
  auto eps_at = [&](double s) { return rdp_to_eps(rdp_subsampled_gaussian(q, s, steps, orders), delta).epsilon; };
  double lo = kSigmaLo;
  double hi = kSigmaHi;
  double eps_lo = eps_at(lo);
  double eps_hi = eps_at(hi);
  const double floor_eps = target_eps * (1.0 - 1e-6);
  if (eps_hi > target_eps || eps_lo < floor_eps)
    throw CalibrationError("target epsilon " + std::to_string(target_eps) +
                               " unreachable for sigma in [0.3, 1000] (eps range [" +
                               std::to_string(eps_hi) + ", " + std::to_string(eps_lo) + "])",
                           lo, hi);
  if (eps_lo <= target_eps) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double e = eps_at(mid);
    if (e > eps_lo || e < eps_hi)
      throw NumericError("epsilon not monotone in sigma during calibration");
    if (e <= target_eps) {
      if (e >= floor_eps) return mid;
      hi = mid;
      eps_hi = e;
    } else {
      lo = mid;
      eps_lo = e;
    }
  }
  throw CalibrationError("noise calibration did not converge", lo, hi);
}

double calibrate_noise(double target_eps, double delta, double q, std::int64_t steps) {
  const auto orders = default_orders();
  return calibrate_noise(target_eps, delta, q, steps, orders);
}

double mem_upper_bound(double eps) {
  if (!(eps >= 0.0)) throw ConfigError("epsilon must be >= 0");
  return -std::expm1(-eps);
}

double stability_bound(double L, double eps) {
  if (!(L > 0.0)) throw ConfigError("loss bound L must be > 0");
  return L * mem_upper_bound(eps);
}

double prior_stability_bound(double L, double eps) {
  if (!(L > 0.0)) throw ConfigError("loss bound L must be > 0");
  if (!(eps >= 0.0)) throw ConfigError("epsilon must be >= 0");
  return L * std::expm1(eps);
}

}  // namespace curvlink
