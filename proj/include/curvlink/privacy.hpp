#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace curvlink {

struct RdpPoint {
  double order = 2.0;
  double value = 0.0;
  bool operator==(const RdpPoint&) const = default;
};

inline constexpr const char* kAccountingMode = "sampled-gaussian-approx/rdp-classic-conversion";

struct PrivacyBudget {
  double epsilon = 0.0;
  double delta = 1e-5;
  std::int64_t steps = 0;
  double q = 1.0;
  double sigma = 1.0;
  double best_order = 0.0;
  std::vector<RdpPoint> rdp;
  std::string accounting_mode = kAccountingMode;
};

// {1.5, 1.75, 2, 3, ..., 64, 128, 256, ..., 4096}. The large orders let tiny
// budgets (huge noise) convert without the ln(1/delta) / (order - 1) floor
// dominating.
std::vector<double> default_orders();

// RDP of `steps` compositions of the Poisson-subsampled Gaussian mechanism
// (sampling rate q, noise multiplier sigma). Integer orders use the exact
// binomial expansion; fractional orders interpolate log-moments linearly
// between the neighbouring integers. Orders whose value is not finite are
// dropped and reported through `warnings`.
std::vector<RdpPoint> rdp_subsampled_gaussian(double q, double sigma, std::int64_t steps,
                                              std::span<const double> orders,
                                              std::vector<std::string>* warnings = nullptr);

struct EpsilonAtOrder {
  double epsilon = 0.0;
  double best_order = 0.0;
};

// eps = min over orders of value + ln(1/delta) / (order - 1).
EpsilonAtOrder rdp_to_eps(std::span<const RdpPoint> rdp, double delta);

PrivacyBudget account(double q, double sigma, std::int64_t steps, double delta,
                      std::span<const double> orders);

// Smallest-noise sigma in [0.3, 1000] (by bisection) whose epsilon lies in
// [target * (1 - 1e-6), target].
double calibrate_noise(double target_eps, double delta, double q, std::int64_t steps,
                       std::span<const double> orders);
double calibrate_noise(double target_eps, double delta, double q, std::int64_t steps);

inline constexpr double kSigmaLo = 0.3;
inline constexpr double kSigmaHi = 1000.0;

// Memorization of any sample under eps-DP is at most 1 - e^-eps.
double mem_upper_bound(double eps);
// eps-DP with loss in [0, L] implies L(1 - e^-eps) error stability.
double stability_bound(double L, double eps);
// The older L(e^eps - 1) stability bound, for comparison.
double prior_stability_bound(double L, double eps);

}  // namespace curvlink
