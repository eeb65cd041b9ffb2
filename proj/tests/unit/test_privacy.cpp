#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "curvlink/errors.hpp"
#include "curvlink/privacy.hpp"

using namespace curvlink;

TEST_CASE("full-batch RDP is alpha / (2 sigma^2) per step") {
  std::vector<double> orders;
  for (int a = 2; a <= 256; ++a) orders.push_back(a);
  for (double sigma : {0.7, 1.0, 4.0, 20.0}) {
    const auto rdp = rdp_subsampled_gaussian(1.0, sigma, 1, orders);
    REQUIRE(rdp.size() == orders.size());
    for (const auto& p : rdp) CHECK(std::abs(p.value - p.order / (2.0 * sigma * sigma)) <= 1e-9);
    const auto rdp10 = rdp_subsampled_gaussian(1.0, sigma, 10, orders);
    for (std::size_t i = 0; i < rdp10.size(); ++i) CHECK(rdp10[i].value == doctest::Approx(10.0 * rdp[i].value));
  }
}

TEST_CASE("zero steps give zero RDP") {
  const auto orders = default_orders();
  for (const auto& p : rdp_subsampled_gaussian(0.1, 1.0, 0, orders)) CHECK(p.value == 0.0);
}

TEST_CASE("subsampled RDP matches quadrature of the mixture divergence") {
  const double q = 0.01, sigma = 2.0;
  const std::vector<double> orders{2.0};
  const double value = rdp_subsampled_gaussian(q, sigma, 1, orders).at(0).value;
  // integral of mu^2 / mu0 with mu = (1-q) N(0, s^2) + q N(1, s^2), mu0 = N(0, s^2).
  const double lo = -40.0, hi = 40.0;
  const int n = 400000;
  const double dx = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = lo + (i + 0.5) * dx;
    const double n0 = std::exp(-z * z / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * M_PI));
    const double n1 = std::exp(-(z - 1) * (z - 1) / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * M_PI));
    const double mu = (1 - q) * n0 + q * n1;
    acc += mu * mu / n0 * dx;
  }
  CHECK(std::abs(value - std::log(acc)) <= 1e-6);
}

TEST_CASE("rdp_to_eps formula cases") {
  const double delta = 1e-5;
  std::vector<RdpPoint> zeros;
  for (double a : default_orders()) zeros.push_back({a, 0.0});
  CHECK(rdp_to_eps(zeros, delta).epsilon == doctest::Approx(std::log(1 / delta) / 4095.0));
  CHECK(rdp_to_eps(zeros, delta).best_order == 4096.0);
  const std::vector<RdpPoint> single{{5.0, 0.25}};
  CHECK(rdp_to_eps(single, delta).epsilon == 0.25 + std::log(1 / delta) / 4.0);
  CHECK_THROWS_AS(rdp_to_eps(single, 0.0), ConfigError);
}

TEST_CASE("epsilon matches a dense order-grid minimization") {
  const double sigma = 4.0, delta = 1e-5;
  const std::int64_t steps = 100;
  std::vector<double> dense;
  for (int a = 2; a <= 256; ++a) dense.push_back(a);
  const PrivacyBudget b = account(1.0, sigma, steps, delta, dense);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 2; a <= 256; ++a)
    best = std::min(best, steps * a / (2 * sigma * sigma) + std::log(1 / delta) / (a - 1.0));
  CHECK(std::abs(b.epsilon - best) <= 1e-4 * best);
  CHECK(b.steps == steps);
  CHECK(b.sigma == sigma);
}

TEST_CASE("noise calibration round-trips and is monotone") {
  const double delta = 1e-5, q = 0.02;
  const std::int64_t steps = 2000;
  double prev_sigma = std::numeric_limits<double>::infinity();
  for (double target : {1.0, 10.0, 50.0}) {
    const double sigma = calibrate_noise(target, delta, q, steps);
    const double eps = account(q, sigma, steps, delta, default_orders()).epsilon;
    CHECK(eps <= target);
    CHECK(eps >= (1.0 - 1e-6) * target);
    CHECK(sigma < prev_sigma);
    prev_sigma = sigma;
  }
  CHECK_THROWS_AS(calibrate_noise(1e-6, delta, q, steps), CalibrationError);
}

TEST_CASE("doubling the steps strictly increases epsilon") {
  const auto orders = default_orders();
  const double e1 = account(0.05, 1.1, 500, 1e-5, orders).epsilon;
  const double e2 = account(0.05, 1.1, 1000, 1e-5, orders).epsilon;
  CHECK(e2 > e1);
}

TEST_CASE("memorization and stability bounds") {
  CHECK(mem_upper_bound(0.0) == 0.0);
  CHECK(mem_upper_bound(std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(mem_upper_bound(50.0) == doctest::Approx(1.0 - std::exp(-50.0)).epsilon(1e-15));
  CHECK(mem_upper_bound(50.0) <= 1.0);
  CHECK(stability_bound(1.0, 0.0) == 0.0);
  CHECK(stability_bound(1.0, 1.0) == doctest::Approx(0.6321205588285577));
  for (double e = 0.01; e <= 20.0; e *= 1.5) CHECK(stability_bound(2.0, e) < prior_stability_bound(2.0, e));
}
