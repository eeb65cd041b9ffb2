#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "curvlink/memorization.hpp"

namespace curvlink {

struct BinRow {
  int bin_index = 0;
  double mem_lo = 0.0;
  double mem_hi = 0.0;
  int count = 0;
  // Absent for empty bins.
  std::optional<double> mean_mem;
  // Largest curv_mean in the bin; absent when no row in the bin carries curvature.
  std::optional<double> max_curv;
};

// Equal-width bins of |mem| over [0, 1]; bin b covers [b/n, (b+1)/n), the last
// bin also takes |mem| = 1. Rows without a mem value are skipped.
std::vector<BinRow> bin_scores(const ScoreTable& table, int n_bins = 50);

struct FitParam {
  std::string name;
  double value = 0.0;
};

struct FitResult {
  std::string model_name;
  std::vector<FitParam> params;
  double residual_sse = 0.0;
  double r_squared = 0.0;
  std::vector<std::string> constraint_flags;
  bool converged = true;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> fitted;

  double param(const std::string& name) const;
};

// L(eps) = a + b exp(-c eps), c >= 0; 16 deterministic starts over c.
FitResult fit_loss_vs_eps(std::span<const std::pair<double, double>> points);
double loss_model(const FitResult& loss_fit, double eps);

struct MemCurvFit {
  // mean_mem ~ p1 * sqrt(m_sub) * max_curv + c1 with p1, c1 >= 0.
  FitResult scaled;
  // mean_mem ~ p1 * max_curv + c1, same constraints.
  FitResult unscaled;
};

// Nonempty bins carrying curvature enter the fit; m_sub gives the
// sub-population size of every bin (same length as `bins`).
MemCurvFit fit_mem_vs_curv(std::span<const BinRow> bins, std::span<const double> m_sub);
// m_sub = bin population.
MemCurvFit fit_mem_vs_curv(std::span<const BinRow> bins);

// Least-squares fit of y = p1 x + c1 with p1, c1 >= 0; a parameter pushed onto
// zero raises a flag.
FitResult fit_nonnegative_line(std::span<const double> xs, std::span<const double> ys, const std::string& name);

// mean_curv(eps) ~ scale * (a + b exp(-c eps)) * (m + 1) * (1 - exp(-eps)) + c2
// with (a, b, c) frozen from loss_fit. With free_scale == false the scale is
// fixed at 1 and only c2 is fitted.
FitResult fit_curv_vs_eps(std::span<const std::pair<double, double>> points, int m, const FitResult& loss_fit,
                          bool free_scale);
double curv_model(const FitResult& curv_fit, const FitResult& loss_fit, int m, double eps);

}  // namespace curvlink
