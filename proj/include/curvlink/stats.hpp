#pragma once

#include <span>
#include <vector>

namespace curvlink {

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
  // False when either input has zero variance; both coefficients are then 0.
  bool defined = true;
};

// Sample Pearson and Spearman (average ranks for ties) coefficients.
// Inputs must have equal length >= 3.
Correlation correlation(std::span<const double> xs, std::span<const double> ys);

// 1-based ranks, ties receive the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> xs);

double mean(std::span<const double> xs);
// Standard error of the mean (sample standard deviation / sqrt(n)); 0 for n < 2.
double standard_error(std::span<const double> xs);

}  // namespace curvlink
