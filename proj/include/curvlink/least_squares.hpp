#pragma once

#include <functional>
#include <span>
#include <vector>

#include "curvlink/nn.hpp"

namespace curvlink {

struct LsqProblem {
  // Residual vector r(p); the objective is ||r(p)||^2.
  std::function<Vector(const Vector&)> residuals;
  // Jacobian dr/dp; forward differences are used when empty.
  std::function<Matrix(const Vector&)> jacobian;
  // Box constraints, enforced by projection. Empty means unbounded.
  Vector lower;
  Vector upper;
};

struct LsqOptions {
  int max_iterations = 500;
  // Stop when the relative SSE decrease and the relative step both fall below this.
  double tolerance = 1e-15;
  double initial_damping = 1e-3;
};

struct LsqResult {
  Vector params;
  double sse = 0.0;
  int iterations = 0;
  bool converged = false;
  // Parameters resting on a bound at the solution.
  std::vector<bool> at_bound;
  int start_index = 0;
};

// Damped Gauss-Newton (Marquardt scaling) with projection onto the box.
LsqResult gauss_newton(const LsqProblem& problem, const Vector& start, const LsqOptions& opts = {});

// Runs gauss_newton from every start and keeps the lowest SSE; ties go to the
// lowest start index. Throws FitError if no start yields a finite SSE.
LsqResult multi_start(const LsqProblem& problem, std::span<const Vector> starts, const LsqOptions& opts = {});

Matrix forward_difference_jacobian(const std::function<Vector(const Vector&)>& residuals, const Vector& p);

}  // namespace curvlink
