#include "curvlink/least_squares.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "curvlink/errors.hpp"

namespace curvlink {

Matrix forward_difference_jacobian(const std::function<Vector(const Vector&)>& residuals, const Vector& p) {
  const Vector r0 = residuals(p);
  Matrix J(r0.size(), p.size());
  for (int j = 0; j < p.size(); ++j) {
    const double step = std::sqrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(p(j)));
    Vector q = p;
    q(j) += step;
    J.col(j) = (residuals(q) - r0) / step;
  }
  return J;
}

namespace {

Vector project(const LsqProblem& pb, Vector p) {
  for (int j = 0; j < p.size(); ++j) {
    if (pb.lower.size() == p.size()) p(j) = std::max(p(j), pb.lower(j));
    if (pb.upper.size() == p.size()) p(j) = std::min(p(j), pb.upper(j));
  }
  return p;
}

double sse_of(const LsqProblem& pb, const Vector& p) {
  const Vector r = pb.residuals(p);
  const double s = r.squaredNorm();
  return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

}  // namespace

LsqResult gauss_newton(const LsqProblem& pb, const Vector& start, const LsqOptions& opts) {
  if (!pb.residuals) throw ConfigError("least-squares problem has no residual function");
  LsqResult res;
  res.params = project(pb, start);
  res.sse = sse_of(pb, res.params);
  double lambda = opts.initial_damping;
  const int n = static_cast<int>(res.params.size());
  for (int it = 0; it < opts.max_iterations && std::isfinite(res.sse); ++it) {
    res.iterations = it + 1;
    if (res.sse == 0.0) {
      res.converged = true;
      break;
    }
    const Vector r = pb.residuals(res.params);
    const Matrix J = pb.jacobian ? pb.jacobian(res.params) : forward_difference_jacobian(pb.residuals, res.params);
    const Matrix JtJ = J.transpose() * J;
    const Vector g = J.transpose() * r;
    bool accepted = false;
    while (lambda < 1e16) {
      Matrix A = JtJ;
      for (int j = 0; j < n; ++j) A(j, j) += lambda * std::max(JtJ(j, j), 1e-12);
      const Vector step = A.ldlt().solve(-g);
      const Vector trial = project(pb, res.params + step);
      const double s = sse_of(pb, trial);
      if (s < res.sse) {
        const double rel_drop = (res.sse - s) / res.sse;
        const double rel_step = (trial - res.params).norm() / std::max(1.0, res.params.norm());
        res.params = trial;
        res.sse = s;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel_drop < opts.tolerance && rel_step < opts.tolerance) res.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No descent direction at any damping: a stationary point of the projected problem.
      res.converged = true;
      break;
    }
    if (res.converged) break;
  }
  res.at_bound.assign(static_cast<std::size_t>(n), false);
  for (int j = 0; j < n; ++j) {
    const bool lo = pb.lower.size() == n && res.params(j) <= pb.lower(j);
    const bool hi = pb.upper.size() == n && res.params(j) >= pb.upper(j);
    res.at_bound[static_cast<std::size_t>(j)] = lo || hi;
  }
  return res;
}

LsqResult multi_start(const LsqProblem& pb, std::span<const Vector> starts, const LsqOptions& opts) {
  if (starts.empty()) throw ConfigError("multi-start fit needs at least one start");
  LsqResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < starts.size(); ++s) {
    LsqResult r = gauss_newton(pb, starts[s], opts);
    r.start_index = static_cast<int>(s);
    if (r.sse < best.sse) best = std::move(r);
  }
  if (!std::isfinite(best.sse)) throw FitError("no start produced a finite residual");
  return best;
}

}  // namespace curvlink
