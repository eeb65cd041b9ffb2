#include "curvlink/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "curvlink/errors.hpp"
#include "curvlink/least_squares.hpp"

namespace curvlink {

double FitResult::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw NotFoundError("fit '" + model_name + "' has no parameter '" + name + "'");
}

std::vector<BinRow> bin_scores(const ScoreTable& table, int n_bins) {
  if (n_bins < 2) throw ConfigError("n_bins must be >= 2");
  if (table.rows.empty()) throw ConfigError("cannot bin an empty score table");
  std::vector<BinRow> bins(static_cast<std::size_t>(n_bins));
  std::vector<double> sums(static_cast<std::size_t>(n_bins), 0.0);
  for (int b = 0; b < n_bins; ++b) {
    bins[b].bin_index = b;
    bins[b].mem_lo = static_cast<double>(b) / n_bins;
    bins[b].mem_hi = static_cast<double>(b + 1) / n_bins;
  }
  for (const auto& r : table.rows) {
    if (!r.mem) continue;
    const double a = std::abs(*r.mem);
    const int b = std::min(n_bins - 1, static_cast<int>(std::floor(a * n_bins)));
    BinRow& row = bins[static_cast<std::size_t>(b)];
    ++row.count;
    sums[static_cast<std::size_t>(b)] += a;
    if (r.curv_mean) row.max_curv = row.max_curv ? std::max(*row.max_curv, *r.curv_mean) : *r.curv_mean;
  }
  for (int b = 0; b < n_bins; ++b)
    if (bins[b].count > 0) bins[b].mean_mem = sums[static_cast<std::size_t>(b)] / bins[b].count;
  return bins;
}

namespace {

void finish_stats(FitResult& f) {
  double sse = 0.0;
  double mu = 0.0;
  for (double y : f.ys) mu += y;
  mu /= static_cast<double>(f.ys.size());
  double sst = 0.0;
  for (std::size_t i = 0; i < f.ys.size(); ++i) {
    sse += (f.ys[i] - f.fitted[i]) * (f.ys[i] - f.fitted[i]);
    sst += (f.ys[i] - mu) * (f.ys[i] - mu);
  }
  f.residual_sse = sse;
  if (sst > 0.0) {
    f.r_squared = 1.0 - sse / sst;
  } else {
    f.r_squared = sse <= 1e-24 ? 1.0 : 0.0;
  }
}

constexpr int kStarts = 16;

}  // namespace

FitResult fit_loss_vs_eps(std::span<const std::pair<double, double>> points) {
  if (points.size() < 4) throw ConfigError("loss-vs-eps fit needs at least 4 points");
  std::set<double> distinct;
  for (const auto& [e, y] : points) {
    if (!std::isfinite(e) || !std::isfinite(y)) throw NumericError("non-finite loss-vs-eps point");
    distinct.insert(e);
  }
  if (distinct.size() != points.size()) throw ConfigError("loss-vs-eps fit needs distinct eps values");

  const int n = static_cast<int>(points.size());
  LsqProblem pb;
  pb.residuals = [&](const Vector& p) {
    Vector r(n);
    for (int i = 0; i < n; ++i) r(i) = p(0) + p(1) * std::exp(-p(2) * points[i].first) - points[i].second;
    return r;
  };
  pb.jacobian = [&](const Vector& p) {
    Matrix J(n, 3);
    for (int i = 0; i < n; ++i) {
      const double e = std::exp(-p(2) * points[i].first);
      J(i, 0) = 1.0;
      J(i, 1) = e;
      J(i, 2) = -p(1) * points[i].first * e;
    }
    return J;
  };
  const double inf = std::numeric_limits<double>::infinity();
  pb.lower = Vector::Constant(3, -inf);
  pb.upper = Vector::Constant(3, inf);
  pb.lower(2) = 0.0;

  // Start k fixes c on a log grid and solves the linear (a, b) subproblem.
  std::vector<Vector> starts;
  for (int k = 0; k < kStarts; ++k) {
    const double c = std::pow(10.0, -3.0 + 4.0 * k / (kStarts - 1));
    Matrix A(n, 2);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
      A(i, 0) = 1.0;
      A(i, 1) = std::exp(-c * points[i].first);
      y(i) = points[i].second;
    }
    const Vector ab = A.colPivHouseholderQr().solve(y);
    Vector s(3);
    s << ab(0), ab(1), c;
    starts.push_back(s);
  }
  LsqResult best;
  best.sse = inf;
  bool any_converged = false;
  for (int k = 0; k < kStarts; ++k) {
    LsqResult r = gauss_newton(pb, starts[static_cast<std::size_t>(k)]);
    r.start_index = k;
    any_converged = any_converged || r.converged;
    if (r.sse < best.sse) best = r;
  }
  if (!any_converged || !std::isfinite(best.sse))
    throw FitError("loss-vs-eps fit did not converge from any of " + std::to_string(kStarts) +
                   " starts (best sse " + std::to_string(best.sse) + ")");

  FitResult f;
  f.model_name = "loss_vs_eps";
  f.params = {{"a", best.params(0)}, {"b", best.params(1)}, {"c", best.params(2)}};
  f.converged = best.converged;
  if (best.at_bound[2]) f.constraint_flags.push_back("c_at_zero");
  if (best.params(1) < 0.0) f.constraint_flags.push_back("b_negative");
  for (const auto& [e, y] : points) {
    f.xs.push_back(e);
    f.ys.push_back(y);
    f.fitted.push_back(best.params(0) + best.params(1) * std::exp(-best.params(2) * e));
  }
  finish_stats(f);
  return f;
}

double loss_model(const FitResult& loss_fit, double eps) {
  return loss_fit.param("a") + loss_fit.param("b") * std::exp(-loss_fit.param("c") * eps);
}

FitResult fit_nonnegative_line(std::span<const double> xs, std::span<const double> ys, const std::string& name) {
  if (xs.size() != ys.size()) throw ConfigError("fit inputs differ in length");
  if (xs.empty()) throw ConfigError("line fit needs at least one point");
  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  auto sse = [&](double p1, double c1) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (ys[i] - p1 * xs[i] - c1) * (ys[i] - p1 * xs[i] - c1);
    return s;
  };
  struct Cand {
    double p1, c1;
  };
  std::vector<Cand> cands;
  const double det = n * sxx - sx * sx;
  if (det > 0.0) {
    const double p1 = (n * sxy - sx * sy) / det;
    const double c1 = (sy - p1 * sx) / n;
    if (p1 >= 0.0 && c1 >= 0.0) cands.push_back({p1, c1});
  }
  cands.push_back({sxx > 0.0 ? std::max(0.0, sxy / sxx) : 0.0, 0.0});
  cands.push_back({0.0, std::max(0.0, sy / n)});
  Cand best = cands.front();
  double best_sse = sse(best.p1, best.c1);
  for (const auto& c : cands) {
    const double s = sse(c.p1, c.c1);
    if (s < best_sse) {
      best = c;
      best_sse = s;
    }
  }
  FitResult f;
  f.model_name = name;
  f.params = {{"p1", best.p1}, {"c1", best.c1}};
  if (best.p1 == 0.0) f.constraint_flags.push_back("p1_at_zero");
  if (best.c1 == 0.0) f.constraint_flags.push_back("c1_at_zero");
  f.xs.assign(xs.begin(), xs.end());
  f.ys.assign(ys.begin(), ys.end());
  for (double x : xs) f.fitted.push_back(best.p1 * x + best.c1);
  finish_stats(f);
  return f;
}

MemCurvFit fit_mem_vs_curv(std::span<const BinRow> bins, std::span<const double> m_sub) {
  if (m_sub.size() != bins.size()) throw ConfigError("m_sub must have one entry per bin");
  std::vector<double> xs_scaled, xs_plain, ys;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count == 0 || !bins[b].mean_mem || !bins[b].max_curv) continue;
    if (!(m_sub[b] > 0.0)) throw ConfigError("m_sub must be positive for nonempty bins");
    xs_scaled.push_back(std::sqrt(m_sub[b]) * *bins[b].max_curv);
    xs_plain.push_back(*bins[b].max_curv);
    ys.push_back(*bins[b].mean_mem);
  }
  if (ys.empty()) throw ConfigError("all bins are empty");
  if (ys.size() < 3) throw ConfigError("memorization-curvature fit needs at least 3 nonempty bins");
  return {fit_nonnegative_line(xs_scaled, ys, "mem_vs_curv_scaled"),
          fit_nonnegative_line(xs_plain, ys, "mem_vs_curv_unscaled")};
}

MemCurvFit fit_mem_vs_curv(std::span<const BinRow> bins) {
  std::vector<double> m_sub;
  for (const auto& b : bins) m_sub.push_back(static_cast<double>(b.count));
  return fit_mem_vs_curv(bins, m_sub);
}

namespace {

double curv_shape(const FitResult& loss_fit, int m, double eps) {
  return loss_model(loss_fit, eps) * (m + 1.0) * -std::expm1(-eps);
}

}  // namespace

FitResult fit_curv_vs_eps(std::span<const std::pair<double, double>> points, int m, const FitResult& loss_fit,
                          bool free_scale) {
  if (points.empty()) throw ConfigError("curvature-vs-eps fit needs at least one point");
  if (m < 2) throw ConfigError("m must be >= 2");
  FitResult f;
  f.model_name = "curv_vs_eps";
  std::vector<double> shape;
  for (const auto& [e, y] : points) {
    if (!std::isfinite(e) || !std::isfinite(y)) throw NumericError("non-finite curvature-vs-eps point");
    f.xs.push_back(e);
    f.ys.push_back(y);
    shape.push_back(curv_shape(loss_fit, m, e));
  }
  const double n = static_cast<double>(points.size());
  double scale = 1.0;
  if (free_scale) {
    double ms = 0.0, my = 0.0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      ms += shape[i];
      my += f.ys[i];
    }
    ms /= n;
    my /= n;
    double sss = 0.0, ssy = 0.0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      sss += (shape[i] - ms) * (shape[i] - ms);
      ssy += (shape[i] - ms) * (f.ys[i] - my);
    }
    if (sss > 0.0) {
      scale = ssy / sss;
    } else {
      f.constraint_flags.push_back("scale_unidentified");
    }
  }
  double c2 = 0.0;
  for (std::size_t i = 0; i < shape.size(); ++i) c2 += f.ys[i] - scale * shape[i];
  c2 /= n;
  f.params = {{"scale", scale}, {"c2", c2}};
  if (!free_scale) f.constraint_flags.push_back("scale_fixed");
  for (double s : shape) f.fitted.push_back(scale * s + c2);
  finish_stats(f);
  return f;
}

double curv_model(const FitResult& curv_fit, const FitResult& loss_fit, int m, double eps) {
  return curv_fit.param("scale") * curv_shape(loss_fit, m, eps) + curv_fit.param("c2");
}

}  // namespace curvlink
