#include "curvlink/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "curvlink/errors.hpp"
#include "curvlink/rng.hpp"
#include "curvlink/stats.hpp"

namespace curvlink {

void TheoryConstants::validate() const {
  for (const Estimate* e : {&beta, &gamma, &delta_bias, &rho, &e_alpha3})
    if (!(e->value >= 0.0)) throw ConfigError("theory constants must be nonnegative");
  if (!(L.value > 0.0)) throw ConfigError("loss bound L must be > 0");
  if (m < 2) throw ConfigError("m must be >= 2");
}

BoundReport make_report(const std::string& name, double lhs, double rhs, double lhs_stderr, double rhs_stderr,
                        const std::string& note) {
  BoundReport r;
  r.bound_name = name;
  r.lhs = lhs;
  r.rhs = rhs;
  r.lhs_stderr = lhs_stderr;
  r.rhs_stderr = rhs_stderr;
  r.slack = rhs - lhs;
  r.satisfied = lhs <= rhs + 3.0 * std::hypot(lhs_stderr, rhs_stderr);
  r.confidence_note = note;
  return r;
}

std::vector<double> mean_losses(const std::vector<Model>& models, const Dataset& D) {
  if (D.size() == 0) throw ConfigError("empty evaluation set");
  const Matrix X = stack_inputs(D.examples);
  std::vector<int> y;
  for (const auto& z : D.examples) y.push_back(z.y);
  std::vector<double> out;
  out.reserve(models.size());
  for (const auto& h : models) out.push_back(losses_batch(h, X, y).mean());
  return out;
}

namespace {

// max_i |mean_{k in A_i} v_k - mean_{k in B_i} v_k| over probes whose groups
// are nonempty under the model multiplicities `w`.
double max_gap(const std::vector<double>& v, const std::vector<std::vector<std::uint8_t>>& in_group,
               const std::vector<int>& w, std::vector<double>* per_probe) {
  double best = 0.0;
  for (const auto& g : in_group) {
    double s_in = 0.0, s_out = 0.0;
    int n_in = 0, n_out = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (w[k] == 0) continue;
      if (g[k]) {
        s_in += w[k] * v[k];
        n_in += w[k];
      } else {
        s_out += w[k] * v[k];
        n_out += w[k];
      }
    }
    if (n_in == 0 || n_out == 0) {
      if (per_probe) per_probe->push_back(std::nan(""));
      continue;
    }
    const double gap = std::abs(s_in / n_in - s_out / n_out);
    if (per_probe) per_probe->push_back(gap);
    best = std::max(best, gap);
  }
  return best;
}

Estimate bootstrap_max_gap(const std::vector<double>& v, const std::vector<std::vector<std::uint8_t>>& groups,
                           std::uint64_t seed, int n_boot, const std::string& method) {
  Estimate e;
  e.method = method;
  const std::vector<int> ones(v.size(), 1);
  e.value = max_gap(v, groups, ones, &e.detail);
  std::vector<double> reps;
  for (int b = 0; b < n_boot; ++b) {
    CounterRng rng(seed, Purpose::kBootstrap, static_cast<std::uint64_t>(b));
    std::vector<int> w(v.size(), 0);
    for (std::size_t k = 0; k < v.size(); ++k) ++w[rng.below(v.size())];
    reps.push_back(max_gap(v, groups, w, nullptr));
  }
  if (reps.size() >= 2) e.stderr_ = standard_error(reps) * std::sqrt(static_cast<double>(reps.size()));
  return e;
}

}  // namespace

Estimate estimate_beta(const std::vector<Model>& models, const MaskSet& masks, std::span<const std::size_t> probes,
                       const Dataset& holdout, std::uint64_t seed, int n_boot) {
  if (static_cast<int>(models.size()) != masks.K()) throw ConfigError("model count does not match mask count");
  if (probes.empty()) throw ConfigError("beta estimate needs at least one probe");
  std::vector<std::vector<std::uint8_t>> groups;
  for (std::size_t i : probes) {
    if (i >= masks.m()) throw NotFoundError("probe index out of range");
    std::vector<std::uint8_t> g(models.size());
    int with = 0;
    for (int k = 0; k < masks.K(); ++k) {
      g[static_cast<std::size_t>(k)] = masks.included(k, i) ? 1 : 0;
      with += g[static_cast<std::size_t>(k)];
    }
    if (with == 0 || with == masks.K())
      throw InsufficientModelsError("probe " + std::to_string(i) + " is never held out or never included", with,
                                    masks.K() - with);
    groups.push_back(std::move(g));
  }
  return bootstrap_max_gap(mean_losses(models, holdout), groups, seed, n_boot, "subsample-split");
}

Estimate estimate_beta(const std::vector<Model>& with_i, const std::vector<Model>& without_i, const Dataset& holdout,
                       std::uint64_t seed, int n_boot) {
  if (with_i.empty() || without_i.empty())
    throw InsufficientModelsError("beta needs models on both sides", static_cast<int>(with_i.size()),
                                  static_cast<int>(without_i.size()));
  std::vector<double> v = mean_losses(with_i, holdout);
  const std::vector<double> v2 = mean_losses(without_i, holdout);
  std::vector<std::uint8_t> g(v.size(), 1);
  g.resize(v.size() + v2.size(), 0);
  v.insert(v.end(), v2.begin(), v2.end());
  return bootstrap_max_gap(v, {g}, seed, n_boot, "two-ensemble");
}

Estimate estimate_gamma(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S,
                        const Dataset& holdout) {
  if (holdout.size() == 0) throw ConfigError("empty holdout set");
  if (static_cast<int>(models.size()) != masks.K()) throw ConfigError("model count does not match mask count");
  if (models.empty()) throw ConfigError("gamma estimate needs at least one model");
  const std::vector<double> test = mean_losses(models, holdout);
  std::vector<double> gaps;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const Dataset train = S.subset(masks.masks[k]);
    const double emp = mean_losses({models[k]}, train).front();
    gaps.push_back(std::abs(emp - test[k]));
  }
  Estimate e;
  e.method = "mean |train loss - holdout loss|";
  e.value = mean(gaps);
  e.stderr_ = standard_error(gaps);
  return e;
}

double zero_one_risk(const Model& model, const Dataset& D) {
  if (D.size() == 0) throw ConfigError("empty evaluation set");
  const auto pred = predict_batch(model, stack_inputs(D.examples));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < D.size(); ++i) wrong += pred[i] != D.examples[i].y ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(D.size());
}

Estimate estimate_delta(const std::vector<Model>& models, const Dataset& holdout, std::optional<double> bayes) {
  if (!bayes) throw ConfigError("model bias needs a dataset with known Bayes risk");
  if (models.empty()) throw ConfigError("model bias estimate needs at least one model");
  std::vector<double> risks;
  for (const auto& h : models) risks.push_back(zero_one_risk(h, holdout));
  Estimate e;
  e.method = "|mean holdout 0-1 risk - Bayes risk|";
  e.value = std::abs(mean(risks) - *bayes);
  e.stderr_ = standard_error(risks);
  return e;
}

Estimate estimate_rho(const std::vector<Model>& models, const Dataset& S, int n_pairs, std::uint64_t seed) {
  if (models.empty()) throw ConfigError("rho estimate needs at least one model");
  if (S.size() < 2) throw ConfigError("rho estimate needs at least two samples");
  if (n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
  if (S.dim() > kMaxOracleDim) throw ConfigError("input dimension too large for the Hessian oracle");
  CounterRng rng(seed, Purpose::kPairs);
  Estimate e;
  e.method = "running max over random pairs (lower estimate)";
  for (int t = 0; t < n_pairs; ++t) {
    const std::size_t k = rng.below(models.size());
    const std::size_t a = rng.below(S.size());
    const std::size_t b = rng.below(S.size());
    const double dist = (S.examples[a].x - S.examples[b].x).norm();
    if (dist < 1e-9) continue;
    const Matrix Ha = exact_input_hessian(models[k], S.examples[a]);
    const Matrix Hb = exact_input_hessian(models[k], S.examples[b]);
    const double ratio = (Ha - Hb).norm() / dist;
    e.detail.push_back(ratio);
    e.value = std::max(e.value, ratio);
  }
  return e;
}

Estimate estimate_loss_bound(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S) {
  if (models.empty()) throw ConfigError("loss bound needs at least one model");
  if (static_cast<int>(models.size()) != masks.K()) throw ConfigError("model count does not match mask count");
  Estimate e;
  if (models.front().spec.loss == LossKind::kClampedCrossEntropy) {
    e.value = models.front().spec.clamp_bound;
    e.method = "clamp bound";
    return e;
  }
  e.method = "max converged per-sample training loss";
  const Matrix X = stack_inputs(S.examples);
  std::vector<int> y;
  for (const auto& z : S.examples) y.push_back(z.y);
  for (std::size_t k = 0; k < models.size(); ++k) {
    const Vector l = losses_batch(models[k], X, y);
    for (std::size_t i = 0; i < S.size(); ++i)
      if (masks.included(static_cast<int>(k), i)) e.value = std::max(e.value, l(static_cast<Eigen::Index>(i)));
  }
  return e;
}

double thm1_c1(const TheoryConstants& k) {
  k.validate();
  const double L = k.unit_loss_bound ? 1.0 : k.L.value;
  const double m = k.m;
  return k.rho.value / (6.0 * L) * k.e_alpha3.value + m * k.beta.value / L + (4.0 * m - 1.0) * k.gamma.value / L +
         2.0 * (m - 1.0) * k.delta_bias.value / L;
}

double thm1_rhs(double curv, const TheoryConstants& k) {
  const double L = k.unit_loss_bound ? 1.0 : k.L.value;
  return curv / L + thm1_c1(k);
}

double thm2_c2(const TheoryConstants& k) {
  k.validate();
  const double m = k.m;
  return (4.0 * m - 1.0) * k.gamma.value + 2.0 * (m - 1.0) * k.delta_bias.value + k.rho.value / 6.0 * k.e_alpha3.value;
}

double thm2_rhs(const TheoryConstants& k, double eps) {
  return k.L.value * (k.m + 1.0) * -std::expm1(-eps) + thm2_c2(k);
}

double lossdiff_rhs(const TheoryConstants& k) {
  k.validate();
  const double m = k.m;
  return m * k.beta.value + (4.0 * m - 1.0) * k.gamma.value + 2.0 * (m - 1.0) * k.delta_bias.value;
}

std::size_t nearest_same_label(const Dataset& S, std::size_t i) {
  if (i >= S.size()) throw NotFoundError("sample index out of range");
  std::size_t best = S.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < S.size(); ++j) {
    if (j == i || S.examples[j].y != S.examples[i].y) continue;
    const double d = (S.examples[j].x - S.examples[i].x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best == S.size()) throw NotFoundError("no other sample shares the label of index " + std::to_string(i));
  return best;
}

BoundReport appendix_lossdiff_check(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S,
                                    std::span<const std::size_t> probes, const TheoryConstants& k) {
  if (static_cast<int>(models.size()) != masks.K()) throw ConfigError("model count does not match mask count");
  if (probes.empty()) throw ConfigError("loss-difference check needs at least one probe");
  double worst = 0.0;
  double worst_se = 0.0;
  int used = 0;
  int with_count = 0;
  int without_count = 0;
  for (std::size_t i : probes) {
    const std::size_t j = nearest_same_label(S, i);
    std::vector<double> a, b;
    for (int m = 0; m < masks.K(); ++m) {
      if (!masks.included(m, j)) continue;
      const Model& h = models[static_cast<std::size_t>(m)];
      if (masks.included(m, i)) {
        a.push_back(loss_eval(h, S.examples[i]));
      } else {
        b.push_back(loss_eval(h, S.examples[j]));
      }
    }
    if (a.empty() || b.empty()) {
      with_count = static_cast<int>(a.size());
      without_count = static_cast<int>(b.size());
      continue;
    }
    ++used;
    const double gap = std::abs(mean(a) - mean(b));
    if (gap >= worst) {
      worst = gap;
      worst_se = std::hypot(standard_error(a), standard_error(b));
    }
  }
  if (used == 0)
    throw InsufficientModelsError("no loss-difference probe has models on both sides", with_count, without_count);
  std::string note = kEmpiricalNote;
  if (used < static_cast<int>(probes.size()))
    note += "; " + std::to_string(probes.size() - static_cast<std::size_t>(used)) +
            " probes skipped for lack of models on one side";
  return make_report("appendix_loss_difference", worst, lossdiff_rhs(k), worst_se, 0.0, note);
}

std::vector<std::size_t> stratified_probes(const ScoreTable& table, int n, std::uint64_t seed) {
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    if (table.rows[i].mem) valid.push_back(i);
  if (n < 1 || static_cast<std::size_t>(n) > valid.size())
    throw ConfigError("cannot draw " + std::to_string(n) + " probes from " + std::to_string(valid.size()) +
                      " valid rows");
  std::stable_sort(valid.begin(), valid.end(),
                   [&](std::size_t a, std::size_t b) { return *table.rows[a].mem < *table.rows[b].mem; });
  CounterRng rng(seed, Purpose::kPairs, 1);
  std::vector<std::size_t> out;
  for (int s = 0; s < n; ++s) {
    const std::size_t lo = valid.size() * static_cast<std::size_t>(s) / static_cast<std::size_t>(n);
    const std::size_t hi = valid.size() * static_cast<std::size_t>(s + 1) / static_cast<std::size_t>(n);
    out.push_back(valid[lo + rng.below(hi - lo)]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace curvlink
