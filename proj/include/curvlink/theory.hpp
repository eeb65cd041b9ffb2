#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curvlink/data.hpp"
#include "curvlink/memorization.hpp"
#include "curvlink/nn.hpp"

namespace curvlink {

// An empirical estimate: a finite-sample statistic, not a certified supremum.
struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::string method;
  // Per-probe (or per-pair) contributions where the estimate is a max.
  std::vector<double> detail;
};

struct TheoryConstants {
  Estimate beta;        // error stability
  Estimate gamma;       // generalization gap
  Estimate delta_bias;  // uniform model bias
  Estimate rho;         // Lipschitz constant of the input Hessian
  Estimate L;           // loss bound
  Estimate e_alpha3;    // E||alpha||^3
  int m = 2;
  // Use L = 1 in the memorization-curvature bound, as allowed for cross-entropy.
  bool unit_loss_bound = false;

  void validate() const;
};

struct BoundReport {
  std::string bound_name;
  double lhs = 0.0;
  double rhs = 0.0;
  double lhs_stderr = 0.0;
  double rhs_stderr = 0.0;
  // lhs <= rhs + 3 * sqrt(lhs_stderr^2 + rhs_stderr^2).
  bool satisfied = false;
  double slack = 0.0;
  std::string confidence_note;
};

BoundReport make_report(const std::string& name, double lhs, double rhs, double lhs_stderr, double rhs_stderr,
                        const std::string& note);

inline constexpr const char* kEmpiricalNote =
    "constants are empirical estimates from finite ensembles, not certified suprema";

// Mean loss of every model on D.
std::vector<double> mean_losses(const std::vector<Model>& models, const Dataset& D);

// Subsample mode: for each probe index i, the gap between the mean holdout
// loss of models trained with i and of models trained without i; beta is the
// largest absolute gap. The standard error comes from a bootstrap over models.
Estimate estimate_beta(const std::vector<Model>& models, const MaskSet& masks, std::span<const std::size_t> probes,
                       const Dataset& holdout, std::uint64_t seed, int n_boot = 200);
// Two-ensemble mode: models trained on S against models trained on S minus i.
Estimate estimate_beta(const std::vector<Model>& with_i, const std::vector<Model>& without_i,
                       const Dataset& holdout, std::uint64_t seed, int n_boot = 200);

// Mean over models of |training loss - holdout loss|; model k's training set
// is S restricted to mask k.
Estimate estimate_gamma(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S,
                        const Dataset& holdout);

// |mean holdout 0-1 risk - Bayes risk|. Throws ConfigError without a Bayes risk.
Estimate estimate_delta(const std::vector<Model>& models, const Dataset& holdout, std::optional<double> bayes);
// 0-1 risk of one model on D.
double zero_one_risk(const Model& model, const Dataset& D);

// Running max of ||H(z1) - H(z2)||_F / ||z1 - z2|| over n_pairs random
// (model, z1, z2) triples. Pairs closer than 1e-9 are skipped.
Estimate estimate_rho(const std::vector<Model>& models, const Dataset& S, int n_pairs, std::uint64_t seed);

// Largest per-sample loss of any model on its own training samples; the
// clamp bound for clamped losses.
Estimate estimate_loss_bound(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S);

// c1 = rho/(6L) E||alpha||^3 + m beta/L + (4m-1) gamma/L + 2(m-1) Delta/L.
double thm1_c1(const TheoryConstants& k);
// curv / L + c1.
double thm1_rhs(double curv, const TheoryConstants& k);
// c2 = (4m-1) gamma + 2(m-1) Delta + rho/6 E||alpha||^3.
double thm2_c2(const TheoryConstants& k);
// L (m+1) (1 - e^-eps) + c2.
double thm2_rhs(const TheoryConstants& k, double eps);
// m beta + (4m-1) gamma + 2(m-1) Delta.
double lossdiff_rhs(const TheoryConstants& k);

// Nearest other sample with the same label (Euclidean); throws NotFoundError
// when no such sample exists.
std::size_t nearest_same_label(const Dataset& S, std::size_t i);

// For each probe i paired with its nearest same-label neighbour j:
// |E[loss(h_S, z_i)] - E[loss(h_{S minus i}, z_j)]| where h_S are models
// trained on both i and j and h_{S minus i} models trained on j but not i.
// The largest gap over the probes is reported; probes without models on
// both sides are skipped and counted in the confidence note.
BoundReport appendix_lossdiff_check(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S,
                                    std::span<const std::size_t> probes, const TheoryConstants& k);

// n indices spread over the memorization ranking of the valid rows: the rows
// are split into n rank strata and one index is drawn from each.
std::vector<std::size_t> stratified_probes(const ScoreTable& table, int n, std::uint64_t seed);

}  // namespace curvlink
