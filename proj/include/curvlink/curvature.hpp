#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "curvlink/data.hpp"
#include "curvlink/nn.hpp"

namespace curvlink {

enum class CurvMode { kRaw, kNormalized };

const char* to_string(CurvMode m);
CurvMode curv_mode_from_string(const std::string& s);

struct CurvParams {
  // Finite-difference step, in [1e-6, 1].
  double h = 1e-3;
  // Number of Rademacher probes.
  int n = 10;
  std::uint64_t seed = 0;
  CurvMode mode = CurvMode::kRaw;

  void validate() const;
  bool operator==(const CurvParams&) const = default;
};

// Mean over n Rademacher probes v of ||g(x + h v) - g(x)||^2, where g is the
// input gradient of the loss. Normalized mode divides by h^2, which estimates
// tr(H^2) of the input Hessian. Probe k of sample s uses the random stream
// (seed, s, k), so scores do not depend on evaluation order.
double curvature_score(const Model& model, const Example& z, const CurvParams& p);

// Same estimator for an arbitrary input-gradient function.
using GradFn = std::function<Vector(const Vector&)>;
double curvature_score(const GradFn& grad, const Vector& x, std::int64_t sample_id,
                       const CurvParams& p);

// Scores of every example of S under one model, computed in batched passes.
Vector curvature_scores(const Model& model, const Dataset& S, const CurvParams& p);

// scores(k, i): score of sample i of S under model k. Models are spread
// across `workers` OpenMP threads; the result does not depend on `workers`.
Matrix ensemble_curvature(const std::vector<Model>& models, const Dataset& S, const CurvParams& p,
                          int workers);
// Single-threaded reference for ensemble_curvature.
Matrix ensemble_curvature_serial(const std::vector<Model>& models, const Dataset& S,
                                 const CurvParams& p);

// Which ensemble members enter an expectation for sample i.
enum class ModelSubset { kHoldingI, kExcludingI, kAll };

const char* to_string(ModelSubset w);
ModelSubset model_subset_from_string(const std::string& s);

struct MeanEstimate {
  double mean = 0.0;
  // Absent when fewer than two models contribute.
  std::optional<double> stderr_;
  int count = 0;
};

// Mean and standard error of column i of a K x m score matrix over the
// selected models. Throws InsufficientModelsError when the subset is empty.
MeanEstimate expected_curvature(const Matrix& scores, const MaskSet& masks, std::size_t i,
                                ModelSubset which);
// Scores the selected models of the ensemble on sample z directly.
MeanEstimate expected_curvature(const std::vector<Model>& models, const MaskSet& masks,
                                const Dataset& S, std::int64_t sample_id, const CurvParams& p,
                                ModelSubset which);

struct EigenCurvature {
  double trace = 0.0;
  double abs_eigen_sum = 0.0;
  // tr(H^2), the quantity the normalized score estimates.
  double trace_sq = 0.0;
};

EigenCurvature eigen_curvature(const Matrix& hessian);
// Uses the exact input-Hessian oracle; d <= 64.
EigenCurvature eigen_curvature(const Model& model, const Example& z);

}  // namespace curvlink
