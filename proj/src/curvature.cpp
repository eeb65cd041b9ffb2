#include "curvlink/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include <omp.h>

#include "curvlink/errors.hpp"
#include "curvlink/rng.hpp"

namespace curvlink {

const char* to_string(CurvMode m) { return m == CurvMode::kRaw ? "raw" : "normalized"; }

CurvMode curv_mode_from_string(const std::string& s) {
  if (s == "raw") return CurvMode::kRaw;
  if (s == "normalized") return CurvMode::kNormalized;
  throw ConfigError("unknown curvature mode '" + s + "'");
}

const char* to_string(ModelSubset w) {
  switch (w) {
    case ModelSubset::kHoldingI: return "holding_i";
    case ModelSubset::kExcludingI: return "excluding_i";
    case ModelSubset::kAll: return "all";
  }
  return "?";
}

ModelSubset model_subset_from_string(const std::string& s) {
  if (s == "holding_i") return ModelSubset::kHoldingI;
  if (s == "excluding_i") return ModelSubset::kExcludingI;
  if (s == "all") return ModelSubset::kAll;
  throw ConfigError("unknown model subset '" + s + "'");
}

void CurvParams::validate() const {
  if (!(h >= 1e-6 && h <= 1.0)) throw ConfigError("curvature step h must lie in [1e-6, 1]");
  if (n < 1) throw ConfigError("curvature probe count n must be >= 1");
}

namespace {

constexpr int kChunk = 64;

Vector probe(std::uint64_t seed, std::int64_t sample_id, int k, int d) {
  CounterRng rng(seed, Purpose::kProbe, static_cast<std::uint64_t>(sample_id), static_cast<std::uint64_t>(k));
  Vector v(d);
  for (int j = 0; j < d; ++j) v(j) = rng.rademacher();
  return v;
}

double finish(double sum_sq, const CurvParams& p) {
  const double mean = sum_sq / p.n;
  return p.mode == CurvMode::kNormalized ? mean / (p.h * p.h) : mean;
}

}  // namespace

double curvature_score(const GradFn& grad, const Vector& x, std::int64_t sample_id, const CurvParams& p) {
  p.validate();
  const Vector g0 = grad(x);
  double acc = 0.0;
  for (int k = 0; k < p.n; ++k) {
    const Vector v = probe(p.seed, sample_id, k, static_cast<int>(x.size()));
    acc += (grad(x + p.h * v) - g0).squaredNorm();
  }
  if (!std::isfinite(acc)) throw NumericError("non-finite curvature score");
  return finish(acc, p);
}

double curvature_score(const Model& model, const Example& z, const CurvParams& p) {
  p.validate();
  if (z.x.size() != model.spec.input_dim()) throw ConfigError("input dimension mismatch");
  const int d = static_cast<int>(z.x.size());
  Matrix X(d, p.n + 1);
  X.col(0) = z.x;
  for (int k = 0; k < p.n; ++k) X.col(k + 1) = z.x + p.h * probe(p.seed, z.sample_id, k, d);
  const std::vector<int> labels(static_cast<std::size_t>(p.n + 1), z.y);
  const Matrix G = BatchPass(model, X, labels).input_grads();
  double acc = 0.0;
  for (int k = 0; k < p.n; ++k) acc += (G.col(k + 1) - G.col(0)).squaredNorm();
  if (!std::isfinite(acc)) throw NumericError("non-finite curvature score");
  return finish(acc, p);
}

Vector curvature_scores(const Model& model, const Dataset& S, const CurvParams& p) {
  p.validate();
  const int d = model.spec.input_dim();
  if (S.size() > 0 && S.dim() != d) throw ConfigError("input dimension mismatch");
  const int cols = p.n + 1;
  std::vector<Vector> probes;
  Vector out(static_cast<Eigen::Index>(S.size()));
  for (std::size_t begin = 0; begin < S.size(); begin += kChunk) {
    const std::size_t end = std::min(S.size(), begin + kChunk);
    const int nb = static_cast<int>(end - begin);
    Matrix X(d, nb * cols);
    std::vector<int> labels(static_cast<std::size_t>(nb * cols));
    for (int s = 0; s < nb; ++s) {
      const Example& z = S.examples[begin + s];
      X.col(s * cols) = z.x;
      for (int k = 0; k < p.n; ++k) X.col(s * cols + k + 1) = z.x + p.h * probe(p.seed, z.sample_id, k, d);
      std::fill_n(labels.begin() + s * cols, cols, z.y);
    }
    const Matrix G = BatchPass(model, X, labels).input_grads();
    for (int s = 0; s < nb; ++s) {
      double acc = 0.0;
      for (int k = 0; k < p.n; ++k) acc += (G.col(s * cols + k + 1) - G.col(s * cols)).squaredNorm();
      if (!std::isfinite(acc)) throw NumericError("non-finite curvature score");
      out(static_cast<Eigen::Index>(begin + s)) = finish(acc, p);
    }
  }
  return out;
}

Matrix ensemble_curvature(const std::vector<Model>& models, const Dataset& S, const CurvParams& p,
                          int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  p.validate();
  const int K = static_cast<int>(models.size());
  Matrix scores(K, static_cast<Eigen::Index>(S.size()));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(K));
#pragma omp parallel for num_threads(workers) schedule(dynamic, 1)
  for (int k = 0; k < K; ++k) {
    try {
      scores.row(k) = curvature_scores(models[static_cast<std::size_t>(k)], S, p).transpose();
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return scores;
}

Matrix ensemble_curvature_serial(const std::vector<Model>& models, const Dataset& S, const CurvParams& p) {
  p.validate();
  Matrix scores(static_cast<Eigen::Index>(models.size()), static_cast<Eigen::Index>(S.size()));
  for (std::size_t k = 0; k < models.size(); ++k)
    scores.row(static_cast<Eigen::Index>(k)) = curvature_scores(models[k], S, p).transpose();
  return scores;
}

namespace {

std::vector<int> select_models(const MaskSet& masks, int K, std::size_t i, ModelSubset which) {
  std::vector<int> ks;
  int with = 0;
  int without = 0;
  for (int k = 0; k < K; ++k) {
    const bool in = masks.K() > k && masks.included(k, i);
    (in ? with : without) += 1;
    if (which == ModelSubset::kAll || (which == ModelSubset::kHoldingI) == in) ks.push_back(k);
  }
  if (ks.empty())
    throw InsufficientModelsError("no models in subset '" + std::string(to_string(which)) + "' for index " +
                                      std::to_string(i),
                                  with, without);
  return ks;
}

MeanEstimate summarize(const std::vector<double>& xs) {
  MeanEstimate e;
  e.count = static_cast<int>(xs.size());
  double s = 0.0;
  for (double x : xs) s += x;
  e.mean = s / e.count;
  if (e.count >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.stderr_ = std::sqrt(ss / (e.count - 1) / e.count);
  }
  return e;
}

}  // namespace

MeanEstimate expected_curvature(const Matrix& scores, const MaskSet& masks, std::size_t i, ModelSubset which) {
  const int K = static_cast<int>(scores.rows());
  if (which != ModelSubset::kAll && masks.K() != K) throw ConfigError("mask count does not match score rows");
  if (i >= static_cast<std::size_t>(scores.cols())) throw NotFoundError("sample index out of range");
  std::vector<double> xs;
  for (int k : select_models(masks, K, i, which)) xs.push_back(scores(k, static_cast<Eigen::Index>(i)));
  return summarize(xs);
}

MeanEstimate expected_curvature(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S,
                                std::int64_t sample_id, const CurvParams& p, ModelSubset which) {
  const std::size_t i = S.index_of(sample_id);
  const int K = static_cast<int>(models.size());
  if (which != ModelSubset::kAll && masks.K() != K) throw ConfigError("mask count does not match model count");
  std::vector<double> xs;
  for (int k : select_models(masks, K, i, which))
    xs.push_back(curvature_score(models[static_cast<std::size_t>(k)], S.examples[i], p));
  return summarize(xs);
}

EigenCurvature eigen_curvature(const Matrix& hessian) {
  if (hessian.rows() != hessian.cols()) throw ConfigError("Hessian must be square");
  const Matrix H = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigen decomposition failed");
  EigenCurvature out;
  out.trace = H.trace();
  out.abs_eigen_sum = es.eigenvalues().cwiseAbs().sum();
  out.trace_sq = H.squaredNorm();
  return out;
}

EigenCurvature eigen_curvature(const Model& model, const Example& z) {
  return eigen_curvature(exact_input_hessian(model, z));
}

}  // namespace curvlink
