#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curvlink/curvature.hpp"
#include "curvlink/data.hpp"
#include "curvlink/trainer.hpp"

namespace curvlink {

struct ScoreRow {
  std::int64_t sample_id = 0;
  // Absent when the sample was in every mask or in none.
  std::optional<double> mem;
  double p_in = 0.0;
  double p_out = 0.0;
  int in_count = 0;
  int out_count = 0;
  double mem_stderr = 0.0;
  std::optional<double> curv_mean;
  std::optional<double> curv_stderr;
  // "", "all_in" or "all_out".
  std::string flags;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  std::size_t valid_count() const;
  const ScoreRow& row(std::int64_t sample_id) const;
};

// mem(i) = P[correct | i trained on] - P[correct | i held out], estimated
// from the correctness matrix of a subsampled ensemble. The standard error
// propagates the two binomial proportions.
ScoreTable estimate_mem(std::span<const std::vector<std::uint8_t>> correct, const MaskSet& masks,
                        const Dataset& S);
ScoreTable estimate_mem(const EnsembleRecord& ensemble, const Dataset& S);

// Fills curv_mean / curv_stderr from a K x m curvature matrix.
void attach_curvature(ScoreTable& table, const Matrix& scores, const MaskSet& masks, ModelSubset which);

// Sample ids of the k largest mem values; ties go to the smaller sample id.
std::vector<std::int64_t> topk_memorized(const ScoreTable& table, int k);

struct MemPrivacyPoint {
  double eps = 0.0;
  double mean_mem = 0.0;
  double stderr_ = 0.0;
  // 1 - e^-eps.
  double bound = 0.0;
  double sigma = 0.0;
  int models = 0;
  int valid_samples = 0;
  // "ok", or the reason this cell failed.
  std::string status = "ok";
  std::vector<double> sample_mem;
};

struct MemPrivacyResult {
  std::vector<MemPrivacyPoint> curve;
  // Ensemble trained at each grid point (empty for failed cells).
  std::vector<EnsembleRecord> ensembles;
  MaskSet masks;
};

// Privacy-vs-memorization protocol: set a = S without `topk` is always
// trained on, set b = `topk` is half-sampled per seed. For every eps the noise
// is calibrated, seeds_per_eps DP models are trained and the memorization of
// the topk samples is estimated from the inclusion bookkeeping. The same masks
// and seeds are used at every eps. cfg.dp supplies clip norm and delta; when
// it also fixes a noise multiplier, every grid point trains at that noise until
// its budget is spent instead of calibrating the noise to the epoch count.
// With `paired`, seed k and seed k + seeds_per_eps/2 share their training seed
// and receive complementary halves of `topk`, so the in/out comparison is made
// between twins that differ only in which half they saw.
MemPrivacyResult privacy_mem_experiment(const ModelSpec& spec, const Dataset& S,
                                        std::span<const std::int64_t> topk,
                                        std::span<const double> eps_grid, int seeds_per_eps,
                                        const TrainConfig& cfg, std::uint64_t mask_seed, int workers,
                                        bool paired = true);

}  // namespace curvlink
