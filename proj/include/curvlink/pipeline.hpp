#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curvlink/config.hpp"
#include "curvlink/data_io.hpp"
#include "curvlink/fit.hpp"
#include "curvlink/memorization.hpp"
#include "curvlink/plot_data.hpp"
#include "curvlink/stats.hpp"
#include "curvlink/theory.hpp"

namespace curvlink {

// Stages shared by the CLI subcommands and the verification recipe. Every
// stage is a deterministic function of the config; `workers` only changes
// wall time.

struct Datasets {
  Dataset train;
  // Fresh draws from the same mixture, ids after the training ids.
  Dataset holdout;
};
Datasets make_datasets(const RunConfig& cfg);

// K non-private models on mask_ratio subsamples of S.
EnsembleRecord train_main_ensemble(const RunConfig& cfg, const Dataset& S, int workers);

struct MemorizationStage {
  // K x m normalized curvature scores.
  Matrix curvature;
  ScoreTable table;
};
MemorizationStage score_memorization(const RunConfig& cfg, const Dataset& S, const EnsembleRecord& ensemble,
                                     int workers);
CurvParams run_curv_params(const RunConfig& cfg);

// Per-sample curvature summary over the models selected by `which`.
std::vector<CurvatureRow> curvature_rows(const Matrix& scores, const MaskSet& masks, const Dataset& S,
                                         ModelSubset which);

// Mean and standard error over models of each model's largest loss on its own
// training samples.
Estimate mean_max_training_loss(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S);

struct Theorem1Bin {
  int bin_index = 0;
  double mean_mem = 0.0;
  double max_curv = 0.0;
  double rhs = 0.0;
  bool satisfied = false;
};

struct Theorem1Check {
  std::vector<Theorem1Bin> bins;
  double fraction_satisfied = 0.0;
  // At least 95% of the nonempty bins satisfy mean_mem <= rhs(max_curv).
  bool satisfied = false;
};
Theorem1Check check_theorem1(std::span<const BinRow> bins, const TheoryConstants& k);

struct DpPoint {
  double eps = 0.0;
  std::string status = "ok";
  SweepRow sweep;
  TheoryConstants constants;
  Estimate beta;
  BoundReport theorem2;
  BoundReport theorem3;
  BoundReport lemma1;
  double prior_stability = 0.0;
  // Mean over models of the steps taken and epsilon spent.
  double mean_steps = 0.0;
  double mean_epsilon = 0.0;
};

// Per-point analysis of the private ensembles of privacy_mem_experiment:
// mean curvature, loss bound, constants and the curvature, memorization and
// stability bound reports, followed by the trend statistics and the loss and curvature fits.
struct PrivateSweep {
  std::vector<DpPoint> points;
  Correlation mem_trend;
  Correlation curv_trend;
  std::optional<FitResult> loss_fit;
  std::optional<FitResult> curv_fit;
  std::optional<FitResult> curv_fit_free;
  std::vector<std::string> notes;
};
PrivateSweep analyze_private_sweep(const RunConfig& cfg, const Datasets& data, std::span<const std::int64_t> topk,
                                   const MemPrivacyResult& privacy, int workers);

Json to_json(const PrivateSweep& sweep, const MemPrivacyResult& privacy);

// Trains the private ensembles for `topk` over the eps grid.
MemPrivacyResult run_mem_privacy(const RunConfig& cfg, const Dataset& S, std::span<const std::int64_t> topk,
                                 int workers);

// dp_sweep.csv (one row per grid point, `# m:` comment line) and the
// fig6 / fig7 plot data when the loss fit exists.
void write_private_sweep(const PrivateSweep& sweep, const MemPrivacyResult& privacy, int m,
                         const std::filesystem::path& dir, const std::string& config_digest);

struct SweepCsvRow {
  double eps = 0.0;
  std::string status;
  double loss_bound = 0.0;
  double mean_curv = 0.0;
};
struct SweepCsv {
  int m = 0;
  std::vector<SweepCsvRow> rows;
};
SweepCsv read_private_sweep(const std::filesystem::path& csv);

struct VerifyResult {
  Datasets data;
  EnsembleRecord ensemble;
  MemorizationStage mem;
  std::vector<BinRow> bins;
  Correlation bin_correlation;
  MemCurvFit memcurv_fit;
  TheoryConstants constants;
  Theorem1Check theorem1;
  BoundReport lossdiff;
  std::vector<std::size_t> probes;
  std::vector<std::int64_t> topk;
  MemPrivacyResult privacy;
  PrivateSweep sweep;
  std::vector<std::string> notes;
  Json verification;
};

// Runs every stage: data, non-private ensemble, memorization and curvature,
// memorization-curvature binning, theory constants, the private sweep with
// its bound checks, and the fits. When out_dir is set, all data files are written
// there.
VerifyResult run_verification(const RunConfig& cfg, int workers,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

Json to_json(const Estimate& e);
Json to_json(const TheoryConstants& k);
Json to_json(const BoundReport& r);

// Writes the data files of a run into dir (created if needed).
void write_verification_outputs(const VerifyResult& r, const RunConfig& cfg, const std::filesystem::path& dir);

struct RunReport {
  std::string text;
  Json json;
  std::vector<std::string> missing;
};
// Consolidates run directories (each with manifest.json and, for verify
// runs, verification.json) into one summary.
RunReport report_runs(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace curvlink
