#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curvlink/data.hpp"
#include "curvlink/memorization.hpp"

namespace curvlink {

// CSV files start with `# config_digest: <hex>` and a column header line;
// floats use 17 significant digits.

// Columns sample_id, subpop_id, y, x_0..x_{d-1}. The JSON sidecar (same stem,
// .json) carries the generator spec, Bayes risk and planted structure.
void write_dataset(const Dataset& S, const std::optional<GenSpec>& spec, const std::filesystem::path& csv,
                   const std::string& config_digest);
// Reads the CSV and, when present, its sidecar.
Dataset read_dataset(const std::filesystem::path& csv);
std::filesystem::path sidecar_path(const std::filesystem::path& csv);

// Columns sample_id, mem, mem_stderr, p_in, p_out, in_count, out_count,
// curv_mean, curv_stderr, flags; absent values are written as "nan".
void write_score_table(const ScoreTable& table, const std::filesystem::path& csv, const std::string& config_digest);
ScoreTable read_score_table(const std::filesystem::path& csv);

// Per-sample curvature summary over an ensemble: sample_id, model_count,
// mean_curv, stderr_curv, mode, h, n, seed.
struct CurvatureRow {
  std::int64_t sample_id = 0;
  int model_count = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};
void write_curvature_scores(const std::vector<CurvatureRow>& rows, const CurvParams& p,
                            const std::filesystem::path& csv, const std::string& config_digest);

// Columns eps, mean_mem, stderr, bound, sigma, models, valid_samples, status.
void write_mem_curve(const std::vector<MemPrivacyPoint>& curve, const std::filesystem::path& csv,
                     const std::string& config_digest);

// The digest recorded in a CSV header, or empty if there is none.
std::string read_config_digest(const std::filesystem::path& csv);

}  // namespace curvlink
