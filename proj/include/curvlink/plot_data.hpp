#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curvlink/config.hpp"
#include "curvlink/fit.hpp"
#include "curvlink/memorization.hpp"

namespace curvlink {

// Plot-data files are whitespace-separated columns preceded by
// `# config_digest:` and `# columns:` lines; missing values print as nan.

// One row per bin: bin mem_lo mem_hi count mean_mem max_curv fit_scaled fit_unscaled.
void write_fig4_memcurv(std::span<const BinRow> bins, const MemCurvFit& fit, const std::filesystem::path& path,
                        const std::string& config_digest);

// One row per grid point of the private sweep.
struct SweepRow {
  double eps = 0.0;
  double loss_bound = 0.0;
  double mean_curv = 0.0;
  double curv_stderr = 0.0;
  double thm2_rhs = 0.0;
};

// eps loss_bound fit.
void write_fig6_losseps(std::span<const SweepRow> rows, const FitResult& loss_fit, const std::filesystem::path& path,
                        const std::string& config_digest);
// eps mean_curv stderr fit fit_free_scale thm2_rhs.
void write_fig7_curveps(std::span<const SweepRow> rows, int m, const FitResult& loss_fit,
                        const std::optional<FitResult>& curv_fit, const std::optional<FitResult>& curv_fit_free,
                        const std::filesystem::path& path, const std::string& config_digest);
// eps mean_mem stderr bound.
void write_fig8_memeps(std::span<const MemPrivacyPoint> curve, const std::filesystem::path& path,
                       const std::string& config_digest);

Json to_json(const FitResult& f);

}  // namespace curvlink
