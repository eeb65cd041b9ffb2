#include "curvlink/plot_data.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "curvlink/digest.hpp"
#include "curvlink/errors.hpp"

namespace curvlink {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::ofstream open_dat(const std::filesystem::path& path, const std::string& digest, const std::string& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "# config_digest: " << digest << '\n' << "# columns: " << columns << '\n';
  return out;
}

std::string f(double v) { return format_double(v); }
std::string f(const std::optional<double>& v) { return format_double(v.value_or(kNan)); }

// Fitted value of a bin, in the order in which the fit saw the bins.
std::vector<std::optional<double>> fitted_per_bin(std::span<const BinRow> bins, const FitResult& fit) {
  std::vector<std::optional<double>> out(bins.size());
  std::size_t j = 0;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count == 0 || !bins[b].max_curv || !bins[b].mean_mem) continue;
    if (j < fit.fitted.size()) out[b] = fit.fitted[j];
    ++j;
  }
  return out;
}

}  // namespace

void write_fig4_memcurv(std::span<const BinRow> bins, const MemCurvFit& fit, const std::filesystem::path& path,
                        const std::string& config_digest) {
  auto out = open_dat(path, config_digest, "bin mem_lo mem_hi count mean_mem max_curv fit_scaled fit_unscaled");
  const auto scaled = fitted_per_bin(bins, fit.scaled);
  const auto unscaled = fitted_per_bin(bins, fit.unscaled);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const auto& r = bins[b];
    out << r.bin_index << ' ' << f(r.mem_lo) << ' ' << f(r.mem_hi) << ' ' << r.count << ' ' << f(r.mean_mem) << ' '
        << f(r.max_curv) << ' ' << f(scaled[b]) << ' ' << f(unscaled[b]) << '\n';
  }
}

void write_fig6_losseps(std::span<const SweepRow> rows, const FitResult& loss_fit, const std::filesystem::path& path,
                        const std::string& config_digest) {
  auto out = open_dat(path, config_digest, "eps loss_bound fit");
  for (const auto& r : rows) out << f(r.eps) << ' ' << f(r.loss_bound) << ' ' << f(loss_model(loss_fit, r.eps)) << '\n';
}

void write_fig7_curveps(std::span<const SweepRow> rows, int m, const FitResult& loss_fit,
                        const std::optional<FitResult>& curv_fit, const std::optional<FitResult>& curv_fit_free,
                        const std::filesystem::path& path, const std::string& config_digest) {
  auto out = open_dat(path, config_digest, "eps mean_curv stderr fit fit_free_scale thm2_rhs");
  for (const auto& r : rows) {
    const double fixed = curv_fit ? curv_model(*curv_fit, loss_fit, m, r.eps) : kNan;
    const double free = curv_fit_free ? curv_model(*curv_fit_free, loss_fit, m, r.eps) : kNan;
    out << f(r.eps) << ' ' << f(r.mean_curv) << ' ' << f(r.curv_stderr) << ' ' << f(fixed) << ' ' << f(free) << ' '
        << f(r.thm2_rhs) << '\n';
  }
}

void write_fig8_memeps(std::span<const MemPrivacyPoint> curve, const std::filesystem::path& path,
                       const std::string& config_digest) {
  auto out = open_dat(path, config_digest, "eps mean_mem stderr bound");
  for (const auto& p : curve) {
    const double mem = p.status == "ok" ? p.mean_mem : kNan;
    const double se = p.status == "ok" ? p.stderr_ : kNan;
    out << f(p.eps) << ' ' << f(mem) << ' ' << f(se) << ' ' << f(p.bound) << '\n';
  }
}

Json to_json(const FitResult& fit) {
  Json params = Json::object();
  for (const auto& p : fit.params) params[p.name] = p.value;
  auto finite = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"model_name", fit.model_name},
          {"params", params},
          {"residual_sse", finite(fit.residual_sse)},
          {"r_squared", finite(fit.r_squared)},
          {"constraint_flags", fit.constraint_flags},
          {"converged", fit.converged},
          {"xs", fit.xs},
          {"ys", fit.ys},
          {"fitted", fit.fitted}};
}

}  // namespace curvlink
