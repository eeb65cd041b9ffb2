#include "curvlink/data_io.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "curvlink/config.hpp"
#include "curvlink/digest.hpp"
#include "curvlink/errors.hpp"

namespace curvlink {

namespace {

constexpr const char* kDigestPrefix = "# config_digest: ";

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError("bad number '" + s + "' in " + path.string());
  return v;
}

long long parse_int(const std::string& s, const std::filesystem::path& path) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw ConfigError("bad integer '" + s + "' in " + path.string());
  return v;
}

std::optional<double> opt_double(const std::string& s, const std::filesystem::path& path) {
  const double v = parse_double(s, path);
  if (std::isnan(v)) return std::nullopt;
  return v;
}

std::string fmt_opt(const std::optional<double>& v) {
  return format_double(v.value_or(std::numeric_limits<double>::quiet_NaN()));
}

// Reads the data rows of a CSV written by this module: skips comment lines
// and checks the column header.
std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, const std::string& header_start) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::string line;
  bool header = false;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind(header_start, 0) != 0) throw ConfigError("unexpected header in " + path.string());
      header = true;
      continue;
    }
    rows.push_back(split(line));
  }
  if (!header) throw ConfigError("missing header in " + path.string());
  return rows;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".json");
  return p;
}

void write_dataset(const Dataset& S, const std::optional<GenSpec>& spec, const std::filesystem::path& csv,
                   const std::string& config_digest) {
  auto out = open_out(csv);
  out << kDigestPrefix << config_digest << '\n';
  out << "sample_id,subpop_id,y";
  for (int k = 0; k < S.dim(); ++k) out << ",x_" << k;
  out << '\n';
  for (const auto& z : S.examples) {
    out << z.sample_id << ',' << z.subpop_id << ',' << z.y;
    for (Eigen::Index k = 0; k < z.x.size(); ++k) out << ',' << format_double(z.x(k));
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing " + csv.string());

  Json side = {{"config_digest", config_digest},
               {"n_classes", S.n_classes},
               {"genspec_digest", S.genspec_digest},
               {"bayes_risk", S.bayes_risk ? Json(*S.bayes_risk) : Json(nullptr)},
               {"mislabeled", S.mislabeled},
               {"duplicate_pairs", S.duplicate_pairs},
               {"genspec", spec ? to_json(*spec) : Json(nullptr)}};
  write_json_file(side, sidecar_path(csv));
}

Dataset read_dataset(const std::filesystem::path& csv) {
  Dataset S;
  for (const auto& row : read_rows(csv, "sample_id,subpop_id,y")) {
    if (row.size() < 4) throw ConfigError("short row in " + csv.string());
    Example z;
    z.sample_id = parse_int(row[0], csv);
    z.subpop_id = static_cast<int>(parse_int(row[1], csv));
    z.y = static_cast<int>(parse_int(row[2], csv));
    z.x.resize(static_cast<Eigen::Index>(row.size() - 3));
    for (std::size_t k = 3; k < row.size(); ++k) z.x(static_cast<Eigen::Index>(k - 3)) = parse_double(row[k], csv);
    if (!S.examples.empty() && z.x.size() != S.examples.front().x.size())
      throw ConfigError("ragged rows in " + csv.string());
    S.n_classes = std::max(S.n_classes, z.y + 1);
    S.examples.push_back(std::move(z));
  }
  const auto side = sidecar_path(csv);
  if (std::filesystem::exists(side)) {
    const Json j = read_json_file(side);
    try {
      S.n_classes = j.at("n_classes").get<int>();
      S.genspec_digest = j.at("genspec_digest").get<std::string>();
      if (!j.at("bayes_risk").is_null()) S.bayes_risk = j.at("bayes_risk").get<double>();
      S.mislabeled = j.at("mislabeled").get<std::vector<std::int64_t>>();
      S.duplicate_pairs = j.at("duplicate_pairs").get<std::vector<std::pair<std::int64_t, std::int64_t>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed sidecar " + side.string() + ": " + e.what());
    }
  }
  return S;
}

void write_score_table(const ScoreTable& table, const std::filesystem::path& csv, const std::string& config_digest) {
  auto out = open_out(csv);
  out << kDigestPrefix << config_digest << '\n';
  out << "sample_id,mem,mem_stderr,p_in,p_out,in_count,out_count,curv_mean,curv_stderr,flags\n";
  for (const auto& r : table.rows) {
    out << r.sample_id << ',' << fmt_opt(r.mem) << ',' << format_double(r.mem_stderr) << ','
        << format_double(r.p_in) << ',' << format_double(r.p_out) << ',' << r.in_count << ',' << r.out_count << ','
        << fmt_opt(r.curv_mean) << ',' << fmt_opt(r.curv_stderr) << ',' << r.flags << '\n';
  }
  if (!out) throw ConfigError("failed writing " + csv.string());
}

ScoreTable read_score_table(const std::filesystem::path& csv) {
  ScoreTable t;
  for (auto row : read_rows(csv, "sample_id,mem,")) {
    if (row.size() == 9) row.emplace_back();
    if (row.size() != 10) throw ConfigError("bad row width in " + csv.string());
    ScoreRow r;
    r.sample_id = parse_int(row[0], csv);
    r.mem = opt_double(row[1], csv);
    r.mem_stderr = parse_double(row[2], csv);
    r.p_in = parse_double(row[3], csv);
    r.p_out = parse_double(row[4], csv);
    r.in_count = static_cast<int>(parse_int(row[5], csv));
    r.out_count = static_cast<int>(parse_int(row[6], csv));
    r.curv_mean = opt_double(row[7], csv);
    r.curv_stderr = opt_double(row[8], csv);
    r.flags = row[9];
    t.rows.push_back(std::move(r));
  }
  return t;
}

void write_curvature_scores(const std::vector<CurvatureRow>& rows, const CurvParams& p,
                            const std::filesystem::path& csv, const std::string& config_digest) {
  auto out = open_out(csv);
  out << kDigestPrefix << config_digest << '\n';
  out << "sample_id,model_count,mean_curv,stderr_curv,mode,h,n,seed\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.model_count << ',' << format_double(r.mean) << ',' << format_double(r.stderr_)
        << ',' << to_string(p.mode) << ',' << format_double(p.h) << ',' << p.n << ',' << p.seed << '\n';
  }
  if (!out) throw ConfigError("failed writing " + csv.string());
}

void write_mem_curve(const std::vector<MemPrivacyPoint>& curve, const std::filesystem::path& csv,
                     const std::string& config_digest) {
  auto out = open_out(csv);
  out << kDigestPrefix << config_digest << '\n';
  out << "eps,mean_mem,stderr,bound,sigma,models,valid_samples,status\n";
  for (const auto& p : curve) {
    std::string status = p.status;
    for (char& c : status)
      if (c == ',' || c == '\n') c = ';';
    out << format_double(p.eps) << ',' << format_double(p.mean_mem) << ',' << format_double(p.stderr_) << ','
        << format_double(p.bound) << ',' << format_double(p.sigma) << ',' << p.models << ',' << p.valid_samples
        << ',' << status << '\n';
  }
  if (!out) throw ConfigError("failed writing " + csv.string());
}

std::string read_config_digest(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw NotFoundError("cannot open " + csv.string());
  std::string line;
  const std::string prefix = kDigestPrefix;
  while (std::getline(in, line) && !line.empty() && line[0] == '#')
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  return {};
}

}  // namespace curvlink
