#include <doctest.h>

#include <filesystem>

#include "cli.hpp"
#include "curvlink/config.hpp"
#include "curvlink/digest.hpp"
#include "curvlink/pipeline.hpp"

using namespace curvlink;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("curvlink_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::string> smoke_args(const std::string& cmd, const fs::path& out, const std::string& id) {
  return {cmd, "--preset", "smoke", "--out", out.string(), "--run-id", id, "--workers", "1"};
}

}  // namespace

TEST_CASE("smoke verification is identical across worker counts") {
  const RunConfig cfg = RunConfig::smoke();
  const VerifyResult a = run_verification(cfg, 1);
  const VerifyResult b = run_verification(cfg, 3);
  CHECK(a.verification == b.verification);
  CHECK(a.verification.contains("verdicts"));
  CHECK(a.ensemble.K() == cfg.experiment.K);
  CHECK(a.data.holdout.size() == static_cast<std::size_t>(cfg.experiment.holdout_per_class * cfg.data.n_classes));
}

TEST_CASE("datasets keep holdout ids after training ids") {
  const Datasets d = make_datasets(RunConfig::smoke());
  std::int64_t max_train = 0;
  for (const auto& z : d.train.examples) max_train = std::max(max_train, z.sample_id);
  for (const auto& z : d.holdout.examples) CHECK(z.sample_id > max_train);
}

TEST_CASE("cli verify writes a manifest and verdicts") {
  TempDir tmp("cli_verify");
  REQUIRE(cli_run(smoke_args("verify", tmp.path, "v1")) == 0);
  const fs::path run = tmp.path / "v1";
  const Json m = read_json_file(run / "manifest.json");
  CHECK(m["exit_code"] == 0);
  CHECK(m["command"] == "verify");
  CHECK(m["error"].is_null());
  CHECK(m["config_digest"] == RunConfig::smoke().digest());
  for (const auto& o : m["outputs"]) CHECK(digest_file(run / o["path"].get<std::string>()) == o["digest"]);
  const Json v = read_json_file(run / "verification.json");
  for (const char* key : {"theorem1", "theorem2", "theorem3", "lemma1"}) CHECK(v["verdicts"].contains(key));

  CHECK(cli_run(smoke_args("verify", tmp.path, "v1")) == 1);

  REQUIRE(cli_run(smoke_args("verify", tmp.path, "v2")) == 0);
  for (const char* f : {"data.csv", "holdout.csv", "scores.csv", "curvature.csv", "mem_privacy.csv"})
    CHECK(digest_file(run / f) == digest_file(tmp.path / "v2" / f));
}

TEST_CASE("cli validation errors exit 1 without outputs") {
  TempDir tmp("cli_errors");
  const fs::path cfg = tmp.path / "bad.json";
  write_json_file(Json::parse(R"({"bogus": true})"), cfg);
  auto args = smoke_args("gen-data", tmp.path, "bad");
  args.push_back("--config");
  args.push_back(cfg.string());
  CHECK(cli_run(args) == 1);
  CHECK_FALSE(fs::exists(tmp.path / "bad"));
  CHECK(cli_run({"no-such-command"}) == 1);
  auto missing = smoke_args("train", tmp.path, "nodata");
  missing.push_back("--data");
  missing.push_back((tmp.path / "none.csv").string());
  CHECK(cli_run(missing) == 1);
}

TEST_CASE("report lists missing manifests and version conflicts") {
  TempDir tmp("cli_report");
  CHECK(cli_run(smoke_args("report", tmp.path, "empty")) == 0);

  for (const char* v : {"0.1.0", "0.0.9"}) {
    const fs::path d = tmp.path / (std::string("r") + v);
    fs::create_directories(d);
    write_json_file(Json{{"command", "gen-data"}, {"run_id", "x"}, {"exit_code", 0}, {"library_version", v}},
                    d / "manifest.json");
  }
  fs::create_directories(tmp.path / "bare");
  const RunReport rep = report_runs({tmp.path / "r0.1.0", tmp.path / "r0.0.9", tmp.path / "bare"});
  CHECK(rep.json["runs"].size() == 2);
  CHECK(rep.missing.size() == 1);
  REQUIRE(rep.json["warnings"].size() == 1);
  CHECK(rep.text.find("WARNING") != std::string::npos);

  auto args = smoke_args("report", tmp.path, "both");
  args.push_back((tmp.path / "r0.1.0").string());
  args.push_back((tmp.path / "bare").string());
  CHECK(cli_run(args) == 0);
  const Json j = read_json_file(tmp.path / "both" / "report.json");
  CHECK(j["missing"].size() == 1);
}
