#include "curvlink/ensemble_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "curvlink/config.hpp"
#include "curvlink/digest.hpp"
#include "curvlink/errors.hpp"
#include "curvlink/model_io.hpp"

namespace curvlink {

namespace {

std::string model_file(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "model_%04d.crvl", k);
  return buf;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_digest(const std::filesystem::path& path, const std::string& expected) {
  if (digest_file(path) != expected) throw ConfigError("digest mismatch for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> pack_bits(std::span<const std::vector<std::uint8_t>> rows) {
  const std::size_t m = rows.empty() ? 0 : rows.front().size();
  std::vector<std::uint8_t> out((rows.size() * m + 7) / 8, 0);
  std::size_t j = 0;
  for (const auto& row : rows) {
    if (row.size() != m) throw ConfigError("ragged bit matrix");
    for (auto b : row) {
      if (b) out[j / 8] = static_cast<std::uint8_t>(out[j / 8] | (1u << (j % 8)));
      ++j;
    }
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> unpack_bits(std::span<const std::uint8_t> bytes, int K, std::size_t m) {
  const std::size_t total = static_cast<std::size_t>(K) * m;
  if (bytes.size() != (total + 7) / 8) throw ConfigError("bit matrix has the wrong byte length");
  std::vector<std::vector<std::uint8_t>> rows(static_cast<std::size_t>(K), std::vector<std::uint8_t>(m));
  for (std::size_t j = 0; j < total; ++j) rows[j / m][j % m] = (bytes[j / 8] >> (j % 8)) & 1u;
  return rows;
}

void save_ensemble(const EnsembleRecord& ensemble, const std::filesystem::path& dir, const std::string& config_digest) {
  if (static_cast<int>(ensemble.correct.size()) != ensemble.K() || ensemble.masks.K() != ensemble.K())
    throw ConfigError("ensemble record is inconsistent");
  std::filesystem::create_directories(dir / "models");

  {
    std::ofstream out(dir / "masks.csv", std::ios::binary);
    if (!out) throw ConfigError("cannot write " + (dir / "masks.csv").string());
    out << "# config_digest: " << config_digest << '\n';
    out << "# rows: models, columns: sample positions, 1 = trained on\n";
    for (const auto& mask : ensemble.masks.masks) {
      for (std::size_t i = 0; i < mask.size(); ++i) out << (i ? "," : "") << int{mask[i]};
      out << '\n';
    }
  }
  write_bytes(dir / "correct.bin", pack_bits(ensemble.correct));

  Json models = Json::array();
  for (int k = 0; k < ensemble.K(); ++k) {
    const auto path = dir / "models" / model_file(k);
    save_model(ensemble.models[static_cast<std::size_t>(k)], path);
    models.push_back({{"file", "models/" + model_file(k)}, {"digest", digest_file(path)}});
  }
  Json budgets = Json::array();
  for (const auto& b : ensemble.budgets) budgets.push_back(b ? to_json(*b) : Json(nullptr));

  Json manifest = {{"config_digest", config_digest},
                   {"train_config_digest", ensemble.config_digest},
                   {"K", ensemble.K()},
                   {"m", ensemble.m()},
                   {"mask_ratio", ensemble.masks.ratio},
                   {"mask_seed", ensemble.masks.seed},
                   {"frozen_core", ensemble.masks.frozen_core},
                   {"masks_digest", digest_file(dir / "masks.csv")},
                   {"correct_digest", digest_file(dir / "correct.bin")},
                   {"models", models},
                   {"budgets", budgets}};
  write_json_file(manifest, dir / "ensemble.json");
}

EnsembleRecord load_ensemble(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "ensemble.json")) throw NotFoundError("no ensemble.json in " + dir.string());
  const Json j = read_json_file(dir / "ensemble.json");
  EnsembleRecord e;
  try {
    const int K = j.at("K").get<int>();
    const auto m = j.at("m").get<std::size_t>();
    check_digest(dir / "masks.csv", j.at("masks_digest").get<std::string>());
    check_digest(dir / "correct.bin", j.at("correct_digest").get<std::string>());
    e.config_digest = j.at("train_config_digest").get<std::string>();
    e.masks.ratio = j.at("mask_ratio").get<double>();
    e.masks.seed = j.at("mask_seed").get<std::uint64_t>();
    e.masks.frozen_core = j.at("frozen_core").get<std::vector<std::size_t>>();

    std::ifstream in(dir / "masks.csv");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::uint8_t> mask;
      for (std::size_t i = 0; i < line.size(); i += 2) mask.push_back(line[i] == '1' ? 1 : 0);
      if (mask.size() != m) throw ConfigError("mask row has the wrong length");
      e.masks.masks.push_back(std::move(mask));
    }
    if (e.masks.K() != K) throw ConfigError("mask count differs from K");
    e.correct = unpack_bits(read_bytes(dir / "correct.bin"), K, m);
    for (const auto& mj : j.at("models")) {
      const auto path = dir / mj.at("file").get<std::string>();
      check_digest(path, mj.at("digest").get<std::string>());
      e.models.push_back(load_model(path));
    }
    if (e.K() != K) throw ConfigError("model count differs from K");
    for (const auto& b : j.at("budgets"))
      e.budgets.push_back(b.is_null() ? std::nullopt : std::optional<PrivacyBudget>(privacy_budget_from_json(b)));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("malformed ensemble manifest in " + dir.string() + ": " + ex.what());
  }
  return e;
}

}  // namespace curvlink
