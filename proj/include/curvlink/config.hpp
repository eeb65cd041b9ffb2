#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "curvlink/curvature.hpp"
#include "curvlink/data.hpp"
#include "curvlink/nn.hpp"
#include "curvlink/trainer.hpp"

namespace curvlink {

using Json = nlohmann::ordered_json;

inline constexpr const char* kLibraryVersion = "0.1.0";

// Grids and sizes of the verification recipes.
struct ExperimentConfig {
  // Non-private subsampled ensemble.
  int K = 200;
  double mask_ratio = 0.7;
  int n_bins = 50;
  int top_k = 32;
  std::vector<double> eps_grid{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  int seeds_per_eps = 20;
  bool paired = true;
  // Probe indices for beta and the loss-difference check.
  int probes = 16;
  int rho_pairs = 200;
  int holdout_per_class = 200;
  // Radius of the adjacency perturbation alpha (Gaussian, E[alpha^T alpha] = 1).
  double upsilon = 1.0;
  ModelSubset curv_subset = ModelSubset::kHoldingI;
  // Use L = 1 in the memorization-curvature bound.
  bool unit_loss_bound = true;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct RunConfig {
  std::string run_id = "run";
  std::filesystem::path output_dir = "runs";
  // Every random stream of a run is derived from this seed.
  std::uint64_t seed = 1;
  GenSpec data;
  ModelSpec model;
  TrainConfig train;
  // Private training; dp must be set.
  TrainConfig dp_train;
  CurvParams curvature;
  ExperimentConfig experiment;

  void validate() const;
  // Digest of the canonical JSON form without run_id and output_dir, so the
  // same experiment gives the same digest wherever it is written.
  std::string digest() const;

  static RunConfig desk();
  // desk() with the 20-epoch, batch-128, lr-0.001 non-private schedule.
  static RunConfig paper_cifar();
  // Tiny sizes for fast end-to-end checks.
  static RunConfig smoke();
  static RunConfig preset(const std::string& name);
};

// Seeds of the individual streams of a run.
struct RunSeeds {
  std::uint64_t data;
  std::uint64_t holdout;
  std::uint64_t train;
  std::uint64_t dp_train;
  std::uint64_t masks;
  std::uint64_t dp_masks;
  std::uint64_t curvature;
  std::uint64_t analysis;
};
RunSeeds derive_seeds(std::uint64_t seed);

Json to_json(const GenSpec& g);
Json to_json(const ModelSpec& s);
Json to_json(const TrainConfig& c);
Json to_json(const CurvParams& p);
Json to_json(const ExperimentConfig& e);
Json to_json(const RunConfig& c);
Json to_json(const PrivacyBudget& b);

// Overlay parsers: keys present in j replace the corresponding fields of
// `base`; unknown keys and ill-typed values raise ConfigError.
GenSpec genspec_from_json(const Json& j, GenSpec base = {});
ModelSpec model_spec_from_json(const Json& j, ModelSpec base = {});
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
CurvParams curv_params_from_json(const Json& j, CurvParams base = {});
ExperimentConfig experiment_from_json(const Json& j, ExperimentConfig base = {});
RunConfig run_config_from_json(const Json& j, RunConfig base);
PrivacyBudget privacy_budget_from_json(const Json& j);

// Parses a JSON file; ConfigError on I/O or syntax errors.
Json read_json_file(const std::filesystem::path& path);
// Two-space indented JSON with a trailing newline.
void write_json_file(const Json& j, const std::filesystem::path& path);

}  // namespace curvlink
