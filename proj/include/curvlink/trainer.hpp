#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "curvlink/data.hpp"
#include "curvlink/nn.hpp"
#include "curvlink/privacy.hpp"

namespace curvlink {

struct DpConfig {
  double clip_norm = 1.0;
  // At least one of noise_multiplier / target_epsilon is set. With only a
  // target, sigma is calibrated so the planned epochs spend the budget. With
  // both, sigma is used as given and training stops once the next step would
  // exceed the target.
  std::optional<double> noise_multiplier;
  std::optional<double> target_epsilon;
  double delta = 1e-5;

  void validate() const;
  bool operator==(const DpConfig&) const = default;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.05;
  std::vector<int> lr_drop_epochs{18, 24};
  double lr_drop_factor = 0.1;
  std::uint64_t seed = 0;
  std::optional<DpConfig> dp;

  void validate() const;
  // Learning rate used during (0-based) epoch e.
  double lr_at(int epoch) const;
  std::string digest() const;
  bool operator==(const TrainConfig&) const = default;

  static TrainConfig desk();
  // 20 epochs, batch 128, lr 0.001 dropped 10x at epochs 12 and 16.
  static TrainConfig paper_cifar();
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  // DP runs only.
  double epsilon = 0.0;
  double max_clipped_norm = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
  std::int64_t steps = 0;
  std::optional<PrivacyBudget> budget;
  // "epochs" or "budget" (DP runs stop early once the next step would exceed
  // the target epsilon).
  std::string stop_reason = "epochs";
};

// Mini-batch SGD with a fresh shuffle every epoch. cfg.dp must be absent.
TrainResult train(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg);

// DP-SGD: per-sample clipping to clip_norm, Gaussian noise N(0, sigma^2 C^2)
// on the clipped sum, division by the batch size. Batches are fixed-size
// shuffled batches; the accountant uses q = batch_size / m.
TrainResult dp_train(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg);

// Dispatches on cfg.dp.
TrainResult train_any(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg);

// Noise multiplier dp_train will use for this dataset size.
double resolve_noise_multiplier(const TrainConfig& cfg, std::size_t m);

struct EnsembleRecord {
  std::vector<Model> models;
  MaskSet masks;
  // correct[k][i]: model k classifies sample i of the full dataset correctly.
  std::vector<std::vector<std::uint8_t>> correct;
  std::string config_digest;
  std::vector<std::optional<PrivacyBudget>> budgets;

  int K() const { return static_cast<int>(models.size()); }
  std::size_t m() const { return masks.m(); }
};

// Seed of ensemble member k.
inline std::uint64_t member_seed(std::uint64_t base, int k) {
  return base ^ static_cast<std::uint64_t>(k);
}

// Trains one model per mask (member k on S restricted to mask k with seed
// cfg.seed ^ k) across `workers` OpenMP threads, then fills the correctness
// matrix against all of S. Output does not depend on `workers`.
EnsembleRecord train_ensemble(const ModelSpec& spec, const Dataset& S, const MaskSet& masks,
                              const TrainConfig& cfg, int workers);
// Single-threaded reference for train_ensemble.
EnsembleRecord train_ensemble_serial(const ModelSpec& spec, const Dataset& S, const MaskSet& masks,
                                     const TrainConfig& cfg);

std::vector<std::uint8_t> correctness_row(const Model& model, const Dataset& S);

}  // namespace curvlink
