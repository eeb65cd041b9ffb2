#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "curvlink/trainer.hpp"

namespace curvlink {

// Directory layout: masks.csv (one row per model, one 0/1 column per sample),
// models/model_<k>.crvl, correct.bin and ensemble.json (sizes, mask
// provenance, per-file digests and privacy budgets).
void save_ensemble(const EnsembleRecord& ensemble, const std::filesystem::path& dir, const std::string& config_digest);
// Verifies the file digests recorded in ensemble.json.
EnsembleRecord load_ensemble(const std::filesystem::path& dir);

// Row-major K x m bit matrix, bit j of the stream at byte j / 8, position
// j % 8 (least significant first).
std::vector<std::uint8_t> pack_bits(std::span<const std::vector<std::uint8_t>> rows);
std::vector<std::vector<std::uint8_t>> unpack_bits(std::span<const std::uint8_t> bytes, int K, std::size_t m);

}  // namespace curvlink
