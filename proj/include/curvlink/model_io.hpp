#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "curvlink/nn.hpp"

namespace curvlink {

// Binary container: "CRVL", u32 version, spec, provenance, then little-endian
// f64 weight blocks in layer order (weight row-major, then bias).
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// Human-readable dump for debugging; not a round-trip format.
std::string model_debug_json(const Model& model);

}  // namespace curvlink
