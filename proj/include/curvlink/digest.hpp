#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace curvlink {

// 64-bit FNV-1a, rendered as 16 lowercase hex digits. Used for provenance
// digests, not for integrity against adversaries.
std::string digest_hex(std::string_view bytes);
std::string digest_hex(std::span<const std::uint8_t> bytes);
std::string digest_file(const std::filesystem::path& path);

// Shortest round-trip formatting (17 significant digits).
std::string format_double(double v);

}  // namespace curvlink
