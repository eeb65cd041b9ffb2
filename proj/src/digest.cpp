#include "curvlink/digest.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "curvlink/errors.hpp"

namespace curvlink {

namespace {

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string digest_hex(std::string_view bytes) {
  return to_hex(fnv1a(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

std::string digest_hex(std::span<const std::uint8_t> bytes) {
  return to_hex(fnv1a(bytes.data(), bytes.size()));
}

std::string digest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return digest_hex(std::string_view(buf.data(), buf.size()));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace curvlink
