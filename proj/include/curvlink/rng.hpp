#pragma once

#include <cstdint>

namespace curvlink {

// Disjoint purposes for random streams. Values are part of the on-disk
// reproducibility contract; append only.
enum class Purpose : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kDpNoise = 3,
  kMask = 4,
  kData = 5,
  kProbe = 6,
  kAlpha = 7,
  kBootstrap = 8,
  kBayesMc = 9,
  kPairs = 10,
  kMultiStart = 11,
};

std::uint64_t mix64(std::uint64_t z);

// Counter-based generator: output n of stream (seed, purpose, a, b) is a pure
// function of those five values, so streams can be created anywhere (any
// thread, any order) and replay bit-identically.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t stream_a = 0,
             std::uint64_t stream_b = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1).
  double uniform_open();
  double normal();
  // +1 or -1 with equal probability.
  double rademacher();
  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace curvlink
