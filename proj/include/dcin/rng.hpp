#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dcin {

// All randomness in the project flows from one master seed through named
// streams, so any experiment is replayable from (seed, purpose) alone.
//
// Stream derivation, fully specified:
//   h      = FNV-1a 64-bit hash of the purpose string
//   state  = splitmix64(master_seed ^ h)
//   engine = std::mt19937_64 seeded with state
//
// Uniform doubles take the top 53 bits of the engine output; gaussians use
// the Box-Muller transform on two uniforms. Both are spelled out here rather
// than delegated to std distributions, whose output is not pinned by the
// standard and varies across library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t stream_seed) : engine_(stream_seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_below(std::uint64_t n) {
    // Rejection sampling over the largest multiple of n below 2^64.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller. Consumes two uniforms per pair; the
  // second draw of each pair is cached.
  double gaussian();

private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

// Derives independent named streams from one master seed.
class SeedStream {
public:
  explicit SeedStream(std::uint64_t master_seed) : master_(master_seed) {}

  Rng stream(std::string_view purpose) const {
    return Rng(splitmix64(master_ ^ fnv1a64(purpose)));
  }

  std::uint64_t master() const { return master_; }

private:
  std::uint64_t master_;
};

}  // namespace dcin
