#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace mmsynth {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Mixes two 64-bit values into a well-distributed seed. Used for per-sample
// seeds (master, index) and for per-stage streams (sample seed, stage tag).
constexpr std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(splitmix64(a) ^ (b * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

// Stage tags for derive_seed(config.seed, tag).
enum class Stream : std::uint64_t {
  kConfig = 1,
  kImages = 2,
  kPrompt = 3,
  kMock = 4,
  kJitter = 5,
};

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s) noexcept {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

// mt19937_64 is fully specified by the standard; the std distributions are
// not, so the draws below are written out to keep results identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling on the top of the range keeps it unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  // Index drawn from a non-decreasing cumulative weight table whose last
  // entry is the total mass.
  std::size_t pick(std::span<const double> cumulative) {
    const double u = uniform() * cumulative.back();
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
      if (u < cumulative[i]) return i;
    }
    // Rounding at the top end: fall back to the last entry with mass.
    for (std::size_t i = cumulative.size(); i-- > 0;) {
      if (i == 0 || cumulative[i] > cumulative[i - 1]) return i;
    }
    return 0;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mmsynth
