#pragma once

// Reproducible random streams. Every chain owns an engine seeded from
// (seed, stream tag, chain id) so results do not depend on scheduling.

#include <cstdint>
#include <random>
#include <string_view>

namespace rts {

using Rng = std::mt19937_64;

// Named substreams so that init, main and bootstrap phases never share draws.
enum class Stream : std::uint32_t {
  kInit = 1,
  kMain = 2,
  kBootstrap = 3,
  kAnneal = 4,
  kReverse = 5,
  kTune = 6,
  kPilot = 7,
  kData = 8,
  kTrain = 9,
  kModel = 10,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t chain_id = 0,
                    std::uint64_t epoch = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(chain_id),
                    static_cast<std::uint32_t>(chain_id >> 32), static_cast<std::uint32_t>(epoch)};
  return Rng(seq);
}

// Uniform on [0,1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace rts
