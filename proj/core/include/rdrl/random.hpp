#pragma once

#include <cstdint>
#include <random>

namespace rdrl {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser; decorrelates nearby integers.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent, reproducible seed for sub-stream `stream` of `base`.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Fixed stream identifiers used by the training loops.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kExplore = 2;
inline constexpr std::uint64_t kReplay = 3;
inline constexpr std::uint64_t kPolicyNoise = 4;
inline constexpr std::uint64_t kEpisodeReset = 1000;
inline constexpr std::uint64_t kEvaluation = 1'000'000;
}  // namespace streams

}  // namespace rdrl
