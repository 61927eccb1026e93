#pragma once

#include <cstdint>
#include <random>

namespace semicon {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates nearby (seed, stream) pairs.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Independent generator for a named substream of a run seed.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(mix_seed(seed, stream));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return Rng(mix_seed(mix_seed(seed, stream), index));
}

// Substream tags used across the library so that independent consumers never
// share a generator.
namespace streams {
inline constexpr std::uint64_t kGenerator = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kEpochOrder = 100;
inline constexpr std::uint64_t kPositiveOrder = 200;
inline constexpr std::uint64_t kStep = 300;
inline constexpr std::uint64_t kProbe = 400;
inline constexpr std::uint64_t kBaseline = 500;
inline constexpr std::uint64_t kBaselineStep = 501;
}  // namespace streams

}  // namespace semicon
