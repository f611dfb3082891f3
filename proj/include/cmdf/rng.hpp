#pragma once

#include <cstdint>
#include <random>

namespace cmdf {

using Rng = std::mt19937_64;

/// Independent generator for one consumer of a run seed.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

namespace stream {
inline constexpr std::uint64_t kTeacher = 1;
inline constexpr std::uint64_t kLidarBranch = 2;
inline constexpr std::uint64_t kKnowledgeBranch = 3;
inline constexpr std::uint64_t kFusion = 4;
inline constexpr std::uint64_t kAugment = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kScene = 7;
}  // namespace stream

}  // namespace cmdf
