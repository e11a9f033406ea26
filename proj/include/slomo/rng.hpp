#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace slomo {

// Every random draw in the library goes through an explicitly seeded Rng;
// there is no ambient randomness.
using Rng = std::mt19937_64;

// SplitMix64-style combination of several seed components into one seed.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9E3779B97F4A7C15ULL;
  for (std::uint64_t p : parts) {
    h ^= p + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    h = z ^ (z >> 31);
  }
  return h;
}

}  // namespace slomo
