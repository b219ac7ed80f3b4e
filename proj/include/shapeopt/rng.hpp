#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shapeopt {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed of an independent named substream of a root seed.
inline constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view tag,
                                              std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ fnv1a64(tag)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view tag, std::uint64_t index = 0) {
  return Rng(substream_seed(root, tag, index));
}

}  // namespace shapeopt
