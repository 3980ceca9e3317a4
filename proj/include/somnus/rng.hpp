#pragma once

// Seed derivation. Every stochastic draw in the library comes from a
// std::mt19937_64 seeded by derive_seed(root, stream, index), where `stream`
// is a fixed name such as "forest.tree" and `index` the tree/round/participant
// number. Streams never share state, so adding draws to one stream leaves all
// others unchanged.

#include <cstdint>
#include <random>
#include <string_view>

namespace somnus {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t root,
                                           std::string_view stream,
                                           std::uint64_t index = 0) {
  return mix64(mix64(root) ^ mix64(fnv1a64(stream) + mix64(index)));
}

inline Rng make_rng(std::uint64_t root, std::string_view stream,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

}  // namespace somnus
