#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shockres {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the named substream `name` (and optional index) under `master`.
/// Every random consumer in a pipeline draws from its own substream so that
/// adding a stage never perturbs the draws of another.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(master ^ h) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
  return Rng(derive_seed(master, name, index));
}

}  // namespace shockres
