#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prefrl {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named sub-stream of a root seed: derive_seed(root, "env", 12) is stable
/// across runs and independent of every other (name, index) pair.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(root ^ hash_name(stream)) + mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t root, std::string_view stream, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

}  // namespace prefrl
