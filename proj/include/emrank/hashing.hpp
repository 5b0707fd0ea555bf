#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace emrank {

/// FNV-1a over raw bytes. Platform independent, never changes between
/// releases; fixture keys and blinding depend on it.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stable hash of a (string key, seed) pair.
constexpr std::uint64_t keyed_hash(std::string_view key,
                                   std::uint64_t seed) noexcept {
  return mix64(fnv1a64(key) ^ mix64(seed));
}

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

/// Deterministic Fisher-Yates permutation of 0..n-1 driven by a splitmix64
/// stream. Unlike std::shuffle the result is identical on every platform.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace emrank
