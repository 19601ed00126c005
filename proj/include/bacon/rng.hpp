#ifndef BACON_RNG_HPP
#define BACON_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

#include "bacon/common.hpp"

namespace bacon {

// Stable seed derivation: every consumer of randomness gets its own
// stream keyed by (base seed, purpose tag, indices). Snapshot/resume
// stays bit-exact because no engine state is carried across steps.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(base ^ hash_tag(tag));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

inline real gaussian(std::mt19937_64& eng, real mu = 0, real sigma = 1) {
  std::normal_distribution<real> d(mu, sigma);
  return d(eng);
}

inline std::size_t uniform_index(std::mt19937_64& eng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return d(eng);
}

}  // namespace bacon

#endif
