#pragma once

#include <cstdint>
#include <random>

namespace nlpf {

using Rng = std::mt19937_64;

// 53-bit uniform on [0,1); std::uniform_real_distribution is not
// bit-reproducible across standard libraries.
inline double uniform01(Rng& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

// splitmix64 finalizer, used to derive independent stream seeds
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return Rng(mix_seed(mix_seed(seed ^ mix_seed(a)) + b));
}

} // namespace nlpf
