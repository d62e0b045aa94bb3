#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ciabench {

// splitmix64 finalizer, used to derive independent stream seeds from a master
// seed without correlated low bits.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t s = mix64(base ^ 0xa0761d6478bd642fULL);
  s = mix64(s ^ a);
  s = mix64(s ^ b);
  s = mix64(s ^ c);
  return s;
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Fresh distribution objects per call: normal_distribution caches a spare
// value, which would make draw order depend on call history.
inline double uniform01(Rng& g) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(g);
}

inline double gaussian(Rng& g, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(g);
}

// Inclusive bounds.
inline int64_t uniform_int(Rng& g, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(g);
}

// k distinct values from [0, n), in draw order. Partial Fisher-Yates over an
// index pool when k is a large fraction of n, rejection otherwise.
std::vector<int32_t> sample_without_replacement(Rng& g, int32_t n, int32_t k);

}  // namespace ciabench
