#pragma once

#include <cstdint>

namespace cityprior {

// Deterministic 64-bit generator (splitmix64). Self-contained so that seeded
// pipelines reproduce bit-for-bit across standard library implementations;
// std::mt19937 distributions do not make that guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n), n > 0. Rejection-free (Lemire).
  uint64_t bounded(uint64_t n) {
    // 128-bit multiply keeps the mapping unbiased enough for sampling use.
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n);
    return static_cast<uint64_t>(m >> 64);
  }

  // Derives an independent stream, e.g. per step or per ray.
  static uint64_t mix(uint64_t a, uint64_t b) {
    Rng r(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
    return r.next_u64();
  }

 private:
  uint64_t state_;
};

}  // namespace cityprior
