#pragma once

#include <cstdint>
#include <random>

namespace nres {

// Deterministic random source. All randomness in the library flows through
// this class so that a seed fully determines every tensor, corpus, and batch.
// Normal sampling uses an explicit Box-Muller transform instead of
// std::normal_distribution, whose algorithm is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; caches the second deviate.
  double normal();

  // Uniform integer in [0, n); n must be positive.
  int64_t uniform_int(int64_t n);

  // Derives an independent stream seed from (seed, index). Stable across
  // versions: checkpoints and golden values depend on it.
  static uint64_t mix(uint64_t seed, uint64_t index);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nres
