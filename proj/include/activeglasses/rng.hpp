// Deterministic PRNG used by every seeded component. We keep the generator
// self-contained (splitmix64 core) so streams are reproducible independent of
// the standard library's distribution implementations.

#pragma once

#include <cmath>
#include <cstdint>

namespace ag {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {
    // warm up so low-entropy seeds decorrelate
    splitmix64(state_);
    splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // standard normal via Box-Muller
  double normal() {
    const double u1 = std::fmax(uniform(), 0x1.0p-60);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // derive an independent child stream (used for per-rollout / per-episode seeds)
  Rng split(uint64_t key) const {
    uint64_t s = state_;
    uint64_t mixed = splitmix64(s) ^ (key * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    return Rng(mixed);
  }

  static uint64_t derive_seed(uint64_t seed, uint64_t key) {
    uint64_t s = seed ^ (key * 0xd6e8feb86659fd93ULL);
    return splitmix64(s);
  }

 private:
  uint64_t state_;
};

}  // namespace ag
