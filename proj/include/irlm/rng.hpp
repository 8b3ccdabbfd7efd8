#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace irlm {

// Deterministic random source. All distributions are derived from raw
// mt19937_64 output by hand so that streams are reproducible across
// standard library implementations (std::uniform_real_distribution and
// friends are not pinned by the standard).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without a cached spare; two raw draws per sample.
  double normal(double stddev) {
    double u = 1.0 - uniform();  // (0, 1]
    double v = uniform();
    return stddev * std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586477 * v);
  }

  bool bernoulli(double p_true) { return uniform() < p_true; }

  uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// splitmix64-style mixer for deriving per-epoch / per-segment seeds from a
// master seed without correlated streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace irlm
