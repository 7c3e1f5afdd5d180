#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hcd {

// Deterministic random source. std::mt19937_64 is bit-stable across
// platforms; the distributions are hand-rolled because the standard ones
// are implementation-defined and we promise byte-identical outputs for
// identical seeds.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  // Independent stream for a sub-purpose, e.g. rng.fork(kShuffleSalt).
  Rng fork(uint64_t salt) const { return Rng(mix(seed_, salt)); }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch only, so each draw costs two engine steps
  // and the stream layout stays independent of call history.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our scales.
  uint64_t next_below(uint64_t n) { return engine_() % n; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    s ^= s >> 30;
    s *= 0xbf58476d1ce4e5b9ULL;
    s ^= s >> 27;
    s *= 0x94d049bb133111ebULL;
    s ^= s >> 31;
    return s;
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace hcd
