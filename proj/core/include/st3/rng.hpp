#pragma once

#include <cmath>
#include <cstdint>

namespace st3 {

// Deterministic generator used for every source of randomness in the
// engine. splitmix64 core so that streams derived from (seed, stream ids)
// are stable across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

  // Derives an independent stream from a base seed and up to three ids
  // (e.g. (seed, epoch, batch)).
  static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    Rng r(seed);
    r.state_ += 0x9e3779b97f4a7c15ull * (a + 1);
    r.state_ ^= r.next_u64();
    r.state_ += 0x9e3779b97f4a7c15ull * (b + 1);
    r.state_ ^= r.next_u64();
    r.state_ += 0x9e3779b97f4a7c15ull * (c + 1);
    r.state_ ^= r.next_u64();
    return r;
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n) {
    // Multiply-shift; bias is negligible for the n used here.
    return static_cast<uint64_t>(uniform() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(T* v, size_t n) {
    if (n < 2) return;
    for (size_t i = n - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i + 1));
      T tmp = v[i];
      v[i] = v[j];
      v[j] = tmp;
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace st3
