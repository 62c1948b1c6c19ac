#pragma once

#include <cmath>
#include <cstdint>

namespace lldn {

// Counter-based deterministic generator: every draw is a stateless mix of
// (key, counter). Streams can be forked by tag without sharing state, so
// frame generation, weight init and shuffling stay independent and
// reproducible regardless of call order elsewhere.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix(key_, counter_++); }

  // Independent stream derived from this generator's key.
  Rng fork(std::uint64_t tag) const { return Rng(mix(key_, ~tag)); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  // standard normal via Box-Muller (one value per call; pair not cached so
  // the draw count stays predictable)
  double normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = uniform_index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace lldn
