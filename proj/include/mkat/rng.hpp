#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "mkat/error.hpp"

namespace mkat {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256** with splitmix64 seeding. Hand-rolled so that every stream is
// bit-reproducible across platforms and standard-library versions; the
// determinism contracts in this project are stated at the bit level.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  // Independent substream (seed, stream). Used for counter-based per-trial
  // generators: Rng(seed, trial) is identical no matter how trials are
  // sharded across workers.
  Rng(uint64_t seed, uint64_t stream) : Rng(mix(seed, stream)) {}

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t sm = a;
    uint64_t h = splitmix64(sm);
    sm = h ^ (b + 0x9e3779b97f4a7c15ull);
    h = splitmix64(sm);
    return splitmix64(sm) ^ h;
  }

  uint64_t next() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal, Box-Muller with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) fail(ErrorKind::invalid_argument, "Rng::below requires n > 0");
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  int index(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (size_t i = values.size(); i > 1; --i) {
      const size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    shuffle(std::span<int>(p));
    return p;
  }

  // k distinct values from [0, n), in the order drawn (partial Fisher-Yates).
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) fail(ErrorKind::invalid_argument, "sample_without_replacement: k > n");
    std::vector<int> pool(static_cast<size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      const uint64_t j = below(static_cast<uint64_t>(n - i));
      out.push_back(pool[static_cast<size_t>(i) + j]);
      std::swap(pool[static_cast<size_t>(i) + j], pool[static_cast<size_t>(i)]);
    }
    return out;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4]{};
  bool has_spare_{false};
  double spare_{0.0};
};

}  // namespace mkat
