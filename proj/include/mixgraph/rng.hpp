#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace mixgraph {

// xoshiro256++ with splitmix64 seeding. We own the generator so that runs
// are reproducible across compilers and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n), n > 0; rejection-free enough for our n
  std::uint64_t next_below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection to remove modulo bias.
    std::uint64_t x = next_u64();
    __uint128_t m = __uint128_t(x) * n;
    auto lo = std::uint64_t(m);
    if (lo < n) {
      const std::uint64_t threshold = std::uint64_t(-std::int64_t(n)) % n;
      while (lo < threshold) {
        x = next_u64();
        m = __uint128_t(x) * n;
        lo = std::uint64_t(m);
      }
    }
    return std::uint64_t(m >> 64);
  }

  double normal() {
    // Box-Muller; one value per call keeps the stream simple.
    double u1 = next_double(), u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = std::size_t(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Derives a stream seed from a run seed and an integer tag (e.g. node id).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t x = seed ^ (0x2545f4914f6cdd1dULL * (tag + 1));
    return splitmix64(x);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace mixgraph
