#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace flowrisk {

// Deterministic random source used everywhere randomness is needed.
//
// The standard library's distributions and std::shuffle produce
// implementation-defined sequences, so they cannot back a "same seed, same
// bytes on every platform" guarantee. This is splitmix64 plus the few
// classical derivations we need (bounded ints via rejection, Fisher-Yates,
// Box-Muller); every sequence is pinned by this header alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound); unbiased via rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    // Reject draws from the tail that would bias the modulus.
    const std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

  // Standard normal via Box-Muller; the second member of each pair is cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so log() never sees zero.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derives an independent stream seed from a base seed and a stream index.
// Mixing through two splitmix64 steps decorrelates adjacent indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  Rng mixer(base ^ (stream * 0xd6e8feb86659fd93ull));
  mixer.next_u64();
  return mixer.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(base, a), b ^ 0x2545f4914f6cdd1dull);
}

}  // namespace flowrisk
