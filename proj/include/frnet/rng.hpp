#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace frnet {

// Seeded generator shared by every stochastic routine in the library.
//
// State update is xorshift64* (Marsaglia shifts 12/25/27, output multiplier
// 0x2545F4914F6CDD1D). The user seed is scrambled once with the SplitMix64
// finalizer so that small consecutive seeds give unrelated streams; a zero
// state is replaced by the SplitMix64 increment constant.
//
// Derived draws are defined on top of next_u64() so any port reproduces
// the same sequence:
//   uniform()          = (next_u64() >> 11) * 2^-53          in [0, 1)
//   uniform_int(n)     = floor(uniform() * n)                in [0, n)
//   normal()           = Box-Muller on two uniforms, cosine branch only
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  std::uint64_t next_u64() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_int(std::uint64_t n) {
    auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  static constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace frnet
