#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace loretrack {

// SplitMix64 (Steele, Lea & Flood). Every random draw in the project comes
// from this generator so sequences, initializations and training schedules
// are reproducible across compilers and platforms:
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// uniform() uses the top 53 bits: (next() >> 11) * 2^-53, in [0, 1).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n). Modulo bias is irrelevant at the sizes used here.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  // Box-Muller; one draw per call, no cached spare, so the stream position
  // depends only on call count.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent child stream, e.g. one per sequence index.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 g(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
    return g.next();
  }

 private:
  std::uint64_t state_;
};

}  // namespace loretrack
