#pragma once
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "fusionboost/errors.hpp"

namespace fb {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable sub-stream seed for a named phase of a run, so e.g. weight init and
// patch sampling draw from unrelated streams of the one user-facing seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the tag
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return splitmix64(seed ^ h);
}

// mt19937 is bit-stable across platforms but the std distributions are not,
// so bounded ints use rejection sampling and gaussians use Box-Muller.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : eng_(static_cast<std::uint32_t>(splitmix64(seed))) {}

  std::uint32_t bits() { return eng_(); }

  // Uniform in [0, n), exactly uniform (rejects the biased tail).
  std::uint32_t below(std::uint32_t n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint32_t lim = static_cast<std::uint32_t>(-n) % n;  // 2^32 mod n
    std::uint32_t x = bits();
    while (x < lim) x = bits();
    return x % n;
  }

  // Uniform in [0, 1) with 24 bits of resolution.
  double uniform() { return (bits() >> 8) * 0x1p-24; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal. Consumes exactly two draws per call (the Box-Muller twin
  // is discarded) so the stream position is a fixed function of the call count.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937 eng_;
};

// Fisher–Yates with Rng::below, so shuffles are identical on every platform
// (std::shuffle's draw pattern is implementation-defined).
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.below(static_cast<std::uint32_t>(i))]);
}

}  // namespace fb
