#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <random>
#include <string_view>

namespace voxnas {

using Rng = std::mt19937_64;

// 64-bit FNV-1a; used for substream derivation and config hashing.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named substream of a top-level seed ("data", "clustering", "search", ...).
inline Rng substream(std::uint64_t seed, std::string_view name,
                     std::uint64_t index = 0) {
  return Rng(splitmix64(fnv1a64(name, splitmix64(seed)) ^ splitmix64(index + 1)));
}

// Uniform in [0, 1) from the top 53 bits; identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Poisson draw: multiplication method for small means, rounded normal above.
inline long poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  if (mean < 30.0) {
    const double limit = std::exp(-mean);
    long k = 0;
    double p = uniform01(rng);
    while (p > limit) {
      ++k;
      p *= uniform01(rng);
    }
    return k;
  }
  const double draw = std::round(mean + std::sqrt(mean) * standard_normal(rng));
  return draw < 0.0 ? 0 : static_cast<long>(draw);
}

// Fisher-Yates with uniform01, so shuffles do not depend on the stdlib.
template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    using std::swap;
    swap(c[i - 1], c[j < i ? j : i - 1]);
  }
}

}  // namespace voxnas
