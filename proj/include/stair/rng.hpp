#pragma once

#include <cstdint>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>

namespace stair {

using Rng = std::mt19937_64;

/// Independent random streams derived from the single run seed. Each consumer
/// owns a stream id, so adding a consumer never shifts another one's draws.
enum class Stream : std::uint64_t {
  split = 1,
  svd = 2,
  embedding_init = 3,
  negative_sampling = 4,
  kmeans = 5,
  noise = 6,
  synthetic = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based derivation: (seed, stream, counter) -> 64-bit sub-seed.
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t counter = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream))) + counter);
}

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t counter = 0) {
  return Rng(derive_seed(seed, stream, counter));
}

/// Uniform integer in [0, n). Rejection sampling keeps the result identical
/// across standard library implementations, unlike uniform_int_distribution.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal draw via Box-Muller (portable, unlike normal_distribution).
inline double standard_normal(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

template <class RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1), first + static_cast<std::ptrdiff_t>(j));
  }
}

}  // namespace stair
