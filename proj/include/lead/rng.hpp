#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lead {

/// SplitMix64. State transition: s += 0x9e3779b97f4a7c15, output is the
/// fmix-style finalizer of s. Platform independent, unlike the standard
/// library distributions, so every sampler below is implemented on top of it.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % bound;
  }

  double exponential(double mean) noexcept { return -mean * std::log1p(-uniform()); }

  /// Box-Muller, one value per call.
  double normal(double mu = 0.0, double sigma = 1.0) noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mu + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Pareto with shape alpha and scale x_m (minimum value).
  double pareto(double alpha, double xm) noexcept { return xm / std::pow(1.0 - uniform(), 1.0 / alpha); }

  /// Derive an independent stream.
  SplitMix64 fork(std::uint64_t salt) noexcept { return SplitMix64(next() ^ (salt * 0xd1342543de82ef95ull)); }

 private:
  std::uint64_t state_;
};

}  // namespace lead
