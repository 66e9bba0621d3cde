#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace sqd {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the random stream owned by (trial, vehicle) under a master seed.
/// Depends only on the triple, so trials can run in any order on any worker.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t trial, std::uint64_t vehicle) {
  return splitmix64(splitmix64(splitmix64(master) ^ (trial + 0x632BE59BD9B4E019ULL)) ^
                    (vehicle + 0x8CB92BA72F3D8DD7ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t trial, std::uint64_t vehicle) {
  return Rng{stream_seed(master, trial, vehicle)};
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Inverse-CDF draw of an index from a (not necessarily normalized) weight vector.
inline std::size_t sample_index(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last_positive;
}

/// Uniform point on the probability simplex (normalized unit exponentials).
inline std::vector<double> uniform_simplex(std::size_t n, Rng& rng) {
  std::vector<double> q(n);
  double total = 0.0;
  for (auto& x : q) {
    x = -std::log1p(-uniform01(rng));
    total += x;
  }
  for (auto& x : q) x /= total;
  return q;
}

}  // namespace sqd
