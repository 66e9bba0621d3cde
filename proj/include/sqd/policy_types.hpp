#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sqd/errors.hpp"

namespace sqd {

/// Interior floor for selection probabilities entering delay formulas.
inline constexpr double kInteriorFloor = 1e-8;

/// Probability of selecting each region at every iteration.
struct StationaryPolicy {
  std::vector<double> q;

  std::size_t size() const { return q.size(); }
  double operator[](std::size_t k) const { return q[k]; }
  bool operator==(const StationaryPolicy&) const = default;

  static StationaryPolicy uniform(std::size_t n) { return {std::vector<double>(n, 1.0 / static_cast<double>(n))}; }
};

/// True if q is on the simplex to within `tol`.
inline bool on_simplex(std::span<const double> q, double tol = 1e-12) {
  double total = 0.0;
  for (double x : q) {
    if (!(x >= 0.0)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= tol;
}

/// m disjoint subsets covering the regions; subset r is served by vehicle r.
struct Partition {
  std::vector<std::vector<std::size_t>> subsets;

  std::size_t vehicles() const { return subsets.size(); }
  /// Vehicle owning region k.
  std::size_t owner(std::size_t k) const {
    for (std::size_t r = 0; r < subsets.size(); ++r)
      for (auto j : subsets[r])
        if (j == k) return r;
    throw ConfigError("region not covered by partition");
  }
  bool operator==(const Partition&) const = default;
};

/// One stationary vector per vehicle (each of full length n).
struct MultiVehiclePolicy {
  std::vector<StationaryPolicy> vehicles;
  std::optional<Partition> partition;

  std::size_t size() const { return vehicles.size(); }
  /// sum_r q_k^r
  double coverage(std::size_t k) const {
    double s = 0.0;
    for (const auto& v : vehicles) s += v.q.at(k);
    return s;
  }
};

}  // namespace sqd
