#pragma once

// Routing-policy construction: efficient and numerically optimal stationary
// vectors, partitioning across vehicles, Metropolis-Hastings chains for
// constrained topologies and the adaptive selection rule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqd/analysis.hpp"
#include "sqd/envmodel.hpp"
#include "sqd/policy_types.hpp"
#include "sqd/random.hpp"

namespace sqd {

/// q_k proportional to sqrt(w_k / D_k): the minimizer of delta_upper.
inline StationaryPolicy efficient_policy(const Weights& weights, std::span<const double> divergences) {
  detail::require(weights.size() >= 1, "efficient_policy: empty weights");
  detail::require(divergences.size() == weights.size(), "efficient_policy: divergence length mismatch");
  StationaryPolicy p;
  p.q.reserve(weights.size());
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    detail::require(weights[k] > 0.0, "efficient_policy: weights must be > 0");
    detail::require(divergences[k] > 0.0, "efficient_policy: zero divergence");
    p.q.push_back(std::sqrt(weights[k] / divergences[k]));
    total += p.q.back();
  }
  for (auto& x : p.q) x /= total;
  return p;
}

// ---------------------------------------------------------------------------
// Gradient descent on the simplex

struct DescentOptions {
  /// Stop when ||reduced gradient|| <= gradient_tolerance * max(1, |f|).
  double gradient_tolerance = 1e-9;
  std::size_t max_iterations = 100'000;
  double interior = kInteriorFloor;
  double armijo = 1e-4;
  std::size_t max_backtracks = 60;
};

struct DescentResult {
  std::vector<double> q;
  double value = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::string stop_reason;
};

using SimplexObjective = std::function<double(std::span<const double>)>;
using SimplexGradient = std::function<std::vector<double>(std::span<const double>)>;

/// Minimizes f over the interior of the simplex in the reduced coordinates
/// q_1..q_{n-1} (q_n = 1 - sum). Steps start from the Barzilai-Borwein length
/// and are backtracked until the Armijo condition holds and every coordinate
/// stays >= options.interior.
inline DescentResult minimize_on_simplex(const SimplexObjective& f, const SimplexGradient& grad,
                                         std::vector<double> start, const DescentOptions& options = {}) {
  const auto n = start.size();
  detail::require(n >= 1, "minimize_on_simplex: empty start point");
  detail::require(on_simplex(start, 1e-9), "minimize_on_simplex: start point not on the simplex");
  DescentResult res;
  for (auto& x : start) x = std::max(x, options.interior);
  const double s0 = std::accumulate(start.begin(), start.end(), 0.0);
  for (auto& x : start) x /= s0;
  res.q = std::move(start);
  res.value = f(res.q);
  if (n == 1) {
    res.converged = true;
    res.stop_reason = "single region";
    return res;
  }

  // Reduced gradient d/dx_i of f(x, 1 - sum x) = g_i - g_n, mapped back to a
  // full-space direction with last component -sum.
  auto reduced = [&](std::span<const double> q) {
    const auto g = grad(q);
    std::vector<double> r(n);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      r[i] = g[i] - g[n - 1];
      total += r[i];
    }
    r[n - 1] = -total;
    return r;
  };
  auto reduced_norm = [&](const std::vector<double>& r) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) s += r[i] * r[i];
    return std::sqrt(s);
  };

  std::vector<double> r = reduced(res.q);
  std::vector<double> prev_q;
  std::vector<double> prev_r;
  std::vector<double> trial(n);
  double step = 1.0;
  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    res.gradient_norm = reduced_norm(r);
    if (!std::isfinite(res.gradient_norm)) {
      res.stop_reason = "non-finite gradient";
      return res;
    }
    if (res.gradient_norm <= options.gradient_tolerance * std::max(1.0, std::abs(res.value))) {
      res.converged = true;
      res.stop_reason = "gradient tolerance";
      return res;
    }
    if (!prev_q.empty()) {
      double ss = 0.0;
      double sy = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double s = res.q[i] - prev_q[i];
        const double y = r[i] - prev_r[i];
        ss += s * s;
        sy += s * y;
      }
      step = (sy > 0.0 && std::isfinite(ss / sy)) ? ss / sy : 1.0 / res.gradient_norm;
    } else {
      step = 0.1 / res.gradient_norm;
    }
    const double g2 = res.gradient_norm * res.gradient_norm;
    // Near the minimizer f stops resolving decreases; inside that rounding
    // band a step is accepted if it shrinks the gradient instead.
    const double band = 1e-12 * std::max(1.0, std::abs(res.value));
    bool accepted = false;
    double value = 0.0;
    std::vector<double> trial_r;
    for (std::size_t b = 0; b < options.max_backtracks; ++b, step *= 0.5) {
      bool feasible = true;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = res.q[i] - step * r[i];
        if (!(trial[i] >= options.interior)) feasible = false;
      }
      if (!feasible) continue;
      value = f(trial);
      if (!std::isfinite(value)) continue;
      if (value <= res.value - options.armijo * step * g2) {
        accepted = true;
        trial_r = reduced(trial);
        break;
      }
      if (std::abs(value - res.value) <= band) {
        trial_r = reduced(trial);
        if (reduced_norm(trial_r) < res.gradient_norm) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      res.stop_reason = "line search stalled";
      return res;
    }
    prev_q = res.q;
    prev_r = r;
    res.q = trial;
    res.value = value;
    r = std::move(trial_r);
  }
  res.gradient_norm = reduced_norm(r);
  res.converged = res.gradient_norm <= options.gradient_tolerance * std::max(1.0, std::abs(res.value));
  res.stop_reason = res.converged ? "gradient tolerance" : "iteration budget";
  return res;
}

inline DescentResult minimize_delay(const DelayObjective& objective, std::vector<double> start,
                                    const DescentOptions& options = {}) {
  return minimize_on_simplex([&](std::span<const double> q) { return objective.value(q); },
                             [&](std::span<const double> q) { return objective.gradient(q); }, std::move(start),
                             options);
}

struct OptimalPolicy {
  StationaryPolicy policy;
  double average_delay = 0.0;
  DescentResult diagnostics;
};

/// Numerical local minimizer of delta_avg (uniform start unless given).
inline OptimalPolicy optimal_policy(const Environment& env, const ObservationModel& model, const Weights& weights,
                                    double eta, std::vector<double> start = {}, const DescentOptions& options = {}) {
  const auto objective = DelayObjective::from(env, model, weights, eta);
  if (start.empty()) start = StationaryPolicy::uniform(env.size()).q;
  detail::require(start.size() == env.size(), "optimal_policy: start length mismatch");
  OptimalPolicy out;
  out.diagnostics = minimize_delay(objective, std::move(start), options);
  out.policy.q = out.diagnostics.q;
  out.average_delay = out.diagnostics.value;
  return out;
}

// ---------------------------------------------------------------------------
// Multiple vehicles

/// Round-robin partition by region index: region k goes to vehicle k mod m.
/// With n <= m each region gets its own vehicle and only n subsets are returned.
inline Partition partition_regions(std::size_t n, std::size_t m) {
  detail::require(m >= 1, "partition_regions: m must be >= 1");
  detail::require(n >= 1, "partition_regions: n must be >= 1");
  const std::size_t used = std::min(n, m);
  Partition p;
  p.subsets.resize(used);
  for (std::size_t k = 0; k < n; ++k) p.subsets[k % used].push_back(k);
  return p;
}

inline void validate_partition(const Partition& p, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& s : p.subsets) {
    detail::require(!s.empty(), "partition has an empty subset");
    for (auto k : s) {
      detail::require(k < n, "partition refers to an unknown region");
      detail::require(seen[k]++ == 0, "partition subsets are not disjoint");
    }
  }
  for (std::size_t k = 0; k < n; ++k) detail::require(seen[k] == 1, "partition does not cover every region");
}

/// Embed a policy over a subset into a length-n vector (zero elsewhere).
inline StationaryPolicy embed(std::span<const double> local, std::span<const std::size_t> subset, std::size_t n) {
  StationaryPolicy p{std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < subset.size(); ++i) p.q[subset[i]] = local[i];
  return p;
}

/// Efficient policy inside each subset, weights renormalized within the subset.
inline MultiVehiclePolicy partitioned_efficient_policy(const Weights& weights, std::span<const double> divergences,
                                                       const Partition& partition) {
  validate_partition(partition, weights.size());
  MultiVehiclePolicy out;
  out.partition = partition;
  for (const auto& subset : partition.subsets) {
    std::vector<double> pri;
    std::vector<double> div;
    for (auto k : subset) {
      pri.push_back(weights[k]);
      div.push_back(divergences[k]);
    }
    const double total = std::accumulate(pri.begin(), pri.end(), 0.0);
    Weights local;
    for (double p : pri) local.w.push_back(p / total);
    out.vehicles.push_back(embed(efficient_policy(local, div).q, subset, weights.size()));
  }
  return out;
}

inline MultiVehiclePolicy partitioned_efficient_policy(const Environment& env, const ObservationModel& model,
                                                       const Weights& weights, const Partition& partition) {
  detail::require(env.size() == weights.size(), "scenario size mismatch");
  return partitioned_efficient_policy(weights, model.divergences(), partition);
}

/// Numerically optimal stationary policy inside each subset.
inline MultiVehiclePolicy partitioned_optimal_policy(const Environment& env, const ObservationModel& model,
                                                     const Weights& weights, double eta, const Partition& partition,
                                                     const DescentOptions& options = {}) {
  validate_partition(partition, env.size());
  MultiVehiclePolicy out;
  out.partition = partition;
  for (const auto& subset : partition.subsets) {
    std::vector<RegionDensities> dens;
    std::vector<double> pri;
    for (auto k : subset) {
      dens.push_back(model.region(k));
      pri.push_back(weights[k]);
    }
    const double total = std::accumulate(pri.begin(), pri.end(), 0.0);
    Weights local;
    for (double p : pri) local.w.push_back(p / total);
    const auto opt = optimal_policy(env.restricted(subset), ObservationModel(std::move(dens)), local, eta, {}, options);
    out.vehicles.push_back(embed(opt.policy.q, subset, env.size()));
  }
  return out;
}

/// Every vehicle samples from the same stationary vector over all regions.
inline MultiVehiclePolicy shared_policy(const StationaryPolicy& q, std::size_t m) {
  detail::require(m >= 1, "vehicle count must be >= 1");
  return MultiVehiclePolicy{std::vector<StationaryPolicy>(m, q), std::nullopt};
}

// ---------------------------------------------------------------------------
// Constrained topologies

/// Undirected region graph (no self loops stored).
class RegionGraph {
 public:
  explicit RegionGraph(std::size_t n) : adj_(n) { detail::require(n >= 1, "graph needs at least one node"); }

  static RegionGraph complete(std::size_t n) {
    RegionGraph g(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) g.add_edge(i, j);
    return g;
  }
  static RegionGraph line(std::size_t n) {
    RegionGraph g(n);
    for (std::size_t i = 0; i + 1 < n; ++i) g.add_edge(i, i + 1);
    return g;
  }
  static RegionGraph ring(std::size_t n) {
    RegionGraph g = line(n);
    if (n > 2) g.add_edge(n - 1, 0);
    return g;
  }

  void add_edge(std::size_t i, std::size_t j) {
    detail::require(i < adj_.size() && j < adj_.size(), "edge refers to an unknown region");
    if (i == j) return;
    adj_[i].insert(j);
    adj_[j].insert(i);
  }

  std::size_t size() const { return adj_.size(); }
  const std::set<std::size_t>& neighbors(std::size_t i) const { return adj_.at(i); }
  std::size_t degree(std::size_t i) const { return adj_.at(i).size(); }
  bool has_edge(std::size_t i, std::size_t j) const { return i == j || adj_.at(i).count(j) > 0; }

  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < adj_.size(); ++i)
      for (auto j : adj_[i])
        if (i < j) e.emplace_back(i, j);
    return e;
  }

  bool connected() const {
    std::vector<char> seen(adj_.size(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (auto j : adj_[i])
        if (!seen[j]) {
          seen[j] = 1;
          ++count;
          stack.push_back(j);
        }
    }
    return count == adj_.size();
  }

 private:
  std::vector<std::set<std::size_t>> adj_;
};

struct MarkovRoutingChain {
  RegionGraph graph;
  Matrix transition;
  std::vector<double> target;

  std::size_t size() const { return target.size(); }

  std::size_t next(std::size_t current, Rng& rng) const {
    const auto n = static_cast<Eigen::Index>(target.size());
    double u = uniform01(rng);
    std::size_t last = current;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = transition(static_cast<Eigen::Index>(current), j);
      if (p <= 0.0) continue;
      last = static_cast<std::size_t>(j);
      if (u < p) return last;
      u -= p;
    }
    return last;
  }
};

/// P_ij = min(1/d_i, q_j/(q_i d_j)) on edges, residual on the diagonal,
/// where d_i counts distinct neighbors of i other than i itself.
inline MarkovRoutingChain metropolis_hastings_chain(const RegionGraph& graph, std::span<const double> target) {
  const auto n = graph.size();
  detail::require(target.size() == n, "target length must equal node count");
  detail::require(graph.connected(), "region graph is disconnected");
  for (double x : target) detail::require(x > 0.0, "target distribution has a zero entry");
  MarkovRoutingChain chain{graph, Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                           std::vector<double>(target.begin(), target.end())};
  auto& p = chain.transition;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double off = 0.0;
    const auto di = static_cast<double>(graph.degree(i));
    for (auto j : graph.neighbors(i)) {
      const auto dj = static_cast<double>(graph.degree(j));
      const double pij = std::min(1.0 / di, target[j] / (target[i] * dj));
      p(ii, static_cast<Eigen::Index>(j)) = pij;
      off += pij;
    }
    p(ii, ii) = std::max(0.0, 1.0 - off);
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Adaptive selection

struct AdaptivePolicyState {
  std::vector<double> statistics;
  /// pi_k = e^L / (1 + e^L), in [1/2, 1)
  std::vector<double> priors;
  std::vector<double> selection;
};

inline AdaptivePolicyState adaptive_state(std::span<const double> statistics, std::span<const double> divergences) {
  detail::require(statistics.size() == divergences.size() && !statistics.empty(),
                  "adaptive_step: statistics/divergence length mismatch");
  AdaptivePolicyState s;
  s.statistics.assign(statistics.begin(), statistics.end());
  double total = 0.0;
  for (std::size_t k = 0; k < statistics.size(); ++k) {
    detail::require(std::isfinite(statistics[k]), "adaptive_step: non-finite statistic");
    s.priors.push_back(1.0 / (1.0 + std::exp(-statistics[k])));
    s.selection.push_back(std::sqrt(s.priors.back() / divergences[k]));
    total += s.selection.back();
  }
  for (auto& x : s.selection) x /= total;
  return s;
}

/// Selection vector from the current CUSUM statistics.
inline std::vector<double> adaptive_step(std::span<const double> statistics, std::span<const double> divergences) {
  return adaptive_state(statistics, divergences).selection;
}

/// beta / alpha^2: bound on the mean recurrence time of a state whose
/// probability stays within (alpha, beta) at every draw.
inline double recurrence_bound(double alpha, double beta) {
  detail::require(alpha > 0.0 && beta < 1.0 && alpha <= beta, "recurrence_bound: need 0 < alpha <= beta < 1");
  return beta / (alpha * alpha);
}

}  // namespace sqd
