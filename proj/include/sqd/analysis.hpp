#pragma once

// Closed-form detection-delay expressions and bounds for stationary,
// partitioned and adaptive routing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqd/detection.hpp"
#include "sqd/envmodel.hpp"
#include "sqd/policy_types.hpp"

namespace sqd {

namespace detail {

inline void require_positive_policy(std::span<const double> q, std::size_t n) {
  require(q.size() == n, "policy length must equal region count");
  double total = 0.0;
  for (double x : q) {
    if (!(x > 0.0)) throw std::domain_error("policy has a zero entry: some region is never visited (infinite delay)");
    total += x;
  }
  require(std::abs(total - 1.0) <= 1e-9, "policy must sum to 1");
}

inline double ceil_ratio(std::size_t n, std::size_t m) { return static_cast<double>((n + m - 1) / m); }

}  // namespace detail

/// The average-delay objective (sum_k v_k / q_k) (sum_i q_i T_i + q' d q).
/// With v_k = w_k eta_bar / D_k this is delta_avg; the uniqueness experiment
/// samples v directly.
struct DelayObjective {
  std::vector<double> v;
  std::vector<double> t;
  Matrix d;

  static DelayObjective from(const Environment& env, const ObservationModel& model, const Weights& w, double eta) {
    detail::require(model.size() == env.size() && w.size() == env.size(), "scenario size mismatch");
    DelayObjective f;
    const double eb = wald_eta_bar(eta);
    for (std::size_t k = 0; k < env.size(); ++k) f.v.push_back(w[k] * eb / model.region(k).divergence());
    f.t = env.mean_processing();
    f.d = env.travel();
    return f;
  }

  std::size_t size() const { return v.size(); }

  double observation_factor(std::span<const double> q) const {
    double a = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) a += v[k] / q[k];
    return a;
  }
  double aggregation_time(std::span<const double> q) const {
    const Eigen::Map<const Vector> qv(q.data(), static_cast<Eigen::Index>(q.size()));
    double b = qv.dot(Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size())));
    b += qv.dot(d * qv);
    return b;
  }
  double value(std::span<const double> q) const { return observation_factor(q) * aggregation_time(q); }

  /// Gradient with respect to the full vector q (not constrained to the simplex).
  std::vector<double> gradient(std::span<const double> q) const {
    const auto n = static_cast<Eigen::Index>(q.size());
    const Eigen::Map<const Vector> qv(q.data(), n);
    const Vector sym = d * qv + d.transpose() * qv;
    const double a = observation_factor(q);
    const double b = aggregation_time(q);
    std::vector<double> g(q.size());
    for (std::size_t k = 0; k < q.size(); ++k)
      g[k] = -v[k] / (q[k] * q[k]) * b + a * (t[k] + sym[static_cast<Eigen::Index>(k)]);
    return g;
  }
};

/// E[N_k] = eta_bar / (q_k D_k): iterations (observations anywhere) until detection at region k.
inline double expected_observations(double q_k, double divergence, double eta) {
  if (!(q_k > 0.0)) throw std::domain_error("q_k = 0: region never visited, infinite expected observations");
  detail::require(divergence > 0.0, "divergence must be > 0");
  return wald_eta_bar(eta) / (q_k * divergence);
}

/// Mean time per iteration, sum_i q_i T_i + sum_ij q_i q_j d_ij.
inline double aggregation_time(std::span<const double> q, const Environment& env) {
  detail::require(q.size() == env.size(), "policy length must equal region count");
  double process = 0.0;
  double travel = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    process += q[i] * env.processing(i).mean();
    for (std::size_t j = 0; j < q.size(); ++j) travel += q[i] * q[j] * env.travel(i, j);
  }
  return process + travel;
}

inline double expected_delay_single(std::span<const double> q, const Environment& env, const ObservationModel& model,
                                    double eta, std::size_t k) {
  detail::require_positive_policy(q, env.size());
  detail::require(k < env.size(), "region index out of range");
  return aggregation_time(q, env) * expected_observations(q[k], model.region(k).divergence(), eta);
}

inline double average_delay(std::span<const double> q, const Environment& env, const ObservationModel& model,
                            const Weights& weights, double eta) {
  detail::require_positive_policy(q, env.size());
  detail::require(weights.size() == env.size(), "weights length must equal region count");
  double a = 0.0;
  const double eb = wald_eta_bar(eta);
  for (std::size_t k = 0; k < q.size(); ++k) a += weights[k] * eb / (q[k] * model.region(k).divergence());
  return a * aggregation_time(q, env);
}

/// delta_upper(q) = (sum_k w_k eta_bar / (q_k D_k)) (T_max + d_max).
inline double upper_bound_delay(std::span<const double> q, const Weights& weights, std::span<const double> divergences,
                                double t_max, double d_max, double eta) {
  detail::require_positive_policy(q, weights.size());
  detail::require(divergences.size() == q.size(), "divergence length must equal region count");
  double a = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) a += weights[k] / (q[k] * divergences[k]);
  return a * wald_eta_bar(eta) * (t_max + d_max);
}

/// delta_lower(q) = sum_k w_k eta_bar T_min / (D_k q_k).
inline double lower_bound_delay(std::span<const double> q, const Weights& weights, std::span<const double> divergences,
                                double t_min, double eta) {
  detail::require_positive_policy(q, weights.size());
  double a = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) a += weights[k] / (q[k] * divergences[k]);
  return a * wald_eta_bar(eta) * t_min;
}

/// (sum_k sqrt(w_k / D_k))^2
inline double root_weight_sum_squared(const Weights& weights, std::span<const double> divergences) {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += std::sqrt(weights[k] / divergences[k]);
  return s * s;
}

/// Minimum of delta_upper over the simplex (attained at the efficient policy).
inline double min_upper_bound_delay(const Weights& weights, std::span<const double> divergences, double t_max,
                                    double d_max, double eta) {
  return root_weight_sum_squared(weights, divergences) * wald_eta_bar(eta) * (t_max + d_max);
}

struct DelayReport {
  enum class Source { theory, simulation };
  Source source = Source::theory;
  std::vector<double> expected_observations;
  std::vector<double> expected_delay;
  double average_delay = 0.0;
};

inline DelayReport theory_report(std::span<const double> q, const Environment& env, const ObservationModel& model,
                                 const Weights& weights, double eta) {
  detail::require_positive_policy(q, env.size());
  DelayReport r;
  const double agg = aggregation_time(q, env);
  for (std::size_t k = 0; k < env.size(); ++k) {
    r.expected_observations.push_back(expected_observations(q[k], model.region(k).divergence(), eta));
    r.expected_delay.push_back(agg * r.expected_observations.back());
    r.average_delay += weights[k] * r.expected_delay.back();
  }
  return r;
}

struct GlobalLowerBounds {
  /// E[min of m processing times] at each region.
  std::vector<double> min_processing;
  /// eta_bar T_k^{m-smlst} / (m D_k)
  std::vector<double> per_region;
  /// eta_bar T_min^{m-smlst} / (m D_max)
  double average = 0.0;
};

inline GlobalLowerBounds global_lower_bounds(const Environment& env, const ObservationModel& model, std::size_t m,
                                             double eta) {
  detail::require(m >= 1, "vehicle count must be >= 1");
  GlobalLowerBounds b;
  const double eb = wald_eta_bar(eta);
  const auto md = static_cast<double>(m);
  double t_min = std::numeric_limits<double>::infinity();
  double d_max = 0.0;
  for (std::size_t k = 0; k < env.size(); ++k) {
    const double t = expected_min_processing(env, k, m).value;
    const double dk = model.region(k).divergence();
    b.min_processing.push_back(t);
    b.per_region.push_back(eb * t / (md * dk));
    t_min = std::min(t_min, t);
    d_max = std::max(d_max, dk);
  }
  b.average = eb * t_min / (md * d_max);
  return b;
}

/// E[delta_k] >= eta_bar T_one / (sum_r q_k^r D_k) for any stationary multi-vehicle policy.
inline double multi_vehicle_lower_bound(const MultiVehiclePolicy& policy, double divergence, double t_one_value,
                                        double eta, std::size_t k) {
  const double c = policy.coverage(k);
  if (!(c > 0.0)) throw std::domain_error("region " + std::to_string(k + 1) + " is not reachable by any vehicle");
  return wald_eta_bar(eta) * t_one_value / (c * divergence);
}

/// Guarantees for the single-vehicle efficient policy and its comparison to
/// the optimal stationary policy and to the global minimum.
struct EfficiencyCertificate {
  double upper_min = 0.0;            ///< min_q delta_upper = delta_upper(q_dagger)
  double lower_at_efficient = 0.0;   ///< delta_lower(q_dagger)
  double average_at_efficient = 0.0; ///< delta_avg(q_dagger)
  double factor_vs_optimal = 0.0;    ///< (T_max + d_max) / T_min
  double factor_vs_global = 0.0;     ///< n (T_max + d_max) / T_min * D_max / D_min
  std::vector<double> per_region_factor;  ///< bound on E[delta_k(q_dagger)] / delta_k^{1-min}
  std::vector<double> per_region_ratio;   ///< E[delta_k(q_dagger)] / (eta_bar T_k / D_k)
};

inline EfficiencyCertificate efficiency_certificate(const Environment& env, const ObservationModel& model,
                                                    const Weights& weights, std::span<const double> q_dagger,
                                                    double eta) {
  EfficiencyCertificate c;
  const auto d = model.divergences();
  const double t_max = env.max_mean_processing();
  const double t_min = env.min_mean_processing();
  const double d_max = env.max_travel();
  const double div_max = *std::max_element(d.begin(), d.end());
  const double div_min = *std::min_element(d.begin(), d.end());
  const auto n = static_cast<double>(env.size());
  c.upper_min = min_upper_bound_delay(weights, d, t_max, d_max, eta);
  c.lower_at_efficient = lower_bound_delay(q_dagger, weights, d, t_min, eta);
  c.average_at_efficient = average_delay(q_dagger, env, model, weights, eta);
  c.factor_vs_optimal = (t_max + d_max) / t_min;
  c.factor_vs_global = n * (t_max + d_max) / t_min * div_max / div_min;
  const double eb = wald_eta_bar(eta);
  for (std::size_t k = 0; k < env.size(); ++k) {
    const double tk = env.processing(k).mean();
    c.per_region_factor.push_back((t_max + d_max) / tk * std::sqrt(n * d[k] / (weights[k] * div_min)));
    c.per_region_ratio.push_back(expected_delay_single(q_dagger, env, model, eta, k) / (eb * tk / d[k]));
  }
  return c;
}

/// Bounds for the partitioning policy with the efficient policy in each subset.
struct PartitionBounds {
  std::size_t vehicles = 1;
  double subset_size = 1.0;           ///< ceil(n/m)
  double t_one = 0.0;
  double upper = 0.0;                 ///< m ceil(n/m)^2 w_max eta_bar (T_max + d_max) / D_min
  double lower = 0.0;                 ///< (sum sqrt(w/D))^2 eta_bar T_one / m
  double factor_vs_optimal = 0.0;     ///< 4 w_max/w_min (T_max+d_max)/T_one D_max/D_min
  double factor_vs_global = 0.0;      ///< m^2 ceil(n/m) (T_max+d_max)/T_min^{m-smlst} D_max/D_min
  std::vector<double> per_region_factor;  ///< m (T_max+d_max)/T_k^{m-smlst} sqrt(ceil(n/m) D_k/(w_k D_min))
};

inline PartitionBounds partition_bounds(const Environment& env, const ObservationModel& model, const Weights& weights,
                                        std::size_t m, double eta) {
  detail::require(m >= 1, "vehicle count must be >= 1");
  PartitionBounds b;
  const auto d = model.divergences();
  const auto n = env.size();
  const double eb = wald_eta_bar(eta);
  const double t_max = env.max_mean_processing();
  const double d_max = env.max_travel();
  const double span = t_max + d_max;
  const double div_max = *std::max_element(d.begin(), d.end());
  const double div_min = *std::min_element(d.begin(), d.end());
  const double w_max = *std::max_element(weights.w.begin(), weights.w.end());
  const double w_min = *std::min_element(weights.w.begin(), weights.w.end());
  const auto md = static_cast<double>(m);
  b.vehicles = m;
  b.subset_size = detail::ceil_ratio(n, m);
  b.t_one = t_one(env, m).value;
  b.upper = md * b.subset_size * b.subset_size * w_max * eb * span / div_min;
  b.lower = root_weight_sum_squared(weights, d) * eb * b.t_one / md;
  b.factor_vs_optimal = 4.0 * w_max / w_min * span / b.t_one * div_max / div_min;
  double t_small_min = std::numeric_limits<double>::infinity();
  std::vector<double> t_small;
  for (std::size_t k = 0; k < n; ++k) {
    t_small.push_back(expected_min_processing(env, k, m).value);
    t_small_min = std::min(t_small_min, t_small.back());
  }
  b.factor_vs_global = md * md * b.subset_size * span / t_small_min * div_max / div_min;
  for (std::size_t k = 0; k < n; ++k)
    b.per_region_factor.push_back(md * span / t_small[k] * std::sqrt(b.subset_size * d[k] / (weights[k] * div_min)));
  return b;
}

/// Upper bound on the expected delay at region k under the partitioned
/// adaptive policy. Very conservative: it treats every other statistic as
/// pinned at the threshold.
inline double adaptive_delay_bound(const Environment& env, const ObservationModel& model, std::size_t m, double eta,
                                   std::size_t k) {
  detail::require(m >= 1, "vehicle count must be >= 1");
  detail::require(k < env.size(), "region index out of range");
  const auto d = model.divergences();
  const double dk = d[k];
  detail::require(dk > 0.0, "divergence must be > 0");
  const double div_min = *std::min_element(d.begin(), d.end());
  const double others = detail::ceil_ratio(env.size(), m) - 1.0;
  const double eb = wald_eta_bar(eta);
  const double first = eb / dk;
  const double second = 2.0 * others * std::exp(eta / 2.0) * std::sqrt(dk) * (-std::expm1(-eb / 2.0)) /
                        (std::sqrt(div_min) * (-std::expm1(-dk / 2.0)));
  const double third =
      others * others * std::exp(eta) * dk * (-std::expm1(-eb)) / (div_min * (-std::expm1(-dk)));
  return (first + second + third) * (env.max_mean_processing() + env.max_travel());
}

}  // namespace sqd
