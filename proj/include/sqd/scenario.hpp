#pragma once

// Randomized uniqueness check for the stationary-policy optimum: sample
// problem instances, descend from a random start and from the uniform
// vector, and report the largest distance between the two end points.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "sqd/analysis.hpp"
#include "sqd/policy.hpp"
#include "sqd/random.hpp"

namespace sqd {

struct ScenarioSampleConfig {
  std::size_t n1 = 1000;
  double mu1 = 0.01;
  double nu1 = 1e-4;
  std::uint64_t seed = 0;
  std::size_t min_regions = 3;
  std::size_t max_regions = 12;
  double coordinate_sd = 10.0;      // variance 100
  double processing_scale = 10.0;   // half-normal scale sigma
  double tolerance = 1e-3;          // pass threshold on gamma-hat
  DescentOptions descent{};
  unsigned workers = 1;
};

/// Smallest N1 with N1 >= -ln(nu1)/mu1.
inline std::size_t required_samples(double mu1, double nu1) {
  detail::require(mu1 > 0.0 && mu1 < 1.0, "mu1 must lie in (0,1)");
  detail::require(nu1 > 0.0 && nu1 < 1.0, "nu1 must lie in (0,1)");
  return static_cast<std::size_t>(std::ceil(-std::log(nu1) / mu1 - 1e-12));
}

inline void validate(const ScenarioSampleConfig& c) {
  const auto need = required_samples(c.mu1, c.nu1);
  detail::require(c.n1 >= need, "sample-size condition violated: N1=" + std::to_string(c.n1) +
                                    " < -ln(nu1)/mu1 (needs " + std::to_string(need) + ")");
  detail::require(c.min_regions >= 2 && c.min_regions <= c.max_regions, "invalid region-count range");
  detail::require(c.coordinate_sd > 0.0 && c.processing_scale > 0.0, "sampling scales must be > 0");
  detail::require(c.tolerance >= 0.0, "tolerance must be >= 0");
}

/// One sampled problem: objective coefficients and a random start.
struct ScenarioInstance {
  std::vector<Point2> coordinates;
  DelayObjective objective;
  std::vector<double> start;
  std::size_t size() const { return start.size(); }
};

inline ScenarioInstance sample_instance(Rng& rng, const ScenarioSampleConfig& c = {}) {
  ScenarioInstance inst;
  const auto n = std::uniform_int_distribution<std::size_t>(c.min_regions, c.max_regions)(rng);
  inst.coordinates.resize(n);
  for (auto& p : inst.coordinates) {
    p.x = c.coordinate_sd * standard_normal(rng);
    p.y = c.coordinate_sd * standard_normal(rng);
  }
  inst.objective.t.resize(n);
  for (auto& t : inst.objective.t) t = c.processing_scale * std::abs(standard_normal(rng));
  inst.objective.v.resize(n);
  // v in the open interval (0,1)
  for (auto& v : inst.objective.v) {
    do v = uniform01(rng);
    while (v <= 0.0);
  }
  inst.objective.d = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      inst.objective.d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::hypot(inst.coordinates[i].x - inst.coordinates[j].x, inst.coordinates[i].y - inst.coordinates[j].y);
  inst.start = uniform_simplex(n, rng);
  return inst;
}

struct InstanceOutcome {
  std::size_t index = 0;
  std::size_t regions = 0;
  double distance = 0.0;
  bool converged = true;
  std::size_t iterations_from_start = 0;
  std::size_t iterations_from_uniform = 0;
  std::string stop_reason;
};

struct UniquenessCertificate {
  double gamma_hat = 0.0;
  std::size_t n1 = 0;
  std::size_t required_n1 = 0;
  double mu1 = 0.0;
  double nu1 = 0.0;
  double tolerance = 0.0;
  bool within_tolerance = false;
  std::size_t failures = 0;
  std::vector<InstanceOutcome> instances;
  std::string norm = "euclidean";
  std::string step_rule = "Barzilai-Borwein step with Armijo backtracking on the reduced coordinates";
  double gradient_tolerance = 0.0;

  std::string statement() const {
    return "with confidence at least " + std::to_string(1.0 - nu1) +
           ", descent from a random start ends within gamma_hat of the uniform-start end point "
           "with probability at least " +
           std::to_string(1.0 - mu1);
  }
};

inline InstanceOutcome evaluate_instance(const ScenarioInstance& inst, const DescentOptions& opts) {
  InstanceOutcome out;
  out.regions = inst.size();
  const auto n = inst.size();
  const auto a = minimize_delay(inst.objective, inst.start, opts);
  const auto b = minimize_delay(inst.objective, std::vector<double>(n, 1.0 / static_cast<double>(n)), opts);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a.q[i] - b.q[i]) * (a.q[i] - b.q[i]);
  out.distance = std::sqrt(ss);
  out.converged = a.converged && b.converged;
  out.iterations_from_start = a.iterations;
  out.iterations_from_uniform = b.iterations;
  out.stop_reason = !a.converged ? a.stop_reason : b.stop_reason;
  return out;
}

/// Runs the experiment. Instance s draws from its own stream, so the result
/// does not depend on the worker count.
inline UniquenessCertificate uniqueness_certificate(const ScenarioSampleConfig& c) {
  validate(c);
  UniquenessCertificate cert;
  cert.n1 = c.n1;
  cert.required_n1 = required_samples(c.mu1, c.nu1);
  cert.mu1 = c.mu1;
  cert.nu1 = c.nu1;
  cert.tolerance = c.tolerance;
  cert.gradient_tolerance = c.descent.gradient_tolerance;
  cert.instances.resize(c.n1);

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t s = next++; s < c.n1; s = next++) {
      Rng rng = make_stream(c.seed, s, 0);
      const auto inst = sample_instance(rng, c);
      cert.instances[s] = evaluate_instance(inst, c.descent);
      cert.instances[s].index = s;
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(c.workers, static_cast<unsigned>(c.n1)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& o : cert.instances) {
    if (!o.converged) {
      ++cert.failures;
      continue;
    }
    cert.gamma_hat = std::max(cert.gamma_hat, o.distance);
  }
  cert.within_tolerance = cert.failures == 0 && cert.gamma_hat <= c.tolerance;
  return cert;
}

}  // namespace sqd
