#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sqd/analysis.hpp"
#include "sqd/policy.hpp"

using namespace sqd;

namespace {

struct Instance {
  Environment env;
  ObservationModel model;
  Weights w;
};

Instance example1() {
  std::vector<Point2> xy{{10, 0}, {5, 0}, {0, 5}, {0, 10}};
  std::vector<ProcessingDistribution> t;
  for (double v : {1.0, 2.0, 3.0, 4.0}) t.push_back(ProcessingDistribution::deterministic(v));
  std::vector<RegionDensities> r;
  for (double v : {1.0, 1.33, 1.67, 2.0}) r.push_back(RegionDensities::gaussian_shift(0, 1, v));
  std::vector<double> pri(4, 0.5);
  return {Environment::from_coordinates(xy, t, pri), ObservationModel(r), weights_from_priors(pri)};
}

Instance example3() {
  std::vector<Point2> xy{{10, 0}, {5, 0}, {0, 5}, {0, 10}, {0, 0}, {5, 5}};
  std::vector<ProcessingDistribution> t(6, ProcessingDistribution::deterministic(1));
  std::vector<RegionDensities> r;
  for (double v : {1.0, 1.4, 1.8, 2.2, 2.6, 3.0}) r.push_back(RegionDensities::gaussian_shift(0, 1, v));
  std::vector<double> pri(6, 0.5);
  return {Environment::from_coordinates(xy, t, pri), ObservationModel(r), weights_from_priors(pri)};
}

double linf(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Efficient, ExampleOne) {
  const auto ex = example1();
  const auto q = efficient_policy(ex.w, ex.model.divergences());
  const std::vector<double> expect{0.2058, 0.2373, 0.2659, 0.2910};
  EXPECT_LE(linf(q.q, expect), 1e-4);
  EXPECT_TRUE(on_simplex(q.q, 1e-12));
}

TEST(Efficient, SymmetryAndSingleton) {
  const Weights w{{0.25, 0.25, 0.25, 0.25}};
  const std::vector<double> d(4, 0.7);
  for (double x : efficient_policy(w, d).q) EXPECT_NEAR(x, 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(efficient_policy(Weights{{1.0}}, std::vector<double>{0.3}).q[0], 1.0);
  EXPECT_THROW(efficient_policy(w, std::vector<double>{0.5, 0.5, 0.0, 0.5}), ConfigError);
}

TEST(Efficient, ScaleInvariantInWeights) {
  const Weights w{{0.1, 0.2, 0.7}};
  const Weights w3{{0.3, 0.6, 2.1}};
  const std::vector<double> d{0.4, 1.1, 0.2};
  EXPECT_LE(linf(efficient_policy(w, d).q, efficient_policy(w3, d).q), 1e-15);
}

TEST(Efficient, MatchesNumericMinimizerOfUpperBound) {
  const auto ex = example1();
  const auto d = ex.model.divergences();
  const double tmax = ex.env.max_mean_processing();
  const double dmax = ex.env.max_travel();
  const auto f = [&](std::span<const double> q) { return upper_bound_delay(q, ex.w, d, tmax, dmax, 5.0); };
  const auto g = [&](std::span<const double> q) {
    const double c = wald_eta_bar(5.0) * (tmax + dmax);
    std::vector<double> out(q.size());
    for (std::size_t k = 0; k < q.size(); ++k) out[k] = -c * ex.w[k] / (d[k] * q[k] * q[k]);
    return out;
  };
  const auto res = minimize_on_simplex(f, g, StationaryPolicy::uniform(4).q, {1e-13});
  EXPECT_TRUE(res.converged) << res.stop_reason;
  EXPECT_LE(linf(res.q, efficient_policy(ex.w, d).q), 1e-6);
}

TEST(Optimal, SymmetricPairIsHalfHalf) {
  Matrix d(2, 2);
  d << 0, 3, 3, 0;
  const Environment env(d, {ProcessingDistribution::deterministic(2), ProcessingDistribution::deterministic(2)},
                        {0.5, 0.5});
  const ObservationModel m({RegionDensities::gaussian_shift(0, 1, 1), RegionDensities::gaussian_shift(0, 1, 1)});
  const auto opt = optimal_policy(env, m, weights_from_priors(env.priors()), 5.0, {0.9, 0.1});
  EXPECT_TRUE(opt.diagnostics.converged);
  EXPECT_NEAR(opt.policy.q[0], 0.5, 1e-7);
}

TEST(Optimal, OrderingOnExampleOne) {
  const auto ex = example1();
  const auto opt = optimal_policy(ex.env, ex.model, ex.w, 5.0);
  ASSERT_TRUE(opt.diagnostics.converged) << opt.diagnostics.stop_reason;
  const auto eff = efficient_policy(ex.w, ex.model.divergences());
  const double a_opt = average_delay(opt.policy.q, ex.env, ex.model, ex.w, 5.0);
  const double a_eff = average_delay(eff.q, ex.env, ex.model, ex.w, 5.0);
  const double a_uni = average_delay(StationaryPolicy::uniform(4).q, ex.env, ex.model, ex.w, 5.0);
  EXPECT_LE(a_opt, a_eff);
  EXPECT_LT(a_eff, a_uni);
  EXPECT_NEAR(opt.average_delay, a_opt, 1e-9 * a_opt);
}

TEST(Optimal, MultistartAgreement) {
  const auto ex = example1();
  const auto ref = optimal_policy(ex.env, ex.model, ex.w, 5.0);
  Rng rng(31);
  for (int s = 0; s < 20; ++s) {
    const auto start = uniform_simplex(4, rng);
    const auto o = optimal_policy(ex.env, ex.model, ex.w, 5.0, start);
    ASSERT_TRUE(o.diagnostics.converged) << o.diagnostics.stop_reason;
    EXPECT_LE(linf(o.policy.q, ref.policy.q), 1e-4);
  }
}

TEST(Optimal, AnalyticGradientMatchesFiniteDifferences) {
  const auto ex = example1();
  const auto obj = DelayObjective::from(ex.env, ex.model, ex.w, 5.0);
  Rng rng(2);
  for (int s = 0; s < 10; ++s) {
    auto q = uniform_simplex(4, rng);
    for (auto& x : q) x = 0.8 * x + 0.05;
    const auto g = obj.gradient(q);
    for (std::size_t k = 0; k < 4; ++k) {
      auto hi = q, lo = q;
      hi[k] += 1e-6;
      lo[k] -= 1e-6;
      const double fd = (obj.value(hi) - obj.value(lo)) / 2e-6;
      EXPECT_NEAR(g[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Partition, RoundRobin) {
  const auto p = partition_regions(6, 3);
  const std::vector<std::vector<std::size_t>> expect{{0, 3}, {1, 4}, {2, 5}};
  EXPECT_EQ(p.subsets, expect);
  EXPECT_EQ(partition_regions(4, 1).subsets.front().size(), 4u);
  const auto p8 = partition_regions(8, 3);
  EXPECT_EQ(p8.subsets[0].size(), 3u);
  EXPECT_EQ(p8.subsets[1].size(), 3u);
  EXPECT_EQ(p8.subsets[2].size(), 2u);
  EXPECT_THROW(partition_regions(4, 0), ConfigError);
  EXPECT_EQ(partition_regions(3, 5).vehicles(), 3u);
}

TEST(Partition, CardinalityBoundHoldsEverywhere) {
  for (std::size_t n = 1; n <= 20; ++n)
    for (std::size_t m = 1; m <= 8; ++m) {
      const auto p = partition_regions(n, m);
      std::vector<int> seen(n, 0);
      for (const auto& s : p.subsets) {
        EXPECT_LE(s.size(), (n + m - 1) / m);
        EXPECT_FALSE(s.empty());
        for (auto k : s) ++seen[k];
      }
      for (int c : seen) EXPECT_EQ(c, 1);
    }
}

TEST(PartitionedEfficient, SingleVehicleIsEfficient) {
  const auto ex = example1();
  const auto p = partitioned_efficient_policy(ex.env, ex.model, ex.w, partition_regions(4, 1));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_LE(linf(p.vehicles[0].q, efficient_policy(ex.w, ex.model.divergences()).q), 1e-15);
}

TEST(PartitionedEfficient, SingletonsArePointMasses) {
  const auto ex = example1();
  const auto p = partitioned_efficient_policy(ex.env, ex.model, ex.w, partition_regions(4, 4));
  for (std::size_t r = 0; r < 4; ++r) EXPECT_DOUBLE_EQ(p.vehicles[r].q[r], 1.0);
}

TEST(PartitionedEfficient, ExampleThreeMatchesStandaloneSubsets) {
  const auto ex = example3();
  const auto part = partition_regions(6, 3);
  const auto p = partitioned_efficient_policy(ex.env, ex.model, ex.w, part);
  const auto d = ex.model.divergences();
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& s = part.subsets[r];
    std::vector<double> pri, ds;
    for (auto k : s) {
      pri.push_back(ex.env.priors()[k]);
      ds.push_back(d[k]);
    }
    const auto local = efficient_policy(weights_from_priors(pri), ds);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(p.vehicles[r].q[s[i]], local.q[i], 1e-15);
    double off = 0;
    for (std::size_t k = 0; k < 6; ++k)
      if (std::find(s.begin(), s.end(), k) == s.end()) off += p.vehicles[r].q[k];
    EXPECT_EQ(off, 0.0);
  }
}

TEST(Mh, CompleteGraphUniform) {
  const auto c = metropolis_hastings_chain(RegionGraph::complete(5), std::vector<double>(5, 0.2));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(c.transition(i, j), i == j ? 0.0 : 0.25, 1e-15);
}

TEST(Mh, ThreeRingHandEvaluation) {
  const std::vector<double> q{0.5, 0.25, 0.25};
  const auto c = metropolis_hastings_chain(RegionGraph::ring(3), q);
  Matrix expect(3, 3);
  expect << 0.5, 0.25, 0.25, 0.5, 0, 0.5, 0.5, 0.5, 0;
  EXPECT_LE((c.transition - expect).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::RowVectorXd qv(3);
  qv << 0.5, 0.25, 0.25;
  EXPECT_LE((qv * c.transition - qv).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mh, SingleEdge) {
  RegionGraph g(2);
  g.add_edge(0, 1);
  const auto c = metropolis_hastings_chain(g, std::vector<double>{0.9, 0.1});
  EXPECT_NEAR(c.transition(0, 1), 1.0 / 9.0, 1e-15);
  EXPECT_NEAR(c.transition(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(0.9 * c.transition(0, 1), 0.1 * c.transition(1, 0), 1e-15);
}

TEST(Mh, Errors) {
  RegionGraph g(3);
  g.add_edge(0, 1);
  EXPECT_THROW(metropolis_hastings_chain(g, std::vector<double>{0.3, 0.3, 0.4}), ConfigError);
  EXPECT_THROW(metropolis_hastings_chain(RegionGraph::line(3), std::vector<double>{0.5, 0.5, 0.0}), ConfigError);
}

TEST(Mh, EmpiricalFrequenciesOnRing) {
  const std::vector<double> q{0.1, 0.2, 0.3, 0.15, 0.25};
  const auto c = metropolis_hastings_chain(RegionGraph::ring(5), q);
  Rng rng(77);
  std::vector<double> count(5, 0);
  std::size_t s = 0;
  const int steps = 1000000;
  for (int i = 0; i < steps; ++i) {
    s = c.next(s, rng);
    count[s] += 1;
  }
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(count[k] / steps, q[k], 0.01 * q[k]);
}

TEST(Adaptive, ZeroStatisticsGiveEfficientWithUniformWeights) {
  const std::vector<double> d{0.5, 0.37594, 0.2994, 0.25};
  const auto a = adaptive_step(std::vector<double>(4, 0.0), d);
  const auto e = efficient_policy(Weights{{0.25, 0.25, 0.25, 0.25}}, d);
  EXPECT_LE(linf(a, e.q), 1e-15);
}

TEST(Adaptive, LargeStatisticLimit) {
  const std::vector<double> d(4, 0.5);
  const auto a = adaptive_step(std::vector<double>{50.0, 0, 0, 0}, d);
  EXPECT_NEAR(a[0], 1.0 / (1.0 + 3.0 * std::sqrt(0.5)), 1e-12);
  const auto u = adaptive_step(std::vector<double>(4, 2.0), d);
  for (double x : u) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(Adaptive, PriorsInRange) {
  const auto s = adaptive_state(std::vector<double>{0.0, 1.0, 700.0}, std::vector<double>{1, 1, 1});
  EXPECT_DOUBLE_EQ(s.priors[0], 0.5);
  for (double p : s.priors) {
    EXPECT_GE(p, 0.5);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_TRUE(on_simplex(s.selection, 1e-12));
}

TEST(Recurrence, Examples) {
  EXPECT_DOUBLE_EQ(recurrence_bound(0.25, 0.25), 4.0);
  EXPECT_NEAR(recurrence_bound(0.1, 0.3), 30.0, 1e-12);
  EXPECT_NEAR(recurrence_bound(1 - 1e-9, 1 - 1e-9), 1.0, 1e-8);
  EXPECT_THROW(recurrence_bound(0.3, 0.1), ConfigError);
  EXPECT_THROW(recurrence_bound(0.0, 0.1), ConfigError);
}

TEST(Recurrence, AdversarialSamplerStaysUnderBound) {
  // p alternates between the interval ends, flipping after every draw.
  Rng rng(5);
  const double a = 0.1, b = 0.3;
  const int runs = 100000;
  double acc = 0;
  for (int r = 0; r < runs; ++r) {
    int i = 0;
    while (true) {
      ++i;
      const double p = (i % 2) ? a + 1e-9 : b - 1e-9;
      if (uniform01(rng) < p) break;
    }
    acc += i;
  }
  EXPECT_LE(acc / runs, recurrence_bound(a, b));
}
