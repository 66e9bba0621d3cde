#include <gtest/gtest.h>

#include <cmath>

#include "sqd/scenario.hpp"

using namespace sqd;

TEST(SampleSize, Condition) {
  EXPECT_EQ(required_samples(0.01, 1e-4), 922u);  // -ln(1e-4)/0.01 = 921.03
  EXPECT_EQ(required_samples(0.5, std::exp(-2.0)), 4u);
  ScenarioSampleConfig c;
  EXPECT_NO_THROW(validate(c));
  c.n1 = 900;
  EXPECT_THROW(validate(c), ConfigError);
  c.n1 = 1000;
  c.mu1 = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(SampleInstance, Structure) {
  Rng rng(3);
  const ScenarioSampleConfig cfg;
  std::vector<int> seen(13, 0);
  for (int s = 0; s < 500; ++s) {
    const auto inst = sample_instance(rng, cfg);
    const auto n = inst.size();
    ASSERT_GE(n, 3u);
    ASSERT_LE(n, 12u);
    ++seen[n];
    ASSERT_EQ(inst.coordinates.size(), n);
    ASSERT_TRUE(on_simplex(inst.start));
    const auto& d = inst.objective.d;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(d(i, i), 0.0);
      EXPECT_GT(inst.objective.t[i], 0.0);
      EXPECT_GT(inst.objective.v[i], 0.0);
      EXPECT_LT(inst.objective.v[i], 1.0);
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_EQ(d(i, j), d(j, i));
        for (std::size_t k = 0; k < n; ++k) EXPECT_LE(d(i, k), d(i, j) + d(j, k) + 1e-9);
      }
    }
  }
  for (std::size_t n = 3; n <= 12; ++n) EXPECT_GT(seen[n], 20) << n;
}

TEST(SampleInstance, ProcessingAndCoordinateMoments) {
  Rng rng(5);
  const ScenarioSampleConfig cfg;
  double t = 0, t2 = 0, x2 = 0;
  std::size_t nt = 0, nx = 0;
  for (int s = 0; s < 4000; ++s) {
    const auto inst = sample_instance(rng, cfg);
    for (double v : inst.objective.t) {
      t += v;
      t2 += v * v;
      ++nt;
    }
    for (const auto& p : inst.coordinates) {
      x2 += p.x * p.x + p.y * p.y;
      nx += 2;
    }
  }
  const double mean = t / double(nt);
  const double se = std::sqrt((t2 / double(nt) - mean * mean) / double(nt));
  EXPECT_NEAR(mean, 10 * std::sqrt(2 / M_PI), 4 * se);  // 7.979
  EXPECT_NEAR(t2 / double(nt), 100.0, 2.0);
  EXPECT_NEAR(x2 / double(nx), 100.0, 2.0);
}

TEST(EvaluateInstance, TwoRegionsAgreeFromBothStarts) {
  ScenarioInstance inst;
  inst.coordinates = {{0, 0}, {3, 4}};
  inst.objective.v = {0.3, 0.8};
  inst.objective.t = {2.0, 5.0};
  inst.objective.d = Matrix{{0, 5}, {5, 0}};
  inst.start = {0.9, 0.1};
  const auto o = evaluate_instance(inst, DescentOptions{});
  EXPECT_TRUE(o.converged);
  EXPECT_LT(o.distance, 1e-6);
}

TEST(Certificate, SmallRunWithinTolerance) {
  ScenarioSampleConfig c;
  c.n1 = 100;
  c.mu1 = -std::log(c.nu1) / 100.0;
  c.seed = 9;
  const auto cert = uniqueness_certificate(c);
  EXPECT_EQ(cert.instances.size(), 100u);
  EXPECT_EQ(cert.failures, 0u);
  EXPECT_LE(cert.gamma_hat, 1e-3);
  EXPECT_TRUE(cert.within_tolerance);
  EXPECT_EQ(cert.required_n1, 100u);
  EXPECT_FALSE(cert.statement().empty());
}

TEST(Certificate, WorkerCountIndependent) {
  ScenarioSampleConfig c;
  c.n1 = 60;
  c.mu1 = 0.2;
  c.seed = 2;
  const auto a = uniqueness_certificate(c);
  c.workers = 5;
  const auto b = uniqueness_certificate(c);
  EXPECT_EQ(a.gamma_hat, b.gamma_hat);
  for (std::size_t s = 0; s < 60; ++s) EXPECT_EQ(a.instances[s].distance, b.instances[s].distance);
}

TEST(Certificate, ToleranceMonotone) {
  ScenarioSampleConfig c;
  c.n1 = 50;
  c.mu1 = 0.2;
  c.seed = 4;
  c.tolerance = 1e-3;
  const auto loose = uniqueness_certificate(c);
  c.tolerance = 0.0;
  const auto strict = uniqueness_certificate(c);
  EXPECT_EQ(loose.gamma_hat, strict.gamma_hat);
  EXPECT_TRUE(loose.within_tolerance);
  EXPECT_EQ(strict.within_tolerance, strict.gamma_hat == 0.0);
}
