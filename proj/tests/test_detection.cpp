#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sqd/detection.hpp"

using namespace sqd;

namespace {

// Independent single-CUSUM mean detection time for N(1,1) vs N(0,1), fresh
// start, frozen from a separate vectorized simulation with 1e6 runs.
constexpr double kMcDetect_eta5 = 10.376;   // se 0.0055
constexpr double kMcDetect_eta3 = 6.403;    // se 0.0038
constexpr double kMcFalseAlarm_eta3 = 117.3;  // se 0.26, 2e5 runs

double mc_detect(double mean, double eta, int runs, std::uint64_t seed, double* se) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(mean, 1.0);
  double acc = 0, acc2 = 0;
  for (int r = 0; r < runs; ++r) {
    CusumState s{0.0, eta, 0};
    int n = 0;
    while (true) {
      ++n;
      const auto step = cusum_update(s, z(gen) - 0.5);
      s = step.state;
      if (step.detected) break;
    }
    acc += n;
    acc2 += double(n) * n;
  }
  const double m = acc / runs;
  *se = std::sqrt((acc2 / runs - m * m) / runs);
  return m;
}

ObservationModel shift_model(std::initializer_list<double> variances) {
  std::vector<RegionDensities> r;
  for (double v : variances) r.push_back(RegionDensities::gaussian_shift(0, 1, v));
  return ObservationModel(std::move(r));
}

Vector scalar(double x) { return Vector::Constant(1, x); }

}  // namespace

TEST(Cusum, ClampsAtZero) {
  const auto s = cusum_update({0.0, 5.0, 0}, -3.0);
  EXPECT_EQ(s.state.statistic, 0.0);
  EXPECT_FALSE(s.detected);
  EXPECT_EQ(s.state.iteration, 1u);
}

TEST(Cusum, CrossingDetectsAndResets) {
  const auto s = cusum_update({4.9, 5.0, 0}, 0.2);
  EXPECT_TRUE(s.detected);
  EXPECT_NEAR(s.crossing, 5.1, 1e-12);
  EXPECT_EQ(s.state.statistic, 0.0);
}

TEST(Cusum, EqualityIsNotACrossing) {
  EXPECT_FALSE(cusum_update({4.0, 5.0, 0}, 1.0).detected);
}

TEST(Cusum, RejectsNonFinite) {
  EXPECT_THROW(cusum_update({}, std::numeric_limits<double>::infinity()), ConfigError);
  EXPECT_THROW(cusum_update({}, std::nan("")), ConfigError);
}

TEST(Cusum, MeanDetectionMatchesIndependentSimulation) {
  double se = 0;
  const double m5 = mc_detect(1.0, 5.0, 100000, 17, &se);
  EXPECT_NEAR(m5, kMcDetect_eta5, 4 * std::hypot(se, 0.0055));
  // Wald's value is a lower-side reference.
  EXPECT_GE(m5, wald_eta_bar(5.0) / 0.5);
  const double m3 = mc_detect(1.0, 3.0, 100000, 18, &se);
  EXPECT_NEAR(m3, kMcDetect_eta3, 4 * std::hypot(se, 0.0038));
}

TEST(Cusum, FalseAlarmSpacingAgainstIndependentSimulation) {
  double se = 0;
  const double m = mc_detect(0.0, 3.0, 40000, 19, &se);
  EXPECT_NEAR(m, kMcFalseAlarm_eta3, 4 * std::hypot(se, 0.26));
  EXPECT_GE(m, 0.5 * wald_false_alarm_mean(3.0, 0.5));
}

TEST(Wald, EtaBar) {
  EXPECT_NEAR(wald_eta_bar(5.0), 4.006737947, 1e-9);
  EXPECT_NEAR(wald_eta_bar(1.0), 0.367879441, 1e-9);
  EXPECT_NEAR(wald_eta_bar(1e-8), 0.0, 1e-15);
  EXPECT_GT(wald_eta_bar(1e-8), 0.0);
  EXPECT_THROW(wald_eta_bar(0.0), ConfigError);
}

TEST(Wald, FalseAlarmMean) {
  EXPECT_NEAR(wald_false_alarm_mean(5.0, 0.5), 284.826, 1e-3);
  EXPECT_NEAR(wald_false_alarm_mean(3.0, 0.5), 32.171, 1e-3);
  EXPECT_NEAR(wald_false_alarm_mean(1e-6, 0.5), 0.0, 1e-9);
  EXPECT_THROW(wald_false_alarm_mean(5.0, 0.0), ConfigError);
}

TEST(Bank, OnlyObservedRegionChanges) {
  const auto model = shift_model({1, 1, 1, 1});
  DetectorBank bank(4, 5.0);
  ensemble_update(bank, 0, scalar(2.0), model);
  ensemble_update(bank, 2, scalar(1.5), model);
  const auto before = bank.statistics();
  ensemble_update(bank, 1, scalar(3.0), model);
  const auto after = bank.statistics();
  EXPECT_EQ(before[0], after[0]);
  EXPECT_EQ(before[2], after[2]);
  EXPECT_EQ(before[3], after[3]);
  EXPECT_NE(before[1], after[1]);
}

TEST(Bank, OutOfRange) {
  const auto model = shift_model({1, 1});
  DetectorBank bank(2, 5.0);
  EXPECT_THROW(ensemble_update(bank, 2, scalar(0), model), ConfigError);
}

TEST(Bank, SingleRegionIsPlainCusum) {
  const auto model = shift_model({1});
  DetectorBank bank(1, 3.0);
  CusumState ref{0.0, 3.0, 0};
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const double y = 0.8 * standard_normal(rng) + 0.6;
    const auto d = ensemble_update(bank, 0, scalar(y), model, i);
    const auto s = cusum_update(ref, y - 0.5);
    ref = s.state;
    ASSERT_EQ(d.has_value(), s.detected);
    ASSERT_NEAR(bank.statistic(0), ref.statistic, 1e-12);
  }
}

TEST(Bank, InterleavedStreamEqualsPerRegionSubsequences) {
  const auto model = shift_model({1, 1.33, 1.67, 2});
  DetectorBank bank(4, 2.0);
  Rng rng(8);
  std::vector<std::vector<double>> sub(4);
  std::vector<std::vector<double>> sub_times(4);
  for (int t = 0; t < 4000; ++t) {
    const auto k = static_cast<std::size_t>(uniform01(rng) * 4);
    const double y = standard_normal(rng) + (t > 2000 ? 1.0 : 0.0);
    sub[k].push_back(y);
    sub_times[k].push_back(t);
    ensemble_update(bank, k, scalar(y), model, t);
  }
  // Brute force: replay each subsequence separately.
  std::vector<Detection> oracle;
  for (std::size_t k = 0; k < 4; ++k) {
    CusumState s{0.0, 2.0, 0};
    for (std::size_t i = 0; i < sub[k].size(); ++i) {
      const auto st = cusum_update(s, model.region(k).log_likelihood_ratio(scalar(sub[k][i])));
      s = st.state;
      if (st.detected) oracle.push_back({k, sub_times[k][i], st.crossing});
    }
  }
  std::vector<Detection> got = bank.log();
  auto by_time = [](const Detection& a, const Detection& b) { return a.time < b.time; };
  std::sort(oracle.begin(), oracle.end(), by_time);
  ASSERT_EQ(got.size(), oracle.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].region, oracle[i].region);
    EXPECT_EQ(got[i].time, oracle[i].time);
    EXPECT_EQ(got[i].statistic, oracle[i].statistic);
  }
}

TEST(Bank, RaisingThresholdNeverDetectsEarlier) {
  Rng rng(12);
  std::vector<double> llr;
  for (int i = 0; i < 3000; ++i) llr.push_back(standard_normal(rng) + (i > 1000 ? 0.5 : -0.5));
  double prev = -1;
  for (double eta : {1.0, 2.0, 3.0, 5.0, 8.0}) {
    CusumState s{0.0, eta, 0};
    double first = 1e300;
    for (std::size_t i = 0; i < llr.size(); ++i) {
      const auto st = cusum_update(s, llr[i]);
      s = st.state;
      if (st.detected) {
        first = static_cast<double>(i);
        break;
      }
    }
    EXPECT_GE(first, prev);
    prev = first;
  }
}

TEST(Glr, SingleHypothesisEqualsCusum) {
  Rng rng(14);
  GlrState g(1, 4.0);
  CusumState c{0.0, 4.0, 0};
  for (int i = 0; i < 2000; ++i) {
    const double l = standard_normal(rng) * 0.7 + 0.05;
    const double llr[1] = {l};
    const auto gs = glr_update(g, llr);
    const auto cs = cusum_update(c, l);
    g = gs.state;
    c = cs.state;
    ASSERT_EQ(gs.detected, cs.detected);
    ASSERT_EQ(g.statistic(), c.statistic);
  }
}

TEST(Glr, DominatesEachFixedHypothesis) {
  Rng rng(15);
  const std::size_t h = 5;
  GlrState g(h, 1e9);
  std::vector<CusumState> each(h, CusumState{0.0, 1e9, 0});
  for (int i = 0; i < 3000; ++i) {
    std::vector<double> l(h);
    for (auto& x : l) x = standard_normal(rng) - 0.1;
    g = glr_update(g, l).state;
    for (std::size_t j = 0; j < h; ++j) {
      each[j] = cusum_update(each[j], l[j]).state;
      ASSERT_GE(g.statistic(), each[j].statistic);
    }
    ASSERT_GE(g.statistic(), 0.0);
  }
}

TEST(Glr, MatchesBruteForceMaxOverChangePoints) {
  Rng rng(16);
  const std::size_t h = 3;
  GlrState g(h, 1e9);
  std::vector<std::vector<double>> hist(h);
  for (int tau = 0; tau < 200; ++tau) {
    std::vector<double> l(h);
    for (std::size_t j = 0; j < h; ++j) {
      l[j] = standard_normal(rng) + 0.2 * (double(j) - 1.0);
      hist[j].push_back(l[j]);
    }
    g = glr_update(g, l).state;
    double brute = 0.0;  // includes the empty window
    for (std::size_t j = 0; j < h; ++j) {
      double tail = 0;
      for (int t = tau; t >= 0; --t) {
        tail += hist[j][static_cast<std::size_t>(t)];
        brute = std::max(brute, tail);
      }
    }
    ASSERT_NEAR(g.statistic(), brute, 1e-9);
  }
}

TEST(Glr, LikelihoodsNormalizedWithNominalFirst) {
  const std::vector<double> stats{0.0, 2.0, 1.0};
  const auto p = normalized_likelihoods(stats);
  ASSERT_EQ(p.size(), 4u);
  double s = 0;
  for (double x : p) s += x;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_NEAR(p[2] / p[0], std::exp(2.0), 1e-12);
  EXPECT_NEAR(p[1], p[0], 1e-15);
}

TEST(Glr, EmptySetRejected) {
  EXPECT_THROW(GlrState(0, 5.0), ConfigError);
  GlrState g;
  const std::vector<double> l;
  EXPECT_THROW(glr_update(g, l), ConfigError);
}
