#pragma once

// Surveillance scenario data: regions, travel times, processing-time laws,
// observation densities and anomaly schedules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "sqd/errors.hpp"
#include "sqd/random.hpp"

namespace sqd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Processing times

/// Law of the time a vehicle spends collecting one observation at a region.
class ProcessingDistribution {
 public:
  enum class Kind { deterministic, exponential, half_normal };

  static ProcessingDistribution deterministic(double value) {
    detail::require(std::isfinite(value) && value > 0.0, "deterministic processing time must be > 0");
    return ProcessingDistribution(Kind::deterministic, value);
  }
  static ProcessingDistribution exponential(double mean) {
    detail::require(std::isfinite(mean) && mean > 0.0, "exponential processing mean must be > 0");
    return ProcessingDistribution(Kind::exponential, mean);
  }
  /// |X| with X ~ N(0, scale^2).
  static ProcessingDistribution half_normal(double scale) {
    detail::require(std::isfinite(scale) && scale > 0.0, "half-normal processing scale must be > 0");
    return ProcessingDistribution(Kind::half_normal, scale);
  }

  Kind kind() const { return kind_; }
  double parameter() const { return param_; }

  double mean() const {
    switch (kind_) {
      case Kind::deterministic:
      case Kind::exponential:
        return param_;
      case Kind::half_normal:
        return param_ * std::sqrt(2.0 / std::numbers::pi);
    }
    return param_;
  }

  /// P(T > t).
  double survival(double t) const {
    if (t < 0.0) return 1.0;
    switch (kind_) {
      case Kind::deterministic:
        return t < param_ ? 1.0 : 0.0;
      case Kind::exponential:
        return std::exp(-t / param_);
      case Kind::half_normal:
        return std::erfc(t / (param_ * std::numbers::sqrt2));
    }
    return 0.0;
  }

  double sample(Rng& rng) const {
    switch (kind_) {
      case Kind::deterministic:
        return param_;
      case Kind::exponential: {
        double t = 0.0;
        while (t <= 0.0) t = -param_ * std::log1p(-uniform01(rng));
        return t;
      }
      case Kind::half_normal: {
        double t = 0.0;
        while (t <= 0.0) t = std::abs(param_ * standard_normal(rng));
        return t;
      }
    }
    return param_;
  }

  friend bool operator==(const ProcessingDistribution&, const ProcessingDistribution&) = default;

 private:
  ProcessingDistribution(Kind k, double p) : kind_(k), param_(p) {}
  Kind kind_;
  double param_;
};

inline std::string to_string(ProcessingDistribution::Kind k) {
  switch (k) {
    case ProcessingDistribution::Kind::deterministic:
      return "deterministic";
    case ProcessingDistribution::Kind::exponential:
      return "exponential";
    case ProcessingDistribution::Kind::half_normal:
      return "half_normal";
  }
  return "unknown";
}

/// A value with an attached numerical error estimate (zero for closed forms).
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// E[min of independent draws], one draw from each listed law.
inline Estimate expected_minimum(std::span<const ProcessingDistribution> laws) {
  detail::require(!laws.empty(), "expected_minimum needs at least one law");
  double upper = std::numeric_limits<double>::infinity();
  double rate = 0.0;
  bool any_half_normal = false;
  for (const auto& law : laws) {
    switch (law.kind()) {
      case ProcessingDistribution::Kind::deterministic:
        upper = std::min(upper, law.parameter());
        break;
      case ProcessingDistribution::Kind::exponential:
        rate += 1.0 / law.parameter();
        break;
      case ProcessingDistribution::Kind::half_normal:
        any_half_normal = true;
        break;
    }
  }
  if (!any_half_normal) {
    // E[min] = integral of exp(-rate t) over [0, upper).
    if (rate == 0.0) return {upper, 0.0};
    if (std::isinf(upper)) return {1.0 / rate, 0.0};
    return {-std::expm1(-rate * upper) / rate, 0.0};
  }
  auto integrand = [&](double t) {
    double s = 1.0;
    for (const auto& law : laws) s *= law.survival(t);
    return s;
  };
  double err = 0.0;
  double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, upper, 15, 1e-12,
                                                                              &err);
  return {value, err * value};
}

// ---------------------------------------------------------------------------
// Observation densities

/// Multivariate (or univariate, dimension 1) Gaussian density with a cached
/// Cholesky factor; all evaluation happens in log space.
class Gaussian {
 public:
  Gaussian(Vector mean, Matrix covariance) : mean_(std::move(mean)), cov_(std::move(covariance)) {
    detail::require(mean_.size() > 0, "Gaussian needs dimension >= 1");
    detail::require(cov_.rows() == mean_.size() && cov_.cols() == mean_.size(),
                    "Gaussian covariance shape does not match mean");
    detail::require(mean_.allFinite() && cov_.allFinite(), "Gaussian parameters must be finite");
    detail::require((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + cov_.cwiseAbs().maxCoeff()),
                    "Gaussian covariance must be symmetric");
    llt_.compute(cov_);
    detail::require(llt_.info() == Eigen::Success, "Gaussian covariance must be positive definite");
    const Matrix l = llt_.matrixL();
    log_det_ = 2.0 * l.diagonal().array().log().sum();
  }

  static Gaussian univariate(double mean, double variance) {
    detail::require(variance > 0.0, "Gaussian variance must be > 0");
    return Gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, variance));
  }

  Eigen::Index dimension() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }
  double log_determinant() const { return log_det_; }
  const Eigen::LLT<Matrix>& cholesky() const { return llt_; }

  double log_pdf(const Vector& y) const {
    const Vector z = llt_.matrixL().solve(y - mean_);
    return -0.5 * (z.squaredNorm() + log_det_ + static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi));
  }

  Vector sample(Rng& rng) const {
    Vector z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
    return mean_ + llt_.matrixL() * z;
  }

  bool operator==(const Gaussian& o) const { return mean_ == o.mean_ && cov_ == o.cov_; }

 private:
  Vector mean_;
  Matrix cov_;
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

/// D(f1, f0) = E_{f1}[log f1/f0] for Gaussians, closed form.
inline double kl_divergence(const Gaussian& f1, const Gaussian& f0) {
  detail::require(f1.dimension() == f0.dimension(), "kl_divergence: densities of different dimension");
  const auto k = static_cast<double>(f1.dimension());
  const Matrix& l0 = f0.cholesky().matrixL();
  // tr(S0^-1 S1) = ||L0^-1 L1||_F^2
  const Matrix l1 = f1.cholesky().matrixL();
  const Matrix a = l0.triangularView<Eigen::Lower>().solve(l1);
  const Vector z = l0.triangularView<Eigen::Lower>().solve(f0.mean() - f1.mean());
  const double d = 0.5 * (a.squaredNorm() + z.squaredNorm() - k + f0.log_determinant() - f1.log_determinant());
  return std::max(0.0, d);
}

/// KL divergence of two univariate Gaussians by adaptive Gauss-Kronrod
/// quadrature of f1 log(f1/f0); independent of the closed form above.
inline double kl_divergence_quadrature(const Gaussian& f1, const Gaussian& f0, double rel_tol = 1e-10) {
  detail::require(f1.dimension() == 1 && f0.dimension() == 1, "quadrature KL supports univariate densities only");
  const Vector point = Vector::Zero(1);
  auto integrand = [&](double x) {
    Vector y = point;
    y[0] = x;
    const double l1 = f1.log_pdf(y);
    const double p1 = std::exp(l1);
    if (p1 == 0.0) return 0.0;
    return p1 * (l1 - f0.log_pdf(y));
  };
  const double inf = std::numeric_limits<double>::infinity();
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, -inf, inf, 20, rel_tol);
}

/// Densities at one region: nominal f0 and a finite family of anomalous
/// densities. `true_hypothesis` selects the density that generates anomalous
/// data and the one a plain CUSUM test uses.
class RegionDensities {
 public:
  RegionDensities(Gaussian nominal, std::vector<Gaussian> hypotheses, std::size_t true_hypothesis = 0)
      : nominal_(std::move(nominal)), hypotheses_(std::move(hypotheses)), true_(true_hypothesis) {
    detail::require(!hypotheses_.empty(), "anomalous hypothesis set must be non-empty");
    detail::require(true_ < hypotheses_.size(), "true hypothesis index out of range");
    divergences_.reserve(hypotheses_.size());
    for (const auto& h : hypotheses_) {
      const double d = kl_divergence(h, nominal_);
      detail::require(std::isfinite(d) && d > 0.0, "anomalous density must differ from nominal (D > 0)");
      divergences_.push_back(d);
    }
    divergence_ = *std::min_element(divergences_.begin(), divergences_.end());
    reverse_divergence_ = kl_divergence(nominal_, hypotheses_[true_]);
  }

  static RegionDensities gaussian_shift(double nominal_mean, double anomalous_mean, double variance) {
    return RegionDensities(Gaussian::univariate(nominal_mean, variance),
                           {Gaussian::univariate(anomalous_mean, variance)});
  }

  const Gaussian& nominal() const { return nominal_; }
  const std::vector<Gaussian>& hypotheses() const { return hypotheses_; }
  std::size_t true_hypothesis() const { return true_; }
  Eigen::Index dimension() const { return nominal_.dimension(); }

  /// D_k: minimum divergence over the anomalous family (the family's only member for CUSUM).
  double divergence() const { return divergence_; }
  const std::vector<double>& hypothesis_divergences() const { return divergences_; }
  /// D(f0, f1) for the generating anomalous density; drives the false-alarm approximation.
  double reverse_divergence() const { return reverse_divergence_; }

  double log_likelihood_ratio(const Vector& y) const {
    return hypotheses_[true_].log_pdf(y) - nominal_.log_pdf(y);
  }
  void hypothesis_log_likelihood_ratios(const Vector& y, std::vector<double>& out) const {
    out.resize(hypotheses_.size());
    const double l0 = nominal_.log_pdf(y);
    for (std::size_t i = 0; i < hypotheses_.size(); ++i) out[i] = hypotheses_[i].log_pdf(y) - l0;
  }
  Vector sample(bool anomalous, Rng& rng) const {
    return anomalous ? hypotheses_[true_].sample(rng) : nominal_.sample(rng);
  }

  bool operator==(const RegionDensities& o) const {
    return nominal_ == o.nominal_ && hypotheses_ == o.hypotheses_ && true_ == o.true_;
  }

 private:
  Gaussian nominal_;
  std::vector<Gaussian> hypotheses_;
  std::size_t true_;
  std::vector<double> divergences_;
  double divergence_ = 0.0;
  double reverse_divergence_ = 0.0;
};

class ObservationModel {
 public:
  ObservationModel() = default;
  explicit ObservationModel(std::vector<RegionDensities> regions) : regions_(std::move(regions)) {
    detail::require(!regions_.empty(), "observation model needs at least one region");
  }

  std::size_t size() const { return regions_.size(); }
  const RegionDensities& region(std::size_t k) const { return regions_.at(k); }
  const std::vector<RegionDensities>& regions() const { return regions_; }

  std::vector<double> divergences() const {
    std::vector<double> d;
    d.reserve(regions_.size());
    for (const auto& r : regions_) d.push_back(r.divergence());
    return d;
  }

  bool operator==(const ObservationModel&) const = default;

 private:
  std::vector<RegionDensities> regions_;
};

// ---------------------------------------------------------------------------
// Environment

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

class Environment {
 public:
  Environment() = default;
  Environment(Matrix travel, std::vector<ProcessingDistribution> processing, std::vector<double> priors)
      : travel_(std::move(travel)), processing_(std::move(processing)), priors_(std::move(priors)) {
    const auto n = processing_.size();
    detail::require(n >= 1, "environment needs at least one region");
    detail::require(priors_.size() == n, "priors length must equal region count");
    detail::require(static_cast<std::size_t>(travel_.rows()) == n && static_cast<std::size_t>(travel_.cols()) == n,
                    "travel matrix must be n x n");
    for (std::size_t i = 0; i < n; ++i) {
      detail::require(travel_(i, i) == 0.0, "travel matrix diagonal must be zero");
      for (std::size_t j = 0; j < n; ++j)
        detail::require(std::isfinite(travel_(i, j)) && travel_(i, j) >= 0.0, "travel times must be finite and >= 0");
      detail::require(priors_[i] > 0.0 && priors_[i] < 1.0, "priors must lie strictly inside (0,1)");
    }
  }

  /// Euclidean travel times between coordinates at constant speed.
  static Environment from_coordinates(std::span<const Point2> coordinates, std::vector<ProcessingDistribution> processing,
                                      std::vector<double> priors, double speed = 1.0) {
    detail::require(speed > 0.0, "speed must be > 0");
    const auto n = coordinates.size();
    Matrix d = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) d(i, j) = std::hypot(coordinates[i].x - coordinates[j].x, coordinates[i].y - coordinates[j].y) / speed;
    return Environment(std::move(d), std::move(processing), std::move(priors));
  }

  std::size_t size() const { return processing_.size(); }
  const Matrix& travel() const { return travel_; }
  double travel(std::size_t i, std::size_t j) const { return travel_(i, j); }
  const std::vector<ProcessingDistribution>& processing() const { return processing_; }
  const ProcessingDistribution& processing(std::size_t k) const { return processing_.at(k); }
  const std::vector<double>& priors() const { return priors_; }

  std::vector<double> mean_processing() const {
    std::vector<double> t;
    for (const auto& p : processing_) t.push_back(p.mean());
    return t;
  }
  double max_mean_processing() const {
    double m = 0.0;
    for (const auto& p : processing_) m = std::max(m, p.mean());
    return m;
  }
  double min_mean_processing() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& p : processing_) m = std::min(m, p.mean());
    return m;
  }
  double max_travel() const { return travel_.maxCoeff(); }

  /// Restriction to a subset of regions (in the given order).
  Environment restricted(std::span<const std::size_t> subset) const {
    const auto s = subset.size();
    Matrix d(s, s);
    std::vector<ProcessingDistribution> proc;
    std::vector<double> pri;
    for (std::size_t a = 0; a < s; ++a) {
      for (std::size_t b = 0; b < s; ++b) d(a, b) = travel_(subset[a], subset[b]);
      proc.push_back(processing_.at(subset[a]));
      pri.push_back(priors_.at(subset[a]));
    }
    return Environment(std::move(d), std::move(proc), std::move(pri));
  }

  bool operator==(const Environment& o) const {
    return travel_ == o.travel_ && processing_ == o.processing_ && priors_ == o.priors_;
  }

 private:
  Matrix travel_;
  std::vector<ProcessingDistribution> processing_;
  std::vector<double> priors_;
};

/// Normalized prior weights w_k = pi_k / sum_j pi_j.
struct Weights {
  std::vector<double> w;
  std::size_t size() const { return w.size(); }
  double operator[](std::size_t k) const { return w[k]; }
};

inline Weights weights_from_priors(std::span<const double> priors) {
  detail::require(!priors.empty(), "weights_from_priors: empty prior vector");
  double total = 0.0;
  for (double p : priors) {
    detail::require(p > 0.0 && p < 1.0, "prior outside (0,1)");
    total += p;
  }
  Weights out;
  out.w.reserve(priors.size());
  for (double p : priors) out.w.push_back(p / total);
  return out;
}

/// Expected minimum of m i.i.d. processing times at one region.
inline Estimate expected_min_processing(const ProcessingDistribution& law, std::size_t m) {
  detail::require(m >= 1, "expected_min_processing: m must be >= 1");
  switch (law.kind()) {
    case ProcessingDistribution::Kind::deterministic:
      return {law.parameter(), 0.0};
    case ProcessingDistribution::Kind::exponential:
      return {law.parameter() / static_cast<double>(m), 0.0};
    case ProcessingDistribution::Kind::half_normal:
      break;
  }
  if (m == 1) return {law.mean(), 0.0};
  const std::vector<ProcessingDistribution> copies(m, law);
  return expected_minimum(copies);
}

inline Estimate expected_min_processing(const Environment& env, std::size_t k, std::size_t m) {
  return expected_min_processing(env.processing(k), m);
}

/// Number of size-m multisets drawn from n regions, saturating at `cap + 1`.
inline std::size_t multiset_count(std::size_t n, std::size_t m, std::size_t cap) {
  // C(n + m - 1, m) evaluated incrementally.
  long double c = 1.0L;
  for (std::size_t i = 1; i <= m; ++i) {
    c = c * static_cast<long double>(n - 1 + i) / static_cast<long double>(i);
    if (c > static_cast<long double>(cap)) return cap + 1;
  }
  return static_cast<std::size_t>(c + 0.5L);
}

/// Minimum over all m-multisets of regions of the expected minimum of their
/// processing times.
inline Estimate t_one(const Environment& env, std::size_t m, std::size_t budget = 1'000'000) {
  detail::require(m >= 1, "t_one: m must be >= 1");
  const auto n = env.size();
  if (multiset_count(n, m, budget) > budget)
    throw BudgetExceeded("t_one: multiset enumeration exceeds budget of " + std::to_string(budget));

  // Identical laws collapse: enumerate multisets of distinct laws.
  std::vector<ProcessingDistribution> laws;
  for (const auto& p : env.processing())
    if (std::find(laws.begin(), laws.end(), p) == laws.end()) laws.push_back(p);

  Estimate best{std::numeric_limits<double>::infinity(), 0.0};
  std::vector<std::size_t> pick(m, 0);
  std::vector<ProcessingDistribution> chosen;
  chosen.reserve(m);
  while (true) {
    chosen.clear();
    for (auto i : pick) chosen.push_back(laws[i]);
    const Estimate e = expected_minimum(chosen);
    if (e.value < best.value) best = e;
    // next non-decreasing index sequence
    std::size_t pos = m;
    while (pos > 0 && pick[pos - 1] == laws.size() - 1) --pos;
    if (pos == 0) break;
    ++pick[pos - 1];
    for (std::size_t j = pos; j < m; ++j) pick[j] = pick[pos - 1];
  }
  return best;
}

// ---------------------------------------------------------------------------
// Anomaly schedule

struct AnomalySchedule {
  /// Appearance time per region; nullopt = no anomaly ever.
  std::vector<std::optional<double>> appearance;
  /// Detected anomalies are removed (statistic is reset either way).
  bool remove_on_detection = true;

  static AnomalySchedule none(std::size_t n) { return AnomalySchedule{std::vector<std::optional<double>>(n), true}; }

  void validate(std::size_t n) const {
    detail::require(appearance.size() == n, "anomaly schedule length must equal region count");
    for (const auto& a : appearance)
      if (a) detail::require(std::isfinite(*a) && *a >= 0.0, "anomaly appearance times must be >= 0");
  }
  bool any() const {
    return std::any_of(appearance.begin(), appearance.end(), [](const auto& a) { return a.has_value(); });
  }
  double latest() const {
    double t = 0.0;
    for (const auto& a : appearance)
      if (a) t = std::max(t, *a);
    return t;
  }
  bool operator==(const AnomalySchedule&) const = default;
};

}  // namespace sqd
