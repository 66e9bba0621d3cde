#pragma once

// Sequential change detectors: single CUSUM, the region-indexed CUSUM bank,
// and the finite-family GLR statistic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sqd/envmodel.hpp"
#include "sqd/errors.hpp"

namespace sqd {

/// e^{-eta} + eta - 1, the detection-side numerator of Wald's approximation.
inline double wald_eta_bar(double eta) {
  detail::require(eta > 0.0 && std::isfinite(eta), "threshold must be > 0");
  return std::expm1(-eta) + eta;
}

/// Wald's approximation of the mean number of observations between false
/// alarms, (e^eta - eta - 1) / D(f0, f1).
inline double wald_false_alarm_mean(double eta, double reverse_divergence) {
  detail::require(eta > 0.0 && std::isfinite(eta), "threshold must be > 0");
  detail::require(reverse_divergence > 0.0, "divergence must be > 0");
  return (std::expm1(eta) - eta) / reverse_divergence;
}

struct CusumState {
  double statistic = 0.0;
  double threshold = 5.0;
  std::uint64_t iteration = 0;
};

struct CusumStep {
  CusumState state;
  bool detected = false;
  /// Statistic value at the crossing (before the reset); 0 if no detection.
  double crossing = 0.0;
};

inline CusumStep cusum_update(CusumState state, double log_likelihood_ratio) {
  if (!std::isfinite(log_likelihood_ratio))
    throw ConfigError("cusum_update: non-finite log-likelihood ratio");
  state.statistic = std::max(0.0, state.statistic + log_likelihood_ratio);
  ++state.iteration;
  CusumStep step{state, false, 0.0};
  if (state.statistic > state.threshold) {
    step.detected = true;
    step.crossing = state.statistic;
    step.state.statistic = 0.0;
  }
  return step;
}

struct Detection {
  std::size_t region = 0;
  double time = 0.0;
  double statistic = 0.0;
};

/// One CUSUM test per region, sharing a uniform threshold. Only the observed
/// region's statistic changes on an update.
class DetectorBank {
 public:
  DetectorBank(std::size_t n, double threshold) : states_(n, CusumState{0.0, threshold, 0}) {
    detail::require(n >= 1, "detector bank needs at least one region");
    detail::require(threshold > 0.0, "threshold must be > 0");
  }

  std::size_t size() const { return states_.size(); }
  double threshold() const { return states_.front().threshold; }
  const CusumState& state(std::size_t k) const { return states_.at(k); }
  double statistic(std::size_t k) const { return states_.at(k).statistic; }
  std::vector<double> statistics() const {
    std::vector<double> s;
    s.reserve(states_.size());
    for (const auto& st : states_) s.push_back(st.statistic);
    return s;
  }
  const std::vector<Detection>& log() const { return log_; }

  std::optional<Detection> update(std::size_t k, double log_likelihood_ratio, double time) {
    if (k >= states_.size()) throw ConfigError("region index out of range");
    const CusumStep step = cusum_update(states_[k], log_likelihood_ratio);
    states_[k] = step.state;
    if (!step.detected) return std::nullopt;
    log_.push_back({k, time, step.crossing});
    return log_.back();
  }

 private:
  std::vector<CusumState> states_;
  std::vector<Detection> log_;
};

/// Receive observation `y` for region k and update that region's CUSUM test.
inline std::optional<Detection> ensemble_update(DetectorBank& bank, std::size_t k, const Vector& y,
                                                const ObservationModel& model, double time = 0.0) {
  if (k >= bank.size() || k >= model.size()) throw ConfigError("region index out of range");
  return bank.update(k, model.region(k).log_likelihood_ratio(y), time);
}

// ---------------------------------------------------------------------------
// GLR over a finite hypothesis set.
//
// max_t sup_theta sum_{i=t}^{tau} llr_theta(y_i) = max_theta max_t sum_{i=t}^{tau} llr_theta(y_i),
// and the inner max over change points is exactly the CUSUM recursion for
// that theta, so one CUSUM per hypothesis gives the statistic in O(|Theta|).

struct GlrState {
  std::vector<double> per_hypothesis;
  double threshold = 5.0;
  std::uint64_t iteration = 0;

  GlrState() = default;
  GlrState(std::size_t hypotheses, double eta) : per_hypothesis(hypotheses, 0.0), threshold(eta) {
    detail::require(hypotheses >= 1, "GLR needs a non-empty hypothesis set");
    detail::require(eta > 0.0, "threshold must be > 0");
  }
  double statistic() const { return *std::max_element(per_hypothesis.begin(), per_hypothesis.end()); }
};

struct GlrStep {
  GlrState state;
  bool detected = false;
  double crossing = 0.0;
  /// Normalized likelihoods; index 0 is the nominal density, index i+1 is hypothesis i.
  std::vector<double> likelihoods;
  /// argmax over `likelihoods` (0 = nominal).
  std::size_t most_likely = 0;
};

/// Normalized likelihoods over {nominal} union Theta from per-hypothesis log statistics.
inline std::vector<double> normalized_likelihoods(std::span<const double> log_statistics) {
  std::vector<double> out(log_statistics.size() + 1);
  double top = 0.0;
  for (double s : log_statistics) top = std::max(top, s);
  double total = out[0] = std::exp(-top);
  for (std::size_t i = 0; i < log_statistics.size(); ++i) total += out[i + 1] = std::exp(log_statistics[i] - top);
  for (auto& x : out) x /= total;
  return out;
}

inline GlrStep glr_update(GlrState state, std::span<const double> hypothesis_llrs) {
  if (state.per_hypothesis.empty()) throw ConfigError("glr_update: empty hypothesis set");
  if (hypothesis_llrs.size() != state.per_hypothesis.size())
    throw ConfigError("glr_update: likelihood-ratio vector size mismatch");
  for (std::size_t i = 0; i < hypothesis_llrs.size(); ++i) {
    if (!std::isfinite(hypothesis_llrs[i])) throw ConfigError("glr_update: non-finite log-likelihood ratio");
    state.per_hypothesis[i] = std::max(0.0, state.per_hypothesis[i] + hypothesis_llrs[i]);
  }
  ++state.iteration;
  GlrStep step;
  step.likelihoods = normalized_likelihoods(state.per_hypothesis);
  step.most_likely = static_cast<std::size_t>(
      std::max_element(step.likelihoods.begin(), step.likelihoods.end()) - step.likelihoods.begin());
  const double stat = state.statistic();
  step.state = std::move(state);
  if (stat > step.state.threshold) {
    step.detected = true;
    step.crossing = stat;
    std::fill(step.state.per_hypothesis.begin(), step.state.per_hypothesis.end(), 0.0);
  }
  return step;
}

struct GlrDetection {
  Detection detection;
  std::vector<double> likelihoods;
  std::size_t most_likely = 0;
};

/// Per-region GLR tests with a uniform threshold.
class GlrBank {
 public:
  GlrBank(const ObservationModel& model, double threshold) {
    detail::require(threshold > 0.0, "threshold must be > 0");
    for (const auto& r : model.regions()) states_.emplace_back(r.hypotheses().size(), threshold);
  }

  std::size_t size() const { return states_.size(); }
  double statistic(std::size_t k) const { return states_.at(k).statistic(); }
  std::vector<double> statistics() const {
    std::vector<double> s;
    for (const auto& st : states_) s.push_back(st.statistic());
    return s;
  }
  const GlrState& state(std::size_t k) const { return states_.at(k); }
  const std::vector<GlrDetection>& log() const { return log_; }

  std::optional<GlrDetection> update(std::size_t k, std::span<const double> llrs, double time) {
    if (k >= states_.size()) throw ConfigError("region index out of range");
    GlrStep step = glr_update(std::move(states_[k]), llrs);
    states_[k] = std::move(step.state);
    if (!step.detected) return std::nullopt;
    log_.push_back({{k, time, step.crossing}, std::move(step.likelihoods), step.most_likely});
    return log_.back();
  }

 private:
  std::vector<GlrState> states_;
  std::vector<GlrDetection> log_;
};

}  // namespace sqd
