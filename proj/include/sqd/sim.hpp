#pragma once

// Event-driven Monte-Carlo simulation of vehicles collecting observations
// for a bank of per-region change detectors.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sqd/analysis.hpp"
#include "sqd/detection.hpp"
#include "sqd/envmodel.hpp"
#include "sqd/policy.hpp"
#include "sqd/random.hpp"

namespace sqd {

/// How one vehicle picks its next region.
struct Routing {
  enum class Kind { stationary, markov, adaptive };
  Kind kind = Kind::stationary;
  /// Served regions (global indices); local indices below refer to this list.
  std::vector<std::size_t> regions;
  /// stationary: local selection probabilities
  std::vector<double> q;
  /// markov: chain over local indices
  std::optional<MarkovRoutingChain> chain;
  /// adaptive: when set, moves follow a Metropolis-Hastings chain on this
  /// local graph targeting the current adaptive vector
  std::optional<RegionGraph> topology;
  /// Random stream id; defaults to the vehicle's position in the config.
  std::optional<std::uint64_t> stream;

  /// Samples i.i.d. from a length-n vector; regions with zero mass are skipped.
  static Routing stationary(std::span<const double> full_q) {
    Routing r;
    r.kind = Kind::stationary;
    for (std::size_t k = 0; k < full_q.size(); ++k)
      if (full_q[k] > 0.0) {
        r.regions.push_back(k);
        r.q.push_back(full_q[k]);
      }
    detail::require(!r.regions.empty(), "stationary routing needs a non-zero entry");
    return r;
  }
  static Routing markov(MarkovRoutingChain chain, std::vector<std::size_t> regions = {}) {
    Routing r;
    r.kind = Kind::markov;
    if (regions.empty()) {
      regions.resize(chain.size());
      for (std::size_t i = 0; i < regions.size(); ++i) regions[i] = i;
    }
    detail::require(regions.size() == chain.size(), "chain size must match served regions");
    r.regions = std::move(regions);
    r.chain = std::move(chain);
    return r;
  }
  static Routing adaptive(std::vector<std::size_t> regions, std::optional<RegionGraph> topology = std::nullopt) {
    Routing r;
    r.kind = Kind::adaptive;
    detail::require(!regions.empty(), "adaptive routing needs at least one region");
    if (topology) detail::require(topology->size() == regions.size(), "topology size must match served regions");
    r.regions = std::move(regions);
    r.topology = std::move(topology);
    return r;
  }
};

/// One routing per vehicle from a multi-vehicle stationary policy.
inline std::vector<Routing> routings_from(const MultiVehiclePolicy& policy) {
  std::vector<Routing> out;
  for (const auto& v : policy.vehicles) out.push_back(Routing::stationary(v.q));
  return out;
}

/// One adaptive routing per subset of a partition.
inline std::vector<Routing> adaptive_routings(const Partition& partition) {
  std::vector<Routing> out;
  for (const auto& s : partition.subsets) out.push_back(Routing::adaptive(s));
  return out;
}

inline std::vector<std::size_t> all_regions(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

enum class DetectorKind { cusum, glr };

struct SimulationConfig {
  Environment env;
  ObservationModel model;
  AnomalySchedule schedule;
  std::vector<Routing> vehicles;
  DetectorKind detector = DetectorKind::cusum;
  double eta = 5.0;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  /// Simulation stops at this time; 0 selects the default horizon.
  double horizon = 0.0;
  unsigned workers = 1;
  bool record_events = false;
};

struct RegionOutcome {
  std::optional<double> appearance;
  bool detected = false;
  bool censored = false;
  double detection_time = std::numeric_limits<double>::quiet_NaN();
  double delay = std::numeric_limits<double>::quiet_NaN();
  /// Iterations (observations at any region) from appearance through detection.
  std::uint64_t observations = 0;
  /// Observations of this region over the same window.
  std::uint64_t region_observations = 0;
  /// GLR only: argmax of the normalized likelihoods at detection (0 = nominal, i = hypothesis i-1).
  std::optional<std::size_t> most_likely;
};

struct FalseAlarm {
  std::size_t region = 0;
  double time = 0.0;
  /// Iterations since the region's statistic was last reset (or since start).
  std::uint64_t iterations = 0;
  std::uint64_t region_observations = 0;
};

struct TrialEvent {
  double time = 0.0;
  std::size_t vehicle = 0;
  std::size_t region = 0;
  double statistic = 0.0;
  bool detected = false;
};

struct TrialRecord {
  std::uint64_t trial = 0;
  std::vector<RegionOutcome> regions;
  std::vector<FalseAlarm> false_alarms;
  std::vector<Detection> detections;
  std::vector<TrialEvent> events;
  std::uint64_t iterations = 0;
  double end_time = 0.0;
  /// Mean total-variation distance between the chain's next-step law and the
  /// adaptive target (adaptive routing on a constrained topology only).
  double mean_chain_mismatch = 0.0;
};

// ---------------------------------------------------------------------------

inline void validate(const SimulationConfig& c) {
  const auto n = c.env.size();
  detail::require(c.model.size() == n, "observation model size must equal region count");
  c.schedule.validate(n);
  detail::require(!c.vehicles.empty(), "at least one vehicle is required");
  detail::require(c.trials >= 1, "trial count must be >= 1");
  detail::require(c.eta > 0.0, "threshold must be > 0");
  for (const auto& v : c.vehicles) {
    detail::require(!v.regions.empty(), "vehicle serves no region");
    for (auto k : v.regions) detail::require(k < n, "routing refers to an unknown region");
    if (v.kind == Routing::Kind::stationary) detail::require(v.q.size() == v.regions.size(), "routing q size mismatch");
    if (v.kind == Routing::Kind::markov) detail::require(v.chain.has_value(), "markov routing without a chain");
  }
  if (c.horizon > 0.0 && c.schedule.any())
    detail::require(c.horizon > c.schedule.latest(), "horizon must exceed the latest appearance time");
}

/// Latest appearance plus ten times the largest per-region delay predicted
/// for the configured routing (stationary vectors use their own q; chains use
/// their target; adaptive vectors use their smallest attainable probability).
inline double default_horizon(const SimulationConfig& c) {
  const double eb = wald_eta_bar(c.eta);
  double worst = 0.0;
  for (const auto& v : c.vehicles) {
    const auto local_env = c.env.restricted(v.regions);
    std::vector<double> q;
    switch (v.kind) {
      case Routing::Kind::stationary:
        q = v.q;
        break;
      case Routing::Kind::markov:
        q = v.chain->target;
        break;
      case Routing::Kind::adaptive: {
        double total = 0.0;
        for (auto k : v.regions) total += std::sqrt(1.0 / c.model.region(k).divergence());
        for (auto k : v.regions) q.push_back(std::sqrt(0.5 / c.model.region(k).divergence()) / total);
        break;
      }
    }
    const double per_iteration = v.kind == Routing::Kind::stationary
                                     ? aggregation_time(q, local_env)
                                     : local_env.max_mean_processing() + local_env.max_travel();
    for (std::size_t i = 0; i < v.regions.size(); ++i)
      worst = std::max(worst, per_iteration * eb / (q[i] * c.model.region(v.regions[i]).divergence()));
  }
  return c.schedule.latest() + 10.0 * std::max(worst, 1.0);
}

namespace detail {

class CusumEngineBank {
 public:
  CusumEngineBank(const ObservationModel& model, double eta) : model_(&model), bank_(model.size(), eta) {}
  double statistic(std::size_t k) const { return bank_.statistic(k); }
  struct Hit {
    Detection detection;
    std::optional<std::size_t> most_likely;
  };
  std::optional<Hit> observe(std::size_t k, const Vector& y, double t) {
    auto d = ensemble_update(bank_, k, y, *model_, t);
    if (!d) return std::nullopt;
    return Hit{*d, std::nullopt};
  }

 private:
  const ObservationModel* model_;
  DetectorBank bank_;
};

class GlrEngineBank {
 public:
  GlrEngineBank(const ObservationModel& model, double eta) : model_(&model), bank_(model, eta) {}
  double statistic(std::size_t k) const { return bank_.statistic(k); }
  using Hit = CusumEngineBank::Hit;
  std::optional<Hit> observe(std::size_t k, const Vector& y, double t) {
    model_->region(k).hypothesis_log_likelihood_ratios(y, scratch_);
    auto d = bank_.update(k, scratch_, t);
    if (!d) return std::nullopt;
    return Hit{d->detection, d->most_likely};
  }

 private:
  const ObservationModel* model_;
  GlrBank bank_;
  std::vector<double> scratch_;
};

struct VehicleState {
  std::size_t local = 0;       // current region (local index)
  double clock = 0.0;          // completion time of the pending observation
  std::size_t pending = 0;     // local index of the pending observation
  Rng rng;
};

template <class Bank>
TrialRecord simulate_trial(const SimulationConfig& c, std::uint64_t trial, double horizon) {
  const auto n = c.env.size();
  Bank bank(c.model, c.eta);
  TrialRecord rec;
  rec.trial = trial;
  rec.regions.resize(n);
  for (std::size_t k = 0; k < n; ++k) rec.regions[k].appearance = c.schedule.appearance[k];

  std::vector<std::vector<double>> divergences(c.vehicles.size());
  for (std::size_t v = 0; v < c.vehicles.size(); ++v)
    for (auto k : c.vehicles[v].regions) divergences[v].push_back(c.model.region(k).divergence());

  std::vector<char> removed(n, 0);
  std::vector<char> started(n, 0);
  std::vector<std::uint64_t> base_iter(n, 0);
  std::vector<std::uint64_t> base_region_obs(n, 0);
  std::vector<std::uint64_t> reset_iter(n, 0);
  std::vector<std::uint64_t> reset_region_obs(n, 0);
  std::vector<std::uint64_t> region_obs(n, 0);
  std::size_t outstanding = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (c.schedule.appearance[k]) ++outstanding;
  const bool run_to_horizon = outstanding == 0;

  double mismatch_total = 0.0;
  std::uint64_t mismatch_count = 0;
  std::vector<double> local_stats;

  // Picks the next local region for vehicle v from its current position.
  auto choose = [&](std::size_t v, VehicleState& s) -> std::size_t {
    const Routing& r = c.vehicles[v];
    switch (r.kind) {
      case Routing::Kind::stationary:
        return sample_index(r.q, s.rng);
      case Routing::Kind::markov:
        return r.chain->next(s.local, s.rng);
      case Routing::Kind::adaptive: {
        local_stats.clear();
        for (auto k : r.regions) local_stats.push_back(bank.statistic(k));
        const auto sel = adaptive_step(local_stats, divergences[v]);
        if (!r.topology) return sample_index(sel, s.rng);
        const auto chain = metropolis_hastings_chain(*r.topology, sel);
        double tv = 0.0;
        for (std::size_t j = 0; j < sel.size(); ++j)
          tv += std::abs(chain.transition(static_cast<Eigen::Index>(s.local), static_cast<Eigen::Index>(j)) - sel[j]);
        mismatch_total += 0.5 * tv;
        ++mismatch_count;
        return chain.next(s.local, s.rng);
      }
    }
    return 0;
  };

  auto schedule_next = [&](std::size_t v, VehicleState& s) {
    const Routing& r = c.vehicles[v];
    const std::size_t next = choose(v, s);
    const std::size_t from = r.regions[s.local];
    const std::size_t to = r.regions[next];
    s.clock += c.env.travel(from, to) + c.env.processing(to).sample(s.rng);
    s.pending = next;
  };

  std::vector<VehicleState> vehicles(c.vehicles.size());
  for (std::size_t v = 0; v < c.vehicles.size(); ++v) {
    const Routing& r = c.vehicles[v];
    auto& s = vehicles[v];
    s.rng = make_stream(c.seed, trial, r.stream.value_or(v));
    // Start position drawn from the routing's long-run law.
    switch (r.kind) {
      case Routing::Kind::stationary:
        s.local = sample_index(r.q, s.rng);
        break;
      case Routing::Kind::markov:
        s.local = sample_index(r.chain->target, s.rng);
        break;
      case Routing::Kind::adaptive:
        s.local = sample_index(adaptive_step(std::vector<double>(r.regions.size(), 0.0), divergences[v]), s.rng);
        break;
    }
    s.clock = 0.0;
    schedule_next(v, s);
  }

  std::uint64_t iter = 0;
  while (true) {
    std::size_t v = 0;
    for (std::size_t u = 1; u < vehicles.size(); ++u)
      if (vehicles[u].clock < vehicles[v].clock) v = u;
    auto& s = vehicles[v];
    const double t = s.clock;
    if (t > horizon) break;
    const std::size_t k = c.vehicles[v].regions[s.pending];

    // Windows open at the first observation completing at or after appearance.
    for (std::size_t j = 0; j < n; ++j)
      if (!started[j] && c.schedule.appearance[j] && *c.schedule.appearance[j] <= t) {
        started[j] = 1;
        base_iter[j] = iter;
        base_region_obs[j] = region_obs[j];
      }

    const bool anomalous = started[k] && !removed[k];
    const Vector y = c.model.region(k).sample(anomalous, s.rng);
    ++iter;
    ++region_obs[k];
    const auto hit = bank.observe(k, y, t);
    if (c.record_events) rec.events.push_back({t, v, k, hit ? hit->detection.statistic : bank.statistic(k), hit.has_value()});
    if (hit) {
      rec.detections.push_back(hit->detection);
      auto& out = rec.regions[k];
      if (anomalous && !out.detected) {
        out.detected = true;
        out.detection_time = t;
        out.delay = t - *c.schedule.appearance[k];
        out.observations = iter - base_iter[k];
        out.region_observations = region_obs[k] - base_region_obs[k];
        out.most_likely = hit->most_likely;
        if (c.schedule.remove_on_detection) removed[k] = 1;
        --outstanding;
      } else if (!anomalous) {
        rec.false_alarms.push_back({k, t, iter - reset_iter[k], region_obs[k] - reset_region_obs[k]});
      }
      reset_iter[k] = iter;
      reset_region_obs[k] = region_obs[k];
    }
    s.local = s.pending;
    rec.end_time = t;
    if (!run_to_horizon && outstanding == 0) break;
    schedule_next(v, s);
  }
  rec.iterations = iter;
  for (auto& out : rec.regions)
    if (out.appearance && !out.detected) out.censored = true;
  if (mismatch_count > 0) rec.mean_chain_mismatch = mismatch_total / static_cast<double>(mismatch_count);
  return rec;
}

}  // namespace detail

/// One trial; deterministic in (config, trial index).
inline TrialRecord run_trial(const SimulationConfig& config, std::uint64_t trial) {
  validate(config);
  const double horizon = config.horizon > 0.0 ? config.horizon : default_horizon(config);
  if (config.detector == DetectorKind::glr) return detail::simulate_trial<detail::GlrEngineBank>(config, trial, horizon);
  return detail::simulate_trial<detail::CusumEngineBank>(config, trial, horizon);
}

// ---------------------------------------------------------------------------
// Ensembles

struct MeanStat {
  std::size_t count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std_error = std::numeric_limits<double>::quiet_NaN();
};

inline MeanStat mean_stat(std::span<const double> xs) {
  MeanStat m;
  m.count = xs.size();
  if (xs.empty()) return m;
  double s = 0.0;
  for (double x : xs) s += x;
  m.mean = s / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  } else {
    m.std_error = 0.0;
  }
  return m;
}

struct RegionSummary {
  MeanStat delay;
  MeanStat observations;
  MeanStat region_observations;
  std::size_t censored = 0;
  std::size_t false_alarms = 0;
  /// Mean iterations between false alarms (from reset to alarm).
  MeanStat false_alarm_iterations;
  /// GLR: fraction of detections whose argmax matched the generating hypothesis.
  double hypothesis_match = std::numeric_limits<double>::quiet_NaN();
};

struct EnsembleReport {
  std::size_t trials = 0;
  std::vector<RegionSummary> regions;
  /// Weighted mean delay over scheduled regions (weights from priors,
  /// renormalized over regions that have an anomaly), per fully uncensored trial.
  MeanStat average_delay;
  /// sum_k w_k mean_k over scheduled regions.
  double weighted_mean_delay = std::numeric_limits<double>::quiet_NaN();
  std::size_t censored_trials = 0;
};

struct EnsembleResult {
  std::vector<TrialRecord> trials;
  EnsembleReport report;
};

inline EnsembleReport summarize(const SimulationConfig& config, std::span<const TrialRecord> trials) {
  const auto n = config.env.size();
  EnsembleReport rep;
  rep.trials = trials.size();
  rep.regions.resize(n);
  const auto w = weights_from_priors(config.env.priors());
  double scheduled_weight = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (config.schedule.appearance[k]) scheduled_weight += w[k];

  std::vector<double> per_trial_avg;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> delays, obs, robs, fa;
    std::size_t matches = 0;
    std::size_t labelled = 0;
    auto& s = rep.regions[k];
    const std::size_t truth = config.model.region(k).true_hypothesis() + 1;
    for (const auto& t : trials) {
      const auto& o = t.regions[k];
      if (o.detected) {
        delays.push_back(o.delay);
        obs.push_back(static_cast<double>(o.observations));
        robs.push_back(static_cast<double>(o.region_observations));
        if (o.most_likely) {
          ++labelled;
          if (*o.most_likely == truth) ++matches;
        }
      }
      if (o.censored) ++s.censored;
      for (const auto& f : t.false_alarms)
        if (f.region == k) {
          ++s.false_alarms;
          fa.push_back(static_cast<double>(f.iterations));
        }
    }
    s.delay = mean_stat(delays);
    s.observations = mean_stat(obs);
    s.region_observations = mean_stat(robs);
    s.false_alarm_iterations = mean_stat(fa);
    if (labelled > 0) s.hypothesis_match = static_cast<double>(matches) / static_cast<double>(labelled);
  }
  if (scheduled_weight > 0.0) {
    rep.weighted_mean_delay = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (config.schedule.appearance[k]) rep.weighted_mean_delay += w[k] / scheduled_weight * rep.regions[k].delay.mean;
    for (const auto& t : trials) {
      bool complete = true;
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!config.schedule.appearance[k]) continue;
        if (!t.regions[k].detected) {
          complete = false;
          break;
        }
        acc += w[k] / scheduled_weight * t.regions[k].delay;
      }
      if (complete)
        per_trial_avg.push_back(acc);
      else
        ++rep.censored_trials;
    }
  }
  rep.average_delay = mean_stat(per_trial_avg);
  return rep;
}

/// Runs config.trials independent trials on config.workers threads. Output
/// depends only on (config, seed), never on the worker count.
inline EnsembleResult run_ensemble(const SimulationConfig& config) {
  validate(config);
  const double horizon = config.horizon > 0.0 ? config.horizon : default_horizon(config);
  EnsembleResult result;
  result.trials.resize(config.trials);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < config.trials; i = next++) {
      result.trials[i] = config.detector == DetectorKind::glr
                             ? detail::simulate_trial<detail::GlrEngineBank>(config, i, horizon)
                             : detail::simulate_trial<detail::CusumEngineBank>(config, i, horizon);
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(config.workers, static_cast<unsigned>(config.trials)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  result.report = summarize(config, result.trials);
  return result;
}

/// Multi-vehicle ensemble; vehicles share one detector bank and are ordered
/// by completion time (ties by vehicle index).
inline EnsembleResult run_multi_vehicle(const SimulationConfig& config) {
  detail::require(config.vehicles.size() >= 1, "run_multi_vehicle needs vehicles");
  return run_ensemble(config);
}

/// Single vehicle moving along a Markov chain over all regions.
inline EnsembleResult run_markov_routing(SimulationConfig config, const MarkovRoutingChain& chain) {
  detail::require(chain.size() == config.env.size(), "chain size must equal region count");
  config.vehicles = {Routing::markov(chain)};
  return run_ensemble(config);
}

}  // namespace sqd
