// sqd: design, analyze and simulate spatial quickest-detection scenarios.
//
//   sqd design         --scenario FILE [--vehicles m] [--topology all|line|ring|FILE] [--out FILE]
//   sqd analyze        --scenario FILE [--policy efficient|uniform|optimal|FILE] [--vehicles m] [--out FILE]
//   sqd simulate       --scenario FILE [--policy ...|adaptive] [--topology ...] [--vehicles m]
//                      [--eta x] [--trials N] [--seed S] [--workers W] [--out FILE.csv|FILE.json]
//   sqd scenario-check [--n1 N] [--mu1 x] [--nu1 x] [--seed S] [--out FILE]
//
// Exit codes: 0 success, 2 configuration error, 3 convergence failure,
// 4 budget exceeded.

#include <chrono>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sqd/sqd.hpp"

namespace {

using sqd::Json;

constexpr const char* kVersion = "0.1.0";
constexpr std::uint64_t kDefaultSeed = 20120101;

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

Json manifest(const std::string& subcommand, Json config, std::optional<std::uint64_t> seed, const Clock& clock) {
  Json m = {{"subcommand", subcommand}, {"config", std::move(config)}, {"version", kVersion},
            {"runtime_seconds", clock.seconds()}};
  m["seed"] = seed ? Json(*seed) : Json(nullptr);
  return m;
}

void emit(const Json& doc, const std::string& out) {
  const auto text = doc.dump(2) + "\n";
  if (out.empty() || out == "-")
    std::cout << text;
  else
    sqd::write_text_file(out, text);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Json one_based(const std::vector<std::size_t>& idx) {
  Json a = Json::array();
  for (auto k : idx) a.push_back(k + 1);
  return a;
}

Json partition_json(const sqd::Partition& p) {
  Json a = Json::array();
  for (const auto& s : p.subsets) a.push_back(one_based(s));
  return a;
}

Json descent_json(const sqd::DescentResult& d) {
  return {{"converged", d.converged},         {"iterations", d.iterations}, {"gradient_norm", d.gradient_norm},
          {"objective", d.value},             {"stop_reason", d.stop_reason},
          {"step_rule", "Barzilai-Borwein with Armijo backtracking"}};
}

sqd::RegionGraph topology_for(const std::string& arg, std::size_t n) {
  if (arg == "all") return sqd::RegionGraph::complete(n);
  if (arg == "line") return sqd::RegionGraph::line(n);
  if (arg == "ring") return sqd::RegionGraph::ring(n);
  // {"edges": [[1, 2], [2, 3]]} with 1-based region numbers
  const auto doc = Json::parse(sqd::read_text_file(arg), nullptr, false);
  if (doc.is_discarded() || !doc.contains("edges") || !doc["edges"].is_array())
    throw sqd::ConfigError(arg + ": topology file needs an \"edges\" array");
  sqd::RegionGraph g(n);
  for (const auto& e : doc["edges"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw sqd::ConfigError(arg + ": each edge must be a pair of region numbers");
    const auto a = e[0].get<long long>();
    const auto b = e[1].get<long long>();
    if (a < 1 || b < 1 || static_cast<std::size_t>(a) > n || static_cast<std::size_t>(b) > n)
      throw sqd::ConfigError(arg + ": edge refers to an unknown region");
    g.add_edge(static_cast<std::size_t>(a - 1), static_cast<std::size_t>(b - 1));
  }
  if (!g.connected()) throw sqd::ConfigError(arg + ": topology graph must be connected");
  return g;
}

/// Reads {"q": [...]} (single vehicle) or {"vehicles": [[...], ...]} with full-length vectors.
sqd::MultiVehiclePolicy policy_file(const std::string& path, std::size_t n) {
  const auto doc = Json::parse(sqd::read_text_file(path), nullptr, false);
  if (doc.is_discarded()) throw sqd::ConfigError(path + ": malformed JSON");
  auto vec = [&](const Json& a) {
    if (!a.is_array() || a.size() != n) throw sqd::ConfigError(path + ": policy vectors must have one entry per region");
    std::vector<double> q;
    for (const auto& x : a) {
      if (!x.is_number()) throw sqd::ConfigError(path + ": policy entries must be numbers");
      q.push_back(x.get<double>());
    }
    if (!sqd::on_simplex(q, 1e-9)) throw sqd::ConfigError(path + ": policy vector must lie on the simplex");
    return sqd::StationaryPolicy{q};
  };
  sqd::MultiVehiclePolicy p;
  if (doc.contains("q")) {
    p.vehicles.push_back(vec(doc["q"]));
  } else if (doc.contains("vehicles") && doc["vehicles"].is_array() && !doc["vehicles"].empty()) {
    for (const auto& v : doc["vehicles"]) p.vehicles.push_back(vec(v));
  } else {
    throw sqd::ConfigError(path + ": policy file needs \"q\" or \"vehicles\"");
  }
  return p;
}

struct Common {
  std::string scenario;
  std::string out;
  std::optional<double> eta;
  std::optional<std::size_t> vehicles;
};

struct Loaded {
  sqd::Scenario sc;
  sqd::Weights w;
  double eta;
  std::size_t vehicles;
};

Loaded load(const Common& c) {
  auto sc = sqd::load_scenario(c.scenario);
  Loaded l{sc, sqd::weights_from_priors(sc.env.priors()), c.eta.value_or(sc.eta), c.vehicles.value_or(sc.vehicles.value_or(1))};
  if (!(l.eta > 0.0)) throw sqd::ConfigError("--eta must be > 0");
  if (l.vehicles < 1) throw sqd::ConfigError("--vehicles must be >= 1");
  return l;
}

sqd::OptimalPolicy require_converged(sqd::OptimalPolicy p) {
  if (!p.diagnostics.converged)
    throw sqd::ConvergenceError("gradient descent did not converge: " + p.diagnostics.stop_reason);
  return p;
}

/// The multi-vehicle stationary policy named by `name` (partitioned when m > 1).
sqd::MultiVehiclePolicy resolve_policy(const std::string& name, const Loaded& l, std::optional<sqd::DescentResult>* diag) {
  const auto n = l.sc.size();
  if (name == "efficient") {
    if (l.vehicles == 1) return {{sqd::efficient_policy(l.w, l.sc.model.divergences())}, std::nullopt};
    return sqd::partitioned_efficient_policy(l.sc.env, l.sc.model, l.w, sqd::partition_regions(n, l.vehicles));
  }
  if (name == "uniform") {
    if (l.vehicles == 1) return {{sqd::StationaryPolicy::uniform(n)}, std::nullopt};
    const auto part = sqd::partition_regions(n, l.vehicles);
    sqd::MultiVehiclePolicy p;
    for (const auto& s : part.subsets)
      p.vehicles.push_back(sqd::embed(std::vector<double>(s.size(), 1.0 / static_cast<double>(s.size())), s, n));
    p.partition = part;
    return p;
  }
  if (name == "optimal") {
    if (l.vehicles == 1) {
      auto opt = require_converged(sqd::optimal_policy(l.sc.env, l.sc.model, l.w, l.eta));
      if (diag) *diag = opt.diagnostics;
      return {{opt.policy}, std::nullopt};
    }
    return sqd::partitioned_optimal_policy(l.sc.env, l.sc.model, l.w, l.eta, sqd::partition_regions(n, l.vehicles));
  }
  return policy_file(name, n);
}

// ---------------------------------------------------------------------------

int cmd_design(const Common& c, const std::string& topology) {
  Clock clock;
  const auto l = load(c);
  const auto n = l.sc.size();
  const auto d = l.sc.model.divergences();
  const auto eff = sqd::efficient_policy(l.w, d);
  const auto opt = sqd::optimal_policy(l.sc.env, l.sc.model, l.w, l.eta);
  Json doc;
  doc["efficient"] = eff.q;
  doc["optimal"] = {{"q", opt.policy.q}, {"average_delay", opt.average_delay}, {"diagnostics", descent_json(opt.diagnostics)}};
  const auto graph = topology_for(topology, n);
  const auto chain = sqd::metropolis_hastings_chain(graph, eff.q);
  doc["metropolis_hastings"] = {{"topology", topology}, {"target", "efficient"},
                                {"transition", sqd::to_json(chain.transition)}};
  if (l.vehicles > 1) {
    const auto part = sqd::partition_regions(n, l.vehicles);
    const auto pe = sqd::partitioned_efficient_policy(l.sc.env, l.sc.model, l.w, part);
    Json vehicles = Json::array();
    for (const auto& v : pe.vehicles) vehicles.push_back(v.q);
    doc["partition"] = partition_json(part);
    doc["partitioned_efficient"] = vehicles;
  }
  doc["manifest"] = manifest("design", {{"scenario", c.scenario}, {"eta", l.eta}, {"vehicles", l.vehicles},
                                        {"topology", topology}}, std::nullopt, clock);
  emit(doc, c.out);
  if (!opt.diagnostics.converged)
    throw sqd::ConvergenceError("gradient descent did not converge: " + opt.diagnostics.stop_reason);
  return 0;
}

int cmd_analyze(const Common& c, const std::string& policy_name) {
  Clock clock;
  const auto l = load(c);
  const auto n = l.sc.size();
  const auto d = l.sc.model.divergences();
  std::optional<sqd::DescentResult> diag;
  const auto policy = resolve_policy(policy_name, l, &diag);
  Json doc;
  doc["policy"] = policy_name;
  doc["divergences"] = d;
  doc["weights"] = l.w.w;
  doc["eta_bar"] = sqd::wald_eta_bar(l.eta);
  if (diag) doc["optimal_diagnostics"] = descent_json(*diag);
  const double t_max = l.sc.env.max_mean_processing();
  const double t_min = l.sc.env.min_mean_processing();
  const double d_max = l.sc.env.max_travel();

  if (policy.size() == 1) {
    const auto& q = policy.vehicles.front().q;
    const auto rep = sqd::theory_report(q, l.sc.env, l.sc.model, l.w, l.eta);
    doc["q"] = q;
    doc["expected_observations"] = rep.expected_observations;
    doc["expected_delay"] = rep.expected_delay;
    doc["average_delay"] = rep.average_delay;
    doc["upper_bound"] = sqd::upper_bound_delay(q, l.w, d, t_max, d_max, l.eta);
    doc["lower_bound"] = sqd::lower_bound_delay(q, l.w, d, t_min, l.eta);
    const auto eff = sqd::efficient_policy(l.w, d);
    const auto cert = sqd::efficiency_certificate(l.sc.env, l.sc.model, l.w, eff.q, l.eta);
    doc["efficient_certificate"] = {{"upper_min", cert.upper_min},
                                    {"lower_at_efficient", cert.lower_at_efficient},
                                    {"average_at_efficient", cert.average_at_efficient},
                                    {"factor_vs_optimal", cert.factor_vs_optimal},
                                    {"factor_vs_global", cert.factor_vs_global},
                                    {"per_region_factor", cert.per_region_factor},
                                    {"per_region_ratio", cert.per_region_ratio}};
  } else {
    Json vehicles = Json::array();
    for (const auto& v : policy.vehicles) vehicles.push_back(v.q);
    doc["vehicles"] = vehicles;
    if (policy.partition) doc["partition"] = partition_json(*policy.partition);
    const auto pb = sqd::partition_bounds(l.sc.env, l.sc.model, l.w, l.vehicles, l.eta);
    doc["partition_bounds"] = {{"upper", pb.upper},
                               {"lower", pb.lower},
                               {"t_one", pb.t_one},
                               {"factor_vs_optimal", pb.factor_vs_optimal},
                               {"factor_vs_global", pb.factor_vs_global},
                               {"per_region_factor", pb.per_region_factor}};
    Json mv = Json::array();
    for (std::size_t k = 0; k < n; ++k)
      mv.push_back(sqd::multi_vehicle_lower_bound(policy, d[k], pb.t_one, l.eta, k));
    doc["multi_vehicle_lower_bound"] = mv;
  }
  const auto glb = sqd::global_lower_bounds(l.sc.env, l.sc.model, l.vehicles, l.eta);
  doc["global_lower_bound"] = {{"per_region", glb.per_region}, {"average", glb.average},
                               {"min_processing", glb.min_processing}};
  Json ad = Json::array();
  for (std::size_t k = 0; k < n; ++k) ad.push_back(sqd::adaptive_delay_bound(l.sc.env, l.sc.model, l.vehicles, l.eta, k));
  doc["adaptive_bound"] = ad;
  doc["manifest"] = manifest("analyze", {{"scenario", c.scenario}, {"eta", l.eta}, {"vehicles", l.vehicles},
                                         {"policy", policy_name}}, std::nullopt, clock);
  emit(doc, c.out);
  return 0;
}

struct SimFlags {
  std::string policy = "efficient";
  std::string topology = "all";
  std::string detector = "auto";
  std::string detections;
  std::size_t trials = 1000;
  std::uint64_t seed = kDefaultSeed;
  bool seed_given = false;
  unsigned workers = 1;
  double horizon = 0.0;
};

int cmd_simulate(const Common& c, const SimFlags& f) {
  Clock clock;
  const auto l = load(c);
  const auto n = l.sc.size();
  if (!f.seed_given) std::cerr << "seed: " << f.seed << "\n";
  if (f.trials < 1) throw sqd::ConfigError("--trials must be >= 1");

  sqd::SimulationConfig cfg;
  cfg.env = l.sc.env;
  cfg.model = l.sc.model;
  cfg.schedule = l.sc.schedule;
  cfg.eta = l.eta;
  cfg.trials = f.trials;
  cfg.seed = f.seed;
  cfg.workers = std::max(1u, f.workers);
  cfg.horizon = f.horizon;

  bool family = false;
  for (const auto& r : l.sc.model.regions()) family = family || r.hypotheses().size() > 1;
  if (f.detector == "auto")
    cfg.detector = family ? sqd::DetectorKind::glr : sqd::DetectorKind::cusum;
  else if (f.detector == "glr")
    cfg.detector = sqd::DetectorKind::glr;
  else if (f.detector == "cusum")
    cfg.detector = sqd::DetectorKind::cusum;
  else
    throw sqd::ConfigError("--detector must be auto, cusum or glr");

  const auto part = sqd::partition_regions(n, l.vehicles);
  auto local_graph = [&](std::size_t size) -> std::optional<sqd::RegionGraph> {
    if (f.topology == "all") return std::nullopt;
    if (l.vehicles > 1 && f.topology != "line" && f.topology != "ring")
      throw sqd::ConfigError("--topology FILE is only supported with one vehicle");
    return topology_for(f.topology, size);
  };
  if (f.policy == "adaptive") {
    if (l.vehicles == 1) {
      cfg.vehicles = {sqd::Routing::adaptive(sqd::all_regions(n), local_graph(n))};
    } else {
      for (const auto& s : part.subsets) cfg.vehicles.push_back(sqd::Routing::adaptive(s, local_graph(s.size())));
    }
  } else {
    const auto pol = resolve_policy(f.policy, l, nullptr);
    for (const auto& v : pol.vehicles) {
      auto r = sqd::Routing::stationary(v.q);
      if (auto g = local_graph(r.regions.size())) {
        if (!g->connected()) throw sqd::ConfigError("topology graph must be connected");
        r = sqd::Routing::markov(sqd::metropolis_hastings_chain(*g, r.q), r.regions);
      }
      cfg.vehicles.push_back(std::move(r));
    }
  }

  const auto result = sqd::run_ensemble(cfg);
  if (!f.detections.empty()) sqd::write_text_file(f.detections, sqd::detection_log_csv(result.trials));

  Json config = {{"scenario", c.scenario}, {"policy", f.policy},       {"topology", f.topology},
                 {"vehicles", l.vehicles}, {"eta", l.eta},             {"trials", f.trials},
                 {"workers", cfg.workers}, {"horizon", cfg.horizon > 0.0 ? cfg.horizon : sqd::default_horizon(cfg)},
                 {"detector", cfg.detector == sqd::DetectorKind::glr ? "glr" : "cusum"}};
  const auto& rep = result.report;
  Json summary;
  Json regions = Json::array();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = rep.regions[k];
    Json r = {{"region", k + 1},
              {"detections", s.delay.count},
              {"censored", s.censored},
              {"false_alarms", s.false_alarms}};
    auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
    r["mean_delay"] = num(s.delay.mean);
    r["delay_std_error"] = num(s.delay.std_error);
    r["mean_observations"] = num(s.observations.mean);
    r["mean_region_observations"] = num(s.region_observations.mean);
    r["hypothesis_match"] = num(s.hypothesis_match);
    regions.push_back(std::move(r));
  }
  summary["regions"] = regions;
  summary["average_delay"] = std::isfinite(rep.average_delay.mean) ? Json(rep.average_delay.mean) : Json(nullptr);
  summary["average_delay_std_error"] =
      std::isfinite(rep.average_delay.std_error) ? Json(rep.average_delay.std_error) : Json(nullptr);
  summary["censored_trials"] = rep.censored_trials;

  if (ends_with(c.out, ".csv")) {
    sqd::write_text_file(c.out, sqd::trials_csv(result.trials));
    Json side = {{"summary", summary}, {"manifest", manifest("simulate", config, f.seed, clock)}};
    sqd::write_text_file(c.out + ".manifest.json", side.dump(2) + "\n");
  } else {
    Json doc = {{"summary", summary}, {"manifest", manifest("simulate", config, f.seed, clock)}};
    emit(doc, c.out);
  }
  return 0;
}

struct CheckFlags {
  std::optional<std::size_t> n1;
  std::optional<double> mu1;
  double nu1 = 1e-4;
  std::uint64_t seed = kDefaultSeed;
  bool seed_given = false;
  unsigned workers = 1;
  double tolerance = 1e-3;
  std::string out;
};

int cmd_scenario_check(const CheckFlags& f) {
  Clock clock;
  if (!f.seed_given) std::cerr << "seed: " << f.seed << "\n";
  sqd::ScenarioSampleConfig cfg;
  cfg.nu1 = f.nu1;
  cfg.seed = f.seed;
  cfg.workers = std::max(1u, f.workers);
  cfg.tolerance = f.tolerance;
  if (!(f.nu1 > 0.0 && f.nu1 < 1.0)) throw sqd::ConfigError("--nu1 must lie in (0,1)");
  if (f.n1 && !f.mu1) {
    // Strongest mu1 the sample size supports.
    if (*f.n1 < 1) throw sqd::ConfigError("--n1 must be >= 1");
    cfg.n1 = *f.n1;
    cfg.mu1 = -std::log(f.nu1) / static_cast<double>(*f.n1);
    if (!(cfg.mu1 < 1.0)) throw sqd::ConfigError("--n1 too small for --nu1: -ln(nu1)/n1 must be < 1");
  } else {
    cfg.mu1 = f.mu1.value_or(0.01);
    const auto need = sqd::required_samples(cfg.mu1, cfg.nu1);
    cfg.n1 = f.n1.value_or(f.mu1 ? need : std::max<std::size_t>(1000, need));
  }
  const auto cert = sqd::uniqueness_certificate(cfg);
  Json instances = Json::array();
  for (const auto& o : cert.instances)
    instances.push_back({{"index", o.index},
                         {"regions", o.regions},
                         {"distance", o.distance},
                         {"converged", o.converged},
                         {"iterations_from_start", o.iterations_from_start},
                         {"iterations_from_uniform", o.iterations_from_uniform},
                         {"stop_reason", o.stop_reason}});
  Json doc = {{"gamma_hat", cert.gamma_hat},
              {"within_tolerance", cert.within_tolerance},
              {"tolerance", cert.tolerance},
              {"failures", cert.failures},
              {"n1", cert.n1},
              {"required_n1", cert.required_n1},
              {"mu1", cert.mu1},
              {"nu1", cert.nu1},
              {"statement", cert.statement()},
              {"metadata", {{"norm", cert.norm}, {"step_rule", cert.step_rule},
                            {"gradient_tolerance", cert.gradient_tolerance},
                            {"processing", "half-normal with scale 10"}}},
              {"instances", instances}};
  doc["runtime_seconds"] = clock.seconds();
  doc["manifest"] = manifest("scenario-check", {{"n1", cfg.n1}, {"mu1", cfg.mu1}, {"nu1", cfg.nu1},
                                                {"workers", cfg.workers}, {"tolerance", cfg.tolerance}},
                             f.seed, clock);
  emit(doc, f.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial quickest detection: routing policy design and simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", common.scenario, "Scenario JSON file")->required();
    sub->add_option("--out", common.out, "Output file (stdout if omitted)");
    sub->add_option("--eta", common.eta, "CUSUM threshold (overrides the scenario)");
    sub->add_option("--vehicles", common.vehicles, "Number of vehicles");
  };

  std::string topology = "all";
  auto* design = app.add_subcommand("design", "Efficient, optimal, partitioned and Metropolis-Hastings policies");
  add_common(design);
  design->add_option("--topology", topology, "all, line, ring or an edge-list JSON file");

  std::string policy = "efficient";
  auto* analyze = app.add_subcommand("analyze", "Delay formulas and bounds for a policy");
  add_common(analyze);
  analyze->add_option("--policy", policy, "efficient, uniform, optimal or a policy JSON file");

  SimFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Monte-Carlo detection delays");
  add_common(simulate);
  simulate->add_option("--policy", sim.policy, "efficient, uniform, optimal, adaptive or a policy JSON file");
  simulate->add_option("--topology", sim.topology, "all, line, ring or an edge-list JSON file");
  simulate->add_option("--trials", sim.trials, "Number of trials");
  auto* sim_seed = simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--workers", sim.workers, "Worker threads");
  simulate->add_option("--horizon", sim.horizon, "Time cap per trial (0 = default)");
  simulate->add_option("--detector", sim.detector, "auto, cusum or glr");
  simulate->add_option("--detections", sim.detections, "Write the detection log CSV here");

  CheckFlags check;
  auto* scheck = app.add_subcommand("scenario-check", "Randomized uniqueness certificate for the optimal policy");
  scheck->add_option("--n1", check.n1, "Number of sampled instances");
  scheck->add_option("--mu1", check.mu1, "Violation probability level");
  scheck->add_option("--nu1", check.nu1, "Confidence level");
  auto* check_seed = scheck->add_option("--seed", check.seed, "Master seed");
  scheck->add_option("--workers", check.workers, "Worker threads");
  scheck->add_option("--tolerance", check.tolerance, "Pass threshold for gamma-hat");
  scheck->add_option("--out", check.out, "Output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (design->parsed()) return cmd_design(common, topology);
    if (analyze->parsed()) return cmd_analyze(common, policy);
    if (simulate->parsed()) {
      sim.seed_given = sim_seed->count() > 0;
      return cmd_simulate(common, sim);
    }
    if (scheck->parsed()) {
      check.seed_given = check_seed->count() > 0;
      return cmd_scenario_check(check);
    }
  } catch (const sqd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const sqd::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const sqd::BudgetExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
