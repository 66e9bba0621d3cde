#pragma once

// Scenario files (JSON) and trial output (CSV).
//
// Scenario schema:
//   {
//     "name": "example1",                      optional
//     "threshold": 5,                          optional, default 5
//     "vehicles": 1,                           optional
//     "speed": 1,                              optional, used with positions
//     "travel": [[0, 5], [5, 0]],              optional; else from positions
//     "remove_on_detection": true,             optional
//     "regions": [
//       {
//         "position": [10, 0],                 required unless "travel" given
//         "processing": {"kind": "deterministic", "value": 1},
//                      | {"kind": "exponential", "mean": 2}
//                      | {"kind": "half_normal", "scale": 10},
//         "prior": 0.5,
//         "nominal": {"mean": 0, "variance": 1}
//                  | {"mean": [0, 0], "covariance": [[1, 0], [0, 1]]},
//         "anomalous": {...} or [{...}, ...],  one or more densities
//         "true_hypothesis": 0,                optional index into "anomalous"
//         "anomaly_time": 50                   optional; null or absent = none
//       }
//     ]
//   }
//
// Region numbers in all emitted output are 1-based.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sqd/envmodel.hpp"
#include "sqd/errors.hpp"
#include "sqd/sim.hpp"

namespace sqd {

using Json = nlohmann::json;

struct Scenario {
  std::string name;
  std::optional<std::vector<Point2>> positions;
  double speed = 1.0;
  Environment env;
  ObservationModel model;
  AnomalySchedule schedule;
  double eta = 5.0;
  std::optional<std::size_t> vehicles;

  std::size_t size() const { return env.size(); }
  bool operator==(const Scenario& o) const {
    return name == o.name && positions == o.positions && speed == o.speed && env == o.env && model == o.model &&
           schedule.appearance == o.schedule.appearance &&
           schedule.remove_on_detection == o.schedule.remove_on_detection && eta == o.eta && vehicles == o.vehicles;
  }
};

namespace detail {

/// Finds the 1-based line of the value addressed by a JSON pointer by
/// walking container structure in the raw text.
class PointerLocator {
 public:
  explicit PointerLocator(const std::string& text) : s_(text) {}

  std::size_t line_of(const Json::json_pointer& ptr) const {
    std::size_t pos = skip_ws(0);
    std::string path = ptr.to_string();
    std::vector<std::string> parts;
    for (std::size_t i = 1; i <= path.size() && !path.empty();) {
      const auto j = path.find('/', i);
      parts.push_back(path.substr(i, j == std::string::npos ? std::string::npos : j - i));
      if (j == std::string::npos) break;
      i = j + 1;
    }
    for (const auto& part : parts) {
      if (pos >= s_.size()) break;
      const std::size_t next = s_[pos] == '{' ? find_member(pos, part) : s_[pos] == '[' ? find_element(pos, part) : pos;
      if (next == std::string::npos) break;
      pos = next;
    }
    return line(pos);
  }

 private:
  std::size_t line(std::size_t pos) const {
    std::size_t l = 1;
    for (std::size_t i = 0; i < pos && i < s_.size(); ++i)
      if (s_[i] == '\n') ++l;
    return l;
  }
  std::size_t skip_ws(std::size_t p) const {
    while (p < s_.size() && std::isspace(static_cast<unsigned char>(s_[p]))) ++p;
    return p;
  }
  std::size_t skip_string(std::size_t p) const {
    for (++p; p < s_.size(); ++p) {
      if (s_[p] == '\\') ++p;
      else if (s_[p] == '"') return p + 1;
    }
    return p;
  }
  std::size_t skip_value(std::size_t p) const {
    p = skip_ws(p);
    if (p >= s_.size()) return p;
    if (s_[p] == '"') return skip_string(p);
    if (s_[p] == '{' || s_[p] == '[') {
      int depth = 0;
      for (; p < s_.size(); ++p) {
        if (s_[p] == '"') {
          p = skip_string(p) - 1;
        } else if (s_[p] == '{' || s_[p] == '[') {
          ++depth;
        } else if (s_[p] == '}' || s_[p] == ']') {
          if (--depth == 0) return p + 1;
        }
      }
      return p;
    }
    while (p < s_.size() && s_[p] != ',' && s_[p] != '}' && s_[p] != ']') ++p;
    return p;
  }
  std::size_t find_member(std::size_t p, const std::string& key) const {
    p = skip_ws(p + 1);
    while (p < s_.size() && s_[p] == '"') {
      const std::size_t end = skip_string(p);
      const std::string k = s_.substr(p + 1, end - p - 2);
      p = skip_ws(end);
      if (p < s_.size() && s_[p] == ':') p = skip_ws(p + 1);
      if (k == key) return p;
      p = skip_ws(skip_value(p));
      if (p < s_.size() && s_[p] == ',') p = skip_ws(p + 1);
    }
    return std::string::npos;
  }
  std::size_t find_element(std::size_t p, const std::string& index) const {
    std::size_t want = 0;
    try {
      want = std::stoul(index);
    } catch (...) {
      return std::string::npos;
    }
    p = skip_ws(p + 1);
    for (std::size_t i = 0; p < s_.size() && s_[p] != ']'; ++i) {
      if (i == want) return p;
      p = skip_ws(skip_value(p));
      if (p < s_.size() && s_[p] == ',') p = skip_ws(p + 1);
    }
    return std::string::npos;
  }

  const std::string& s_;
};

struct SchemaError {
  Json::json_pointer where;
  std::string what;
};

class ScenarioReader {
 public:
  explicit ScenarioReader(const Json& root) : root_(root) {}

  [[noreturn]] void fail(const Json::json_pointer& at, const std::string& msg) const { throw SchemaError{at, msg}; }

  const Json& at(const Json::json_pointer& p) const { return root_.at(p); }
  bool has(const Json::json_pointer& p) const { return root_.contains(p); }

  double number(const Json::json_pointer& p) const {
    if (!has(p)) fail(p, "missing required number");
    const auto& v = at(p);
    if (!v.is_number()) fail(p, "expected a number");
    return v.get<double>();
  }
  double number_or(const Json::json_pointer& p, double fallback) const { return has(p) ? number(p) : fallback; }

  Vector vector(const Json::json_pointer& p) const {
    const auto& v = at(p);
    if (v.is_number()) return Vector::Constant(1, v.get<double>());
    if (!v.is_array() || v.empty()) fail(p, "expected a number or a non-empty array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = number(p / i);
    return out;
  }

  Matrix matrix(const Json::json_pointer& p, Eigen::Index rows, Eigen::Index cols) const {
    const auto& v = at(p);
    if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != rows)
      fail(p, "expected an array of " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto row = p / static_cast<std::size_t>(i);
      if (!at(row).is_array() || static_cast<Eigen::Index>(at(row).size()) != cols)
        fail(row, "expected a row of " + std::to_string(cols) + " numbers");
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = number(row / static_cast<std::size_t>(j));
    }
    return m;
  }

  Gaussian gaussian(const Json::json_pointer& p) const {
    if (!has(p) || !at(p).is_object()) fail(p, "expected a density object");
    if (!has(p / "mean")) fail(p / "mean", "missing density mean");
    const Vector mean = vector(p / "mean");
    Matrix cov;
    if (has(p / "variance")) {
      if (mean.size() != 1) fail(p / "variance", "variance is only valid for univariate densities");
      cov = Matrix::Constant(1, 1, number(p / "variance"));
    } else if (has(p / "covariance")) {
      cov = matrix(p / "covariance", mean.size(), mean.size());
    } else {
      fail(p, "density needs \"variance\" or \"covariance\"");
    }
    try {
      return Gaussian(mean, cov);
    } catch (const ConfigError& e) {
      fail(p, e.what());
    }
  }

  ProcessingDistribution processing(const Json::json_pointer& p) const {
    if (!has(p)) fail(p, "missing processing distribution");
    const auto& v = at(p);
    if (v.is_number()) return wrap(p, [&] { return ProcessingDistribution::deterministic(v.get<double>()); });
    if (!v.is_object() || !v.contains("kind") || !v["kind"].is_string())
      fail(p, "expected {\"kind\": ...} or a number");
    const auto kind = v["kind"].get<std::string>();
    if (kind == "deterministic")
      return wrap(p, [&] { return ProcessingDistribution::deterministic(number(p / "value")); });
    if (kind == "exponential")
      return wrap(p, [&] { return ProcessingDistribution::exponential(number(p / "mean")); });
    if (kind == "half_normal")
      return wrap(p, [&] { return ProcessingDistribution::half_normal(number(p / "scale")); });
    fail(p / "kind", "unknown processing kind \"" + kind + "\"");
  }

  template <class F>
  auto wrap(const Json::json_pointer& p, F f) const -> decltype(f()) {
    try {
      return f();
    } catch (const ConfigError& e) {
      fail(p, e.what());
    }
  }

 private:
  const Json& root_;
};

inline Scenario build_scenario(const Json& root) {
  using P = Json::json_pointer;
  ScenarioReader r(root);
  if (!root.is_object()) r.fail(P(""), "scenario must be a JSON object");
  const P regions_ptr("/regions");
  if (!r.has(regions_ptr) || !r.at(regions_ptr).is_array() || r.at(regions_ptr).empty())
    r.fail(regions_ptr, "expected a non-empty \"regions\" array");
  const std::size_t n = r.at(regions_ptr).size();

  Scenario sc{};
  if (r.has(P("/name"))) {
    if (!r.at(P("/name")).is_string()) r.fail(P("/name"), "expected a string");
    sc.name = r.at(P("/name")).get<std::string>();
  }
  sc.eta = r.number_or(P("/threshold"), 5.0);
  if (!(sc.eta > 0.0)) r.fail(P("/threshold"), "threshold must be > 0");
  sc.speed = r.number_or(P("/speed"), 1.0);
  if (!(sc.speed > 0.0)) r.fail(P("/speed"), "speed must be > 0");
  if (r.has(P("/vehicles"))) {
    const auto& v = r.at(P("/vehicles"));
    if (!v.is_number_integer() || v.get<long long>() < 1) r.fail(P("/vehicles"), "expected a positive integer");
    sc.vehicles = v.get<std::size_t>();
  }
  bool remove = true;
  if (r.has(P("/remove_on_detection"))) {
    if (!r.at(P("/remove_on_detection")).is_boolean()) r.fail(P("/remove_on_detection"), "expected a boolean");
    remove = r.at(P("/remove_on_detection")).get<bool>();
  }

  std::vector<ProcessingDistribution> proc;
  std::vector<double> priors;
  std::vector<RegionDensities> densities;
  std::vector<std::optional<double>> appearance(n);
  std::vector<Point2> positions;
  const bool explicit_travel = r.has(P("/travel"));
  for (std::size_t k = 0; k < n; ++k) {
    const P reg = regions_ptr / k;
    if (!r.at(reg).is_object()) r.fail(reg, "expected a region object");
    if (!explicit_travel) {
      const P pos = reg / "position";
      if (!r.has(pos)) r.fail(pos, "missing position (or give a top-level \"travel\" matrix)");
      const Vector xy = r.vector(pos);
      if (xy.size() != 2) r.fail(pos, "position must have two coordinates");
      positions.push_back({xy(0), xy(1)});
    }
    proc.push_back(r.processing(reg / "processing"));
    priors.push_back(r.number(reg / "prior"));
    if (!(priors.back() > 0.0 && priors.back() < 1.0)) r.fail(reg / "prior", "prior must lie strictly inside (0,1)");

    const Gaussian nominal = r.gaussian(reg / "nominal");
    const P an = reg / "anomalous";
    if (!r.has(an)) r.fail(an, "missing anomalous density");
    std::vector<Gaussian> hyps;
    if (r.at(an).is_array()) {
      if (r.at(an).empty()) r.fail(an, "anomalous family must be non-empty");
      for (std::size_t i = 0; i < r.at(an).size(); ++i) hyps.push_back(r.gaussian(an / i));
    } else {
      hyps.push_back(r.gaussian(an));
    }
    for (std::size_t i = 0; i < hyps.size(); ++i)
      if (hyps[i].dimension() != nominal.dimension()) r.fail(an, "anomalous and nominal dimensions differ");
    std::size_t truth = 0;
    if (r.has(reg / "true_hypothesis")) {
      const auto& t = r.at(reg / "true_hypothesis");
      if (!t.is_number_integer() || t.get<long long>() < 0 || t.get<std::size_t>() >= hyps.size())
        r.fail(reg / "true_hypothesis", "expected an index into the anomalous family");
      truth = t.get<std::size_t>();
    }
    densities.push_back(r.wrap(reg, [&] { return RegionDensities(nominal, hyps, truth); }));

    const P at = reg / "anomaly_time";
    if (r.has(at) && !r.at(at).is_null()) {
      appearance[k] = r.number(at);
      if (!(*appearance[k] >= 0.0)) r.fail(at, "anomaly time must be >= 0");
    }
  }

  const auto make_env = [&]() {
    if (explicit_travel) {
      const Matrix d = r.matrix(P("/travel"), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      return r.wrap(P("/travel"), [&] { return Environment(d, proc, priors); });
    }
    return r.wrap(regions_ptr, [&] { return Environment::from_coordinates(positions, proc, priors, sc.speed); });
  };
  sc.env = make_env();
  if (!explicit_travel) sc.positions = positions;
  sc.model = ObservationModel(std::move(densities));
  sc.schedule = AnomalySchedule{std::move(appearance), remove};
  return sc;
}

}  // namespace detail

/// Parses scenario text. Errors are ConfigError messages that carry a line number.
inline Scenario parse_scenario(const std::string& text, const std::string& source = "<scenario>") {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(source + ": malformed JSON: " + e.what());
  }
  try {
    return detail::build_scenario(root);
  } catch (const detail::SchemaError& e) {
    const auto line = detail::PointerLocator(text).line_of(e.where);
    throw ConfigError(source + ":" + std::to_string(line) + ": " + e.where.to_string() + ": " + e.what);
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Scenario load_scenario(const std::string& path) { return parse_scenario(read_text_file(path), path); }

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

inline Json to_json(const Gaussian& g) { return {{"mean", to_json(g.mean())}, {"covariance", to_json(g.covariance())}}; }

inline Json to_json(const ProcessingDistribution& p) {
  switch (p.kind()) {
    case ProcessingDistribution::Kind::deterministic:
      return {{"kind", "deterministic"}, {"value", p.parameter()}};
    case ProcessingDistribution::Kind::exponential:
      return {{"kind", "exponential"}, {"mean", p.parameter()}};
    case ProcessingDistribution::Kind::half_normal:
      return {{"kind", "half_normal"}, {"scale", p.parameter()}};
  }
  return {};
}

/// Canonical form: densities always carry full mean vectors and covariances.
inline Json emit_scenario(const Scenario& sc) {
  Json root;
  if (!sc.name.empty()) root["name"] = sc.name;
  root["threshold"] = sc.eta;
  if (sc.vehicles) root["vehicles"] = *sc.vehicles;
  root["remove_on_detection"] = sc.schedule.remove_on_detection;
  if (sc.positions)
    root["speed"] = sc.speed;
  else
    root["travel"] = to_json(sc.env.travel());
  Json regions = Json::array();
  for (std::size_t k = 0; k < sc.size(); ++k) {
    Json r;
    if (sc.positions) r["position"] = {(*sc.positions)[k].x, (*sc.positions)[k].y};
    r["processing"] = to_json(sc.env.processing(k));
    r["prior"] = sc.env.priors()[k];
    const auto& dens = sc.model.region(k);
    r["nominal"] = to_json(dens.nominal());
    Json an = Json::array();
    for (const auto& h : dens.hypotheses()) an.push_back(to_json(h));
    r["anomalous"] = std::move(an);
    r["true_hypothesis"] = dens.true_hypothesis();
    if (sc.schedule.appearance[k])
      r["anomaly_time"] = *sc.schedule.appearance[k];
    else
      r["anomaly_time"] = nullptr;
    regions.push_back(std::move(r));
  }
  root["regions"] = std::move(regions);
  return root;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest text that reads back to the same double.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

/// trial,region,delay,observations,censored -- one row per scheduled region per trial.
inline std::string trials_csv(std::span<const TrialRecord> trials) {
  std::string out = "trial,region,delay,observations,censored\n";
  for (const auto& t : trials)
    for (std::size_t k = 0; k < t.regions.size(); ++k) {
      const auto& r = t.regions[k];
      if (!r.appearance) continue;
      out += std::to_string(t.trial) + "," + std::to_string(k + 1) + "," + format_number(r.delay) + "," +
             (r.detected ? std::to_string(r.observations) : std::string()) + "," + (r.censored ? "1" : "0") + "\n";
    }
  return out;
}

/// trial,region,detection_time,appearance_time,delay,observations_used -- true detections and false alarms.
inline std::string detection_log_csv(std::span<const TrialRecord> trials) {
  std::string out = "trial,region,detection_time,appearance_time,delay,observations_used\n";
  for (const auto& t : trials) {
    struct Row {
      double time;
      std::string text;
    };
    std::vector<Row> rows;
    for (std::size_t k = 0; k < t.regions.size(); ++k) {
      const auto& r = t.regions[k];
      if (!r.detected) continue;
      rows.push_back({r.detection_time, std::to_string(t.trial) + "," + std::to_string(k + 1) + "," +
                                            format_number(r.detection_time) + "," + format_number(*r.appearance) +
                                            "," + format_number(r.delay) + "," + std::to_string(r.observations)});
    }
    for (const auto& f : t.false_alarms)
      rows.push_back({f.time, std::to_string(t.trial) + "," + std::to_string(f.region + 1) + "," +
                                  format_number(f.time) + ",,," + std::to_string(f.iterations)});
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    for (const auto& r : rows) out += r.text + "\n";
  }
  return out;
}

inline std::string matrix_csv(const Matrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ",";
      out += format_number(m(i, j));
    }
    out += "\n";
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << content;
}

}  // namespace sqd
