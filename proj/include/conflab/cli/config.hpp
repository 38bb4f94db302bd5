#pragma once

// Experiment configuration. The grammar is JSON:
//
//   {
//     "experiment": "renewal",            one of experiment_names()
//     "seed": 1,                          unsigned 64-bit
//     "output_dir": "out",
//     "threads": 1,
//     "format": "csv",                    csv | json (tables only)
//     "svg": true,                        also write SVG line charts where an experiment has one
//     "ifs": {"fixture": "two_ratio"}     or {"maps": [{"kind": ..., "coefficients": [...]}, ...]}
//     "p": [0.5, 0.5],                    defaults to uniform
//     "renewal": {"k_list": [5, 10, 20]}  parameter table named after an experiment
//   }
//
// Coefficients are numbers or [re, im] pairs. Unknown keys anywhere are
// errors; every error is collected. Defaults are filled in, and the
// normalized document is what gets echoed, hashed and re-parsed.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../fixtures.hpp"
#include "../ifs.hpp"

namespace conflab::cli {

using json = nlohmann::json;

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> n{"validate", "sample", "fourier",  "spectral-gap", "uni",
                                          "model",    "dolgopyat", "renewal", "pipeline"};
  return n;
}

enum class FieldType { integer, real, string, boolean, real_list, int_list, vec2_list };

struct FieldSpec {
  std::string name;
  FieldType type;
  json fallback;
  double lo = -INFINITY;  // inclusive bounds on numbers and list entries
  double hi = INFINITY;
  bool lo_open = false;
  std::vector<std::string> choices;  // for strings
  bool nonempty = true;              // for lists
};

using Schema = std::vector<FieldSpec>;

inline FieldSpec field(std::string n, FieldType t, json d, double lo = -INFINITY, double hi = INFINITY,
                       bool lo_open = false) {
  FieldSpec f;
  f.name = std::move(n);
  f.type = t;
  f.fallback = std::move(d);
  f.lo = lo;
  f.hi = hi;
  f.lo_open = lo_open;
  return f;
}
inline FieldSpec int_field(std::string n, std::int64_t d, double lo, double hi = INFINITY) {
  return field(std::move(n), FieldType::integer, d, lo, hi);
}
inline FieldSpec real_field(std::string n, double d, double lo, double hi = INFINITY, bool lo_open = false) {
  return field(std::move(n), FieldType::real, d, lo, hi, lo_open);
}

inline const std::map<std::string, Schema>& experiment_schemas() {
  static const std::map<std::string, Schema> s = [] {
    std::map<std::string, Schema> m;
    m["validate"] = {int_field("boundary_samples", 256, 256, 1 << 20), real_field("margin", 0.0, 0.0, 0.999)};
    m["sample"] = {int_field("count", 10000, 1, 1e8), int_field("depth", 0, 0, 10000),
                   real_field("tol", 1e-12, 0.0, 0.5, true)};
    m["fourier"] = {int_field("samples", 100000, 100, 1e8),
                    int_field("depth", 40, 1, 10000),
                    field("directions", FieldType::vec2_list, json::array({json::array({1.0, 0.0}), json::array({0.0, 1.0})})),
                    real_field("ladder_base", 0.5, 0.0, INFINITY, true),
                    real_field("ladder_factor", 3.0, 1.0, INFINITY, true),
                    int_field("ladder_count", 6, 2, 60),
                    int_field("bootstrap", 200, 0, 100000),
                    real_field("noise_sigmas", 5.0, 0.0, INFINITY, true)};
    m["spectral-gap"] = {real_field("grid_step", 0.05, 0.0, 0.5, true),
                         int_field("n_max", 8, 1, 200),
                         field("a_list", FieldType::real_list, json::array({0.0}), -10.0, 10.0),
                         field("b_list", FieldType::real_list, json::array({50.0}), -1e6, 1e6),
                         field("ell_list", FieldType::int_list, json::array({0}), -1e6, 1e6),
                         int_field("cone_probes", 2, 0, 100),
                         int_field("trig_probes", 2, 0, 100),
                         real_field("decay_threshold", 0.98, 0.0, 10.0, true)};
    m["uni"] = {int_field("n", 2, 1, 12), real_field("grid_step", 0.02, 0.0, 0.5, true),
                int_field("pair_budget", 10000, 1, 1e9), real_field("fd_step", 1e-3, 0.0, 0.1, true)};
    m["model"] = {int_field("N_min", 1, 1, 12), int_field("N_max", 3, 1, 12),
                  real_field("grid_step", 0.05, 0.0, 0.5, true)};
    m["dolgopyat"] = {int_field("N_min", 1, 1, 12),
                      int_field("N_max", 3, 1, 12),
                      int_field("omega_length", 40, 8, 100000),
                      real_field("b", 50.0, 1.0, 1e6),
                      int_field("ell", 0, -1e6, 1e6),
                      int_field("cone_trials", 20, 1, 100000),
                      int_field("domination_pairs", 5, 0, 100000),
                      real_field("grid_step", 0.1, 0.0, 0.5, true),
                      int_field("samples", 2000, 50, 1e7),
                      int_field("check_samples", 1000, 50, 1e7)};
    m["renewal"] = {field("k_list", FieldType::real_list, json::array({5.0, 10.0, 20.0}), 0.0, 1e4, true),
                    int_field("trials", 20000, 1, 1e9),
                    [] {
                      auto f = field("circle_unit", FieldType::string, "turns");
                      f.choices = {"turns", "radians"};
                      return f;
                    }(),
                    int_field("tail_depth", 40, 1, 10000),
                    int_field("lyapunov_walk", 200, 1, 1e7),
                    int_field("lyapunov_trials", 200, 1, 1e7),
                    int_field("limit_samples", 20000, 10, 1e8)};
    m["pipeline"] = {field("q_list", FieldType::vec2_list,
                           json::array({json::array({20.0, 5.0}), json::array({60.0, -30.0}), json::array({150.0, 80.0})})),
                     real_field("eps", 0.5, 0.0, 17.0, true),
                     int_field("samples", 20000, 100, 1e8),
                     int_field("walks", 16, 1, 100000),
                     int_field("overshoot_trials", 5000, 10, 1e9),
                     int_field("osc_grid", 12, 1, 1000)};
    return m;
  }();
  return s;
}

struct ExperimentConfig {
  json doc;  // normalized: every key present

  std::string experiment() const { return doc.at("experiment").get<std::string>(); }
  std::uint64_t seed() const { return doc.at("seed").get<std::uint64_t>(); }
  int threads() const { return doc.at("threads").get<int>(); }
  std::string output_dir() const { return doc.at("output_dir").get<std::string>(); }
  std::string format() const { return doc.at("format").get<std::string>(); }
  bool svg() const { return doc.at("svg").get<bool>(); }
  std::vector<double> p() const { return doc.at("p").get<std::vector<double>>(); }
  const json& params() const { return doc.at(experiment()); }
  bool operator==(const ExperimentConfig& o) const { return doc == o.doc; }
};

struct ParseResult {
  std::optional<ExperimentConfig> config;
  std::vector<std::string> errors;

  bool ok() const { return config.has_value(); }
};

namespace detail {

inline std::string describe(const json& j) {
  if (j.is_number_integer() || j.is_number_unsigned()) return "integer";
  if (j.is_number_float()) return "real";
  return j.type_name();
}

inline bool in_range(double v, const FieldSpec& f) {
  if (f.lo_open ? !(v > f.lo) : !(v >= f.lo)) return false;
  return v <= f.hi;
}

inline std::string range_text(const FieldSpec& f) {
  std::string lo = f.lo_open ? "(" : "[";
  lo += std::isfinite(f.lo) ? json(f.lo).dump() : "-inf";
  return lo + ", " + (std::isfinite(f.hi) ? json(f.hi).dump() : "inf") + "]";
}

inline bool is_integral(const json& v) {
  if (v.is_number_integer() || v.is_number_unsigned()) return true;
  return v.is_number_float() && std::floor(v.get<double>()) == v.get<double>() && std::abs(v.get<double>()) < 9e15;
}

inline json check_field(const FieldSpec& f, const json& v, const std::string& path, std::vector<std::string>& err) {
  auto bad_type = [&](const std::string& want) {
    err.push_back(path + ": expected " + want + ", got " + describe(v));
    return json();
  };
  auto number = [&](const json& x, const std::string& where, bool integral) -> std::optional<double> {
    if (!x.is_number() || (integral && !is_integral(x))) {
      err.push_back(where + ": expected " + (integral ? "integer" : "number") + ", got " + describe(x));
      return std::nullopt;
    }
    const double d = x.get<double>();
    if (!std::isfinite(d) || !in_range(d, f)) {
      err.push_back(where + ": value " + x.dump() + " outside " + range_text(f));
      return std::nullopt;
    }
    return d;
  };
  switch (f.type) {
    case FieldType::integer: {
      const auto d = number(v, path, true);
      return d ? json(static_cast<std::int64_t>(*d)) : json();
    }
    case FieldType::real: {
      const auto d = number(v, path, false);
      return d ? json(*d) : json();
    }
    case FieldType::boolean:
      return v.is_boolean() ? v : bad_type("boolean");
    case FieldType::string: {
      if (!v.is_string()) return bad_type("string");
      const auto s = v.get<std::string>();
      if (!f.choices.empty() && std::find(f.choices.begin(), f.choices.end(), s) == f.choices.end()) {
        std::string opts;
        for (const auto& c : f.choices) opts += (opts.empty() ? "" : ", ") + c;
        err.push_back(path + ": '" + s + "' is not one of {" + opts + "}");
        return json();
      }
      return v;
    }
    case FieldType::real_list:
    case FieldType::int_list: {
      if (!v.is_array()) return bad_type("list");
      if (f.nonempty && v.empty()) err.push_back(path + ": list must not be empty");
      json out = json::array();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const bool integral = f.type == FieldType::int_list;
        const auto d = number(v[i], path + "[" + std::to_string(i) + "]", integral);
        if (d) out.push_back(integral ? json(static_cast<std::int64_t>(*d)) : json(*d));
      }
      return out;
    }
    case FieldType::vec2_list: {
      if (!v.is_array()) return bad_type("list of [x, y] pairs");
      if (f.nonempty && v.empty()) err.push_back(path + ": list must not be empty");
      json out = json::array();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string where = path + "[" + std::to_string(i) + "]";
        if (!v[i].is_array() || v[i].size() != 2 || !v[i][0].is_number() || !v[i][1].is_number()) {
          err.push_back(where + ": expected [x, y] pair of numbers");
          continue;
        }
        const double x = v[i][0].get<double>(), y = v[i][1].get<double>();
        if (x == 0.0 && y == 0.0) err.push_back(where + ": vector must be nonzero");
        out.push_back(json::array({x, y}));
      }
      return out;
    }
  }
  return json();
}

inline json check_table(const Schema& schema, const json& in, const std::string& path, std::vector<std::string>& err) {
  json out = json::object();
  if (!in.is_object()) {
    err.push_back(path + ": expected a table, got " + describe(in));
    return out;
  }
  for (const auto& [k, v] : in.items()) {
    const bool known = std::any_of(schema.begin(), schema.end(), [&](const FieldSpec& f) { return f.name == k; });
    if (!known) err.push_back(path + "." + k + ": unknown key");
  }
  for (const auto& f : schema) {
    if (in.contains(f.name))
      out[f.name] = check_field(f, in.at(f.name), path + "." + f.name, err);
    else
      out[f.name] = f.fallback;
  }
  return out;
}

inline json parse_coefficient(const json& c, const std::string& path, std::vector<std::string>& err) {
  if (c.is_number()) return json::array({c.get<double>(), 0.0});
  if (c.is_array() && c.size() == 2 && c[0].is_number() && c[1].is_number())
    return json::array({c[0].get<double>(), c[1].get<double>()});
  err.push_back(path + ": coefficient must be a number or an [re, im] pair");
  return json::array({0.0, 0.0});
}

inline json check_ifs(const json& in, std::vector<std::string>& err, std::size_t& map_count) {
  map_count = 0;
  if (!in.is_object()) {
    err.push_back("ifs: expected a table with 'fixture' or 'maps'");
    return json::object();
  }
  for (const auto& [k, v] : in.items())
    if (k != "fixture" && k != "maps") err.push_back("ifs." + k + ": unknown key");
  if (in.contains("fixture") == in.contains("maps")) {
    err.push_back("ifs: give exactly one of 'fixture' or 'maps'");
    return json::object();
  }
  if (in.contains("fixture")) {
    const auto& f = in.at("fixture");
    if (!f.is_string()) {
      err.push_back("ifs.fixture: expected string, got " + describe(f));
      return json::object();
    }
    const auto& names = fixtures::fixture_names();
    if (std::find(names.begin(), names.end(), f.get<std::string>()) == names.end()) {
      err.push_back("ifs.fixture: unknown fixture '" + f.get<std::string>() + "'");
      return json::object();
    }
    map_count = fixtures::named_fixture(f.get<std::string>()).size();
    return {{"fixture", f}};
  }
  const auto& maps = in.at("maps");
  if (!maps.is_array() || maps.empty()) {
    err.push_back("ifs.maps: expected a non-empty list of maps");
    return json::object();
  }
  json out = json::array();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const std::string path = "ifs.maps[" + std::to_string(i) + "]";
    const auto& m = maps[i];
    if (!m.is_object()) {
      err.push_back(path + ": expected a table");
      continue;
    }
    for (const auto& [k, v] : m.items())
      if (k != "kind" && k != "coefficients") err.push_back(path + "." + k + ": unknown key");
    const std::string kind = m.contains("kind") && m.at("kind").is_string() ? m.at("kind").get<std::string>() : "";
    if (kind != "affine" && kind != "polynomial" && kind != "moebius")
      err.push_back(path + ".kind: expected 'affine', 'polynomial' or 'moebius'");
    json coeffs = json::array();
    if (!m.contains("coefficients") || !m.at("coefficients").is_array()) {
      err.push_back(path + ".coefficients: expected a list");
    } else {
      const auto& cs = m.at("coefficients");
      for (std::size_t j = 0; j < cs.size(); ++j)
        coeffs.push_back(parse_coefficient(cs[j], path + ".coefficients[" + std::to_string(j) + "]", err));
      const std::size_t need = kind == "affine" ? 2 : kind == "moebius" ? 4 : 0;
      if (need && cs.size() != need)
        err.push_back(path + ".coefficients: " + kind + " map needs " + std::to_string(need) + " coefficients");
      if (kind == "polynomial" && cs.empty()) err.push_back(path + ".coefficients: polynomial needs coefficients");
    }
    out.push_back({{"kind", kind}, {"coefficients", coeffs}});
  }
  map_count = maps.size();
  return {{"maps", out}};
}

}  // namespace detail

inline ParseResult parse_config_json(const json& in) {
  ParseResult res;
  auto& err = res.errors;
  if (!in.is_object()) {
    err.push_back("config: expected a top-level table");
    return res;
  }
  static const std::vector<std::string> top{"experiment", "seed", "output_dir", "threads", "format", "svg", "ifs", "p"};
  const auto& schemas = experiment_schemas();
  for (const auto& [k, v] : in.items())
    if (std::find(top.begin(), top.end(), k) == top.end() && !schemas.count(k)) err.push_back(k + ": unknown key");

  json doc = json::object();
  if (!in.contains("experiment")) {
    err.push_back("experiment: missing");
  } else if (!in.at("experiment").is_string() || !schemas.count(in.at("experiment").get<std::string>())) {
    err.push_back("experiment: expected one of validate, sample, fourier, spectral-gap, uni, model, dolgopyat, "
                  "renewal, pipeline");
  } else {
    doc["experiment"] = in.at("experiment");
  }

  doc["seed"] = 1;
  if (in.contains("seed")) {
    const auto& s = in.at("seed");
    if (s.is_number_unsigned() || (s.is_number_integer() && s.get<std::int64_t>() >= 0))
      doc["seed"] = s.get<std::uint64_t>();
    else
      err.push_back("seed: expected a non-negative 64-bit integer, got " + s.dump());
  }
  doc["output_dir"] = "out";
  if (in.contains("output_dir")) {
    if (in.at("output_dir").is_string() && !in.at("output_dir").get<std::string>().empty())
      doc["output_dir"] = in.at("output_dir");
    else
      err.push_back("output_dir: expected a non-empty string");
  }
  doc["threads"] = 1;
  if (in.contains("threads")) {
    const auto& t = in.at("threads");
    if (detail::is_integral(t) && t.get<double>() >= 1 && t.get<double>() <= 1024)
      doc["threads"] = static_cast<int>(t.get<double>());
    else
      err.push_back("threads: expected an integer in [1, 1024], got " + t.dump());
  }
  doc["format"] = "csv";
  if (in.contains("format")) {
    const auto& f = in.at("format");
    if (f.is_string() && (f == "csv" || f == "json"))
      doc["format"] = f;
    else
      err.push_back("format: expected 'csv' or 'json', got " + f.dump());
  }

  doc["svg"] = true;
  if (in.contains("svg")) {
    if (in.at("svg").is_boolean())
      doc["svg"] = in.at("svg");
    else
      err.push_back("svg: expected boolean, got " + detail::describe(in.at("svg")));
  }

  std::size_t maps = 0;
  if (!in.contains("ifs"))
    err.push_back("ifs: missing");
  else
    doc["ifs"] = detail::check_ifs(in.at("ifs"), err, maps);

  if (in.contains("p")) {
    const auto& p = in.at("p");
    if (!p.is_array() || p.empty()) {
      err.push_back("p: expected a non-empty list of weights");
    } else {
      double total = 0.0;
      bool numeric = true;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p[i].is_number()) {
          err.push_back("p[" + std::to_string(i) + "]: expected number, got " + detail::describe(p[i]));
          numeric = false;
          continue;
        }
        const double w = p[i].get<double>();
        if (!(w > 0.0)) err.push_back("p[" + std::to_string(i) + "]: weight must be positive, got " + p[i].dump());
        total += w;
      }
      if (numeric && std::abs(total - 1.0) > 1e-9)
        err.push_back("p: weights sum to " + json(total).dump() + ", expected 1");
      if (maps && p.size() != maps)
        err.push_back("p: has " + std::to_string(p.size()) + " weights for " + std::to_string(maps) + " maps");
      doc["p"] = p;
    }
  } else if (maps) {
    doc["p"] = std::vector<double>(maps, 1.0 / maps);
  }

  // Every supplied table is checked; only the active experiment's table is kept.
  for (const auto& [name, schema] : schemas) {
    const bool active = doc.contains("experiment") && doc["experiment"] == name;
    if (!active && !in.contains(name)) continue;
    json t = detail::check_table(schema, in.contains(name) ? in.at(name) : json::object(), name, err);
    if (t.contains("N_min") && t["N_min"].is_number() && t["N_max"].is_number() &&
        t["N_min"].get<int>() > t["N_max"].get<int>())
      err.push_back(name + ".N_max: must be >= N_min");
    if (active) doc[name] = std::move(t);
  }

  if (err.empty()) res.config = ExperimentConfig{doc};
  return res;
}

inline ParseResult parse_config(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::parse_error& e) {
    return {std::nullopt, {std::string("config: malformed JSON: ") + e.what()}};
  }
  return parse_config_json(in);
}

inline std::string serialize_config(const ExperimentConfig& c) { return c.doc.dump(2) + "\n"; }

inline ConformalIFS build_ifs(const ExperimentConfig& c) {
  const json& ifs = c.doc.at("ifs");
  if (ifs.contains("fixture")) return fixtures::named_fixture(ifs.at("fixture").get<std::string>());
  std::vector<HolomorphicMap> prims;
  for (const auto& m : ifs.at("maps")) {
    std::vector<cplx> coeffs;
    for (const auto& z : m.at("coefficients")) coeffs.emplace_back(z[0].get<double>(), z[1].get<double>());
    const std::string kind = m.at("kind").get<std::string>();
    const MapKind k = kind == "affine" ? MapKind::affine : kind == "moebius" ? MapKind::moebius : MapKind::polynomial;
    prims.emplace_back(k, std::move(coeffs));
  }
  return ConformalIFS::from_primitives(prims);
}

}  // namespace conflab::cli
