#pragma once

// Experiment dispatch. Each experiment writes its tables into an OutputDir and
// reports findings; a finding is a negative mathematical outcome (exit 2), an
// exception is a failure (exit 1).

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "../dolgopyat.hpp"
#include "../fourier.hpp"
#include "../renewal.hpp"
#include "../transfer.hpp"
#include "config.hpp"
#include "io.hpp"

#ifndef CONFLAB_VERSION
#define CONFLAB_VERSION "0.1.0-unknown"
#endif

namespace conflab::cli {

inline constexpr const char* version_string = CONFLAB_VERSION;

struct RunResult {
  int exit_code = 0;
  std::vector<std::string> findings;
  std::string manifest_sha256;
  std::vector<ManifestEntry> files;
};

// Error raised by a module, prefixed with the module name.
class ModuleError : public std::runtime_error {
 public:
  ModuleError(const std::string& module, const std::string& what) : std::runtime_error(module + ": " + what) {}
};

namespace detail {

struct Context {
  const ExperimentConfig& cfg;
  const json& par;
  ConformalIFS ifs;
  std::vector<double> p;
  OutputDir& out;
  std::vector<std::string>& findings;
  std::uint64_t seed;
  int threads;

  void chart(const std::string& name, const ChartSpec& spec, const std::vector<Series>& s) {
    if (cfg.svg()) out.write_text(name + ".svg", svg_line_chart(spec, s));
  }
};

inline json cplx_json(cplx z) { return json::array({json_number(z.real()), json_number(z.imag())}); }

inline std::vector<cplx> vec2_list(const json& j) {
  std::vector<cplx> v;
  for (const auto& e : j) v.emplace_back(e[0].get<double>(), e[1].get<double>());
  return v;
}

inline json validation_json(const ValidationReport& r) {
  json failures = json::array();
  for (const auto& f : r.failures)
    failures.push_back({{"hypothesis", to_string(f.hypothesis)}, {"map", f.map}, {"detail", f.detail}});
  return {{"valid", r.valid},
          {"rho_min", json_number(r.rho_min)},
          {"rho", json_number(r.rho)},
          {"distortion", json_number(r.distortion)},
          {"grad_bound", json_number(r.grad_bound)},
          {"failures", failures}};
}

inline void run_validate(Context& c) {
  const auto rep =
      validate_ifs(c.ifs, c.par.at("boundary_samples").get<int>(), c.par.at("margin").get<double>());
  Table t{{"map", "kind", "boundary_modulus", "lipschitz_slack", "certified", "max_derivative", "min_derivative",
           "critical_points", "fixed_re", "fixed_im"}};
  for (std::size_t i = 0; i < rep.maps.size(); ++i) {
    const auto& m = rep.maps[i];
    std::string kind;
    for (const auto& f : c.ifs.map(i).factors) kind += (kind.empty() ? "" : "*") + std::string(to_string(f.kind()));
    t.add({static_cast<std::int64_t>(i), kind, m.boundary_modulus, m.lipschitz_slack, m.certified, m.max_derivative,
           m.min_derivative, static_cast<std::int64_t>(m.critical_points), m.fixed_point.real(),
           m.fixed_point.imag()});
  }
  c.out.write_table("maps", t);
  c.out.write_json("validation", validation_json(rep));
  if (!rep.valid) c.findings.push_back("validate: IFS violates " + std::to_string(rep.failures.size()) + " hypothesis checks");
}

inline void run_sample(Context& c) {
  int depth = c.par.at("depth").get<int>();
  if (depth == 0) depth = depth_for_tolerance(c.ifs.rho(), c.par.at("tol").get<double>());
  const auto em = sample_batch(c.ifs, c.p, c.seed, c.par.at("count").get<std::size_t>(), depth, c.threads);
  Table t{{"re", "im"}};
  t.rows.reserve(em.size());
  for (const cplx& z : em.points) t.rows.push_back({z.real(), z.imag()});
  c.out.write_table("samples", t);
  std::vector<double> re(em.size()), im(em.size());
  for (std::size_t i = 0; i < em.size(); ++i) {
    re[i] = em.points[i].real();
    im[i] = em.points[i].imag();
  }
  const auto mr = mean_se(re), mi = mean_se(im);
  c.out.write_json("summary", {{"count", em.size()},
                               {"depth", depth},
                               {"mean", json::array({json_number(mr.mean), json_number(mi.mean)})},
                               {"mean_stderr", json::array({json_number(mr.se), json_number(mi.se)})}});
}

inline void run_fourier(Context& c) {
  const auto n = c.par.at("samples").get<std::size_t>();
  const auto em = sample_batch(c.ifs, c.p, c.seed, n, c.par.at("depth").get<int>(), c.threads);
  const auto ladder = geometric_ladder(c.par.at("ladder_base").get<double>(), c.par.at("ladder_factor").get<double>(),
                                       c.par.at("ladder_count").get<int>());
  DecayFitOptions opt;
  opt.noise_sigmas = c.par.at("noise_sigmas").get<double>();
  opt.bootstrap = c.par.at("bootstrap").get<int>();
  opt.seed = c.seed;
  opt.threads = c.threads;
  Table scan{{"direction_x", "direction_y", "q_abs", "re", "im", "abs", "stderr", "used"}};
  json fits = json::array();
  std::vector<Series> series;
  for (const cplx& d : vec2_list(c.par.at("directions"))) {
    const cplx u = d / std::abs(d);
    const auto s = decay_fit(em, u, ladder, n, opt);
    Series line{"(" + format_double(u.real()) + ", " + format_double(u.imag()) + ")", {}, {}};
    for (std::size_t i = 0; i < s.radii.size(); ++i) {
      scan.add({u.real(), u.imag(), s.radii[i], s.estimates[i].real(), s.estimates[i].imag(),
                std::abs(s.estimates[i]), s.stderrs[i], static_cast<bool>(s.used[i])});
      line.x.push_back(s.radii[i]);
      line.y.push_back(std::abs(s.estimates[i]));
    }
    series.push_back(std::move(line));
    fits.push_back({{"direction", cplx_json(u)},
                    {"alpha_hat", json_number(s.alpha_hat)},
                    {"ci_low", json_number(s.ci_low)},
                    {"ci_high", json_number(s.ci_high)},
                    {"radii_used", s.radii_used},
                    {"refused", s.refused},
                    {"noise_floor", json_number(s.noise_floor)}});
  }
  c.out.write_table("scan", scan);
  c.out.write_json("fit", {{"samples", n}, {"fits", fits}});
  c.chart("scan", {"Fourier modulus along each direction", "|q|", "|F_q|", true, true}, series);
}

inline void run_spectral_gap(Context& c) {
  const auto a = c.par.at("a_list").get<std::vector<double>>();
  const auto b = c.par.at("b_list").get<std::vector<double>>();
  const auto ell = c.par.at("ell_list").get<std::vector<int>>();
  SpectralProbeConfig probes;
  probes.cone_probes = c.par.at("cone_probes").get<int>();
  probes.trig_probes = c.par.at("trig_probes").get<int>();
  probes.seed = c.seed;
  const int n_max = c.par.at("n_max").get<int>();
  const auto rep = spectral_decay_experiment(c.ifs, c.p, a, b, ell, n_max, c.par.at("grid_step").get<double>(), probes);
  const double threshold = c.par.at("decay_threshold").get<double>();
  Table t{{"a", "b", "ell", "n", "c1_norm"}};
  json rows = json::array();
  std::vector<Series> series;
  for (const auto& r : rep.rows) {
    Series s{"b=" + format_double(r.b) + " ell=" + std::to_string(r.ell), {}, {}};
    for (int n = 1; n <= n_max; ++n) {
      t.add({r.a, r.b, static_cast<std::int64_t>(r.ell), static_cast<std::int64_t>(n), r.c1_norm[n - 1]});
      s.x.push_back(n);
      s.y.push_back(r.c1_norm[n - 1]);
    }
    series.push_back(std::move(s));
    rows.push_back({{"a", r.a},
                    {"b", r.b},
                    {"ell", r.ell},
                    {"alpha_hat", json_number(r.alpha_hat)},
                    {"log_constant", json_number(r.log_constant)},
                    {"fit_residual", json_number(r.fit_residual)},
                    {"grad_constant_hat", json_number(r.grad_constant_hat)},
                    {"grad_constant_bound", json_number(r.grad_constant_bound)},
                    {"decays", r.alpha_hat < threshold}});
    if (!(r.alpha_hat < threshold))
      c.findings.push_back("spectral-gap: no decay at (a, b, ell) = (" + format_double(r.a) + ", " +
                           format_double(r.b) + ", " + std::to_string(r.ell) + "), alpha_hat = " +
                           format_double(r.alpha_hat));
  }
  c.out.write_table("norms", t);
  c.out.write_json("fit", {{"rows", rows},
                           {"gamma_hat", json_number(rep.gamma_hat)},
                           {"tail_start", rep.tail_start},
                           {"decay_threshold", threshold}});
  c.chart("norms", {"C1 norm of iterated transfer operator", "n", "||P^n g|| / ||g||", false, true}, series);
}

inline void run_uni(Context& c) {
  const auto w = uni_scan(c.ifs, c.par.at("n").get<int>(), c.par.at("grid_step").get<double>(),
                          c.par.at("pair_budget").get<std::size_t>());
  json cert{{"xi", w.xi}, {"zeta", w.zeta}, {"m_hat", json_number(w.m_hat)}, {"m_prime_hat", json_number(w.m_prime_hat)}};
  if (w.m_hat == 0.0) {
    c.findings.push_back("uni: m_hat = 0, no word pair separates the log-derivatives");
    cert["tn"] = nullptr;
  } else {
    const auto tn = tn_check(c.ifs, w, c.par.at("fd_step").get<double>());
    cert["tn"] = {{"delta2_hat", json_number(tn.delta2_hat)},
                  {"jacobian_residual", json_number(tn.jacobian_residual)},
                  {"c1_norm", json_number(tn.c1_norm)},
                  {"c2_norm", json_number(tn.c2_norm)},
                  {"min_det", json_number(tn.min_det)},
                  {"max_angle_excursion", json_number(tn.max_angle_excursion)}};
  }
  c.out.write_json("certificate", cert);
}

inline json attempts_json(const InducingResult& r) {
  json a = json::array();
  for (const auto& t : r.attempts)
    a.push_back({{"N", t.N}, {"best_m", json_number(t.best_m)}, {"best_slack", json_number(t.best_slack)}, {"reason", t.reason}});
  return a;
}

// Shared by model and dolgopyat; records a finding and returns nullopt without a certificate.
inline std::optional<Model> induced_model(Context& c) {
  InducingOptions opt;
  if (c.par.contains("grid_step") && c.cfg.experiment() == "model") opt.grid_step = c.par.at("grid_step").get<double>();
  const auto res = inducing_search(c.ifs, c.par.at("N_min").get<int>(), c.par.at("N_max").get<int>(), opt);
  if (!res.certificate) {
    c.out.write_json("model", {{"certificate", nullptr}, {"attempts", attempts_json(res)}});
    c.findings.push_back(c.cfg.experiment() + ": no inducing certificate for N in [" +
                         std::to_string(c.par.at("N_min").get<int>()) + ", " +
                         std::to_string(c.par.at("N_max").get<int>()) + "]");
    return std::nullopt;
  }
  const auto& cert = *res.certificate;
  Model m = build_model(c.ifs, c.p, cert);
  json designated = json::array();
  for (const auto& d : m.designated) designated.push_back(d[0] < 0 ? json(nullptr) : json(d));
  c.out.write_json("model", {{"certificate",
                              {{"N", cert.N},
                               {"maps", cert.maps},
                               {"m", json_number(cert.m)},
                               {"m_prime", json_number(cert.m_prime)},
                               {"slack", json_number(cert.slack)},
                               {"disjoint", cert.disjoint}}},
                             {"attempts", attempts_json(res)},
                             {"map_count", m.ifs.size()},
                             {"membership", m.sub_ifss},
                             {"n_counts", m.n_counts},
                             {"q", m.q},
                             {"p_tilde", m.p_tilde},
                             {"designated", designated}});
  return m;
}

inline void run_model(Context& c) { induced_model(c); }

inline void run_dolgopyat(Context& c) {
  const auto model = induced_model(c);
  if (!model) return;
  Rng omega_rng(c.seed, 1);
  const auto omega = sample_omega(*model, omega_rng, c.par.at("omega_length").get<std::size_t>());
  const ParameterChoice pc = choose_parameters(*model, omega, c.seed);
  const auto& pr = pc.params;
  json params{{"A", json_number(pr.A)},         {"theta_damp", json_number(pr.theta_damp)},
              {"eps1", json_number(pr.eps1)},   {"delta1", json_number(pr.delta1)},
              {"delta2", json_number(pr.delta2)}, {"delta3", json_number(pr.delta3)},
              {"N", pr.N},                      {"rho", json_number(pr.rho)},
              {"feasible", pc.report.ok()}};
  const std::string hash = omega_prefix_hash(omega);
  json summary{{"omega_prefix_hash", hash}, {"params", params}};
  if (!pc.report.ok()) {
    c.out.write_json("dolgopyat", summary);
    c.findings.push_back("dolgopyat: no feasible parameters");
    return;
  }
  const double b = c.par.at("b").get<double>();
  const int ell = c.par.at("ell").get<int>();
  DolgopyatSetup setup;
  setup.samples = c.par.at("samples").get<std::size_t>();
  setup.check_samples = c.par.at("check_samples").get<std::size_t>();
  const auto sys = prepare_dolgopyat(*model, omega, pr, b, ell, c.seed, setup);

  ContractionOptions copt;
  copt.grid_step = c.par.at("grid_step").get<double>();
  copt.threads = c.threads;
  const auto rep = cone_and_contraction_test(sys, c.par.at("cone_trials").get<int>(), c.seed, copt);
  Table t{{"omega_prefix_hash", "b", "ell", "trial", "cone_ok", "worst_cone_ratio", "ratio"}};
  for (const auto& tr : rep.trials)
    t.add({hash, b, static_cast<std::int64_t>(ell), static_cast<std::int64_t>(tr.trial), tr.cone_ok,
           tr.worst_cone_ratio, tr.ratio});
  c.out.write_table("contraction", t);

  const int pairs = c.par.at("domination_pairs").get<int>();
  const GridPtr grid = make_grid(copt.grid_step);
  DominationOptions dopt;
  dopt.threads = c.threads;
  Table d{{"pair", "saturated", "verified", "dense", "failures", "arg_violations", "worst_excess", "case_1", "case_2",
           "case_3", "case_4"}};
  int verified = 0;
  for (int k = 0; k < pairs; ++k) {
    Rng rng(c.seed ^ 0xd0a11a7eULL, k);
    const bool saturated = k % 2 == 0;
    const auto pair = random_domination_pair(rng, grid, pr.A * sys.frequency(), saturated);
    const auto r = domination_select(sys, pair.f, pair.H, dopt);
    verified += r.verified;
    d.add({static_cast<std::int64_t>(k), saturated, r.verified, r.dense, static_cast<std::int64_t>(r.failures.size()),
           static_cast<std::int64_t>(r.arg_violations), r.worst_excess, static_cast<std::int64_t>(r.case_counts[0]),
           static_cast<std::int64_t>(r.case_counts[1]), static_cast<std::int64_t>(r.case_counts[2]),
           static_cast<std::int64_t>(r.case_counts[3])});
  }
  c.out.write_table("domination", d);

  const double verified_fraction = pairs ? static_cast<double>(verified) / pairs : 1.0;
  summary["b"] = b;
  summary["ell"] = ell;
  summary["cone_ok_fraction"] = rep.cone_ok_fraction;
  summary["alpha_hat"] = json_number(rep.alpha_hat);
  summary["domination_verified_fraction"] = verified_fraction;
  c.out.write_json("dolgopyat", summary);
  if (rep.cone_ok_fraction < 0.99)
    c.findings.push_back("dolgopyat: cone invariance held on only " + format_double(rep.cone_ok_fraction) + " of trials");
  if (!(rep.alpha_hat < 1.0)) c.findings.push_back("dolgopyat: no contraction, alpha_hat = " + format_double(rep.alpha_hat));
  if (verified_fraction < 0.95)
    c.findings.push_back("dolgopyat: domination verified on only " + format_double(verified_fraction) + " of pairs");
}

inline void run_renewal(Context& c) {
  auto ks = c.par.at("k_list").get<std::vector<double>>();
  std::sort(ks.begin(), ks.end());
  const int trials = c.par.at("trials").get<int>();
  OvershootOptions opt;
  opt.limit_samples = c.par.at("limit_samples").get<int>();
  opt.threads = c.threads;
  opt.walk.tail_depth = c.par.at("tail_depth").get<int>();
  opt.walk.unit = parse_circle_unit(c.par.at("circle_unit").get<std::string>());
  const auto chi = lyapunov_chi(c.ifs, c.p, c.par.at("lyapunov_walk").get<int>(),
                                c.par.at("lyapunov_trials").get<int>(), c.seed, opt.walk.tail_depth, c.threads);

  Table walks{{"k", "trial", "tau", "overshoot", "angle"}};
  json laws = json::array();
  std::vector<Series> series;
  double prev = INFINITY;
  bool monotone = true;
  for (double k : ks) {
    const auto law = overshoot_law(c.ifs, c.p, k, trials, c.seed, opt);
    for (int t = 0; t < trials; ++t)
      walks.add({k, static_cast<std::int64_t>(t), static_cast<std::int64_t>(law.tau[t]), law.overshoot[t], law.angle[t]});
    laws.push_back({{"k", k},
                    {"ks_overshoot", law.ks_overshoot},
                    {"ks_angle", law.ks_angle},
                    {"chi_limit", law.chi_limit},
                    {"overshoot_hist", {{"lo", law.overshoot_hist.lo}, {"hi", law.overshoot_hist.hi}, {"mass", law.overshoot_hist.mass}}},
                    {"angle_hist", {{"lo", law.angle_hist.lo}, {"hi", law.angle_hist.hi}, {"mass", law.angle_hist.mass}}}});
    Series s{"k=" + format_double(k), {}, {}};
    const auto& h = law.overshoot_hist;
    for (std::size_t i = 0; i < h.mass.size(); ++i) {
      s.x.push_back(h.lo + (i + 0.5) * h.bin_width());
      s.y.push_back(h.mass[i] / h.bin_width());
    }
    series.push_back(std::move(s));
    monotone = monotone && law.ks_overshoot < prev;
    prev = law.ks_overshoot;
  }
  c.out.write_table("walks", walks);
  c.out.write_json("law", {{"circle_unit", to_string(opt.walk.unit)},
                           {"chi", chi.chi},
                           {"chi_stderr", chi.stderr_},
                           {"ks_decreasing", monotone},
                           {"laws", laws}});
  c.chart("overshoot", {"Overshoot density", "overshoot", "density", false, false}, series);
  if (!monotone && ks.size() > 1)
    c.findings.push_back("renewal: KS distance to the limit law does not decrease in k (lattice-like walk)");
}

inline void run_pipeline(Context& c) {
  const auto qs = vec2_list(c.par.at("q_list"));
  BudgetOptions opt;
  opt.samples = c.par.at("samples").get<std::size_t>();
  opt.walks = c.par.at("walks").get<int>();
  opt.overshoot_trials = c.par.at("overshoot_trials").get<int>();
  opt.osc_grid = c.par.at("osc_grid").get<int>();
  opt.seed = c.seed;
  opt.threads = c.threads;
  const auto rep = decay_pipeline_report(c.ifs, c.p, qs, c.par.at("eps").get<double>(), opt);
  Table t{{"q_x", "q_y", "q_abs", "k", "r", "beta", "fourier_abs", "fourier_stderr", "linearization",
           "linearization_pass", "equidistribution", "oscillatory", "budget", "within"}};
  for (const auto& r : rep.rows)
    t.add({r.q.real(), r.q.imag(), r.q_abs, r.k, r.r, r.beta, r.fourier_abs, r.fourier_stderr, r.linearization,
           r.linearization_pass, r.equidistribution, r.oscillatory, r.budget, r.within});
  c.out.write_table("budget", t);
  c.out.write_json("pipeline", {{"eps", rep.eps}, {"hypothesis_violation", rep.hypothesis_violation}, {"note", rep.note}});
  if (rep.hypothesis_violation) c.findings.push_back("pipeline: " + (rep.note.empty() ? "no Fourier decay" : rep.note));
}

}  // namespace detail

// Writes every artifact and manifest.json into out_dir (the config's
// output_dir when empty). Throws ModuleError on failure.
inline RunResult run_experiment(const ExperimentConfig& cfg, std::filesystem::path out_dir = {}) {
  if (out_dir.empty()) out_dir = cfg.output_dir();
  const std::string exp = cfg.experiment();
  OutputDir out(out_dir, parse_format(cfg.format()));
  RunResult res;
  try {
    ConformalIFS ifs = build_ifs(cfg);
    detail::Context c{cfg, cfg.params(), ifs, cfg.p(), out, res.findings, cfg.seed(), cfg.threads()};
    if (exp != "validate") {
      const auto rep = validate_ifs(ifs);
      if (!rep.valid) {
        out.write_json("validation", detail::validation_json(rep));
        res.findings.push_back(exp + ": IFS violates the standing hypotheses; see validation.json");
      }
    }
    if (res.findings.empty()) {
      if (exp == "validate") detail::run_validate(c);
      else if (exp == "sample") detail::run_sample(c);
      else if (exp == "fourier") detail::run_fourier(c);
      else if (exp == "spectral-gap") detail::run_spectral_gap(c);
      else if (exp == "uni") detail::run_uni(c);
      else if (exp == "model") detail::run_model(c);
      else if (exp == "dolgopyat") detail::run_dolgopyat(c);
      else if (exp == "renewal") detail::run_renewal(c);
      else if (exp == "pipeline") detail::run_pipeline(c);
      else throw std::invalid_argument("unknown experiment");
    }
  } catch (const ModuleError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModuleError(exp, e.what());
  }
  res.exit_code = res.findings.empty() ? 0 : 2;
  json header{{"experiment", exp},
              {"version", version_string},
              {"seed", cfg.seed()},
              {"config_sha256", sha256_hex(serialize_config(cfg))},
              {"config", cfg.doc},
              {"exit_code", res.exit_code},
              {"findings", res.findings}};
  res.files = out.entries();
  res.manifest_sha256 = out.write_manifest(header);
  return res;
}

}  // namespace conflab::cli
