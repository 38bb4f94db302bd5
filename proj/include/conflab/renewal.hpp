#pragma once

// The norm/angle random walk driven by the symbolic derivative cocycle,
// stopping times, and truncated renewal / residue sums.
//
// Along omega, X_i = c(omega_i, x_{sigma^i omega}) and Y_i = theta(omega_i, x_{sigma^i omega}).
// The tail points are realized by extending the walk prefix with `tail_depth`
// further symbols and pushing 0 through them, so each x carries an error of
// order rho^tail_depth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifs.hpp"
#include "measure.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace conflab {

enum class CircleUnit { turns, radians };

inline CircleUnit parse_circle_unit(const std::string& s) {
  if (s == "turns" || s == "mod1") return CircleUnit::turns;
  if (s == "radians" || s == "mod2pi") return CircleUnit::radians;
  throw std::invalid_argument("circle_unit must be 'turns' or 'radians', got '" + s + "'");
}

inline const char* to_string(CircleUnit u) { return u == CircleUnit::turns ? "turns" : "radians"; }

// Angle in [0, 2pi) expressed in the reporting unit.
inline double report_angle(double radians, CircleUnit u) {
  const double a = wrap_angle(radians);
  return u == CircleUnit::turns ? a / two_pi : a;
}

inline double circle_period(CircleUnit u) { return u == CircleUnit::turns ? 1.0 : two_pi; }

// A finite stretch of the walk. points[n] approximates x_{sigma^n omega}.
struct SymbolicPath {
  Word omega;                 // steps + tail_depth symbols
  std::vector<cplx> points;   // n = 0..steps
  std::vector<double> steps_c;      // X_1..X_steps
  std::vector<double> steps_theta;  // Y_1..Y_steps, radians, not reduced
};

inline SymbolicPath symbolic_path(const ConformalIFS& ifs, std::span<const int> omega, int steps) {
  if (steps < 0 || static_cast<std::size_t>(steps) > omega.size())
    throw std::invalid_argument("symbolic_path: steps outside [0, |omega|]");
  SymbolicPath path;
  path.omega.assign(omega.begin(), omega.end());
  const std::size_t len = omega.size();
  std::vector<cplx> x(len + 1);
  x[len] = 0.0;
  for (std::size_t j = len; j-- > 0;) {
    check_symbol(ifs, omega[j]);
    x[j] = eval_map(ifs.map(omega[j]), x[j + 1]).value;
  }
  path.points.assign(x.begin(), x.begin() + steps + 1);
  path.steps_c.resize(steps);
  path.steps_theta.resize(steps);
  for (int i = 0; i < steps; ++i) {
    const WordJet j = eval_map(ifs.map(omega[i]), x[i + 1]);
    path.steps_c[i] = j.norm_cocycle();
    path.steps_theta[i] = j.arg_sum;
  }
  return path;
}

inline Word random_word(Rng& rng, std::span<const double> cumulative, std::size_t length) {
  Word w(length);
  for (int& s : w) s = rng.categorical(cumulative);
  return w;
}

// ---------------------------------------------------------------------------
// Lyapunov exponent

struct ChiEstimate {
  double chi = 0.0;
  double stderr_ = 0.0;
};

// Mean of S_n / n over independent walks. Trial t uses substream (seed, t).
inline ChiEstimate lyapunov_chi(const ConformalIFS& ifs, std::span<const double> p, int walk_length, int trials,
                                std::uint64_t seed, int tail_depth = 40, int threads = 1) {
  check_probability(p, ifs.size());
  if (walk_length < 1 || trials < 1) throw std::invalid_argument("lyapunov_chi: walk_length and trials must be >= 1");
  const auto cum = cumulative_weights(p);
  std::vector<double> per(trials);
  parallel_chunks(trials, threads, [&](std::size_t t) {
    Rng rng(seed, t);
    const Word w = random_word(rng, cum, walk_length + tail_depth);
    const SymbolicPath path = symbolic_path(ifs, w, walk_length);
    per[t] = pairwise_sum(path.steps_c) / walk_length;
  });
  const MeanSe ms = mean_se(per);
  return {ms.mean, ms.se};
}

// ---------------------------------------------------------------------------
// Stopping times

enum class StopMode { tau, beta };

struct WalkOptions {
  StopMode mode = StopMode::tau;
  double eps = 0.1;      // beta mode threshold exponent k (1 + eps / 18)
  cplx x0 = 0.0;         // beta mode base point
  int tail_depth = 40;
  CircleUnit unit = CircleUnit::turns;
  // When non-empty, replaces the fresh random symbols beyond the walk prefix.
  Word tail;
};

struct WalkRecord {
  Word omega_prefix;            // omega_1..omega_tau (or up to beta when larger)
  std::vector<double> S;        // S_1, S_2, ...
  std::vector<double> angle;    // A_1, A_2, ... in the reporting unit
  int tau = 0;
  double overshoot = 0.0;       // S_tau - k
  double angle_at_stop = 0.0;   // A_tau in the reporting unit
  std::optional<int> beta;
};

// Upper bound on the walk length needed to pass level `level`.
inline int steps_to_pass(const ConformalIFS& ifs, double level) {
  return static_cast<int>(std::ceil(level / ifs.c_min())) + 1;
}

inline WalkRecord walk_from(const ConformalIFS& ifs, std::span<const int> omega, double k, const WalkOptions& opt) {
  if (!(k > 0.0)) throw std::invalid_argument("walk_until: k must be positive");
  const double beta_level = k * (1.0 + opt.eps / 18.0);
  const int steps = steps_to_pass(ifs, opt.mode == StopMode::beta ? std::max(k, beta_level) : k);
  if (omega.size() < static_cast<std::size_t>(steps))
    throw std::invalid_argument("walk_until: omega shorter than the required walk length");
  const SymbolicPath path = symbolic_path(ifs, omega, steps);
  WalkRecord r;
  double s = 0.0, a = 0.0;
  for (int n = 1; n <= steps; ++n) {
    s += path.steps_c[n - 1];
    a += path.steps_theta[n - 1];
    r.S.push_back(s);
    r.angle.push_back(report_angle(a, opt.unit));
    if (s >= k) {
      r.tau = n;
      break;
    }
  }
  if (r.tau == 0) throw std::logic_error("walk_until: level not reached within the c_min bound");
  r.overshoot = r.S.back() - k;
  r.angle_at_stop = r.angle.back();
  std::size_t prefix = r.tau;
  if (opt.mode == StopMode::beta) {
    // c(omega|m, x0) grows by at least c_min per symbol, so the loop ends.
    for (int m = 1; m <= steps; ++m) {
      const double c = eval_word(ifs, omega.first(m), opt.x0).norm_cocycle();
      if (c > beta_level) {
        r.beta = m;
        break;
      }
    }
    if (!r.beta) throw std::logic_error("walk_until: beta level not reached within the c_min bound");
    prefix = std::max<std::size_t>(prefix, *r.beta);
  }
  r.omega_prefix.assign(omega.begin(), omega.begin() + prefix);
  return r;
}

inline Word walk_symbols(const ConformalIFS& ifs, std::span<const double> p, double k, Rng& rng, const WalkOptions& opt) {
  const double level = opt.mode == StopMode::beta ? k * (1.0 + opt.eps / 18.0) : k;
  const int steps = steps_to_pass(ifs, std::max(k, level));
  const auto cum = cumulative_weights(p);
  Word w = random_word(rng, cum, steps);
  if (opt.tail.empty()) {
    const Word t = random_word(rng, cum, opt.tail_depth);
    w.insert(w.end(), t.begin(), t.end());
  } else {
    for (int s : opt.tail) check_symbol(ifs, s);
    w.insert(w.end(), opt.tail.begin(), opt.tail.end());
  }
  return w;
}

inline WalkRecord walk_until(const ConformalIFS& ifs, std::span<const double> p, double k, std::uint64_t seed,
                             const WalkOptions& opt = {}) {
  check_probability(p, ifs.size());
  Rng rng(seed);
  const Word w = walk_symbols(ifs, p, k, rng, opt);
  return walk_from(ifs, w, k, opt);
}

// ---------------------------------------------------------------------------
// Step law

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> mass;  // sums to 1 over in-range samples

  double bin_width() const { return (hi - lo) / mass.size(); }
};

inline Histogram histogram(std::span<const double> v, double lo, double hi, int bins) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram: need bins >= 1 and hi > lo");
  Histogram h{lo, hi, std::vector<double>(bins, 0.0)};
  for (double x : v) {
    const int b = std::clamp(static_cast<int>((x - lo) / (hi - lo) * bins), 0, bins - 1);
    h.mass[b] += 1.0;
  }
  for (double& m : h.mass) m /= static_cast<double>(v.size());
  return h;
}

struct StepLaw {
  std::vector<double> x;      // samples of X_1
  std::vector<double> y;      // samples of Y_1, radians in [0, 2pi)
  Histogram kappa;            // on [c_min, c_max]
  Histogram beta;             // on [0, 2pi)
};

inline StepLaw step_law(const ConformalIFS& ifs, std::span<const double> p, int samples, std::uint64_t seed,
                        int bins = 32, int tail_depth = 40) {
  check_probability(p, ifs.size());
  if (samples < 1) throw std::invalid_argument("step_law: samples must be >= 1");
  const auto cum = cumulative_weights(p);
  StepLaw law;
  law.x.resize(samples);
  law.y.resize(samples);
  for (int t = 0; t < samples; ++t) {
    Rng rng(seed, t);
    const Word w = random_word(rng, cum, 1 + tail_depth);
    const SymbolicPath path = symbolic_path(ifs, w, 1);
    law.x[t] = path.steps_c[0];
    law.y[t] = wrap_angle(path.steps_theta[0]);
  }
  const double lo = ifs.c_min(), hi = ifs.c_max();
  law.kappa = histogram(law.x, lo, hi > lo ? hi : lo + 1e-9, bins);
  law.beta = histogram(law.y, 0.0, two_pi, bins);
  return law;
}

// ---------------------------------------------------------------------------
// Overshoot law and its limit

// Limit overshoot CDF F(u) = E[min(X, u)] / E[X] for X drawn from the step law.
// The limit angle is uniform and independent of the overshoot.
class OvershootLimit {
 public:
  explicit OvershootLimit(std::vector<double> steps) : x_(std::move(steps)) {
    if (x_.empty()) throw std::invalid_argument("OvershootLimit: empty step sample");
    std::sort(x_.begin(), x_.end());
    prefix_.assign(x_.size() + 1, 0.0);
    for (std::size_t i = 0; i < x_.size(); ++i) prefix_[i + 1] = prefix_[i] + x_[i];
    chi_ = prefix_.back() / x_.size();
  }

  double chi() const { return chi_; }

  double cdf(double u) const {
    if (u <= 0.0) return 0.0;
    const auto below = static_cast<std::size_t>(std::lower_bound(x_.begin(), x_.end(), u) - x_.begin());
    const double sum = prefix_[below] + u * static_cast<double>(x_.size() - below);
    return std::min(1.0, sum / static_cast<double>(x_.size()) / chi_);
  }

 private:
  std::vector<double> x_;
  std::vector<double> prefix_;
  double chi_ = 0.0;
};

struct OvershootLaw {
  double k = 0.0;
  CircleUnit unit = CircleUnit::turns;
  std::vector<int> tau;
  std::vector<double> overshoot;
  std::vector<double> angle;   // reporting unit
  Histogram overshoot_hist;
  Histogram angle_hist;
  double chi_limit = 0.0;
  double ks_overshoot = 0.0;   // vs the limit CDF
  double ks_angle = 0.0;       // vs uniform on the circle
};

struct OvershootOptions {
  int limit_samples = 20000;
  int bins = 32;
  int threads = 1;
  WalkOptions walk;
};

// Trial t uses substream (seed, t); the limit sample uses seed ^ a fixed salt.
inline OvershootLaw overshoot_law(const ConformalIFS& ifs, std::span<const double> p, double k, int trials,
                                  std::uint64_t seed, const OvershootOptions& opt = {}) {
  check_probability(p, ifs.size());
  if (trials < 1) throw std::invalid_argument("overshoot_law: trials must be >= 1");
  OvershootLaw law;
  law.k = k;
  law.unit = opt.walk.unit;
  law.tau.resize(trials);
  law.overshoot.resize(trials);
  law.angle.resize(trials);
  constexpr std::size_t chunk = 1024;
  parallel_chunks((trials + chunk - 1) / chunk, opt.threads, [&](std::size_t c) {
    const std::size_t end = std::min<std::size_t>(trials, (c + 1) * chunk);
    for (std::size_t t = c * chunk; t < end; ++t) {
      Rng rng(seed, t);
      const Word w = walk_symbols(ifs, p, k, rng, opt.walk);
      const WalkRecord r = walk_from(ifs, w, k, opt.walk);
      law.tau[t] = r.tau;
      law.overshoot[t] = r.overshoot;
      law.angle[t] = r.angle_at_stop;
    }
  });
  const StepLaw steps = step_law(ifs, p, opt.limit_samples, seed ^ 0x5eedf00dULL, opt.bins, opt.walk.tail_depth);
  const OvershootLimit limit(steps.x);
  law.chi_limit = limit.chi();
  law.ks_overshoot = ks_statistic(law.overshoot, [&](double u) { return limit.cdf(u); });
  const double period = circle_period(law.unit);
  law.ks_angle = ks_statistic(law.angle, [&](double a) { return std::clamp(a / period, 0.0, 1.0); });
  law.overshoot_hist = histogram(law.overshoot, 0.0, std::max(ifs.c_max(), 1e-9), opt.bins);
  law.angle_hist = histogram(law.angle, 0.0, period, opt.bins);
  return law;
}

// Exact law of (overshoot, angle) at level k for an IFS of affine maps, where
// the cocycle does not depend on the base point. Word-tree enumeration; atoms
// closer than `merge_tol` are merged.
struct StoppingAtom {
  double overshoot;
  double angle;  // radians in [0, 2pi)
  double probability;
};

struct StoppingLaw {
  std::vector<StoppingAtom> atoms;  // sorted by overshoot
  double total_probability = 0.0;
  std::size_t words = 0;
};

inline StoppingLaw enumerate_stopping_law(const ConformalIFS& ifs, std::span<const double> p, double k,
                                          std::size_t max_words = 50'000'000, double merge_tol = 1e-12) {
  check_probability(p, ifs.size());
  if (!(k > 0.0)) throw std::invalid_argument("enumerate_stopping_law: k must be positive");
  std::vector<double> c(ifs.size()), th(ifs.size());
  for (std::size_t i = 0; i < ifs.size(); ++i) {
    for (const auto& g : ifs.map(i).factors)
      if (g.kind() != MapKind::affine)
        throw std::invalid_argument("enumerate_stopping_law: needs affine maps (point-independent cocycle)");
    const WordJet j = eval_map(ifs.map(i), 0.0);
    c[i] = j.norm_cocycle();
    th[i] = j.arg_sum;
  }
  StoppingLaw law;
  std::vector<StoppingAtom> raw;
  auto dfs = [&](auto&& self, double s, double a, double prob) -> void {
    for (std::size_t i = 0; i < ifs.size(); ++i) {
      if (p[i] == 0.0) continue;
      if (++law.words > max_words) throw std::length_error("enumerate_stopping_law: word budget exceeded");
      const double s2 = s + c[i], a2 = a + th[i], p2 = prob * p[i];
      if (s2 >= k)
        raw.push_back({s2 - k, wrap_angle(a2), p2});
      else
        self(self, s2, a2, p2);
    }
  };
  dfs(dfs, 0.0, 0.0, 1.0);
  std::sort(raw.begin(), raw.end(), [](const StoppingAtom& x, const StoppingAtom& y) {
    return x.overshoot != y.overshoot ? x.overshoot < y.overshoot : x.angle < y.angle;
  });
  for (const auto& at : raw) {
    law.total_probability += at.probability;
    if (!law.atoms.empty() && at.overshoot - law.atoms.back().overshoot <= merge_tol &&
        circle_distance(at.angle, law.atoms.back().angle) <= merge_tol)
      law.atoms.back().probability += at.probability;
    else
      law.atoms.push_back(at);
  }
  return law;
}

// KS distance between overshoot samples and the overshoot marginal of an exact
// atomic law. Samples within `snap` of an atom are moved onto it, which absorbs
// summation-order rounding.
inline double ks_to_stopping_law(std::vector<double> overshoot, const StoppingLaw& law, double snap = 1e-9) {
  std::vector<double> atoms, masses;
  for (const auto& a : law.atoms) {
    if (!atoms.empty() && a.overshoot - atoms.back() <= snap) {
      masses.back() += a.probability;
      continue;
    }
    atoms.push_back(a.overshoot);
    masses.push_back(a.probability);
  }
  for (double& x : overshoot) {
    const auto it = std::lower_bound(atoms.begin(), atoms.end(), x - snap);
    if (it != atoms.end() && std::abs(*it - x) <= snap) x = *it;
  }
  return ks_discrete(std::move(overshoot), atoms, masses);
}

// KS distance between an atomic overshoot law and the limit CDF (exact, no sampling).
inline double ks_stopping_law_to_limit(const StoppingLaw& law, const OvershootLimit& limit) {
  double cdf = 0.0, d = 0.0;
  for (const auto& a : law.atoms) {
    const double f = limit.cdf(a.overshoot);
    d = std::max(d, std::abs(cdf - f));
    cdf += a.probability;
    d = std::max(d, std::abs(cdf - f));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Renewal and residue sums

// Test function on D x T x R, with its last argument supported in [y_lo, y_hi].
struct RenewalTestFunction {
  std::function<double(cplx z, double angle, double y)> f;
  double y_lo = 0.0;
  double y_hi = 1.0;
};

// Residue test function on [c_min, c_max] x T x R, same support convention.
struct ResidueTestFunction {
  std::function<double(double step, double angle, double y)> f;
  double y_lo = 0.0;
  double y_hi = 1.0;
};

struct RenewalSum {
  double value = 0.0;
  double stderr_ = 0.0;       // zero for exact enumeration
  double tail_estimate = 0.0;  // sup|f| times the mass of paths cut by the depth limit (0 when exact)
  std::size_t words = 0;
  int max_depth_reached = 0;
  bool exact = true;
};

struct RenewalOptions {
  int n_max = 64;
  std::size_t max_words = 50'000'000;
  int mc_trials = 0;  // > 0 switches to Monte Carlo over random walks
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

// Visits every word eta (built by prepending outer symbols, so c(eta, z) rises
// by at least c_min per symbol) with c(eta, z) - t <= y_hi. visit(jet, prob, depth).
template <class Visit>
RenewalSum enumerate_renewal(const ConformalIFS& ifs, std::span<const double> p, cplx z, double t, double y_hi,
                             const RenewalOptions& opt, Visit&& visit) {
  RenewalSum out;
  auto dfs = [&](auto&& self, const WordJet& jet, double prob, int depth) -> void {
    out.max_depth_reached = std::max(out.max_depth_reached, depth);
    visit(jet, prob, depth);
    if (depth == opt.n_max) {
      for (std::size_t i = 0; i < ifs.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (jet.norm_cocycle() + eval_map(ifs.map(i), jet.value).norm_cocycle() - t <= y_hi)
          throw std::runtime_error("renewal sum: n_max = " + std::to_string(opt.n_max) +
                                   " insufficient, contributions remain at the boundary depth");
      }
      return;
    }
    for (std::size_t i = 0; i < ifs.size(); ++i) {
      if (p[i] == 0.0) continue;
      if (++out.words > opt.max_words) throw std::length_error("renewal sum: word budget exceeded");
      // eta' = i eta: f_{eta'} = f_i o f_eta.
      WordJet next = jet;
      const WordJet step = eval_map(ifs.map(i), jet.value);
      next.value = step.value;
      next.derivative = jet.derivative * step.derivative;
      next.log_modulus = jet.log_modulus + step.log_modulus;
      next.arg_sum = jet.arg_sum + step.arg_sum;
      if (next.norm_cocycle() - t > y_hi) continue;
      self(self, next, prob * p[i], depth + 1);
    }
  };
  WordJet root{z, 1.0, 0.0, 0.0, 0.0};
  dfs(dfs, root, 1.0, 0);
  return out;
}

}  // namespace detail

// R f(z, t) = sum_n int f(eta.z, theta(eta, z), c(eta, z) - t) dp^n(eta).
inline RenewalSum renewal_partial_sum(const ConformalIFS& ifs, std::span<const double> p, const RenewalTestFunction& g,
                                      cplx z, double t, const RenewalOptions& opt = {}) {
  check_probability(p, ifs.size());
  if (opt.n_max < 0) throw std::invalid_argument("renewal_partial_sum: n_max must be >= 0");
  if (opt.mc_trials > 0) {
    const int steps = steps_to_pass(ifs, t + g.y_hi);
    if (steps > opt.n_max) throw std::runtime_error("renewal sum: n_max insufficient for the support of f");
    const auto cum = cumulative_weights(p);
    std::vector<double> per(opt.mc_trials);
    parallel_chunks(opt.mc_trials, opt.threads, [&](std::size_t tr) {
      Rng rng(opt.seed, tr);
      WordJet jet{z, 1.0, 0.0, 0.0, 0.0};
      double acc = 0.0;
      for (int n = 0; n <= steps; ++n) {
        const double y = jet.norm_cocycle() - t;
        if (y > g.y_hi) break;
        if (y >= g.y_lo) acc += g.f(jet.value, wrap_angle(jet.arg_sum), y);
        const int s = rng.categorical(cum);
        const WordJet step = eval_map(ifs.map(s), jet.value);
        jet.value = step.value;
        jet.log_modulus += step.log_modulus;
        jet.arg_sum += step.arg_sum;
      }
      per[tr] = acc;
    });
    const MeanSe ms = mean_se(per);
    RenewalSum out;
    out.value = ms.mean;
    out.stderr_ = ms.se;
    out.tail_estimate = ms.se;
    out.exact = false;
    out.words = static_cast<std::size_t>(opt.mc_trials);
    out.max_depth_reached = steps;
    return out;
  }
  std::vector<double> terms;
  RenewalSum out = detail::enumerate_renewal(ifs, p, z, t, g.y_hi, opt, [&](const WordJet& jet, double prob, int) {
    const double y = jet.norm_cocycle() - t;
    if (y >= g.y_lo && y <= g.y_hi) terms.push_back(prob * g.f(jet.value, wrap_angle(jet.arg_sum), y));
  });
  out.value = pairwise_sum(terms);
  return out;
}

// E f(z, k) = sum_n int int f(c(i, eta.z), theta(i, eta.z) + theta(eta, z), c(eta, z) - k) dp^n(eta) dp(i).
inline RenewalSum residue_partial_sum(const ConformalIFS& ifs, std::span<const double> p, const ResidueTestFunction& g,
                                      cplx z, double k, const RenewalOptions& opt = {}) {
  check_probability(p, ifs.size());
  if (opt.n_max < 0) throw std::invalid_argument("residue_partial_sum: n_max must be >= 0");
  std::vector<double> terms;
  RenewalSum out = detail::enumerate_renewal(ifs, p, z, k, g.y_hi, opt, [&](const WordJet& jet, double prob, int) {
    const double y = jet.norm_cocycle() - k;
    if (y < g.y_lo || y > g.y_hi) return;
    for (std::size_t i = 0; i < ifs.size(); ++i) {
      if (p[i] == 0.0) continue;
      const WordJet step = eval_map(ifs.map(i), jet.value);
      terms.push_back(prob * p[i] * g.f(step.norm_cocycle(), wrap_angle(step.arg_sum + jet.arg_sum), y));
    }
  });
  out.value = pairwise_sum(terms);
  return out;
}

// (1/chi) int_D int_T int_{-t}^inf f(z, x, y) dy dx dnu(z): nu from samples, the
// circle by a uniform grid (normalized to mass 1), y by Simpson's rule on the support.
inline double renewal_limit(const RenewalTestFunction& g, const EmpiricalMeasure& nu, double chi, double t,
                            int angle_nodes = 64, int y_nodes = 400) {
  if (!(chi > 0.0)) throw std::invalid_argument("renewal_limit: chi must be positive");
  if (y_nodes % 2) ++y_nodes;
  const double lo = std::max(g.y_lo, -t), hi = g.y_hi;
  if (!(hi > lo)) return 0.0;
  const double h = (hi - lo) / y_nodes;
  std::vector<double> per(nu.size());
  for (std::size_t s = 0; s < nu.size(); ++s) {
    double acc = 0.0;
    for (int a = 0; a < angle_nodes; ++a) {
      const double x = two_pi * a / angle_nodes;
      double simpson = 0.0;
      for (int j = 0; j <= y_nodes; ++j) {
        const double w = (j == 0 || j == y_nodes) ? 1.0 : (j % 2 ? 4.0 : 2.0);
        simpson += w * g.f(nu.points[s], x, lo + j * h);
      }
      acc += simpson * h / 3.0;
    }
    per[s] = acc / angle_nodes;
  }
  return pairwise_sum(per) / static_cast<double>(nu.size()) / chi;
}

// ---------------------------------------------------------------------------
// Local norm on T x [y_lo, y_hi]: max over 0 <= i, j <= 4 of sup |d^i_x d^j_y g|.
// Derivatives by central differences of step h on a grid; error O(h^2).

inline double local_c8_norm(const std::function<double(double, double)>& g, double y_lo, double y_hi,
                            int grid = 24, double h = 0.05) {
  if (!(y_hi > y_lo) || grid < 2 || !(h > 0.0)) throw std::invalid_argument("local_c8_norm: bad grid");
  // Central difference weights for orders 0..4 (stencil offsets -2..2).
  static const double w[5][5] = {
      {0, 0, 1, 0, 0}, {0, -0.5, 0, 0.5, 0}, {0, 1, -2, 1, 0}, {-0.5, 1, 0, -1, 0.5}, {1, -4, 6, -4, 1}};
  double best = 0.0;
  for (int ax = 0; ax < grid; ++ax)
    for (int ay = 0; ay <= grid; ++ay) {
      const double x = two_pi * ax / grid;
      const double y = y_lo + (y_hi - y_lo) * ay / grid;
      double vals[5][5];
      for (int u = 0; u < 5; ++u)
        for (int v = 0; v < 5; ++v) vals[u][v] = g(x + (u - 2) * h, y + (v - 2) * h);
      for (int i = 0; i <= 4; ++i)
        for (int j = 0; j <= 4; ++j) {
          double d = 0.0;
          for (int u = 0; u < 5; ++u)
            for (int v = 0; v < 5; ++v) d += w[i][u] * w[j][v] * vals[u][v];
          best = std::max(best, std::abs(d) / std::pow(h, i + j));
        }
    }
  return best;
}

}  // namespace conflab
