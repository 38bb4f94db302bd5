#pragma once

// Monte Carlo Fourier coefficients F_q(nu) = int exp(2 pi i <q, x>) dnu(x),
// polynomial decay fits, and the computable pieces of the decay argument:
// linearization residuals, oscillatory averages and a per-q budget table.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifs.hpp"
#include "measure.hpp"
#include "parallel.hpp"
#include "renewal.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace conflab {

struct FourierEstimate {
  cplx value;
  double stderr_ = 0.0;
};

inline cplx fourier_phase(cplx q, cplx x) { return std::polar(1.0, two_pi * dot(q, x)); }

inline FourierEstimate fourier_of_points(std::span<const cplx> pts, cplx q) {
  if (pts.empty()) throw std::invalid_argument("fourier_mc: empty sample");
  if (q == cplx(0)) return {1.0, 0.0};
  std::vector<cplx> terms(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) terms[i] = fourier_phase(q, pts[i]);
  const double n = static_cast<double>(pts.size());
  const cplx mean = pairwise_sum(std::span<const cplx>(terms)) / n;
  std::vector<double> dev(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) dev[i] = std::norm(terms[i] - mean);
  const double var = pts.size() > 1 ? pairwise_sum(dev) / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

// Mean of exp(2 pi i <q, x>) over the samples; stderr = sample std / sqrt(count).
inline FourierEstimate fourier_mc(const EmpiricalMeasure& em, cplx q) { return fourier_of_points(em.points, q); }

// ---------------------------------------------------------------------------
// Decay fits

// r_j = base * factor^j for j < count.
inline std::vector<double> geometric_ladder(double base, double factor, int count) {
  if (!(base > 0.0) || !(factor > 1.0) || count < 1) throw std::invalid_argument("geometric_ladder: bad parameters");
  std::vector<double> r(count);
  for (int j = 0; j < count; ++j) r[j] = base * std::pow(factor, j);
  return r;
}

struct DecayScan {
  cplx direction;
  std::vector<double> radii;
  std::vector<cplx> estimates;
  std::vector<double> stderrs;
  std::vector<bool> used;       // |F| > noise_sigmas * stderr
  int radii_used = 0;
  bool refused = false;         // fewer than two radii above the noise floor
  double noise_floor = 0.0;     // noise_sigmas * max stderr over the ladder
  double alpha_hat = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
};

struct DecayFitOptions {
  double noise_sigmas = 5.0;
  int bootstrap = 200;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline double decay_slope(std::span<const double> radii, std::span<const double> modulus) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    lx.push_back(std::log(radii[i]));
    ly.push_back(std::log(std::max(modulus[i], 1e-300)));
  }
  return -fit_line(lx, ly).slope;
}

}  // namespace detail

// alpha_hat = -slope of log|F| against log|q| over the radii above the noise
// floor. The confidence interval resamples the sample points (replicate b uses
// substream (seed, b)) and refits on the same radii.
inline DecayScan decay_fit(const EmpiricalMeasure& em, cplx direction, std::span<const double> radii,
                           std::size_t count_per_radius, const DecayFitOptions& opt = {}) {
  if (std::abs(direction) == 0.0) throw std::invalid_argument("decay_fit: direction must be nonzero");
  if (radii.empty()) throw std::invalid_argument("decay_fit: empty radii ladder");
  const std::size_t count = std::min(count_per_radius, em.size());
  if (count < 2) throw std::invalid_argument("decay_fit: need at least two samples");
  const std::span<const cplx> pts(em.points.data(), count);
  DecayScan scan;
  scan.direction = direction / std::abs(direction);
  scan.radii.assign(radii.begin(), radii.end());
  std::vector<double> fit_r, fit_m;
  for (double r : radii) {
    if (!(r > 0.0)) throw std::invalid_argument("decay_fit: radii must be positive");
    const auto e = fourier_of_points(pts, r * scan.direction);
    scan.estimates.push_back(e.value);
    scan.stderrs.push_back(e.stderr_);
    scan.noise_floor = std::max(scan.noise_floor, opt.noise_sigmas * e.stderr_);
    const bool use = std::abs(e.value) > opt.noise_sigmas * e.stderr_;
    scan.used.push_back(use);
    if (use) {
      fit_r.push_back(r);
      fit_m.push_back(std::abs(e.value));
    }
  }
  scan.radii_used = static_cast<int>(fit_r.size());
  if (fit_r.size() < 2) {
    scan.refused = true;
    return scan;
  }
  scan.alpha_hat = detail::decay_slope(fit_r, fit_m);
  if (opt.bootstrap > 0) {
    // Phases are computed once; replicates only resample indices.
    std::vector<std::vector<cplx>> phase(fit_r.size(), std::vector<cplx>(count));
    for (std::size_t j = 0; j < fit_r.size(); ++j)
      for (std::size_t i = 0; i < count; ++i) phase[j][i] = fourier_phase(fit_r[j] * scan.direction, pts[i]);
    std::vector<double> reps(opt.bootstrap);
    parallel_chunks(opt.bootstrap, opt.threads, [&](std::size_t b) {
      Rng rng(opt.seed, b);
      std::vector<std::size_t> idx(count);
      for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform() * count);
      std::vector<double> m(fit_r.size());
      for (std::size_t j = 0; j < fit_r.size(); ++j) {
        cplx acc = 0.0;
        for (std::size_t i : idx) acc += phase[j][i];
        m[j] = std::abs(acc) / static_cast<double>(count);
      }
      reps[b] = detail::decay_slope(fit_r, m);
    });
    const double tail = 0.5 * (1.0 - opt.confidence);
    scan.ci_low = quantile(reps, tail);
    scan.ci_high = quantile(reps, 1.0 - tail);
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Linearization residual

struct LinearizationResidual {
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
};

// lhs = |g(x) - g(y) - g'(y)(x - y)|, rhs = |g'(y)| |x - y|^(1 + beta) with g = f_word.
inline LinearizationResidual linearization_residual(const ConformalIFS& ifs, std::span<const int> word, cplx x, cplx y,
                                                    double beta, double max_distance) {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("linearization_residual: beta must lie in (0, 1)");
  const double d = std::abs(x - y);
  if (!(d < max_distance))
    throw std::invalid_argument("linearization_residual: |x - y| = " + std::to_string(d) +
                                " not below the threshold " + std::to_string(max_distance));
  const WordValue gx = word_eval(ifs, word, x);
  const WordValue gy = word_eval(ifs, word, y);
  LinearizationResidual r;
  r.lhs = std::abs(gx.value - gy.value - gy.derivative * (x - y));
  r.rhs = std::abs(gy.derivative) * std::pow(d, 1.0 + beta);
  r.pass = r.lhs <= r.rhs;
  return r;
}

// ---------------------------------------------------------------------------
// Oscillatory average

struct OscillatoryAverage {
  double value = 0.0;
  double stderr_ = 0.0;     // spread of the grid cells
  double bias_floor = 0.0;  // E|F_hat|^2 - |F|^2 <= 1 / count
};

// Average over the midpoint grid of T x [0, c_max] of |F_q(M_t o f_tail nu)|^2
// with t = exp(-y - k + i x), M_t complex multiplication. Push-forwards act on
// the sample points.
inline OscillatoryAverage oscillatory_average(const ConformalIFS& ifs, const EmpiricalMeasure& em,
                                              std::span<const int> word_tail, double k, cplx q, int grid,
                                              int threads = 1) {
  if (!(k > 0.0)) throw std::invalid_argument("oscillatory_average: k must be positive");
  if (grid < 1) throw std::invalid_argument("oscillatory_average: grid must be >= 1");
  std::vector<cplx> pushed(em.size());
  for (std::size_t i = 0; i < em.size(); ++i) pushed[i] = word_eval(ifs, word_tail, em.points[i]).value;
  const double cmax = ifs.c_max();
  std::vector<double> cells(static_cast<std::size_t>(grid) * grid);
  parallel_chunks(grid, threads, [&](std::size_t a) {
    const double x = two_pi * (a + 0.5) / grid;
    std::vector<cplx> moved(pushed.size());
    for (int j = 0; j < grid; ++j) {
      const double y = cmax * (j + 0.5) / grid;
      const cplx t = std::exp(cplx(-y - k, x));
      for (std::size_t i = 0; i < pushed.size(); ++i) moved[i] = t * pushed[i];
      cells[a * grid + j] = std::norm(fourier_of_points(moved, q).value);
    }
  });
  OscillatoryAverage out;
  const MeanSe ms = mean_se(cells);
  out.value = ms.mean;
  out.stderr_ = ms.se;
  out.bias_floor = 1.0 / static_cast<double>(em.size());
  return out;
}

// ---------------------------------------------------------------------------
// Budget table

// |q| = exp(k + k eps / 17) solved for k.
inline double k_for_frequency(double q_abs, double eps) {
  if (!(q_abs > 1.0) || !(eps > 0.0)) throw std::invalid_argument("k_for_frequency: need |q| > 1 and eps > 0");
  return std::log(q_abs) / (1.0 + eps / 17.0);
}

struct BudgetRow {
  cplx q;
  double q_abs = 0.0;
  double k = 0.0;
  double r = 0.0;                 // exp(-k eps / 1000)
  double beta = 0.5;
  double fourier_abs = 0.0;       // measured |F_q|
  double fourier_stderr = 0.0;
  double linearization = 0.0;     // 2 pi |q| max linearization error over sampled stopped words
  double linearization_pass = 0.0;  // fraction of sampled residuals with lhs <= rhs
  double equidistribution = 0.0;  // max(KS overshoot, KS angle) at this k
  double oscillatory = 0.0;       // mean oscillatory average over sampled tails
  double budget = 0.0;            // bound on |F_q|^2
  bool within = false;            // |F_q|^2 <= budget + 3 stderr contributions
};

struct BudgetReport {
  double eps = 0.0;
  std::vector<BudgetRow> rows;
  bool hypothesis_violation = false;  // no decay: |F_q| stays near 1 at the largest tested |q|
  std::string note;
};

struct BudgetOptions {
  std::size_t samples = 20000;   // nu samples for F_q and the push-forwards
  int depth = 40;
  int walks = 16;                // sampled stopped words per q
  int overshoot_trials = 5000;
  int osc_grid = 12;
  std::uint64_t seed = 0;
  int threads = 1;
};

inline BudgetReport decay_pipeline_report(const ConformalIFS& ifs, std::span<const double> p, std::span<const cplx> q_list,
                                          double eps, const BudgetOptions& opt = {}) {
  check_probability(p, ifs.size());
  if (!(eps > 0.0)) throw std::invalid_argument("decay_pipeline_report: eps must be positive");
  BudgetReport rep;
  rep.eps = eps;
  const EmpiricalMeasure nu = sample_batch(ifs, p, opt.seed, opt.samples, opt.depth, opt.threads);
  EmpiricalMeasure small = nu;
  const std::size_t osc_count = std::min<std::size_t>(nu.size(), 2000);
  small.points.resize(osc_count);
  small.weights.assign(osc_count, 1.0 / osc_count);
  double largest = 0.0;
  for (std::size_t qi = 0; qi < q_list.size(); ++qi) {
    const cplx q = q_list[qi];
    BudgetRow row;
    row.q = q;
    row.q_abs = std::abs(q);
    row.k = k_for_frequency(row.q_abs, eps);
    row.r = std::exp(-row.k * eps / 1000.0);
    const auto f = fourier_mc(nu, q);
    row.fourier_abs = std::abs(f.value);
    row.fourier_stderr = f.stderr_;

    WalkOptions walk;
    walk.mode = StopMode::beta;
    walk.eps = eps;
    int passes = 0, checks = 0;
    double lin = 0.0, osc = 0.0;
    for (int w = 0; w < opt.walks; ++w) {
      const WalkRecord rec = walk_until(ifs, p, row.k, splitmix64(opt.seed ^ (qi << 20)) + w, walk);
      const std::span<const int> word(rec.omega_prefix);
      const int tau = rec.tau, beta_k = *rec.beta;
      const auto outer = word.first(tau);
      const auto tail = beta_k > tau ? word.subspan(tau, beta_k - tau) : std::span<const int>{};
      const cplx y = word_eval(ifs, tail, 0.0).value;
      for (std::size_t i = 0; i < 16; ++i) {
        const cplx x = word_eval(ifs, tail, nu.points[(w * 16 + i) % nu.size()]).value;
        if (x == y) continue;
        const auto res = linearization_residual(ifs, outer, x, y, row.beta, 2.0 + 1e-12);
        lin = std::max(lin, two_pi * row.q_abs * res.lhs);
        passes += res.pass;
        ++checks;
      }
      osc += oscillatory_average(ifs, small, tail, row.k, q, opt.osc_grid, opt.threads).value;
    }
    row.linearization = lin;
    row.linearization_pass = checks ? double(passes) / checks : 1.0;
    row.oscillatory = osc / opt.walks;
    OvershootOptions oo;
    oo.limit_samples = 5000;
    oo.threads = opt.threads;
    const auto law = overshoot_law(ifs, p, row.k, opt.overshoot_trials, opt.seed + 7 * qi + 1, oo);
    row.equidistribution = std::max(law.ks_overshoot, law.ks_angle);
    row.budget = row.oscillatory + row.linearization + row.equidistribution;
    row.within = row.fourier_abs * row.fourier_abs <= row.budget + 3.0 * 2.0 * row.fourier_stderr;
    if (row.q_abs >= largest) {
      largest = row.q_abs;
      rep.hypothesis_violation = row.fourier_abs > 0.9;
    }
    rep.rows.push_back(row);
  }
  if (rep.hypothesis_violation)
    rep.note = "|F_q| does not decay at the largest tested frequency; the attractor may lie on a line";
  return rep;
}

}  // namespace conflab
