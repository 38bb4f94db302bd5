#pragma once

// Dolgopyat operators on a model:
//   N^J H(x) = P_{a,0,omega,N}(chi_J H)(x),
// where chi_J = 1 - theta_damp * (bumps pulled back through the two designated
// branches f_{alpha_1}, f_{alpha_2}) and 1 elsewhere. Around it: parameter
// constraints, Vitali covers of attractor samples, direction data, and the
// cone / L^2 contraction / domination experiments.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "grid.hpp"
#include "ifs.hpp"
#include "measure.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "transfer.hpp"
#include "uni.hpp"

namespace conflab {

// ---------------------------------------------------------------------------
// Parameters

// Measured constants the parameter choice depends on.
struct DolgopyatInputs {
  double delta1 = NAN;      // non-concentration constant of mu_{sigma^N omega}
  double delta2 = NAN;      // smallest singular value of grad T
  double t_c2 = NAN;        // ||T||_{C^2}
  double grad_bound = NAN;  // sup over words of |grad log|f_w'||
  double rho = NAN;         // sup |f_i'| over the model maps
  double distortion = NAN;  // L
  double B1 = NAN;          // cylinder-in-ball constant
};

struct DolgopyatParams {
  double A = NAN;           // cone slope constant
  double theta_damp = NAN;  // damping depth of chi_J
  double eps1 = NAN;
  double delta1 = NAN;
  double delta2 = NAN;
  double delta3 = NAN;      // delta1 delta2 / (4 A)
  int N = 0;
  double rho = NAN;
  double t_c2 = NAN;
  double cone_const = NAN;  // 2 pi grad_bound
  double distortion = NAN;
  double B1 = NAN;
  double nc_factor = 0.5;   // y_i must clear nc_factor * delta1 * |f_v'(0)|

  double eps_tilde(double freq) const { return eps1 / freq; }
  double bump_radius(double freq) const { return 2.0 * delta3 * eps_tilde(freq); }
};

struct ConstraintReport {
  // margin = rhs - lhs; constraint 1 is strict, the others allow equality.
  std::array<double, 5> margin{};
  std::array<bool, 5> holds{};
  bool cone_lemma = false;  // A >= max(2, 4 cone_const), rho^N <= min((A-1)/(2A), 1/4),
                            // theta <= min(1/2, eps1 (A-1) / (16 delta3))
  bool t_bound = false;     // ||T||_{C^2} < 1 / (2 delta2)
  bool ranges = false;      // A > 1, 0 < theta < 1, eps1 > 0

  bool ok() const {
    return cone_lemma && t_bound && ranges && std::all_of(holds.begin(), holds.end(), [](bool b) { return b; });
  }
};

inline ConstraintReport check_constraints(const DolgopyatParams& p) {
  ConstraintReport r;
  const double rN = std::pow(p.rho, p.N);
  const double d12 = p.delta1 * p.delta2;
  r.margin[0] = p.A / 2 - 8 * p.t_c2;
  r.margin[1] = 0.5 - 8 * rN;
  r.margin[2] = std::log(2.0) - 200 * p.eps1 * p.A;
  r.margin[3] = 2.5 * d12 * p.eps1 - 25 * p.eps1 * p.eps1 / p.delta2 - 40 * p.A * p.eps1 * rN - 2 * d12 * p.eps1;
  r.margin[4] = std::pow(d12 * p.eps1, 2) / (8 * 16) - 2 * p.theta_damp;
  r.holds[0] = r.margin[0] > 0;
  for (int k = 1; k < 5; ++k) r.holds[k] = r.margin[k] >= 0;
  r.cone_lemma = p.A >= std::max(2.0, 4 * p.cone_const) && rN <= std::min((p.A - 1) / (2 * p.A), 0.25) &&
                 p.theta_damp <= std::min(0.5, p.eps1 * (p.A - 1) / (16 * p.delta3));
  r.t_bound = p.t_c2 < 1.0 / (2 * p.delta2);
  r.ranges = p.A > 1 && p.theta_damp > 0 && p.theta_damp < 1 && p.eps1 > 0;
  return r;
}

// Smallest N admitting the constraints, with A minimal, eps1 and theta_damp
// maximal. Throws if no N <= N_max works.
inline DolgopyatParams solve_parameters(const DolgopyatInputs& in, int N_max = 200) {
  for (double v : {in.delta1, in.delta2, in.t_c2, in.grad_bound, in.rho})
    if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument("solve_parameters: inputs must be positive and finite");
  if (in.rho >= 1) throw std::invalid_argument("solve_parameters: rho must be < 1");
  DolgopyatParams p;
  p.delta1 = in.delta1;
  p.delta2 = std::min(in.delta2, 1.0 / (2 * in.t_c2)) * 0.999;
  p.t_c2 = in.t_c2;
  p.rho = in.rho;
  p.cone_const = two_pi * in.grad_bound;
  p.distortion = in.distortion;
  p.B1 = in.B1;
  p.A = std::max({2.0, 4 * p.cone_const, 16 * in.t_c2 * 1.001});
  p.delta3 = p.delta1 * p.delta2 / (4 * p.A);
  const double d12 = p.delta1 * p.delta2;
  const double shrink = 1.0 - 1e-9;
  for (int N = 1; N <= N_max; ++N) {
    const double rN = std::pow(p.rho, N);
    if (rN > std::min({(p.A - 1) / (2 * p.A), 0.25, 1.0 / 16})) continue;
    const double gap = d12 / 2 - 40 * p.A * rN;
    if (gap <= 0) continue;
    double eps1 = std::min(std::log(2.0) / (200 * p.A), p.delta2 * gap / 25);
    const double LB1 = in.distortion * in.B1;
    if (LB1 > 0 && std::isfinite(LB1)) eps1 = std::min(eps1, 1.0 / (2 * LB1));
    p.eps1 = eps1 * shrink;
    p.theta_damp = std::min({std::pow(d12 * p.eps1, 2) / 256, 0.5, p.eps1 * (p.A - 1) / (16 * p.delta3)}) * shrink;
    p.N = N;
    return p;
  }
  throw std::runtime_error("solve_parameters: no feasible N up to " + std::to_string(N_max));
}

// alpha_i = u d_i: u takes the first map of each Phi_{omega_j}, j < N - 1, and
// (d_1, d_2) is the designated pair of Phi_{omega_{N-1}}.
inline std::array<Word, 2> designated_words(const Model& m, std::span<const int> omega, int N) {
  if (N < 1 || static_cast<int>(omega.size()) < N) throw std::invalid_argument("designated_words: omega shorter than N");
  const auto& d = m.designated.at(omega[N - 1]);
  if (d[0] < 0 || d[1] < 0) throw std::invalid_argument("designated_words: sub-system has no designated pair");
  std::array<Word, 2> a;
  for (int i = 0; i < 2; ++i) {
    a[i].resize(N);
    for (int j = 0; j < N - 1; ++j) a[i][j] = m.sub_ifss[omega[j]].front();
    a[i][N - 1] = d[i];
  }
  return a;
}

inline double model_word_probability(const Model& m, std::span<const int> omega, std::span<const int> J) {
  double eta = 1.0;
  for (std::size_t j = 0; j < J.size(); ++j) {
    const auto& sub = m.sub_ifss[omega[j]];
    const auto it = std::find(sub.begin(), sub.end(), J[j]);
    if (it == sub.end()) throw std::invalid_argument("model_word_probability: word not in X_N^(omega)");
    eta *= m.p_tilde[omega[j]][it - sub.begin()];
  }
  return eta;
}

// Measures the inputs at word length N. omega must be longer than N; the
// tail sigma^N omega carries the attractor sample.
inline DolgopyatInputs measure_dolgopyat_inputs(const Model& m, std::span<const int> omega, int N, std::uint64_t seed,
                                                std::size_t nc_samples = 20000) {
  if (static_cast<int>(omega.size()) < N + 8) throw std::invalid_argument("measure_dolgopyat_inputs: omega too short");
  const auto alpha = designated_words(m, omega, N);
  const TnReport tn = tn_check(m.ifs, UniWitness{alpha[0], alpha[1], 0.0, 0.0}, 1e-3, 0.05);
  const auto tail = omega.subspan(N);
  const auto em = sample_mu_omega_given(m, tail, splitmix64(seed ^ 0xd1), nc_samples, 2);
  std::vector<Word> words;
  for (std::size_t i = 0; i < em.size(); ++i)
    for (int len = 1; len <= 2; ++len) {
      const auto c = em.coding(i);
      Word w(c.begin(), c.begin() + len);
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(std::move(w));
    }
  DolgopyatInputs in;
  in.delta1 = nonconcentration_estimate(m.ifs, em, words).delta_hat;
  in.delta2 = tn.delta2_hat;
  in.t_c2 = tn.c2_norm;
  in.grad_bound = m.ifs.constants().grad_bound;
  in.rho = m.ifs.rho();
  in.distortion = m.ifs.constants().distortion;
  in.B1 = cylinder_geometry(m, tail, splitmix64(seed ^ 0xb1), 6, 200).B1;
  return in;
}

struct ParameterChoice {
  DolgopyatInputs inputs;
  DolgopyatParams params;
  ConstraintReport report;
};

// Alternates measurement and solving until N is stable; T depends on N
// through the designated words.
inline ParameterChoice choose_parameters(const Model& m, std::span<const int> omega, std::uint64_t seed) {
  int N = 1;
  ParameterChoice c;
  for (int round = 0; round < 6; ++round) {
    c.inputs = measure_dolgopyat_inputs(m, omega, N, seed);
    c.params = solve_parameters(c.inputs);
    if (c.params.N == N) break;
    N = c.params.N;
  }
  if (c.params.N != N) throw std::runtime_error("choose_parameters: word length did not stabilise");
  c.report = check_constraints(c.params);
  return c;
}

// ---------------------------------------------------------------------------
// Spatial hashing

class PointHash {
 public:
  explicit PointHash(double cell) : cell_(cell) {
    if (!(cell > 0)) throw std::invalid_argument("PointHash: cell must be positive");
  }

  void insert(cplx z, std::size_t id) { cells_[key(cell_of(z.real()), cell_of(z.imag()))].push_back(id); }

  // Visits every id whose cell meets the square around B_r(z).
  template <class Fn>
  void near(cplx z, double r, Fn&& fn) const {
    const std::int64_t i0 = cell_of(z.real() - r), i1 = cell_of(z.real() + r);
    const std::int64_t j0 = cell_of(z.imag() - r), j1 = cell_of(z.imag() + r);
    for (std::int64_t i = i0; i <= i1; ++i)
      for (std::int64_t j = j0; j <= j1; ++j) {
        const auto it = cells_.find(key(i, j));
        if (it != cells_.end())
          for (std::size_t id : it->second) fn(id);
      }
  }

 private:
  std::int64_t cell_of(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }
  static std::uint64_t key(std::int64_t i, std::int64_t j) {
    return splitmix64(static_cast<std::uint64_t>(i)) ^ (static_cast<std::uint64_t>(j) * 0x9e3779b97f4a7c15ULL);
  }

  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

// ---------------------------------------------------------------------------
// Vitali cover

struct VitaliCover {
  std::vector<cplx> centers;
  std::vector<std::size_t> sample_index;  // center k is sample sample_index[k]
  double eps_tilde = 0.0;

  std::size_t size() const { return centers.size(); }
};

struct CoverCheck {
  bool disjoint = false;       // 10 eps-balls around distinct centers are disjoint
  bool covers = false;         // 50 eps-balls cover every sample
  double min_separation = INFINITY;
  double max_distance = 0.0;   // farthest sample from its nearest center
};

inline CoverCheck verify_cover(const VitaliCover& c, std::span<const cplx> samples, double cover_factor = 50.0) {
  CoverCheck r;
  const double e = c.eps_tilde;
  PointHash hash(20 * e);
  for (std::size_t k = 0; k < c.size(); ++k) hash.insert(c.centers[k], k);
  for (std::size_t k = 0; k < c.size(); ++k)
    hash.near(c.centers[k], 20 * e, [&](std::size_t j) {
      if (j != k) r.min_separation = std::min(r.min_separation, std::abs(c.centers[j] - c.centers[k]));
    });
  for (const cplx& z : samples) {
    double best = INFINITY;
    hash.near(z, cover_factor * e, [&](std::size_t j) { best = std::min(best, std::abs(c.centers[j] - z)); });
    r.max_distance = std::max(r.max_distance, best);
  }
  r.disjoint = r.min_separation >= 20 * e;
  r.covers = r.max_distance < cover_factor * e;
  return r;
}

// Greedy scan: a sample becomes a center iff it is >= 20 eps from all kept centers.
inline VitaliCover vitali_cover(std::span<const cplx> samples, double eps_tilde) {
  if (samples.empty()) throw std::invalid_argument("vitali_cover: no samples");
  if (!(eps_tilde > 0) || !std::isfinite(eps_tilde)) throw std::invalid_argument("vitali_cover: eps_tilde must be > 0");
  VitaliCover c;
  c.eps_tilde = eps_tilde;
  PointHash hash(20 * eps_tilde);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bool keep = true;
    hash.near(samples[i], 20 * eps_tilde, [&](std::size_t j) {
      if (std::abs(c.centers[j] - samples[i]) < 20 * eps_tilde) keep = false;
    });
    if (!keep) continue;
    hash.insert(samples[i], c.centers.size());
    c.centers.push_back(samples[i]);
    c.sample_index.push_back(i);
  }
  const CoverCheck chk = verify_cover(c, samples);
  if (!chk.disjoint || !chk.covers) throw std::logic_error("vitali_cover: postcondition failed");
  return c;
}

inline VitaliCover vitali_cover(const EmpiricalMeasure& em, double eps_tilde) {
  return vitali_cover(std::span<const cplx>(em.points), eps_tilde);
}

// ---------------------------------------------------------------------------
// Direction data

struct DirectionEntry {
  cplx w;                    // planar vector b grad(log ratio) + ell grad(arg ratio) at x_i
  cplx w_hat{1.0, 0.0};      // w / |w|; (1, 0) when w = 0
  cplx y;                    // partner point in K and in B_{5 eps}(x_i)
  double projection = 0.0;   // |<x_i - y_i, w_hat>|
  double threshold = 0.0;    // nc_factor * delta1 * |f_v'(0)|
  int cylinder_length = -1;  // |v| for the cylinder C_v around x_i inside B_{5 eps}(x_i)
  Word y_coding;
};

struct DirectionFailure {
  std::size_t center = 0;
  std::string reason;
};

struct DirectionData {
  double b = 0.0;
  int ell = 0;
  std::vector<DirectionEntry> entries;
  std::vector<DirectionFailure> failures;

  bool ok() const { return failures.empty(); }
  double frequency() const { return std::abs(b) + std::abs(ell); }
  // Centers with |w_i| <= delta2 (|b| + |ell|) / 2.
  std::size_t magnitude_violations(double delta2) const {
    std::size_t n = 0;
    for (const auto& e : entries) n += std::abs(e.w) <= delta2 * frequency() / 2;
    return n;
  }
};

// Image of a cylinder f_v(D) inside B_r(x), by boundary sampling plus the
// Lipschitz slack of the sample spacing.
inline bool cylinder_inside_ball(const ConformalIFS& ifs, std::span<const int> v, cplx x, double r, int samples = 32) {
  double far = 0.0, lip = 0.0;
  for (const cplx& z : boundary_points(samples)) {
    const WordJet j = eval_word(ifs, v, z);
    far = std::max(far, std::abs(j.value - x));
    lip = std::max(lip, std::abs(j.derivative));
  }
  return far + lip * std::numbers::pi / samples <= r;
}

// `tail` is the index sequence of the sampled attractor (sigma^N omega) and
// `em` its sample with stored codings; cover centers are points of em.
inline DirectionData direction_data(const Model& m, std::span<const int> tail, const std::array<Word, 2>& alpha,
                                    double b, int ell, const VitaliCover& cover, const EmpiricalMeasure& em,
                                    double delta1, double nc_factor, std::uint64_t seed, int local_samples = 64) {
  DirectionData dd;
  dd.b = b;
  dd.ell = ell;
  if (dd.frequency() < 1.0) throw std::invalid_argument("direction_data: |b| + |ell| must be >= 1");
  if (em.coding_length < 1) throw std::invalid_argument("direction_data: sample needs stored codings");
  if (static_cast<int>(tail.size()) < em.depth) throw std::invalid_argument("direction_data: tail shorter than sample depth");
  const double reach = 5 * cover.eps_tilde;
  std::vector<std::vector<double>> cum;
  for (const auto& pt : m.p_tilde) cum.push_back(cumulative_weights(pt));
  dd.entries.resize(cover.size());
  for (std::size_t i = 0; i < cover.size(); ++i) {
    DirectionEntry& e = dd.entries[i];
    const cplx x = cover.centers[i];
    e.w = b * (grad_log_modulus(m.ifs, alpha[0], x) - grad_log_modulus(m.ifs, alpha[1], x)) +
          static_cast<double>(ell) * (grad_arg(m.ifs, alpha[0], x) - grad_arg(m.ifs, alpha[1], x));
    if (std::abs(e.w) > 0) e.w_hat = e.w / std::abs(e.w);
    const auto code = em.coding(cover.sample_index[i]);
    int n = -1;
    for (int len = 1; len <= em.coding_length; ++len)
      if (cylinder_inside_ball(m.ifs, code.first(len), x, reach)) {
        n = len;
        break;
      }
    if (n < 0) {
      dd.failures.push_back({i, "no stored cylinder around the center fits in B_{5 eps}; longer codings needed"});
      continue;
    }
    e.cylinder_length = n;
    const Word v(code.begin(), code.begin() + n);
    e.threshold = nc_factor * delta1 * std::abs(eval_word(m.ifs, v, 0.0).derivative);
    Rng rng(seed, i);
    Word full(em.depth);
    std::copy(v.begin(), v.end(), full.begin());
    for (int s = 0; s < local_samples; ++s) {
      for (int j = n; j < em.depth; ++j) full[j] = m.sub_ifss[tail[j]][rng.categorical(cum[tail[j]])];
      cplx y = 0.0;
      for (int j = em.depth; j-- > 0;) y = eval_map(m.ifs.map(full[j]), y).value;
      const double proj = std::abs(dot(x - y, e.w_hat));
      if (proj > e.projection) {
        e.projection = proj;
        e.y = y;
        e.y_coding = full;
      }
    }
    if (!(e.projection > e.threshold)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "best projection %.3e does not exceed threshold %.3e in B_{5 eps}",
                    e.projection, e.threshold);
      dd.failures.push_back({i, buf});
    }
  }
  return dd;
}

// ---------------------------------------------------------------------------
// Bumps

// Radial plateau 1 on [0, eps/2], 0 on [eps, inf), smooth step in between built
// from phi(t) = exp(-sharpness / t). With sharpness 0.7 the steepest slope of the
// step is about 1.6 per unit of s, so sup + sup|grad| <= 4 / eps for eps <= 0.9.
struct BumpProfile {
  double sharpness = 0.7;

  double phi(double t) const { return t > 0 ? std::exp(-sharpness / t) : 0.0; }
  double dphi(double t) const { return t > 0 ? sharpness / (t * t) * std::exp(-sharpness / t) : 0.0; }

  double value(double r, double eps) const {
    if (r <= eps / 2) return 1.0;
    if (r >= eps) return 0.0;
    const double s = (r - eps / 2) / (eps / 2);
    const double u = phi(1 - s), v = phi(s);
    return u / (u + v);
  }
  // d value / dr
  double slope(double r, double eps) const {
    if (r <= eps / 2 || r >= eps) return 0.0;
    const double s = (r - eps / 2) / (eps / 2);
    const double u = phi(1 - s), v = phi(s);
    const double du = -dphi(1 - s), dv = dphi(s);
    return (du * v - u * dv) / ((u + v) * (u + v)) * (2 / eps);
  }
};

// ---------------------------------------------------------------------------
// Index sets J of triples (branch i, point kind k, center j); 0-based, kind 0 is
// x_j and kind 1 is y_j.

struct DolgopyatIndex {
  int branch = 0;
  int kind = 0;
  std::size_t center = 0;
};
using DolgopyatSet = std::vector<DolgopyatIndex>;

// Every center appears in at least one triple.
inline bool is_dense(const DolgopyatSet& J, std::size_t q) {
  std::vector<char> seen(q, 0);
  for (const auto& t : J)
    if (t.center < q) seen[t.center] = 1;
  return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

// ---------------------------------------------------------------------------
// System: everything tied to one (omega, b, ell)

struct DolgopyatSystem {
  Model model;
  std::vector<int> omega;
  DolgopyatParams params;
  double b = 0.0;
  int ell = 0;
  std::array<Word, 2> alpha;
  std::array<double, 2> eta_alpha{};
  EmpiricalMeasure samples;  // mu_{sigma^N omega}, covers and partners come from here
  EmpiricalMeasure check;    // independent sample of the same measure, for integrals
  VitaliCover cover;
  DirectionData directions;
  BumpProfile bump;

  double frequency() const { return std::abs(b) + std::abs(ell); }
  double eps_tilde() const { return params.eps_tilde(frequency()); }
  double bump_radius() const { return params.bump_radius(frequency()); }
  std::span<const int> tail() const { return std::span<const int>(omega).subspan(params.N); }
  cplx point(const DolgopyatIndex& t) const {
    return t.kind == 0 ? cover.centers.at(t.center) : directions.entries.at(t.center).y;
  }
};

struct DolgopyatSetup {
  std::size_t samples = 2000;
  std::size_t check_samples = 1000;
  int coding_length = 16;
  int local_samples = 64;
};

// omega must have length >= N + coding_length; sigma^N omega is the sampled tail.
inline DolgopyatSystem prepare_dolgopyat(const Model& m, std::vector<int> omega, const DolgopyatParams& params,
                                         double b, int ell, std::uint64_t seed, const DolgopyatSetup& setup = {}) {
  DolgopyatSystem s{m, std::move(omega), params, b, ell, {}, {}, {}, {}, {}, {}, {}};
  if (s.frequency() < 1.0) throw std::invalid_argument("prepare_dolgopyat: |b| + |ell| must be >= 1");
  if (static_cast<int>(s.omega.size()) < params.N + setup.coding_length)
    throw std::invalid_argument("prepare_dolgopyat: omega shorter than N + coding_length");
  s.alpha = designated_words(s.model, s.omega, params.N);
  for (int i = 0; i < 2; ++i) s.eta_alpha[i] = model_word_probability(s.model, s.omega, s.alpha[i]);
  s.samples = sample_mu_omega_given(s.model, s.tail(), splitmix64(seed ^ 0x5a), setup.samples, setup.coding_length);
  s.check = sample_mu_omega_given(s.model, s.tail(), splitmix64(seed ^ 0xc4), setup.check_samples, setup.coding_length);
  s.cover = vitali_cover(s.samples, s.eps_tilde());
  s.directions = direction_data(s.model, s.tail(), s.alpha, b, ell, s.cover, s.samples, params.delta1,
                                params.nc_factor, splitmix64(seed ^ 0xdd), setup.local_samples);
  return s;
}

// Sum of the branch bumps at a point of the disc (in preimage coordinates),
// with its gradient.
class Damping {
 public:
  Damping(const DolgopyatSystem& sys, const DolgopyatSet& J)
      : radius_(sys.bump_radius()), bump_(sys.bump), hash_{PointHash(radius_), PointHash(radius_)} {
    for (const auto& t : J) {
      if (t.branch < 0 || t.branch > 1 || t.kind < 0 || t.kind > 1 || t.center >= sys.cover.size())
        throw std::out_of_range("Damping: triple outside J_{s,ell,omega}");
      hash_[t.branch].insert(sys.point(t), centers_[t.branch].size());
      centers_[t.branch].push_back(sys.point(t));
    }
  }

  struct Value {
    double sum = 0.0;
    cplx grad = 0.0;
  };

  Value at(int branch, cplx x) const {
    Value v;
    hash_[branch].near(x, radius_, [&](std::size_t k) {
      const cplx d = x - centers_[branch][k];
      const double r = std::abs(d);
      if (r >= radius_) return;
      v.sum += bump_.value(r, radius_);
      if (r > 0) v.grad += bump_.slope(r, radius_) * d / r;
    });
    return v;
  }

  double radius() const { return radius_; }
  const std::vector<cplx>& centers(int branch) const { return centers_[branch]; }

 private:
  double radius_;
  BumpProfile bump_;
  std::array<PointHash, 2> hash_;
  std::array<std::vector<cplx>, 2> centers_;
};

// Position of alpha_1 / alpha_2 among words, or -1.
inline int alpha_branch(const DolgopyatSystem& sys, const std::vector<int>& J) {
  for (int i = 0; i < 2; ++i)
    if (J == sys.alpha[i]) return i;
  return -1;
}

// Solves f_w(x) = z by damped Newton from x0. Returns nullopt if the root lies
// outside the closed disc; throws if the iteration stalls.
inline std::optional<cplx> invert_branch(const ConformalIFS& ifs, const Word& w, cplx z, cplx x0) {
  cplx x = x0;
  WordJet j = eval_word(ifs, w, x);
  double res = std::abs(j.value - z);
  const double tol = 1e-14 * std::max(1.0, std::abs(z));
  for (int it = 0; it < 80 && res > tol; ++it) {
    const cplx step = (j.value - z) / j.derivative;
    double t = 1.0;
    for (;; t /= 2) {
      if (t < 1e-8) throw std::domain_error("invert_branch: Newton iteration stalled");
      const cplx xn = x - t * step;
      if (std::abs(xn) > 2.0) continue;
      const WordJet jn = eval_word(ifs, w, xn);
      const double rn = std::abs(jn.value - z);
      if (rn < res || rn <= tol) {
        x = xn;
        j = jn;
        res = rn;
        break;
      }
    }
  }
  if (res > tol) throw std::domain_error("invert_branch: Newton did not converge");
  if (std::abs(x) > 1.0 + 1e-12) return std::nullopt;
  return x;
}

// chi_J at one point of the disc; scans every bump.
inline double chi_eval(const DolgopyatSystem& sys, const Damping& damp, cplx z) {
  double v = 1.0;
  for (int br = 0; br < 2; ++br)
    for (const cplx& c : damp.centers(br)) {
      const WordJet jc = eval_word(sys.model.ifs, sys.alpha[br], c);
      if (std::abs(z - jc.value) > 2.0 * damp.radius() * std::abs(jc.derivative) + 1e-15) continue;
      const auto x = invert_branch(sys.model.ifs, sys.alpha[br], z, c);
      if (x && std::abs(*x - c) < damp.radius()) v -= sys.params.theta_damp * sys.bump.value(std::abs(*x - c), damp.radius());
    }
  return v;
}

// chi_J on the grid nodes. Only nodes near the image of a bump are inverted.
inline GridFunction chi_j(const DolgopyatSystem& sys, const DolgopyatSet& J, const GridPtr& grid) {
  if (J.empty()) throw std::invalid_argument("chi_j: J must be nonempty");
  const Damping damp(sys, J);
  GridFunction out(grid);
  std::fill(out.values.begin(), out.values.end(), cplx(1.0));
  const double h = grid->spacing();
  for (int br = 0; br < 2; ++br)
    for (const cplx& c : damp.centers(br)) {
      const WordJet jc = eval_word(sys.model.ifs, sys.alpha[br], c);
      const double reach = 2.0 * damp.radius() * std::abs(jc.derivative) + 1e-15;
      const int i0 = static_cast<int>(std::floor((jc.value.real() - reach) / h));
      const int i1 = static_cast<int>(std::ceil((jc.value.real() + reach) / h));
      const int j0 = static_cast<int>(std::floor((jc.value.imag() - reach) / h));
      const int j1 = static_cast<int>(std::ceil((jc.value.imag() + reach) / h));
      for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) {
          const int k = grid->index(i, j);
          if (k < 0 || std::abs(grid->node(k) - jc.value) > reach) continue;
          const auto x = invert_branch(sys.model.ifs, sys.alpha[br], grid->node(k), c);
          if (!x || std::abs(*x - c) >= damp.radius()) continue;
          out.values[k] -= sys.params.theta_damp * sys.bump.value(std::abs(*x - c), damp.radius());
        }
    }
  return out;
}

// N^J g(x) = P_{a,0,omega,N}(chi_J g)(x), using chi_J o f_{alpha_i} = 1 - theta * (branch-i bumps)
// and chi_J o f_I = 1 for every other I (images of X_N^(omega) words are disjoint).
template <class G>
cplx dolgopyat_eval(const DolgopyatSystem& sys, const Damping& damp, double a, G&& g, cplx x) {
  const TwistParams tp{a, 0.0, 0, sys.params.N};
  cplx acc = 0.0, damped = 0.0;
  for_each_model_word(sys.model, sys.omega, sys.params.N, x, [&](const std::vector<int>& J, const WordJet& j, double eta) {
    const cplx term = eta * twist_factor(tp, j) * g(j.value);
    acc += term;
    const int br = alpha_branch(sys, J);
    if (br >= 0) damped += damp.at(br, x).sum * term;
  });
  return acc - sys.params.theta_damp * damped;
}

inline GridFunction dolgopyat_apply(const DolgopyatSystem& sys, const DolgopyatSet& J, double a, const GridFunction& g) {
  if (J.empty()) throw std::invalid_argument("dolgopyat_apply: J must be nonempty");
  const Damping damp(sys, J);
  GridFunction out(g.grid);
  for (std::size_t k = 0; k < g.grid->size(); ++k) out.values[k] = dolgopyat_eval(sys, damp, a, g, g.grid->node(k));
  return out;
}

// ---------------------------------------------------------------------------
// Cone invariance and L^2 contraction

// Per base point: every J in X_N^(omega) with image, weight eta exp(2 pi a c),
// conj(f_J'), and the gradient of the weight.
struct WordTerms {
  std::vector<cplx> image;
  std::vector<double> eta;
  std::vector<double> weight;
  std::vector<cplx> dconj;
  std::vector<cplx> wgrad;
  std::array<int, 2> alpha_pos{-1, -1};
};

inline WordTerms word_terms(const DolgopyatSystem& sys, double a, cplx x) {
  WordTerms t;
  const std::size_t n = model_word_count(sys.model, sys.omega, sys.params.N);
  t.image.reserve(n);
  t.eta.reserve(n);
  t.weight.reserve(n);
  t.dconj.reserve(n);
  t.wgrad.reserve(n);
  for_each_model_word(sys.model, sys.omega, sys.params.N, x, [&](const std::vector<int>& J, const WordJet& j, double eta) {
    const int br = alpha_branch(sys, J);
    if (br >= 0) t.alpha_pos[br] = static_cast<int>(t.image.size());
    const double w = eta * std::exp(two_pi * a * j.norm_cocycle());
    t.image.push_back(j.value);
    t.eta.push_back(eta);
    t.weight.push_back(w);
    t.dconj.push_back(std::conj(j.derivative));
    // grad c = -grad log|f'| = -conj((log f')')
    t.wgrad.push_back(w * two_pi * a * -std::conj(j.log_slope));
  });
  return t;
}

// exp(F), F a sum of cosines with |grad F| <= slope. Wavenumbers are drawn from
// [slope/8, slope] (at least 1) so the total amplitude stays below ~8 even for
// steep cones; the probe is evaluated analytically, never on a grid.
inline ConeProbe random_cone_member(Rng& rng, double slope, int waves = 3) {
  if (!(slope > 0) || !std::isfinite(slope)) throw std::invalid_argument("random_cone_member: slope must be positive");
  ConeProbe pr;
  pr.level = rng.uniform(-1.0, 1.0);
  std::vector<double> share(waves);
  double total = 0.0;
  for (double& s : share) total += (s = 0.1 + rng.uniform());
  for (int w = 0; w < waves; ++w) {
    const double kmag = std::max(1.0, rng.uniform(slope / 8, slope));
    pr.waves.push_back({std::polar(kmag, two_pi * rng.uniform()), slope * share[w] / total / kmag, two_pi * rng.uniform()});
  }
  return pr;
}

struct ContractionTrial {
  std::size_t trial = 0;
  bool cone_ok = false;
  double worst_cone_ratio = 0.0;  // max over nodes |grad N H| / (A (|b|+|ell|) N H)
  double ratio = NAN;             // int |N H|^2 / int P_{0,0}(H^2) over the check sample
};

struct ContractionReport {
  std::vector<ContractionTrial> trials;
  double cone_ok_fraction = 0.0;
  double alpha_hat = NAN;  // max ratio
};

struct ContractionOptions {
  double a = 0.0;
  double grid_step = 0.1;
  int threads = 1;
};

// Each trial draws a cone member H with slope A (|b|+|ell|) and a random dense J
// (one triple per center) from its own substream.
inline ContractionReport cone_and_contraction_test(const DolgopyatSystem& sys, int trials, std::uint64_t seed,
                                                   const ContractionOptions& opt = {}) {
  if (trials <= 0) throw std::invalid_argument("cone_and_contraction_test: trials must be positive");
  const double slope = sys.params.A * sys.frequency();
  const DiscGrid grid(opt.grid_step);
  std::vector<WordTerms> nodes(grid.size()), pts(sys.check.size());
  parallel_chunks(grid.size(), opt.threads, [&](std::size_t k) { nodes[k] = word_terms(sys, opt.a, grid.node(k)); });
  parallel_chunks(pts.size(), opt.threads, [&](std::size_t k) { pts[k] = word_terms(sys, opt.a, sys.check.points[k]); });
  ContractionReport rep;
  rep.trials.resize(trials);
  const double theta = sys.params.theta_damp;
  parallel_chunks(static_cast<std::size_t>(trials), opt.threads, [&](std::size_t tr) {
    Rng rng(seed, tr);
    const ConeProbe H = random_cone_member(rng, slope);
    DolgopyatSet J;
    for (std::size_t j = 0; j < sys.cover.size(); ++j) J.push_back({rng.below(2), rng.below(2), j});
    const Damping damp(sys, J);
    ContractionTrial& out = rep.trials[tr];
    out.trial = tr;
    out.cone_ok = true;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const WordTerms& t = nodes[k];
      std::array<Damping::Value, 2> dv{damp.at(0, grid.node(k)), damp.at(1, grid.node(k))};
      double val = 0.0;
      cplx grad = 0.0;
      for (std::size_t i = 0; i < t.image.size(); ++i) {
        double chi = 1.0;
        cplx dchi = 0.0;
        for (int br = 0; br < 2; ++br)
          if (t.alpha_pos[br] == static_cast<int>(i)) {
            chi = 1.0 - theta * dv[br].sum;
            dchi = -theta * dv[br].grad;
          }
        const double hv = H(t.image[i]);
        val += t.weight[i] * chi * hv;
        grad += t.wgrad[i] * chi * hv + t.weight[i] * chi * t.dconj[i] * H.gradient(t.image[i]) + t.weight[i] * hv * dchi;
      }
      const double r = std::abs(grad) / (slope * val);
      out.worst_cone_ratio = std::max(out.worst_cone_ratio, r);
      if (!(val > 0) || r > 1.0) out.cone_ok = false;
    }
    std::vector<double> num(pts.size()), den(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const WordTerms& t = pts[k];
      std::array<double, 2> s{damp.at(0, sys.check.points[k]).sum, damp.at(1, sys.check.points[k]).sum};
      double nv = 0.0, pv = 0.0;
      for (std::size_t i = 0; i < t.image.size(); ++i) {
        double chi = 1.0;
        for (int br = 0; br < 2; ++br)
          if (t.alpha_pos[br] == static_cast<int>(i)) chi = 1.0 - theta * s[br];
        const double hv = H(t.image[i]);
        nv += t.weight[i] * chi * hv;
        pv += t.eta[i] * hv * hv;
      }
      num[k] = nv * nv;
      den[k] = pv;
    }
    out.ratio = pairwise_sum(num) / pairwise_sum(den);
  });
  std::size_t ok = 0;
  rep.alpha_hat = 0.0;
  for (const auto& t : rep.trials) {
    ok += t.cone_ok;
    rep.alpha_hat = std::max(rep.alpha_hat, t.ratio);
  }
  rep.cone_ok_fraction = static_cast<double>(ok) / trials;
  return rep;
}

// FNV-1a over the first `length` symbols, as 16 hex digits.
inline std::string omega_prefix_hash(std::span<const int> omega, std::size_t length = 32) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < std::min(length, omega.size()); ++i) {
    h ^= static_cast<std::uint64_t>(omega[i]) + 1;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Domination

struct ThetaValues {
  double theta1 = NAN;
  double theta2 = NAN;
  double numerator = NAN;
  double den_plain = NAN;  // e1 H1 + e2 H2, no damping
  double arg = NAN;        // argument of the ratio of the two numerator summands
};

// Theta_1 and Theta_2 at x. Each summand carries its own angle cocycle.
template <class F, class Hf>
ThetaValues theta_values(const DolgopyatSystem& sys, const TwistParams& tp, F&& f, Hf&& H, cplx x) {
  std::array<cplx, 2> z;
  std::array<double, 2> e, hv;
  for (int i = 0; i < 2; ++i) {
    const WordJet j = eval_word(sys.model.ifs, sys.alpha[i], x);
    const double c = j.norm_cocycle();
    e[i] = sys.eta_alpha[i] * std::exp(two_pi * tp.a * c);
    z[i] = e[i] * std::polar(1.0, two_pi * tp.b * c + tp.ell * j.arg_sum) * cplx(f(j.value));
    hv[i] = std::real(cplx(H(j.value)));
  }
  const double th = sys.params.theta_damp;
  ThetaValues v;
  v.numerator = std::abs(z[0] + z[1]);
  v.den_plain = e[0] * hv[0] + e[1] * hv[1];
  v.theta1 = v.numerator / ((1 - 2 * th) * e[0] * hv[0] + e[1] * hv[1]);
  v.theta2 = v.numerator / (e[0] * hv[0] + (1 - 2 * th) * e[1] * hv[1]);
  v.arg = (z[0] != 0.0 && z[1] != 0.0) ? std::arg(z[0] / z[1]) : 0.0;
  return v;
}

struct DominationFailure {
  std::size_t center = 0;
  std::array<double, 4> theta_max{};  // sup over the test points of Theta_1/Theta_2 on the x and y balls
};

struct DominationResult {
  DolgopyatSet J;
  bool dense = false;
  bool verified = false;
  std::array<std::size_t, 4> case_counts{};  // which of the four rules fired
  std::vector<DominationFailure> failures;
  std::size_t arg_violations = 0;           // centers with |Arg(x_j)| > pi/2
  double worst_excess = 0.0;                // max over checked points of |P f| / N^J H
  std::size_t checked_points = 0;
};

struct DominationOptions {
  double a = 0.0;
  int ring_points = 8;  // test points per ring; rings at r and r/2 plus the center
  int threads = 1;
};

// Test points of B_r(c): the center and two rings.
inline std::vector<cplx> ball_test_points(cplx c, double r, int ring) {
  std::vector<cplx> out{c};
  for (double rr : {r * (1 - 1e-9), r / 2})
    for (int k = 0; k < ring; ++k) out.push_back(c + std::polar(rr, two_pi * (k + 0.5) / ring));
  return out;
}

inline DominationResult domination_select(const DolgopyatSystem& sys, const GridFunction& f, const GridFunction& H,
                                          const DominationOptions& opt = {}) {
  if (f.grid->size() != H.grid->size()) throw std::invalid_argument("domination_select: f and H on different grids");
  const double slope = sys.params.A * sys.frequency();
  const auto gf = gradient_norms(f);
  for (std::size_t k = 0; k < f.values.size(); ++k) {
    const double hv = H.values[k].real();
    if (!(hv > 0)) throw std::invalid_argument("domination_select: H must be positive");
    if (std::abs(f.values[k]) > hv * (1 + 1e-12) || gf[k] > slope * hv * (1 + 1e-12))
      throw std::invalid_argument("domination_select: precondition |f| <= H, |grad f| <= A(|b|+|ell|) H fails at node " +
                                  std::to_string(k));
  }
  const TwistParams tp{opt.a, sys.b, sys.ell, sys.params.N};
  const double r = sys.bump_radius();
  DominationResult res;
  const std::size_t q = sys.cover.size();
  std::vector<int> choice(q, -1);
  std::vector<DominationFailure> fail(q);
  std::vector<char> argbad(q, 0);
  parallel_chunks(q, opt.threads, [&](std::size_t j) {
    const ThetaValues at_center = theta_values(sys, tp, f, H, sys.cover.centers[j]);
    argbad[j] = std::abs(at_center.arg) > std::numbers::pi / 2;
    std::array<double, 4> sup{0, 0, 0, 0};
    for (int kind = 0; kind < 2; ++kind) {
      const cplx c = kind == 0 ? sys.cover.centers[j] : sys.directions.entries[j].y;
      for (const cplx& x : ball_test_points(c, r, opt.ring_points)) {
        const ThetaValues v = theta_values(sys, tp, f, H, x);
        sup[2 * kind] = std::max(sup[2 * kind], v.theta1);
        sup[2 * kind + 1] = std::max(sup[2 * kind + 1], v.theta2);
      }
    }
    fail[j] = {j, sup};
    for (int c = 0; c < 4; ++c)
      if (sup[c] <= 1.0) {
        choice[j] = c;
        break;
      }
  });
  for (std::size_t j = 0; j < q; ++j) {
    res.arg_violations += argbad[j];
    if (choice[j] < 0) {
      res.failures.push_back(fail[j]);
      continue;
    }
    // rule c: branch c % 2, kind c / 2
    res.J.push_back({choice[j] % 2, choice[j] / 2, j});
    ++res.case_counts[choice[j]];
  }
  res.dense = is_dense(res.J, q);
  if (res.J.empty()) return res;

  // |P_{s,ell,omega,N} f| <= N^J H on the grid nodes and at each selected ball center.
  const Damping damp(sys, res.J);
  std::vector<cplx> check(f.grid->nodes());
  for (const auto& t : res.J) check.push_back(sys.point(t));
  std::vector<double> excess(check.size());
  auto Hre = [&](cplx z) { return H(z).real(); };
  parallel_chunks(check.size(), opt.threads, [&](std::size_t k) {
    const double lhs = std::abs(model_transfer_eval(sys.model, sys.omega, tp, f, check[k]));
    const double rhs = dolgopyat_eval(sys, damp, opt.a, Hre, check[k]).real();
    excess[k] = lhs / rhs;
  });
  res.checked_points = check.size();
  res.worst_excess = *std::max_element(excess.begin(), excess.end());
  res.verified = res.dense && res.failures.empty() && res.worst_excess <= 1.0 + 1e-12;
  return res;
}

// Random pair with |f| <= H and |grad f| well inside A (|b|+|ell|) H: H is a
// resolved cone probe, f = H u exp(i phi) with u in [1/2, 1] (u = 1 when
// `saturated`), u and phi smooth trigonometric fields.
struct DominationPair {
  GridFunction f;
  GridFunction H;
};

inline DominationPair random_domination_pair(Rng& rng, const GridPtr& grid, double slope, bool saturated) {
  const double kmax = 0.25 / grid->spacing();
  const ConeProbe Hp = random_cone_probe(rng, std::min(slope, kmax) / 2, kmax);
  const ConeProbe up = random_cone_probe(rng, std::min(slope, kmax) / 8, kmax, 2);
  const ConeProbe ph = random_cone_probe(rng, std::min(slope, kmax) / 4, kmax, 2);
  DominationPair p;
  p.H = grid_build(grid, [&](cplx z) { return cplx(Hp(z)); });
  p.f = grid_build(grid, [&](cplx z) {
    const double u = saturated ? 1.0 : 0.75 + 0.25 * std::tanh(up.log_value(z));
    return Hp(z) * u * std::polar(1.0, ph.log_value(z));
  });
  return p;
}

// ---------------------------------------------------------------------------
// W_J

struct WjReport {
  bool covers_100 = false;       // samples within 100 eps of W_J'
  double max_distance = 0.0;     // in units of eps_tilde
  double eps2_empirical = NAN;   // int_{W_J} H / int H over the independent check sample
  double eps2_cylinder = NAN;    // lower bound from cylinders C_v inside B_{delta3 eps}(z), z in W_J'
};

// H must lie in the cone of slope A (|b|+|ell|); the cylinder bound uses
// inf_{C_v} H >= H(z) exp(-slope diam C_v).
template <class Hf>
WjReport wj_report(const DolgopyatSystem& sys, const DolgopyatSet& J, Hf&& H) {
  if (!is_dense(J, sys.cover.size())) throw std::invalid_argument("wj_report: J must be dense");
  const double e = sys.eps_tilde(), rW = sys.params.delta3 * e, slope = sys.params.A * sys.frequency();
  std::vector<cplx> wpts;
  std::vector<Word> codes;
  for (const auto& t : J) {
    const cplx z = sys.point(t);
    if (std::find(wpts.begin(), wpts.end(), z) != wpts.end()) continue;
    wpts.push_back(z);
    if (t.kind == 0) {
      const auto c = sys.samples.coding(sys.cover.sample_index[t.center]);
      codes.emplace_back(c.begin(), c.end());
    } else {
      const Word& yc = sys.directions.entries[t.center].y_coding;
      codes.emplace_back(yc.begin(), yc.begin() + std::min<std::size_t>(yc.size(), sys.samples.coding_length));
    }
  }
  WjReport rep;
  PointHash far(100 * e);
  for (std::size_t k = 0; k < wpts.size(); ++k) far.insert(wpts[k], k);
  for (const cplx& z : sys.samples.points) {
    double best = INFINITY;
    far.near(z, 100 * e, [&](std::size_t k) { best = std::min(best, std::abs(wpts[k] - z)); });
    rep.max_distance = std::max(rep.max_distance, best / e);
  }
  rep.covers_100 = rep.max_distance < 100;
  PointHash nearW(rW);
  for (std::size_t k = 0; k < wpts.size(); ++k) nearW.insert(wpts[k], k);
  std::vector<double> all(sys.check.size()), in(sys.check.size());
  for (std::size_t i = 0; i < sys.check.size(); ++i) {
    const cplx z = sys.check.points[i];
    all[i] = std::real(cplx(H(z)));
    bool hit = false;
    nearW.near(z, rW, [&](std::size_t k) { hit = hit || std::abs(wpts[k] - z) < rW; });
    in[i] = hit ? all[i] : 0.0;
  }
  const double total = pairwise_sum(all);
  rep.eps2_empirical = pairwise_sum(in) / total;
  const auto tail = sys.tail();
  std::vector<double> mass;
  for (std::size_t k = 0; k < wpts.size(); ++k)
    for (std::size_t len = 1; len <= codes[k].size(); ++len) {
      const std::span<const int> v(codes[k].data(), len);
      if (!cylinder_inside_ball(sys.model.ifs, v, wpts[k], rW)) continue;
      const double diam = cylinder_diameter(sys.model, v, 32);
      mass.push_back(model_word_probability(sys.model, tail, v) * std::real(cplx(H(wpts[k]))) * std::exp(-slope * diam));
      break;
    }
  rep.eps2_cylinder = pairwise_sum(mass) / (total / static_cast<double>(sys.check.size()));
  return rep;
}

}  // namespace conflab
