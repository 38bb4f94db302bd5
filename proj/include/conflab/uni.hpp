#pragma once

// Uniform non-integrability (UNI) witnesses, inducing certificates,
// the local diffeomorphism T = (log|h|, arg h) with h = f_xi' / f_zeta', and
// non-concentration of the attractor in every direction.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifs.hpp"
#include "measure.hpp"

namespace conflab {

struct UniWitness {
  Word xi;
  Word zeta;
  double m_hat = 0.0;        // inf over the grid of |grad(log|f_xi'| - log|f_zeta'|)|
  double m_prime_hat = 0.0;  // sup of the same
};

// |grad(log|f_xi'| - log|f_zeta'|)| = |(log f_xi')' - (log f_zeta')'| by Cauchy-Riemann.
inline UniWitness uni_witness(const ConformalIFS& ifs, const Word& xi, const Word& zeta, double grid_step) {
  if (xi == zeta) throw std::invalid_argument("uni_witness: words must differ");
  UniWitness w{xi, zeta, INFINITY, 0.0};
  for (const cplx& z : disc_points(grid_step)) {
    const double g = std::abs(eval_word(ifs, xi, z).log_slope - eval_word(ifs, zeta, z).log_slope);
    w.m_hat = std::min(w.m_hat, g);
    w.m_prime_hat = std::max(w.m_prime_hat, g);
  }
  return w;
}

// Best witness among pairs of distinct words of length n (lexicographic pair
// order, at most pair_budget pairs).
inline UniWitness uni_scan(const ConformalIFS& ifs, int n, double grid_step, std::size_t pair_budget) {
  if (n < 1) throw std::invalid_argument("uni_scan: n must be >= 1");
  if (word_count(ifs.size(), n) > 4096) throw std::length_error("uni_scan: too many words");
  const auto pts = disc_points(grid_step);
  std::vector<Word> words;
  std::vector<std::vector<cplx>> slope;
  for_each_word(ifs.size(), n, [&](const Word& w) {
    words.push_back(w);
    std::vector<cplx> s(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) s[k] = eval_word(ifs, w, pts[k]).log_slope;
    slope.push_back(std::move(s));
  });
  if (words.size() < 2) throw std::invalid_argument("uni_scan: need at least two words");
  UniWitness best{words[0], words[1], -1.0, 0.0};
  std::size_t used = 0;
  for (std::size_t i = 0; i < words.size() && used < pair_budget; ++i)
    for (std::size_t j = i + 1; j < words.size() && used < pair_budget; ++j, ++used) {
      double lo = INFINITY, hi = 0.0;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        const double g = std::abs(slope[i][k] - slope[j][k]);
        lo = std::min(lo, g);
        hi = std::max(hi, g);
      }
      if (lo > best.m_hat) best = {words[i], words[j], lo, hi};
    }
  return best;
}

// ---------------------------------------------------------------------------
// Image separation

struct ImageDisc {
  cplx center;
  double radius;
};

// f(D) lies in the closed disc about f(0) of radius max_{|z|=1} |f(z) - f(0)|
// (maximum principle), padded by the sampling slack sup|f'| * pi / samples.
inline ImageDisc image_disc(const ConformalMap& f, int samples = 256) {
  const cplx c = eval_map(f, 0.0).value;
  double r = 0.0, d = 0.0;
  for (const cplx& z : boundary_points(samples)) {
    const WordJet j = eval_map(f, z);
    r = std::max(r, std::abs(j.value - c));
    d = std::max(d, std::abs(j.derivative));
  }
  return {c, r + d * std::numbers::pi / samples};
}

inline bool discs_disjoint(const ImageDisc& a, const ImageDisc& b) {
  return std::abs(a.center - b.center) > a.radius + b.radius;
}

// ---------------------------------------------------------------------------
// Inducing

struct InducingCertificate {
  int N = 0;
  std::array<int, 4> maps{};  // indices in Phi^N; designated pairs (0,1) and (2,3)
  double m = 0.0;             // min of the two pair infima
  double m_prime = 0.0;       // max of the two pair suprema
  double slack = 0.0;         // m - 2 * grad_bound * rho^N
  double grad_bound = 0.0;    // of the base system
  double rho = 0.0;           // of the base system
  bool disjoint = false;
  // For every map k of Phi^N outside the four: 0 if {maps[0], maps[1], k} are
  // pairwise disjoint, 2 if {maps[2], maps[3], k} are; -1 for the four themselves.
  std::vector<int> partner;
};

struct InducingAttempt {
  int N = 0;
  double best_m = 0.0;
  double best_slack = -INFINITY;
  std::string reason;
};

struct InducingResult {
  std::optional<InducingCertificate> certificate;
  std::vector<InducingAttempt> attempts;
};

struct InducingOptions {
  double grid_step = 0.05;
  std::size_t cap = 4096;
  std::size_t candidate_pairs = 64;
};

inline InducingResult inducing_search(const ConformalIFS& ifs, int N_min, int N_max, const InducingOptions& opt = {}) {
  if (N_min < 1 || N_max < N_min) throw std::invalid_argument("inducing_search: bad N range");
  InducingResult res;
  const auto pts = disc_points(opt.grid_step);
  const double C = ifs.constants().grad_bound, rho = ifs.rho();
  for (int N = N_min; N <= N_max; ++N) {
    InducingAttempt att{N, 0.0, -INFINITY, ""};
    if (word_count(ifs.size(), N) > static_cast<double>(opt.cap)) {
      att.reason = "induced system exceeds cap";
      res.attempts.push_back(att);
      break;
    }
    const ConformalIFS ind = induce(ifs, N, opt.cap);
    const std::size_t n = ind.size();
    if (n < 4) {
      att.reason = "fewer than four maps";
      res.attempts.push_back(att);
      continue;
    }
    std::vector<ImageDisc> disc(n);
    std::vector<std::vector<cplx>> slope(n, std::vector<cplx>(pts.size()));
    for (std::size_t i = 0; i < n; ++i) {
      disc[i] = image_disc(ind.map(i));
      for (std::size_t k = 0; k < pts.size(); ++k) slope[i][k] = eval_map(ind.map(i), pts[k]).log_slope;
    }
    struct Pair {
      int i, j;
      double lo, hi;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!discs_disjoint(disc[i], disc[j])) continue;
        double lo = INFINITY, hi = 0.0;
        for (std::size_t k = 0; k < pts.size(); ++k) {
          const double g = std::abs(slope[i][k] - slope[j][k]);
          lo = std::min(lo, g);
          hi = std::max(hi, g);
        }
        if (lo > 0.0) pairs.push_back({int(i), int(j), lo, hi});
      }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.lo > b.lo; });
    if (pairs.size() > opt.candidate_pairs) pairs.resize(opt.candidate_pairs);
    if (pairs.empty()) {
      att.reason = "no disjoint pair with positive gradient gap";
      res.attempts.push_back(att);
      continue;
    }
    att.best_m = pairs.front().lo;
    const double slack_cost = 2.0 * C * std::pow(rho, N);
    std::optional<InducingCertificate> best;
    for (std::size_t a = 0; a < pairs.size(); ++a)
      for (std::size_t b = a + 1; b < pairs.size(); ++b) {
        const Pair &P = pairs[a], &Q = pairs[b];
        if (P.i == Q.i || P.i == Q.j || P.j == Q.i || P.j == Q.j) continue;
        const double m = std::min(P.lo, Q.lo);
        att.best_slack = std::max(att.best_slack, m - slack_cost);
        if (m - slack_cost <= 0.0 || (best && m <= best->m)) continue;
        std::vector<int> partner(n, -1);
        bool ok = true;
        for (std::size_t k = 0; k < n && ok; ++k) {
          if (int(k) == P.i || int(k) == P.j || int(k) == Q.i || int(k) == Q.j) continue;
          if (discs_disjoint(disc[k], disc[P.i]) && discs_disjoint(disc[k], disc[P.j]))
            partner[k] = 0;
          else if (discs_disjoint(disc[k], disc[Q.i]) && discs_disjoint(disc[k], disc[Q.j]))
            partner[k] = 2;
          else
            ok = false;
        }
        if (!ok) continue;
        InducingCertificate cert;
        cert.N = N;
        cert.maps = {P.i, P.j, Q.i, Q.j};
        cert.m = m;
        cert.m_prime = std::max(P.hi, Q.hi);
        cert.slack = m - slack_cost;
        cert.grad_bound = C;
        cert.rho = rho;
        cert.disjoint = true;
        cert.partner = std::move(partner);
        best = std::move(cert);
      }
    if (best) {
      res.certificate = std::move(best);
      att.reason = "certified";
      res.attempts.push_back(att);
      return res;
    }
    att.reason = att.best_slack > 0.0 ? "no quadruple admits a partner for every other map"
                                      : (pairs.size() < 2 ? "fewer than two separated pairs"
                                                          : "gradient gap does not exceed 2 C rho^N");
    res.attempts.push_back(att);
  }
  return res;
}

// ---------------------------------------------------------------------------
// T = (log|h|, arg h), h = f_xi' / f_zeta'

struct TnReport {
  double delta2_hat = INFINITY;     // inf of the smallest singular value of grad T
  double jacobian_residual = 0.0;   // max |det grad T - |(log h)'|^2|, finite differences vs closed form
  double c1_norm = 0.0;             // sup|T - T(0)| + sup|grad T|
  double c2_norm = 0.0;             // max(c1_norm, sup of second directional derivatives)
  double min_det = INFINITY;
  double max_angle_excursion = 0.0; // sup |arg(h / h(0))|; the principal branch is valid below pi
};

inline TnReport tn_check(const ConformalIFS& ifs, const UniWitness& w, double fd_step = 1e-3,
                         double sample_step = 0.02) {
  if (!(fd_step > 0.0 && fd_step < 0.1)) throw std::invalid_argument("tn_check: fd_step must lie in (0, 0.1)");
  auto h = [&](cplx z) { return eval_word(ifs, w.xi, z).derivative / eval_word(ifs, w.zeta, z).derivative; };
  auto G = [&](cplx z) { return eval_word(ifs, w.xi, z).log_slope - eval_word(ifs, w.zeta, z).log_slope; };
  const cplx h0 = h(0.0);
  TnReport r;
  double sup_T = 0.0, sup_G = 0.0, sup_G1 = 0.0;
  const cplx dx(fd_step, 0.0), dy(0.0, fd_step);
  for (cplx z : disc_points(sample_step)) {
    z *= 1.0 - fd_step;
    const cplx px = std::log(h(z + dx) / h(z - dx)) / (2 * fd_step);
    const cplx py = std::log(h(z + dy) / h(z - dy)) / (2 * fd_step);
    const double a = px.real(), b = py.real(), c = px.imag(), e = py.imag();
    const double det = a * e - b * c;
    const double s = a * a + b * b + c * c + e * e;
    const double smin = std::sqrt(std::max(0.0, 0.5 * (s - std::sqrt(std::max(0.0, s * s - 4 * det * det)))));
    const cplx g = G(z);
    r.jacobian_residual = std::max(r.jacobian_residual, std::abs(det - std::norm(g)));
    r.delta2_hat = std::min(r.delta2_hat, smin);
    r.min_det = std::min(r.min_det, det);
    const cplx T = std::log(h(z) / h0);
    r.max_angle_excursion = std::max(r.max_angle_excursion, std::abs(T.imag()));
    sup_T = std::max(sup_T, std::abs(T));
    sup_G = std::max(sup_G, std::abs(g));
    sup_G1 = std::max(sup_G1, std::abs((G(z + dx) - G(z - dx)) / (2 * fd_step)));
  }
  r.c1_norm = sup_T + sup_G;
  r.c2_norm = std::max(r.c1_norm, sup_G1);
  return r;
}

// ---------------------------------------------------------------------------
// Non-concentration

struct NonconcentrationReport {
  double delta_hat = INFINITY;
  std::size_t words_used = 0;
  std::size_t words_skipped = 0;  // fewer than min_samples samples in the cylinder
  Word worst_word;
  cplx worst_direction{1.0, 0.0};
};

// For each word eta and unit direction w: inf over sampled x in f_eta(K) of
// sup over sampled y of |<x - y, w>|, divided by |f_eta'(0)|. Minimised over both.
inline NonconcentrationReport nonconcentration_estimate(const ConformalIFS& ifs, const EmpiricalMeasure& em,
                                                        const std::vector<Word>& words, int directions = 64,
                                                        std::size_t min_samples = 30) {
  if (directions < 1) throw std::invalid_argument("nonconcentration_estimate: directions must be >= 1");
  NonconcentrationReport rep;
  std::vector<double> proj;
  for (const Word& eta : words) {
    if (static_cast<int>(eta.size()) > em.coding_length)
      throw std::invalid_argument("nonconcentration_estimate: word longer than stored codings");
    std::vector<cplx> pts;
    for (std::size_t i = 0; i < em.size(); ++i) {
      const auto c = em.coding(i);
      if (std::equal(eta.begin(), eta.end(), c.begin())) pts.push_back(em.points[i]);
    }
    if (pts.size() < min_samples) {
      ++rep.words_skipped;
      continue;
    }
    ++rep.words_used;
    const double scale = std::abs(eval_word(ifs, eta, 0.0).derivative);
    for (int d = 0; d < directions; ++d) {
      // Directions on a half circle; |<x - y, w>| is even in w.
      const cplx w = std::polar(1.0, std::numbers::pi * d / directions);
      proj.resize(pts.size());
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        proj[i] = dot(pts[i], w);
        lo = std::min(lo, proj[i]);
        hi = std::max(hi, proj[i]);
      }
      double worst = INFINITY;
      for (double v : proj) worst = std::min(worst, std::max(hi - v, v - lo));
      const double delta = worst / scale;
      if (delta < rep.delta_hat) {
        rep.delta_hat = delta;
        rep.worst_word = eta;
        rep.worst_direction = w;
      }
    }
  }
  if (rep.words_used == 0) throw std::invalid_argument("nonconcentration_estimate: every cylinder is under-populated");
  return rep;
}

}  // namespace conflab
