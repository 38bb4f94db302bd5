#pragma once

// Random model of a conformal IFS: sub-systems Phi_k (k indexes the maps of
// Phi), each with pairwise disjoint images, a Bernoulli law q on the index
// sequence omega, and conditional weights p_tilde so that
//   nu = int mu_omega dQ(omega),  P^N = sum_{|omega| = N} Q([omega]) P_{omega,N}.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"
#include "ifs.hpp"
#include "measure.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "transfer.hpp"
#include "uni.hpp"

namespace conflab {

struct Model {
  ConformalIFS ifs;                          // Phi
  std::vector<double> p;                     // weights on Phi
  std::vector<std::vector<int>> sub_ifss;    // Phi_k, sorted map indices
  std::vector<int> n_counts;                 // n_i = #{k : i in Phi_k}
  std::vector<double> q;                     // q_k = sum_{i in Phi_k} p_i / n_i
  std::vector<std::vector<double>> p_tilde;  // p_tilde_k(i) = (p_i / n_i) / q_k, aligned with sub_ifss[k]
  std::vector<std::array<int, 2>> designated;  // UNI pair inside Phi_k; {-1, -1} if none

  std::size_t index_count() const { return sub_ifss.size(); }
};

// Builds a model from explicit memberships. Throws unless every map is covered
// and each sub-system has >= 2 maps with pairwise separated images.
inline Model make_model(ConformalIFS ifs, std::vector<double> p, std::vector<std::vector<int>> subs,
                        std::vector<std::array<int, 2>> designated = {}) {
  check_probability(p, ifs.size());
  if (subs.empty()) throw std::invalid_argument("make_model: no sub-systems");
  std::vector<ImageDisc> disc(ifs.size());
  for (std::size_t i = 0; i < ifs.size(); ++i) disc[i] = image_disc(ifs.map(i));
  Model m{std::move(ifs), std::move(p), {}, {}, {}, {}, {}};
  m.n_counts.assign(m.ifs.size(), 0);
  for (auto& s : subs) {
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw std::invalid_argument("make_model: repeated map");
    if (s.size() < 2) throw std::invalid_argument("make_model: sub-system needs at least two maps");
    for (int i : s) {
      if (i < 0 || static_cast<std::size_t>(i) >= m.ifs.size()) throw std::out_of_range("make_model: bad map index");
      ++m.n_counts[i];
    }
    for (std::size_t a = 0; a < s.size(); ++a)
      for (std::size_t b = a + 1; b < s.size(); ++b)
        if (!discs_disjoint(disc[s[a]], disc[s[b]]))
          throw std::invalid_argument("make_model: maps " + std::to_string(s[a]) + " and " + std::to_string(s[b]) +
                                      " have overlapping images in one sub-system");
  }
  for (std::size_t i = 0; i < m.n_counts.size(); ++i)
    if (m.n_counts[i] == 0) throw std::invalid_argument("make_model: map " + std::to_string(i) + " is not covered");
  m.sub_ifss = std::move(subs);
  for (const auto& s : m.sub_ifss) {
    double qk = 0.0;
    for (int i : s) qk += m.p[i] / m.n_counts[i];
    std::vector<double> pt;
    for (int i : s) pt.push_back(m.p[i] / m.n_counts[i] / qk);
    m.q.push_back(qk);
    m.p_tilde.push_back(std::move(pt));
  }
  if (designated.empty()) designated.assign(m.sub_ifss.size(), {-1, -1});
  if (designated.size() != m.sub_ifss.size()) throw std::invalid_argument("make_model: designated pair per sub-system");
  m.designated = std::move(designated);
  return m;
}

// Cores from the inducing certificate, each extended greedily (map index order)
// to a maximal family with pairwise separated images.
inline Model build_model(const ConformalIFS& base, std::span<const double> p_base, const InducingCertificate& cert) {
  ConformalIFS ifs = induce(base, cert.N);
  std::vector<double> p = induce_weights(p_base, cert.N);
  const std::size_t n = ifs.size();
  if (cert.partner.size() != n) throw std::invalid_argument("build_model: certificate does not match system");
  std::vector<ImageDisc> disc(n);
  for (std::size_t i = 0; i < n; ++i) disc[i] = image_disc(ifs.map(i));
  const auto& d = cert.maps;
  std::vector<std::vector<int>> subs;
  std::vector<std::array<int, 2>> des;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<int> core;
    std::array<int, 2> pair{};
    if (int(k) == d[0] || int(k) == d[1]) {
      core = {d[0], d[1]};
      pair = {d[0], d[1]};
    } else if (int(k) == d[2] || int(k) == d[3]) {
      core = {d[2], d[3]};
      pair = {d[2], d[3]};
    } else {
      const int off = cert.partner[k];
      if (off != 0 && off != 2) throw std::invalid_argument("build_model: map without partner pair");
      core = {d[off], d[off + 1], int(k)};
      pair = {d[off], d[off + 1]};
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (std::find(core.begin(), core.end(), int(j)) != core.end()) continue;
      bool ok = true;
      for (int c : core) ok = ok && discs_disjoint(disc[j], disc[c]);
      if (ok) core.push_back(int(j));
    }
    subs.push_back(std::move(core));
    des.push_back(pair);
  }
  return make_model(std::move(ifs), std::move(p), std::move(subs), std::move(des));
}

inline std::vector<int> sample_omega(const Model& m, Rng& rng, std::size_t length) {
  const auto cq = cumulative_weights(m.q);
  std::vector<int> w(length);
  for (int& s : w) s = rng.categorical(cq);
  return w;
}

inline double omega_probability(const Model& m, std::span<const int> omega) {
  double v = 1.0;
  for (int k : omega) v *= m.q.at(k);
  return v;
}

// Draws codings J_j ~ p_tilde^{(omega_j)} and returns f_{J_1} o ... o f_{J_d}(0).
inline EmpiricalMeasure sample_mu_omega_given(const Model& m, std::span<const int> omega, std::uint64_t seed,
                                              std::size_t count, int coding_length = 0, int threads = 1) {
  if (omega.empty()) throw std::invalid_argument("sample_mu_omega: empty omega");
  if (coding_length < 0 || coding_length > static_cast<int>(omega.size()))
    throw std::invalid_argument("sample_mu_omega: coding_length exceeds depth");
  const int depth = static_cast<int>(omega.size());
  std::vector<std::vector<double>> cum;
  for (const auto& pt : m.p_tilde) cum.push_back(cumulative_weights(pt));
  EmpiricalMeasure em;
  em.seed = seed;
  em.depth = depth;
  em.coding_length = coding_length;
  em.points.resize(count);
  em.weights.assign(count, 1.0 / static_cast<double>(count));
  em.codings.resize(count * coding_length);
  const std::size_t chunks = (count + sample_chunk - 1) / sample_chunk;
  parallel_chunks(chunks, threads, [&](std::size_t c) {
    Rng rng(seed, c);
    std::vector<int> J(depth);
    const std::size_t end = std::min(count, (c + 1) * sample_chunk);
    for (std::size_t i = c * sample_chunk; i < end; ++i) {
      for (int j = 0; j < depth; ++j) J[j] = m.sub_ifss[omega[j]][rng.categorical(cum[omega[j]])];
      cplx z = 0.0;
      for (int j = depth; j-- > 0;) z = eval_map(m.ifs.map(J[j]), z).value;
      em.points[i] = z;
      std::copy_n(J.begin(), coding_length, em.codings.begin() + i * coding_length);
    }
  });
  return em;
}

struct OmegaSample {
  std::vector<int> omega;
  EmpiricalMeasure measure;
};

inline OmegaSample sample_mu_omega(const Model& m, std::uint64_t seed, std::size_t count, int depth,
                                   int coding_length = 0, int threads = 1) {
  if (depth < 1) throw std::invalid_argument("sample_mu_omega: depth must be >= 1");
  Rng rng(seed, 0xa11ce);
  OmegaSample s;
  s.omega = sample_omega(m, rng, depth);
  s.measure = sample_mu_omega_given(m, s.omega, splitmix64(seed + 1), count, coding_length, threads);
  return s;
}

// ---------------------------------------------------------------------------
// Words of X_N^{(omega)}

// Calls fn(J, jet of f_J at x, eta(J)) for every J in X_N^{(omega)}; J is
// outer-first and J_j ranges over Phi_{omega_j}.
template <class Fn>
void for_each_model_word(const Model& m, std::span<const int> omega, int N, cplx x, Fn&& fn) {
  if (N < 0 || static_cast<int>(omega.size()) < N) throw std::invalid_argument("model word: omega shorter than N");
  std::vector<int> J(N);
  std::function<void(int, const WordJet&, double)> rec = [&](int pos, const WordJet& jet, double eta) {
    if (pos < 0) {
      fn(static_cast<const std::vector<int>&>(J), jet, eta);
      return;
    }
    const int k = omega[pos];
    const auto& sub = m.sub_ifss[k];
    for (std::size_t a = 0; a < sub.size(); ++a) {
      JetAccumulator acc(jet.value);
      acc.apply(m.ifs.map(sub[a]));
      WordJet nj = acc.jet();
      nj.log_slope = jet.log_slope + nj.log_slope * jet.derivative;
      nj.log_modulus += jet.log_modulus;
      nj.arg_sum += jet.arg_sum;
      nj.derivative *= jet.derivative;
      J[pos] = sub[a];
      rec(pos - 1, nj, eta * m.p_tilde[k][a]);
    }
  };
  rec(N - 1, WordJet{x, 1.0, 0.0, 0.0, 0.0}, 1.0);
}

inline std::size_t model_word_count(const Model& m, std::span<const int> omega, int N) {
  std::size_t c = 1;
  for (int j = 0; j < N; ++j) c *= m.sub_ifss.at(omega[j]).size();
  return c;
}

// P_{s,ell,omega,N} g(x) = sum_{J in X_N^{(omega)}} eta(J) exp(2 pi s c(J,x)) exp(i ell theta(J,x)) g(f_J x).
template <class G>
cplx model_transfer_eval(const Model& m, std::span<const int> omega, const TwistParams& tp, G&& g, cplx x) {
  cplx acc = 0.0;
  for_each_model_word(m, omega, tp.N, x, [&](const std::vector<int>&, const WordJet& j, double eta) {
    acc += eta * twist_factor(tp, j) * g(j.value);
  });
  return acc;
}

inline GridFunction transfer_apply_model(const Model& m, std::span<const int> omega, const TwistParams& tp,
                                         const GridFunction& g) {
  GridFunction out(g.grid);
  for (std::size_t k = 0; k < g.grid->size(); ++k) out.values[k] = model_transfer_eval(m, omega, tp, g, g.grid->node(k));
  return out;
}

// ---------------------------------------------------------------------------
// Cylinder geometry

inline double cylinder_diameter(const Model& m, std::span<const int> J, int samples = 128) {
  std::vector<cplx> img;
  img.reserve(samples);
  for (const cplx& z : boundary_points(samples)) {
    cplx y = z;
    for (std::size_t j = J.size(); j-- > 0;) y = eval_map(m.ifs.map(J[j]), y).value;
    img.push_back(y);
  }
  double d = 0.0;
  for (std::size_t a = 0; a < img.size(); ++a)
    for (std::size_t b = a + 1; b < img.size(); ++b) d = std::max(d, std::abs(img[a] - img[b]));
  return d;
}

struct CylinderGeometry {
  double C = NAN;   // C^{-1} r1^g <= |C_alpha| / |C_beta| <= C r2^g, g = |alpha| - |beta|
  double r1 = NAN;
  double r2 = NAN;
  double B1 = NAN;  // min |C_alpha| / r over x in C_alpha subset B_r(x), |alpha| minimal
  std::size_t pairs = 0;
};

inline CylinderGeometry cylinder_geometry(const Model& m, std::span<const int> omega, std::uint64_t seed,
                                          int max_depth = 6, int trials = 200) {
  if (max_depth < 2 || static_cast<int>(omega.size()) < max_depth)
    throw std::invalid_argument("cylinder_geometry: need omega of length >= max_depth >= 2");
  Rng rng(seed, 0xc71);
  std::vector<double> gx, lr;
  std::vector<std::vector<double>> by_gap(max_depth + 1);
  for (int t = 0; t < trials; ++t) {
    std::vector<int> J(max_depth);
    for (int j = 0; j < max_depth; ++j) {
      const auto& sub = m.sub_ifss[omega[j]];
      J[j] = sub[rng.below(static_cast<int>(sub.size()))];
    }
    const int n = 1 + rng.below(max_depth);
    const int b = rng.below(n);  // |beta| in [0, n)
    const double ratio = cylinder_diameter(m, std::span<const int>(J).first(n)) /
                         cylinder_diameter(m, std::span<const int>(J).first(b));
    by_gap[n - b].push_back(std::log(ratio));
  }
  std::vector<double> g, hi, lo;
  CylinderGeometry geo;
  for (int k = 1; k <= max_depth; ++k) {
    if (by_gap[k].empty()) continue;
    geo.pairs += by_gap[k].size();
    g.push_back(k);
    hi.push_back(*std::max_element(by_gap[k].begin(), by_gap[k].end()));
    lo.push_back(*std::min_element(by_gap[k].begin(), by_gap[k].end()));
  }
  if (g.size() < 2) throw std::runtime_error("cylinder_geometry: too few depth gaps sampled");
  geo.r2 = std::exp(fit_line(g, hi).slope);
  geo.r1 = std::exp(fit_line(g, lo).slope);
  double logC = 0.0;
  for (int k = 1; k <= max_depth; ++k)
    for (double v : by_gap[k]) logC = std::max({logC, v - k * std::log(geo.r2), k * std::log(geo.r1) - v});
  geo.C = std::exp(logC);

  // B1 from sampled points of mu_omega and radii r.
  const auto em = sample_mu_omega_given(m, omega, splitmix64(seed), 64, static_cast<int>(omega.size()));
  double B1 = INFINITY;
  for (std::size_t i = 0; i < em.size(); ++i) {
    const cplx x = em.points[i];
    for (double r : {0.2, 0.05, 0.01}) {
      for (int len = 0; len <= em.coding_length; ++len) {
        const auto a = em.coding(i).first(len);
        double far = 0.0;
        for (const cplx& z : boundary_points(64)) {
          cplx y = z;
          for (std::size_t j = a.size(); j-- > 0;) y = eval_map(m.ifs.map(a[j]), y).value;
          far = std::max(far, std::abs(y - x));
        }
        if (far <= r) {
          B1 = std::min(B1, cylinder_diameter(m, a) / r);
          break;
        }
      }
    }
  }
  geo.B1 = B1;
  return geo;
}

}  // namespace conflab
