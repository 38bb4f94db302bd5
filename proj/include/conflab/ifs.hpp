#pragma once

// Conformal iterated function systems on the closed unit disc.
//
// Word convention: w = (w1, ..., wm) denotes f_{w1} o ... o f_{wm}; the last
// symbol acts first. Symbols are 0-based map indices.
//
// Norm cocycle  c(w, z) = -log |f_w'(z)|.
// Angle cocycle theta(w, z) = arg f_w'(z) in [0, 2pi), accumulated factor by
// factor so that f_w' = exp(-c + i theta) holds without branch ambiguity.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace conflab {

using Word = std::vector<int>;

enum class MapKind { affine, polynomial, moebius };

inline const char* to_string(MapKind k) {
  switch (k) {
    case MapKind::affine: return "affine";
    case MapKind::polynomial: return "polynomial";
    case MapKind::moebius: return "moebius";
  }
  return "?";
}

struct Jet {
  cplx value;
  cplx d1;
  cplx d2;
};

// One primitive holomorphic map.
//   affine:     coefficients {c0, c1}            z -> c0 + c1 z
//   polynomial: coefficients {c0, ..., cd}       z -> sum ck z^k
//   moebius:    coefficients {a, b, c, d}        z -> (a z + b) / (c z + d)
class HolomorphicMap {
 public:
  HolomorphicMap(MapKind kind, std::vector<cplx> coefficients)
      : kind_(kind), coeffs_(std::move(coefficients)) {
    switch (kind_) {
      case MapKind::affine:
        if (coeffs_.size() != 2) throw std::invalid_argument("affine map needs 2 coefficients");
        break;
      case MapKind::polynomial:
        if (coeffs_.empty()) throw std::invalid_argument("polynomial map needs coefficients");
        break;
      case MapKind::moebius:
        if (coeffs_.size() != 4) throw std::invalid_argument("moebius map needs 4 coefficients");
        if (coeffs_[0] * coeffs_[3] - coeffs_[1] * coeffs_[2] == cplx(0))
          throw std::invalid_argument("moebius map is degenerate (ad - bc = 0)");
        break;
    }
  }

  static HolomorphicMap affine(cplx offset, cplx slope) {
    return HolomorphicMap(MapKind::affine, {offset, slope});
  }
  static HolomorphicMap polynomial(std::vector<cplx> c) {
    return HolomorphicMap(MapKind::polynomial, std::move(c));
  }
  static HolomorphicMap moebius(cplx a, cplx b, cplx c, cplx d) {
    return HolomorphicMap(MapKind::moebius, {a, b, c, d});
  }

  MapKind kind() const { return kind_; }
  const std::vector<cplx>& coefficients() const { return coeffs_; }

  // A Moebius map is holomorphic on the closed disc iff |d| > |c|.
  bool pole_in_closed_disc() const {
    return kind_ == MapKind::moebius && std::abs(coeffs_[3]) - std::abs(coeffs_[2]) <= 0.0;
  }

  Jet jet(cplx z) const {
    if (kind_ == MapKind::moebius) {
      const cplx a = coeffs_[0], b = coeffs_[1], c = coeffs_[2], d = coeffs_[3];
      const cplx w = c * z + d;
      if (w == cplx(0)) throw std::domain_error("moebius map evaluated at its pole");
      const cplx det = a * d - b * c;
      return {(a * z + b) / w, det / (w * w), -2.0 * c * det / (w * w * w)};
    }
    cplx v = 0, d1 = 0, d2 = 0;
    for (std::size_t k = coeffs_.size(); k-- > 0;) {
      d2 = d2 * z + 2.0 * d1;
      d1 = d1 * z + v;
      v = v * z + coeffs_[k];
    }
    return {v, d1, d2};
  }

  cplx operator()(cplx z) const { return jet(z).value; }

 private:
  MapKind kind_;
  std::vector<cplx> coeffs_;
};

// Composition g1 o ... o gm of primitives (outermost first). Base maps have one
// factor; induced maps carry the concatenated factors of their word.
struct ConformalMap {
  std::vector<HolomorphicMap> factors;

  ConformalMap(HolomorphicMap m) : factors{std::move(m)} {}  // NOLINT(implicit)
  explicit ConformalMap(std::vector<HolomorphicMap> f) : factors(std::move(f)) {
    if (factors.empty()) throw std::invalid_argument("empty composition");
  }
};

// Evaluation data of f_w at a point.
struct WordJet {
  cplx value;
  cplx derivative;
  cplx log_slope;      // (log f_w')'(z) = f_w''(z) / f_w'(z)
  double log_modulus;  // log |f_w'(z)|, summed factor by factor
  double arg_sum;      // sum of factor arguments (not reduced)

  double norm_cocycle() const { return -log_modulus; }
  double angle_cocycle() const { return wrap_angle(arg_sum); }
};

// Accumulates factors from the inside out.
class JetAccumulator {
 public:
  explicit JetAccumulator(cplx z) : jet_{z, 1.0, 0.0, 0.0, 0.0} {}

  void apply(const HolomorphicMap& g) {
    const Jet j = g.jet(jet_.value);
    if (j.d1 == cplx(0)) throw std::domain_error("derivative vanishes along word");
    jet_.log_slope += j.d2 / j.d1 * jet_.derivative;
    jet_.log_modulus += std::log(std::abs(j.d1));
    jet_.arg_sum += std::arg(j.d1);
    jet_.derivative *= j.d1;
    jet_.value = j.value;
  }

  void apply(const ConformalMap& f) {
    for (auto it = f.factors.rbegin(); it != f.factors.rend(); ++it) apply(*it);
  }

  const WordJet& jet() const { return jet_; }

 private:
  WordJet jet_;
};

inline WordJet eval_map(const ConformalMap& f, cplx z) {
  JetAccumulator acc(z);
  acc.apply(f);
  return acc.jet();
}

struct IfsConstants {
  double rho_min = NAN;     // inf |f_i'| over the disc
  double rho = NAN;         // sup |f_i'| over the disc
  double c_min = NAN;       // -log rho
  double c_max = NAN;       // -log rho_min
  double distortion = NAN;  // bounded-distortion constant, all depths
  double grad_bound = NAN;  // sup over words of |grad log |f_w'||
  int depth = 0;            // word depth used for the last two
};

class ConformalIFS {
 public:
  explicit ConformalIFS(std::vector<ConformalMap> maps, int constants_depth = 0)
      : maps_(std::move(maps)) {
    if (maps_.empty()) throw std::invalid_argument("IFS needs at least one map");
    for (const auto& m : maps_)
      for (const auto& g : m.factors) pole_ = pole_ || g.pole_in_closed_disc();
    compute_constants(constants_depth);
  }

  static ConformalIFS from_primitives(const std::vector<HolomorphicMap>& prims) {
    std::vector<ConformalMap> m(prims.begin(), prims.end());
    return ConformalIFS(std::move(m));
  }

  std::size_t size() const { return maps_.size(); }
  const ConformalMap& map(std::size_t i) const { return maps_.at(i); }
  const std::vector<ConformalMap>& maps() const { return maps_; }
  const IfsConstants& constants() const { return k_; }
  double rho() const { return k_.rho; }
  double rho_min() const { return k_.rho_min; }
  double c_min() const { return k_.c_min; }
  double c_max() const { return k_.c_max; }

  bool has_pole_in_disc() const { return pole_; }

 private:
  void compute_constants(int depth);

  std::vector<ConformalMap> maps_;
  IfsConstants k_;
  bool pole_ = false;
};

inline void check_symbol(const ConformalIFS& ifs, int s) {
  if (s < 0 || static_cast<std::size_t>(s) >= ifs.size())
    throw std::out_of_range("word symbol " + std::to_string(s) + " outside alphabet of size " +
                            std::to_string(ifs.size()));
}

inline WordJet eval_word(const ConformalIFS& ifs, std::span<const int> w, cplx z) {
  if (ifs.has_pole_in_disc()) throw std::domain_error("IFS has a moebius pole in the closed disc");
  JetAccumulator acc(z);
  for (auto it = w.rbegin(); it != w.rend(); ++it) {
    check_symbol(ifs, *it);
    acc.apply(ifs.map(*it));
  }
  return acc.jet();
}

struct WordValue {
  cplx value;
  cplx derivative;
};

inline WordValue word_eval(const ConformalIFS& ifs, std::span<const int> w, cplx z) {
  const WordJet j = eval_word(ifs, w, z);
  return {j.value, j.derivative};
}

struct Cocycle {
  double norm;   // c(w, z)
  double angle;  // theta(w, z) in [0, 2pi)
};

inline Cocycle cocycle(const ConformalIFS& ifs, std::span<const int> w, cplx z) {
  const WordJet j = eval_word(ifs, w, z);
  return {j.norm_cocycle(), j.angle_cocycle()};
}

// grad log|f_w'| at z as a planar vector. With g = log f_w' holomorphic,
// Cauchy-Riemann gives grad Re g = (Re g', -Im g') = conj(g').
inline cplx grad_log_modulus(const ConformalIFS& ifs, std::span<const int> w, cplx z) {
  return std::conj(eval_word(ifs, w, z).log_slope);
}

// grad arg f_w' = grad Im g = (Im g', Re g').
inline cplx grad_arg(const ConformalIFS& ifs, std::span<const int> w, cplx z) {
  const cplx g = eval_word(ifs, w, z).log_slope;
  return {g.imag(), g.real()};
}

// Calls fn(word) for every word of the given length in lexicographic order.
template <class Fn>
void for_each_word(std::size_t alphabet, std::size_t length, Fn&& fn) {
  Word w(length, 0);
  while (true) {
    fn(static_cast<const Word&>(w));
    std::size_t k = length;
    while (k > 0) {
      --k;
      if (static_cast<std::size_t>(++w[k]) < alphabet) break;
      w[k] = 0;
      if (k == 0) return;
    }
    if (length == 0) return;
  }
}

inline double word_count(std::size_t alphabet, std::size_t length) {
  return std::pow(static_cast<double>(alphabet), static_cast<double>(length));
}

// Max over words of length 1..depth of sup|f_w'| / inf|f_w'| on the sample set.
inline double distortion_on(const ConformalIFS& ifs, int depth, const std::vector<cplx>& pts) {
  double best = 1.0;
  for (int len = 1; len <= depth; ++len)
    for_each_word(ifs.size(), len, [&](const Word& w) {
      double lo = INFINITY, hi = -INFINITY;
      for (const cplx& z : pts) {
        const double lm = eval_word(ifs, w, z).log_modulus;
        lo = std::min(lo, lm);
        hi = std::max(hi, lm);
      }
      best = std::max(best, std::exp(hi - lo));
    });
  return best;
}

inline double distortion_estimate(const ConformalIFS& ifs, int depth, double grid_step) {
  if (depth < 1) throw std::invalid_argument("distortion_estimate: depth must be >= 1");
  if (!(grid_step > 0.0 && grid_step <= 0.5))
    throw std::invalid_argument("distortion_estimate: grid_step must lie in (0, 0.5]");
  if (word_count(ifs.size(), depth) > 1e6)
    throw std::length_error("distortion_estimate: too many words at this depth");
  return distortion_on(ifs, depth, disc_points(grid_step));
}

inline void ConformalIFS::compute_constants(int depth) {
  if (has_pole_in_disc()) return;
  // log|f'| is harmonic and (log f')' holomorphic, so extremes sit on the circle.
  const auto circle = boundary_points(256);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& m : maps_)
    for (const cplx& z : circle) {
      const double d = std::abs(eval_map(m, z).derivative);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  k_.rho_min = lo;
  k_.rho = hi;
  k_.c_min = -std::log(hi);
  k_.c_max = -std::log(lo);

  if (depth <= 0) {
    depth = 1;
    while (depth < 3 && word_count(maps_.size(), depth + 1) <= 512) ++depth;
  }
  k_.depth = depth;
  double grad = 0.0, log_dist = 0.0;
  for (int len = 1; len <= depth; ++len)
    for_each_word(maps_.size(), len, [&](const Word& w) {
      double a = INFINITY, b = -INFINITY;
      for (const cplx& z : circle) {
        JetAccumulator acc(z);
        for (auto it = w.rbegin(); it != w.rend(); ++it) acc.apply(maps_[*it]);
        grad = std::max(grad, std::abs(acc.jet().log_slope));
        a = std::min(a, acc.jet().log_modulus);
        b = std::max(b, acc.jet().log_modulus);
      }
      log_dist = std::max(log_dist, b - a);
    });
  // Words longer than `depth` split as (outer, inner); the outer part adds at
  // most grad * rho^depth to the gradient and grad * diam(inner image) to log-distortion.
  const double tail = hi < 1.0 ? std::pow(hi, depth) : 1.0;
  k_.grad_bound = hi < 1.0 ? grad / (1.0 - tail) : grad;
  k_.distortion = std::exp(log_dist + 2.0 * k_.grad_bound * tail);
}

inline void check_probability(std::span<const double> p, std::size_t n) {
  if (p.size() != n)
    throw std::invalid_argument("probability vector has " + std::to_string(p.size()) +
                                " entries, expected " + std::to_string(n));
  double s = 0.0;
  for (double x : p) {
    if (!(x > 0.0)) throw std::invalid_argument("probability weights must be positive");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("probability weights must sum to 1");
}

// ---------------------------------------------------------------------------
// Hypothesis validation

enum class Hypothesis {
  pole_in_disc,
  image_outside_disc,
  not_contracting,
  critical_point,
  fixed_points_not_distinct,
};

inline const char* to_string(Hypothesis h) {
  switch (h) {
    case Hypothesis::pole_in_disc: return "pole_in_disc";
    case Hypothesis::image_outside_disc: return "image_outside_disc";
    case Hypothesis::not_contracting: return "not_contracting";
    case Hypothesis::critical_point: return "critical_point";
    case Hypothesis::fixed_points_not_distinct: return "fixed_points_not_distinct";
  }
  return "?";
}

struct ValidationFailure {
  Hypothesis hypothesis;
  int map;  // -1 when the failure concerns the whole system
  std::string detail;
};

struct MapCheck {
  double boundary_modulus = NAN;  // max |f(z)| over boundary samples
  double lipschitz_slack = NAN;   // sup|f'| * half the arc spacing
  bool certified = false;         // boundary_modulus + slack <= 1 - margin
  double max_derivative = NAN;
  double min_derivative = NAN;
  int critical_points = 0;        // zeros of f' inside the disc (argument principle)
  cplx fixed_point{NAN, NAN};
};

struct ValidationReport {
  bool valid = false;
  double rho_min = NAN;
  double rho = NAN;
  double distortion = NAN;
  double grad_bound = NAN;
  std::vector<MapCheck> maps;
  std::vector<ValidationFailure> failures;
};

inline cplx fixed_point(const ConformalMap& f) {
  cplx z = 0.0;
  for (int it = 0; it < 100000; ++it) {
    const cplx next = eval_map(f, z).value;
    if (!std::isfinite(next.real()) || !std::isfinite(next.imag()) || std::abs(next) > 1e6)
      return {NAN, NAN};
    const double step = std::abs(next - z);
    z = next;
    if (step < 1e-14) return z;
  }
  return {NAN, NAN};
}

// Checks the standing hypotheses. Violations are reported, never thrown.
inline ValidationReport validate_ifs(const ConformalIFS& ifs, int boundary_samples = 256,
                                     double margin = 0.0) {
  if (boundary_samples < 256) throw std::invalid_argument("validate_ifs: boundary_samples must be >= 256");
  if (!(margin >= 0.0 && margin < 1.0)) throw std::invalid_argument("validate_ifs: margin must lie in [0, 1)");
  ValidationReport rep;
  const auto circle = boundary_points(boundary_samples);
  const double half_arc = std::numbers::pi / boundary_samples;
  rep.rho = 0.0;
  rep.rho_min = INFINITY;
  for (std::size_t i = 0; i < ifs.size(); ++i) {
    const ConformalMap& f = ifs.map(i);
    MapCheck mc;
    bool pole = false;
    for (const auto& g : f.factors) pole = pole || g.pole_in_closed_disc();
    if (pole) {
      rep.failures.push_back({Hypothesis::pole_in_disc, int(i), "moebius factor has |d| <= |c|"});
      rep.maps.push_back(mc);
      continue;
    }
    double modmax = 0.0, dmax = 0.0, dmin = INFINITY, winding = 0.0, prev_arg = 0.0;
    for (int k = 0; k <= boundary_samples; ++k) {
      const cplx z = circle[k % boundary_samples];
      const WordJet j = eval_map(f, z);
      if (k < boundary_samples) {
        modmax = std::max(modmax, std::abs(j.value));
        dmax = std::max(dmax, std::abs(j.derivative));
        dmin = std::min(dmin, std::abs(j.derivative));
      }
      const double a = std::arg(j.derivative);
      if (k > 0) {
        double da = a - prev_arg;
        while (da > std::numbers::pi) da -= two_pi;
        while (da < -std::numbers::pi) da += two_pi;
        winding += da;
      }
      prev_arg = a;
    }
    mc.boundary_modulus = modmax;
    mc.lipschitz_slack = dmax * half_arc;
    mc.certified = modmax + mc.lipschitz_slack <= 1.0 - margin;
    mc.max_derivative = dmax;
    mc.min_derivative = dmin;
    mc.critical_points = static_cast<int>(std::lround(winding / two_pi));
    if (modmax > 1.0 - margin)
      rep.failures.push_back({Hypothesis::image_outside_disc, int(i),
                              "boundary modulus " + std::to_string(modmax) + " exceeds " +
                                  std::to_string(1.0 - margin)});
    if (dmax >= 1.0)
      rep.failures.push_back({Hypothesis::not_contracting, int(i),
                              "sup |f'| = " + std::to_string(dmax) + " >= 1"});
    if (mc.critical_points != 0)
      rep.failures.push_back({Hypothesis::critical_point, int(i),
                              std::to_string(mc.critical_points) + " zero(s) of f' inside the disc"});
    mc.fixed_point = fixed_point(f);
    rep.rho = std::max(rep.rho, dmax);
    rep.rho_min = std::min(rep.rho_min, dmin);
    rep.maps.push_back(mc);
  }
  bool all_fixed = true;
  for (const auto& m : rep.maps) all_fixed = all_fixed && std::isfinite(m.fixed_point.real());
  if (all_fixed) {
    if (ifs.size() < 2)
      rep.failures.push_back({Hypothesis::fixed_points_not_distinct, -1, "a single map has one fixed point"});
    for (std::size_t i = 0; i < rep.maps.size(); ++i)
      for (std::size_t j = i + 1; j < rep.maps.size(); ++j)
        if (std::abs(rep.maps[i].fixed_point - rep.maps[j].fixed_point) < 1e-9)
          rep.failures.push_back({Hypothesis::fixed_points_not_distinct, int(j),
                                  "fixed point coincides with map " + std::to_string(i)});
  }
  rep.valid = rep.failures.empty();
  if (rep.valid) {
    rep.distortion = ifs.constants().distortion;
    rep.grad_bound = ifs.constants().grad_bound;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Inducing

// Index of a word of length N in the induced system (lexicographic, first symbol most significant).
inline std::size_t word_index(std::span<const int> w, std::size_t alphabet) {
  std::size_t idx = 0;
  for (int s : w) idx = idx * alphabet + static_cast<std::size_t>(s);
  return idx;
}

inline Word index_word(std::size_t idx, std::size_t alphabet, std::size_t length) {
  Word w(length);
  for (std::size_t k = length; k-- > 0;) {
    w[k] = static_cast<int>(idx % alphabet);
    idx /= alphabet;
  }
  return w;
}

// Phi^N = { f_w : |w| = N } in lexicographic order.
inline ConformalIFS induce(const ConformalIFS& ifs, int N, std::size_t cap = 4096) {
  if (N < 1) throw std::invalid_argument("induce: N must be >= 1");
  if (word_count(ifs.size(), N) > static_cast<double>(cap))
    throw std::length_error("induce: " + std::to_string(ifs.size()) + "^" + std::to_string(N) +
                            " maps exceeds cap " + std::to_string(cap));
  std::vector<ConformalMap> out;
  for_each_word(ifs.size(), N, [&](const Word& w) {
    std::vector<HolomorphicMap> f;
    for (int s : w)
      for (const auto& g : ifs.map(s).factors) f.push_back(g);
    out.emplace_back(std::move(f));
  });
  return ConformalIFS(std::move(out));
}

inline std::vector<double> induce_weights(std::span<const double> p, int N) {
  std::vector<double> out;
  for_each_word(p.size(), N, [&](const Word& w) {
    double q = 1.0;
    for (int s : w) q *= p[s];
    out.push_back(q);
  });
  return out;
}

}  // namespace conflab
