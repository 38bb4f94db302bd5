#pragma once

// Twisted transfer operator
//   P_{s,ell} g(x) = sum_i p_i exp(2 pi s c(i,x)) exp(i ell theta(i,x)) g(f_i x),  s = a + ib,
// evaluated pointwise on callables and by collocation on a DiscGrid.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "ifs.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace conflab {

struct TwistParams {
  double a = 0.0;
  double b = 0.0;
  int ell = 0;
  int N = 1;

  double frequency() const { return std::abs(b) + std::abs(ell); }
};

// exp(2 pi s c) exp(i ell theta) for a jet of f_w at x.
inline cplx twist_factor(const TwistParams& tp, const WordJet& j) {
  const double c = j.norm_cocycle();
  return std::exp(two_pi * tp.a * c) * std::polar(1.0, two_pi * tp.b * c + tp.ell * j.arg_sum);
}

// One application at a point; g is any callable cplx -> cplx.
template <class G>
cplx transfer_eval(const ConformalIFS& ifs, std::span<const double> p, const TwistParams& tp, G&& g, cplx x) {
  cplx acc = 0.0;
  for (std::size_t i = 0; i < ifs.size(); ++i) {
    const WordJet j = eval_map(ifs.map(i), x);
    acc += p[i] * twist_factor(tp, j) * g(j.value);
  }
  return acc;
}

// P^n g(x) as the word sum over |w| = n, without intermediate interpolation.
template <class G>
cplx transfer_power_eval(const ConformalIFS& ifs, std::span<const double> p, const TwistParams& tp, int n,
                         G&& g, cplx x) {
  if (n < 0) throw std::invalid_argument("transfer_power_eval: n must be >= 0");
  cplx acc = 0.0;
  // Depth-first over words, extending on the outside: f_{j w} = f_j o f_w.
  struct Frame {
    WordJet jet;
    double weight;
  };
  std::vector<Frame> stack{{WordJet{x, 1.0, 0.0, 0.0, 0.0}, 1.0}};
  std::vector<int> depth{0};
  while (!stack.empty()) {
    const Frame f = stack.back();
    const int d = depth.back();
    stack.pop_back();
    depth.pop_back();
    if (d == n) {
      acc += f.weight * twist_factor(tp, f.jet) * g(f.jet.value);
      continue;
    }
    for (std::size_t i = ifs.size(); i-- > 0;) {
      JetAccumulator accj(f.jet.value);
      accj.apply(ifs.map(i));
      WordJet nj = accj.jet();
      nj.log_slope = f.jet.log_slope + nj.log_slope * f.jet.derivative;
      nj.log_modulus += f.jet.log_modulus;
      nj.arg_sum += f.jet.arg_sum;
      nj.derivative *= f.jet.derivative;
      stack.push_back({nj, f.weight * p[i]});
      depth.push_back(d + 1);
    }
  }
  return acc;
}

// Collocation operator on a fixed grid. Image stencils and cocycle values are
// computed once; set_twist only recomputes the phase weights.
class TransferOperator {
 public:
  TransferOperator(const ConformalIFS& ifs, std::span<const double> p, GridPtr grid)
      : grid_(std::move(grid)), maps_(ifs.size()) {
    check_probability(p, ifs.size());
    p_.assign(p.begin(), p.end());
    const std::size_t n = grid_->size();
    stencils_.resize(n * maps_);
    norm_.resize(n * maps_);
    angle_.resize(n * maps_);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < maps_; ++i) {
        const WordJet j = eval_map(ifs.map(i), grid_->node(k));
        stencils_[k * maps_ + i] = grid_->stencil(j.value);
        norm_[k * maps_ + i] = j.norm_cocycle();
        angle_[k * maps_ + i] = j.arg_sum;
      }
    set_twist({});
  }

  void set_twist(const TwistParams& tp) {
    tp_ = tp;
    weights_.resize(norm_.size());
    for (std::size_t r = 0; r < norm_.size(); ++r) {
      const double c = norm_[r];
      weights_[r] = p_[r % maps_] * std::exp(two_pi * tp.a * c) * std::polar(1.0, two_pi * tp.b * c + tp.ell * angle_[r]);
    }
  }

  const TwistParams& twist() const { return tp_; }
  const GridPtr& grid() const { return grid_; }

  GridFunction apply(const GridFunction& g) const {
    if (g.grid != grid_ && g.grid->size() != grid_->size())
      throw std::invalid_argument("TransferOperator: grid mismatch");
    GridFunction out(grid_);
    const std::size_t n = grid_->size();
    for (std::size_t k = 0; k < n; ++k) {
      cplx acc = 0.0;
      for (std::size_t i = 0; i < maps_; ++i) acc += weights_[k * maps_ + i] * g.at(stencils_[k * maps_ + i]);
      out.values[k] = acc;
    }
    return out;
  }

 private:
  GridPtr grid_;
  std::size_t maps_;
  std::vector<double> p_;
  std::vector<Stencil> stencils_;
  std::vector<double> norm_;
  std::vector<double> angle_;
  std::vector<cplx> weights_;
  TwistParams tp_;
};

inline GridFunction transfer_apply(const ConformalIFS& ifs, std::span<const double> p, const TwistParams& tp,
                                   const GridFunction& g) {
  TransferOperator op(ifs, p, g.grid);
  op.set_twist(tp);
  GridFunction out = g;
  for (int k = 0; k < std::max(1, tp.N); ++k) out = op.apply(out);
  return out;
}

// ---------------------------------------------------------------------------
// Probe functions

// exp(F) with F a sum of a few random cosines; |grad F| <= slope everywhere.
struct ConeProbe {
  struct Wave {
    cplx k;  // wave vector
    double amplitude;
    double phase;
  };
  std::vector<Wave> waves;
  double level = 0.0;

  double log_value(cplx z) const {
    double f = level;
    for (const auto& w : waves) f += w.amplitude * std::cos(dot(w.k, z) + w.phase);
    return f;
  }
  double operator()(cplx z) const { return std::exp(log_value(z)); }
  // Gradient of the value, as a planar vector.
  cplx gradient(cplx z) const {
    cplx gF = 0.0;
    for (const auto& w : waves) gF += -w.amplitude * std::sin(dot(w.k, z) + w.phase) * w.k;
    return (*this)(z)*gF;
  }
};

// Random cone member with log-gradient at most `slope`; wavenumbers are capped
// at max_wavenumber so the probe stays resolved on the grid it is sampled on.
inline ConeProbe random_cone_probe(Rng& rng, double slope, double max_wavenumber, int waves = 3) {
  ConeProbe pr;
  pr.level = rng.uniform(-1.0, 1.0);
  double total = 0.0;
  std::vector<double> share(waves);
  for (double& s : share) total += (s = 0.1 + rng.uniform());
  for (int w = 0; w < waves; ++w) {
    const double kmag = rng.uniform(1.0, std::max(1.0, max_wavenumber));
    const cplx k = std::polar(kmag, two_pi * rng.uniform());
    pr.waves.push_back({k, slope * share[w] / total / kmag, two_pi * rng.uniform()});
  }
  return pr;
}

// ---------------------------------------------------------------------------
// Spectral decay

struct SpectralProbeConfig {
  int cone_probes = 2;
  int trig_probes = 2;
  double cone_slope = 2.0;     // log-gradient bound of cone probes, times (|b| + |ell|)
  double max_wavenumber = 0;   // 0: a quarter of the grid Nyquist number
  std::uint64_t seed = 1;
};

struct SpectralDecayRow {
  double a = 0, b = 0;
  int ell = 0;
  std::vector<double> c1_norm;  // index n - 1: probe max of ||P^n g||_{C1} / ||g||_{C1}
  double alpha_hat = NAN;
  double log_constant = NAN;    // intercept of the tail fit
  double fit_residual = NAN;
  double grad_constant_hat = NAN;    // fitted constant of the a-priori gradient bound
  double grad_constant_bound = NAN;  // analytic value of that constant
};

struct SpectralDecayReport {
  std::vector<SpectralDecayRow> rows;
  double gamma_hat = NAN;  // growth exponent in C (|b| + |ell|)^{1 + gamma}; NaN if not identifiable
  int tail_start = 1;
};

inline std::vector<GridFunction> spectral_probes(const GridPtr& grid, const TwistParams& tp,
                                                 const SpectralProbeConfig& cfg) {
  std::vector<GridFunction> probes;
  probes.push_back(grid_build(grid, [](cplx) { return cplx(1.0); }));
  Rng rng(cfg.seed, 0x5eed);
  const double kmax = cfg.max_wavenumber > 0 ? cfg.max_wavenumber : 0.25 / grid->spacing();
  const double scale = std::max(1.0, tp.frequency());
  for (int i = 0; i < cfg.cone_probes; ++i) {
    const ConeProbe pr = random_cone_probe(rng, std::min(cfg.cone_slope * scale, kmax), kmax);
    probes.push_back(grid_build(grid, [&](cplx z) { return cplx(pr(z)); }));
  }
  for (int i = 0; i < cfg.trig_probes; ++i) {
    const cplx k = std::polar(rng.uniform(1.0, std::min(scale, kmax)), two_pi * rng.uniform());
    const double ph = two_pi * rng.uniform();
    probes.push_back(grid_build(grid, [&](cplx z) { return std::polar(1.0, dot(k, z) + ph); }));
  }
  return probes;
}

// Iterates the collocation operator on a probe set and fits ||P^n|| ~ C alpha^n
// on the tail n in [ceil(n_max / 2), n_max].
inline SpectralDecayReport spectral_decay_experiment(const ConformalIFS& ifs, std::span<const double> p,
                                                     std::span<const double> a_list, std::span<const double> b_list,
                                                     std::span<const int> ell_list, int n_max, double h,
                                                     const SpectralProbeConfig& cfg = {}) {
  if (n_max < 1) throw std::invalid_argument("spectral_decay_experiment: n_max must be >= 1");
  if (a_list.empty() || b_list.empty() || ell_list.empty())
    throw std::invalid_argument("spectral_decay_experiment: empty parameter list");
  const GridPtr grid = make_grid(h);
  TransferOperator op(ifs, p, grid);
  TransferOperator op_real(ifs, p, grid);
  SpectralDecayReport rep;
  rep.tail_start = n_max >= 3 ? (n_max + 1) / 2 : 1;
  const double rho = ifs.rho();
  const double grad_bound = ifs.constants().grad_bound;

  for (double a : a_list)
    for (double b : b_list)
      for (int ell : ell_list) {
        const TwistParams tp{a, b, ell, 1};
        op.set_twist(tp);
        op_real.set_twist({a, 0.0, 0, 1});
        SpectralDecayRow row{a, b, ell, std::vector<double>(n_max, 0.0)};
        const double freq = std::max(1.0, tp.frequency());
        row.grad_constant_bound =
            (two_pi * (std::abs(a) + std::abs(b)) + std::abs(ell)) * grad_bound / (freq * (1.0 - rho));
        double grad_fit = 0.0;
        for (const GridFunction& g0 : spectral_probes(grid, tp, cfg)) {
          const double base = grid_norms(g0).c1;
          GridFunction g = g0;
          GridFunction absg(grid), gradg(grid);
          const auto gn = gradient_norms(g0);
          for (std::size_t k = 0; k < grid->size(); ++k) {
            absg.values[k] = std::abs(g0.values[k]);
            gradg.values[k] = gn[k];
          }
          double rho_n = 1.0;
          for (int n = 1; n <= n_max; ++n) {
            g = op.apply(g);
            absg = op_real.apply(absg);
            gradg = op_real.apply(gradg);
            rho_n *= rho;
            const auto norms = grid_norms(g);
            row.c1_norm[n - 1] = std::max(row.c1_norm[n - 1], norms.c1 / base);
            const auto dn = gradient_norms(g);
            for (std::size_t k = 0; k < grid->size(); ++k) {
              const double denom = freq * absg.values[k].real();
              if (denom > 0) grad_fit = std::max(grad_fit, (dn[k] - rho_n * gradg.values[k].real()) / denom);
            }
          }
        }
        row.grad_constant_hat = grad_fit;
        std::vector<double> xs, ys;
        for (int n = rep.tail_start; n <= n_max; ++n) {
          xs.push_back(n);
          ys.push_back(std::log(std::max(row.c1_norm[n - 1], 1e-300)));
        }
        if (xs.size() >= 2) {
          const LineFit f = fit_line(xs, ys);
          row.alpha_hat = std::exp(f.slope);
          row.log_constant = f.intercept;
          row.fit_residual = f.rms_residual;
        } else {
          row.alpha_hat = row.c1_norm[0];
          row.log_constant = 0.0;
          row.fit_residual = 0.0;
        }
        rep.rows.push_back(std::move(row));
      }

  // gamma from the tail-fit intercepts against log(|b| + |ell|).
  std::vector<double> lx, ly;
  for (const auto& r : rep.rows) {
    const double f = std::abs(r.b) + std::abs(r.ell);
    if (f >= 1.0 && std::isfinite(r.log_constant)) {
      lx.push_back(std::log(f));
      ly.push_back(r.log_constant);
    }
  }
  bool distinct = false;
  for (double v : lx) distinct = distinct || std::abs(v - lx.front()) > 1e-12;
  if (lx.size() >= 2 && distinct) rep.gamma_hat = fit_line(lx, ly).slope - 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Resolvent

struct NeumannResult {
  GridFunction sum;
  int terms_used = 0;
  double tail_bound = NAN;  // geometric bound on the omitted terms in sup norm
};

// sum_{n < terms} P^n g. Divergence: 10 consecutive non-decreasing term norms.
inline NeumannResult resolvent_neumann(const ConformalIFS& ifs, std::span<const double> p, const TwistParams& tp,
                                       const GridFunction& g, int terms) {
  if (terms < 1) throw std::invalid_argument("resolvent_neumann: terms must be >= 1");
  TransferOperator op(ifs, p, g.grid);
  op.set_twist(tp);
  NeumannResult r;
  r.sum = g;
  GridFunction term = g;
  double prev = grid_norms(term).sup;
  double ratio = NAN;
  int rising = 0;
  for (int n = 1; n < terms; ++n) {
    term = op.apply(term);
    const double cur = grid_norms(term).sup;
    for (std::size_t k = 0; k < term.values.size(); ++k) r.sum.values[k] += term.values[k];
    rising = cur >= prev ? rising + 1 : 0;
    if (rising >= 10) throw std::runtime_error("resolvent_neumann: series diverges (10 non-decreasing terms)");
    ratio = prev > 0 ? cur / prev : 0.0;
    prev = cur;
  }
  r.terms_used = terms;
  if (terms == 1) ratio = grid_norms(op.apply(g)).sup / std::max(prev, 1e-300);
  r.tail_bound = ratio < 1.0 ? prev * ratio / (1.0 - ratio) : INFINITY;
  return r;
}

}  // namespace conflab
