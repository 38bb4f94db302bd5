#pragma once

// Square lattice of spacing h clipped to the closed unit disc, with bilinear
// interpolation and finite-difference gradients.

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <vector>

#include "geometry.hpp"

namespace conflab {

struct Stencil {
  int idx[4];
  double w[4];
  int count;  // 4 for bilinear, 1 for nearest-node fallback
};

class DiscGrid {
 public:
  explicit DiscGrid(double h) : h_(h) {
    if (!(h > 0.0 && h <= 0.1)) throw std::invalid_argument("DiscGrid: spacing must lie in (0, 0.1]");
    m_ = static_cast<int>(std::floor(1.0 / h + 1e-9));
    side_ = 2 * m_ + 1;
    index_.assign(static_cast<std::size_t>(side_) * side_, -1);
    for (int j = -m_; j <= m_; ++j)
      for (int i = -m_; i <= m_; ++i) {
        const cplx z(i * h, j * h);
        if (std::abs(z) <= 1.0 + 1e-12) {
          index_[slot(i, j)] = static_cast<int>(nodes_.size());
          nodes_.push_back(z);
          ij_.push_back({i, j});
        }
      }
  }

  double spacing() const { return h_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<cplx>& nodes() const { return nodes_; }
  cplx node(std::size_t k) const { return nodes_[k]; }

  // Node id at lattice coordinates, or -1 outside the disc or lattice.
  int index(int i, int j) const {
    if (i < -m_ || i > m_ || j < -m_ || j > m_) return -1;
    return index_[slot(i, j)];
  }
  int lattice_i(std::size_t k) const { return ij_[k].first; }
  int lattice_j(std::size_t k) const { return ij_[k].second; }

  // Bilinear weights when the enclosing cell lies in the disc; otherwise the
  // nearest in-disc corner (the corner nearest the origin is always in the disc).
  Stencil stencil(cplx z) const {
    if (std::abs(z) > 1.0 + 1e-9) throw std::domain_error("DiscGrid: point outside the disc");
    const double u = z.real() / h_, v = z.imag() / h_;
    const int i0 = static_cast<int>(std::floor(u)), j0 = static_cast<int>(std::floor(v));
    const double tx = u - i0, ty = v - j0;
    const int c[4] = {index(i0, j0), index(i0 + 1, j0), index(i0, j0 + 1), index(i0 + 1, j0 + 1)};
    Stencil s{};
    if (c[0] >= 0 && c[1] >= 0 && c[2] >= 0 && c[3] >= 0) {
      s.count = 4;
      const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
      for (int k = 0; k < 4; ++k) {
        s.idx[k] = c[k];
        s.w[k] = w[k];
      }
      return s;
    }
    double best = INFINITY;
    s.count = 1;
    s.w[0] = 1.0;
    s.idx[0] = -1;
    for (int k = 0; k < 4; ++k)
      if (c[k] >= 0) {
        const double d = std::abs(nodes_[c[k]] - z);
        if (d < best) {
          best = d;
          s.idx[0] = c[k];
        }
      }
    if (s.idx[0] < 0) throw std::domain_error("DiscGrid: no lattice node near point");
    return s;
  }

 private:
  std::size_t slot(int i, int j) const {
    return static_cast<std::size_t>(j + m_) * side_ + static_cast<std::size_t>(i + m_);
  }

  double h_;
  int m_ = 0, side_ = 0;
  std::vector<int> index_;
  std::vector<cplx> nodes_;
  std::vector<std::pair<int, int>> ij_;
};

using GridPtr = std::shared_ptr<const DiscGrid>;

inline GridPtr make_grid(double h) { return std::make_shared<const DiscGrid>(h); }

// Complex values at grid nodes.
struct GridFunction {
  GridPtr grid;
  std::vector<cplx> values;

  GridFunction() = default;
  explicit GridFunction(GridPtr g) : grid(std::move(g)), values(grid->size(), 0.0) {}

  cplx at(const Stencil& s) const {
    cplx v = 0.0;
    for (int k = 0; k < s.count; ++k) v += s.w[k] * values[s.idx[k]];
    return v;
  }
  cplx operator()(cplx z) const { return at(grid->stencil(z)); }
};

template <class F>
GridFunction grid_build(GridPtr grid, F&& f) {
  GridFunction g(grid);
  for (std::size_t k = 0; k < grid->size(); ++k) g.values[k] = f(grid->node(k));
  return g;
}

template <class F>
GridFunction grid_build(double h, F&& f) {
  return grid_build(make_grid(h), std::forward<F>(f));
}

// Partial derivatives at node k: centered where both neighbours exist,
// one-sided otherwise.
struct NodeGradient {
  cplx dx;
  cplx dy;
};

inline NodeGradient node_gradient(const GridFunction& g, std::size_t k) {
  const DiscGrid& G = *g.grid;
  const int i = G.lattice_i(k), j = G.lattice_j(k);
  const double h = G.spacing();
  auto partial = [&](int di, int dj) -> cplx {
    const int fwd = G.index(i + di, j + dj), bwd = G.index(i - di, j - dj);
    if (fwd >= 0 && bwd >= 0) return (g.values[fwd] - g.values[bwd]) / (2 * h);
    if (fwd >= 0) return (g.values[fwd] - g.values[k]) / h;
    if (bwd >= 0) return (g.values[k] - g.values[bwd]) / h;
    return 0.0;
  };
  return {partial(1, 0), partial(0, 1)};
}

// Operator norm of the real 2x2 Jacobian [[Re dx, Re dy], [Im dx, Im dy]].
// For real-valued functions this is the Euclidean length of the gradient.
inline double jacobian_norm(const NodeGradient& d) {
  const double a = d.dx.real(), b = d.dy.real(), c = d.dx.imag(), e = d.dy.imag();
  const double s = a * a + b * b + c * c + e * e;
  const double det = a * e - b * c;
  return std::sqrt(std::max(0.0, 0.5 * (s + std::sqrt(std::max(0.0, s * s - 4 * det * det)))));
}

inline std::vector<double> gradient_norms(const GridFunction& g) {
  std::vector<double> out(g.values.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = jacobian_norm(node_gradient(g, k));
  return out;
}

struct GridNorms {
  double sup = 0.0;
  double grad_sup = 0.0;
  double c1 = 0.0;     // sup + sup|grad|
  double bnorm = 0.0;  // sup + sup|grad| / (|b| + |ell|) when that is >= 1, else c1
};

inline GridNorms grid_norms(const GridFunction& g, double b = 0.0, double ell = 0.0) {
  GridNorms n;
  for (const cplx& v : g.values) n.sup = std::max(n.sup, std::abs(v));
  for (double d : gradient_norms(g)) n.grad_sup = std::max(n.grad_sup, d);
  n.c1 = n.sup + n.grad_sup;
  const double scale = std::abs(b) + std::abs(ell);
  n.bnorm = scale >= 1.0 ? n.sup + n.grad_sup / scale : n.c1;
  return n;
}

}  // namespace conflab
