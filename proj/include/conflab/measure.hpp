#pragma once

// Empirical approximations of the stationary measure nu = sum p_i f_i* nu.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ifs.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace conflab {

struct EmpiricalMeasure {
  std::vector<cplx> points;
  std::vector<double> weights;  // uniform 1/count
  std::uint64_t seed = 0;
  int depth = 0;
  // Optional coding prefixes, row-major: symbol j of point i at codings[i * coding_length + j].
  int coding_length = 0;
  std::vector<int> codings;

  std::size_t size() const { return points.size(); }
  std::span<const int> coding(std::size_t i) const {
    return {codings.data() + i * coding_length, static_cast<std::size_t>(coding_length)};
  }
};

// Depth at which rho^depth <= tol, i.e. the chaos-game truncation error is below tol.
inline int depth_for_tolerance(double rho, double tol) {
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("depth_for_tolerance: rho must lie in (0, 1)");
  if (!(tol > 0.0 && tol < 1.0)) throw std::invalid_argument("depth_for_tolerance: tol must lie in (0, 1)");
  return std::max(1, static_cast<int>(std::ceil(std::log(tol) / std::log(rho))));
}

inline constexpr std::size_t sample_chunk = 4096;

// Chaos game at fixed depth from x0 = 0: each point is f_{w1} o ... o f_{wd}(0)
// with i.i.d. symbols. Chunk c of the output uses substream (seed, c).
inline EmpiricalMeasure sample_batch(const ConformalIFS& ifs, std::span<const double> p, std::uint64_t seed,
                                     std::size_t count, int depth, int threads = 1, int coding_length = 0) {
  check_probability(p, ifs.size());
  if (count == 0) throw std::invalid_argument("sample_batch: count must be positive");
  if (depth < 1) throw std::invalid_argument("sample_batch: depth must be >= 1");
  if (coding_length < 0 || coding_length > depth)
    throw std::invalid_argument("sample_batch: coding_length must lie in [0, depth]");
  EmpiricalMeasure em;
  em.seed = seed;
  em.depth = depth;
  em.coding_length = coding_length;
  em.points.resize(count);
  em.weights.assign(count, 1.0 / static_cast<double>(count));
  em.codings.resize(count * coding_length);
  const auto cum = cumulative_weights(p);
  const std::size_t chunks = (count + sample_chunk - 1) / sample_chunk;
  parallel_chunks(chunks, threads, [&](std::size_t c) {
    Rng rng(seed, c);
    Word w(depth);
    const std::size_t end = std::min(count, (c + 1) * sample_chunk);
    for (std::size_t i = c * sample_chunk; i < end; ++i) {
      for (int& s : w) s = rng.categorical(cum);
      cplx z = 0.0;
      for (int k = depth; k-- > 0;) z = eval_map(ifs.map(w[k]), z).value;
      em.points[i] = z;
      std::copy_n(w.begin(), coding_length, em.codings.begin() + i * coding_length);
    }
  });
  return em;
}

inline double cylinder_measure(std::span<const double> p, std::span<const int> w) {
  double m = 1.0;
  for (int s : w) {
    if (s < 0 || static_cast<std::size_t>(s) >= p.size()) throw std::out_of_range("cylinder_measure: bad symbol");
    m *= p[s];
  }
  return m;
}

inline double ball_mass(const EmpiricalMeasure& em, cplx x, double r) {
  double m = 0.0;
  for (std::size_t i = 0; i < em.size(); ++i)
    if (std::abs(em.points[i] - x) <= r) m += em.weights[i];
  return m;
}

// Slope of log nu(B_r(x)) against log r over the radii with positive mass.
inline double local_dimension_estimate(const EmpiricalMeasure& em, cplx x, std::span<const double> radii) {
  if (radii.size() < 3) throw std::invalid_argument("local_dimension_estimate: need at least 3 radii");
  std::vector<double> lr, lm;
  for (double r : radii) {
    if (!(r > 0.0)) throw std::invalid_argument("local_dimension_estimate: radii must be positive");
    const double m = ball_mass(em, x, r);
    if (m > 0.0) {
      lr.push_back(std::log(r));
      lm.push_back(std::log(m));
    }
  }
  if (lr.size() < 3) throw std::invalid_argument("local_dimension_estimate: fewer than 3 radii carry mass");
  return fit_line(lr, lm).slope;
}

inline double doubling_ratio(const EmpiricalMeasure& em, cplx x, double r, double factor) {
  if (!(r > 0.0) || !(factor >= 1.0)) throw std::invalid_argument("doubling_ratio: need r > 0 and factor >= 1");
  const double inner = ball_mass(em, x, r);
  if (inner <= 0.0) throw std::domain_error("doubling_ratio: ball carries no mass");
  return ball_mass(em, x, factor * r) / inner;
}

// Mean and standard error of g over the measure.
template <class G>
MeanSe integrate(const EmpiricalMeasure& em, G&& g) {
  std::vector<double> v(em.size());
  for (std::size_t i = 0; i < em.size(); ++i) v[i] = g(em.points[i]);
  return mean_se(v);
}

}  // namespace conflab
