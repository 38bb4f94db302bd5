#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace conflab {

// Pairwise (cascade) summation; error grows like log n instead of n.
template <class T>
T pairwise_sum(std::span<const T> v) {
  if (v.size() <= 16) {
    T s{};
    for (const auto& x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(std::span<const double>(v)); }

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean_se: empty sample");
  const double n = static_cast<double>(v.size());
  const double m = pairwise_sum(v) / n;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  const double var = v.size() > 1 ? pairwise_sum(std::span<const double>(sq)) / (n - 1.0) : 0.0;
  return {m, std::sqrt(var / n)};
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double r2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    r2 += r * r;
  }
  f.rms_residual = std::sqrt(r2 / n);
  return f;
}

// Kolmogorov-Smirnov distance between a sample and a continuous reference CDF.
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

// Two-sample KS distance; ties are handled by advancing both sides together.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

// KS distance between a sample and a discrete law given as sorted atoms with masses.
inline double ks_discrete(std::vector<double> sample, std::span<const double> atoms,
                          std::span<const double> masses) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0, cdf = 0.0;
  std::size_t i = 0;
  for (std::size_t a = 0; a <= atoms.size(); ++a) {
    const double x = a < atoms.size() ? atoms[a] : INFINITY;
    std::size_t below = i;
    while (below < sample.size() && sample[below] < x) ++below;
    d = std::max(d, std::abs(below / n - cdf));  // just left of the atom
    i = below;
    if (a == atoms.size()) break;
    cdf += masses[a];
    while (i < sample.size() && sample[i] <= x) ++i;
    d = std::max(d, std::abs(i / n - cdf));
  }
  return d;
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty");
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace conflab
