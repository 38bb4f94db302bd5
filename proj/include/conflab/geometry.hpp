#pragma once

// Planar vectors are carried as std::complex<double> (x + iy) throughout.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace conflab {

using cplx = std::complex<double>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline double dot(cplx u, cplx v) { return u.real() * v.real() + u.imag() * v.imag(); }

// Angle reduced to [0, 2pi).
inline double wrap_angle(double t) {
  double r = std::fmod(t, two_pi);
  if (r < 0) r += two_pi;
  if (r >= two_pi) r -= two_pi;
  return r;
}

// Distance on R/2piZ.
inline double circle_distance(double a, double b) {
  const double d = wrap_angle(a - b);
  return std::min(d, two_pi - d);
}

inline std::vector<cplx> boundary_points(int count) {
  std::vector<cplx> pts(count);
  for (int k = 0; k < count; ++k) pts[k] = std::polar(1.0, two_pi * k / count);
  return pts;
}

// Square lattice of spacing `step` clipped to the closed unit disc, followed by
// a boundary ring with comparable spacing (a multiple of four points, so +-1, +-i
// are included).
inline std::vector<cplx> disc_points(double step) {
  std::vector<cplx> pts;
  const int m = static_cast<int>(std::floor(1.0 / step + 1e-9));
  for (int j = -m; j <= m; ++j)
    for (int i = -m; i <= m; ++i) {
      const cplx z(i * step, j * step);
      if (std::abs(z) <= 1.0) pts.push_back(z);
    }
  const int ring = 4 * static_cast<int>(std::ceil(std::numbers::pi / (2.0 * step)));
  for (const cplx& z : boundary_points(ring)) pts.push_back(z);
  return pts;
}

}  // namespace conflab
