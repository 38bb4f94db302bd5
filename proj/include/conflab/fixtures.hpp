#pragma once

// Named IFS fixtures, shared by the test suites and the command-line tool.

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifs.hpp"

namespace conflab::fixtures {


// {z/2, z/2 + 1/2}: attractor [0, 1], Lebesgue measure for equal weights.
inline ConformalIFS segment() {
  return ConformalIFS::from_primitives(
      {HolomorphicMap::affine(0.0, 0.5), HolomorphicMap::affine(0.5, 0.5)});
}

// {z/2, z/3 + 2/3}: real similarities with incommensurable log-ratios.
inline ConformalIFS two_ratio() {
  return ConformalIFS::from_primitives(
      {HolomorphicMap::affine(0.0, 0.5), HolomorphicMap::affine(2.0 / 3.0, 1.0 / 3.0)});
}

// Real-coefficient nonlinear pair.
inline ConformalIFS quadratic_pair() {
  return ConformalIFS::from_primitives({
      HolomorphicMap::polynomial({-0.45, 0.4, 0.08}),
      HolomorphicMap::polynomial({0.5, 0.35, -0.06}),
  });
}

// Two rotating maps, one with a quadratic term: planar attractor with
// non-integrable cocycles.
inline ConformalIFS uni_planar() {
  return ConformalIFS::from_primitives({
      HolomorphicMap::polynomial({-0.5, std::polar(0.24, 0.7), std::polar(0.05, 1.3)}),
      HolomorphicMap::affine(0.5, std::polar(0.26, -1.9)),
  });
}

// Moebius pair (hyperbolic contractions of the disc toward two boundary-free points).
inline ConformalIFS moebius_pair() {
  return ConformalIFS::from_primitives({
      HolomorphicMap::moebius(0.4, -0.4, 0.1, 1.2),
      HolomorphicMap::moebius(cplx(0.3, 0.2), cplx(0.35, 0.3), cplx(0.0, 0.15), 1.1),
  });
}

// Three rotation-rich maps with a larger attractor dimension.
inline ConformalIFS rotation_rich() {
  return ConformalIFS::from_primitives({
      HolomorphicMap::polynomial({std::polar(0.5, 1.5708), std::polar(0.4, 1.1), std::polar(0.04, 0.4)}),
      HolomorphicMap::polynomial({std::polar(0.5, 3.6652), std::polar(0.4, 2.3), std::polar(0.04, -0.6)}),
      HolomorphicMap::polynomial({std::polar(0.5, 5.7596), std::polar(0.4, -0.8), std::polar(0.04, 2.0)}),
  });
}

// Three maps where the first two images overlap and the third is separated.
inline ConformalIFS overlap_triple() {
  return ConformalIFS::from_primitives({
      HolomorphicMap::affine(-0.45, std::polar(0.3, 0.4)),
      HolomorphicMap::polynomial({cplx(-0.2, 0.1), std::polar(0.3, 1.0), 0.03}),
      HolomorphicMap::polynomial({0.55, std::polar(0.3, -0.5), std::polar(0.04, 2.2)}),
  });
}

inline std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, 1.0 / n); }


// {z/2}: a single contraction; the walk it drives is a lattice walk.
inline ConformalIFS single_half() { return ConformalIFS::from_primitives({HolomorphicMap::affine(0.0, 0.5)}); }

inline const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names{"segment",      "two_ratio",     "quadratic_pair", "uni_planar",
                                              "moebius_pair", "rotation_rich", "overlap_triple", "single_half"};
  return names;
}

inline ConformalIFS named_fixture(const std::string& name) {
  if (name == "segment") return segment();
  if (name == "two_ratio") return two_ratio();
  if (name == "quadratic_pair") return quadratic_pair();
  if (name == "uni_planar") return uni_planar();
  if (name == "moebius_pair") return moebius_pair();
  if (name == "rotation_rich") return rotation_rich();
  if (name == "overlap_triple") return overlap_triple();
  if (name == "single_half") return single_half();
  throw std::invalid_argument("unknown fixture '" + name + "'");
}

}  // namespace conflab::fixtures
