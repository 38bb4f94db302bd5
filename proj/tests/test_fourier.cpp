#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "conflab/fourier.hpp"
#include "fixtures.hpp"

using namespace conflab;
using Catch::Approx;

namespace {

const std::vector<double> half{0.5, 0.5};

const EmpiricalMeasure& segment_samples() {
  static const EmpiricalMeasure em = sample_batch(fixtures::segment(), half, 1, 100000, 40);
  return em;
}

double sinc_abs(double t) { return std::abs(std::sin(std::numbers::pi * t) / (std::numbers::pi * t)); }

}  // namespace

TEST_CASE("fourier_mc basics") {
  const auto& em = segment_samples();
  const auto zero = fourier_mc(em, 0.0);
  CHECK(zero.value == cplx(1.0, 0.0));
  CHECK(zero.stderr_ == 0.0);

  const auto two = fourier_mc(em, cplx(2.0, 0.0));
  CHECK(std::abs(two.value) < 3 * two.stderr_);

  for (double u : {0.3, 5.0, 1234.5}) {
    const auto e = fourier_mc(em, cplx(0.0, u));
    CHECK(e.value == cplx(1.0, 0.0));
  }
  for (double t : {0.5, 1.0, 2.0, 4.0}) {
    const auto e = fourier_mc(em, cplx(t, 0.0));
    CHECK(std::abs(std::abs(e.value) - sinc_abs(t)) < 3 * e.stderr_);
  }
}

TEST_CASE("fourier_mc invariants") {
  const auto em = sample_batch(fixtures::uni_planar(), half, 4, 5000, 30);
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const cplx q(rng.uniform(-40, 40), rng.uniform(-40, 40));
    const auto a = fourier_mc(em, q);
    const auto b = fourier_mc(em, -q);
    CHECK(b.value == std::conj(a.value));
    CHECK(std::abs(a.value) <= 1.0 + 1e-15);
  }
}

TEST_CASE("decay_fit on the segment") {
  const auto& em = segment_samples();
  const auto ladder = geometric_ladder(0.5, 3.0, 6);
  DecayFitOptions opt;
  opt.seed = 2;
  opt.bootstrap = 100;
  const auto x = decay_fit(em, cplx(1, 0), ladder, em.size(), opt);
  REQUIRE_FALSE(x.refused);
  CHECK(x.alpha_hat == Approx(1.0).margin(0.15));
  CHECK(x.ci_low <= x.alpha_hat);
  CHECK(x.ci_high >= x.alpha_hat);
  for (std::size_t i = 0; i < x.radii.size(); ++i) {
    if (x.used[i]) CHECK(std::abs(x.estimates[i]) > 5 * x.stderrs[i]);
    CHECK(std::abs(x.estimates[i]) <= 1.0 + 3 * x.stderrs[i]);
  }
  CHECK(x.radii_used >= 3);
  CHECK(x.radii_used < 6);  // 0.5 * 3^5 is under the noise floor

  const auto y = decay_fit(em, cplx(0, 1), ladder, em.size(), opt);
  CHECK(y.alpha_hat == 0.0);
  CHECK(y.radii_used == 6);

  // Translation only rotates the phase.
  EmpiricalMeasure shifted = em;
  for (auto& z : shifted.points) z += cplx(0.37, -0.21);
  const auto xs = decay_fit(shifted, cplx(1, 0), ladder, em.size(), opt);
  CHECK(xs.alpha_hat == Approx(x.alpha_hat).margin(1e-6));

  // Integer frequencies sit at the zeros of sinc.
  const std::vector<double> zeros{1.0, 2.0, 3.0};
  const auto refused = decay_fit(em, cplx(1, 0), zeros, em.size(), opt);
  CHECK(refused.refused);
  CHECK(refused.noise_floor > 0.0);
  CHECK(std::isnan(refused.alpha_hat));
}

TEST_CASE("decay_fit on a point mass and on a planar attractor") {
  const auto dirac = sample_batch(ConformalIFS::from_primitives({HolomorphicMap::affine(0.0, 0.5)}),
                                  std::vector<double>{1.0}, 1, 1000, 60);
  const auto ladder = geometric_ladder(1.0, 2.0, 6);
  DecayFitOptions opt;
  opt.bootstrap = 50;
  const auto d = decay_fit(dirac, cplx(1, 1), ladder, 1000, opt);
  CHECK(d.alpha_hat == Approx(0.0).margin(1e-9));
  for (const auto& e : d.estimates) CHECK(std::abs(e) == Approx(1.0).epsilon(1e-9));

  const auto rich = fixtures::rotation_rich();
  const auto em = sample_batch(rich, fixtures::uniform_weights(3), 2, 100000, 40);
  opt.seed = 5;
  opt.bootstrap = 100;
  const auto s = decay_fit(em, cplx(1, 0), geometric_ladder(0.5, 2.0, 8), em.size(), opt);
  REQUIRE_FALSE(s.refused);
  CHECK(s.alpha_hat > 0.0);
  CHECK(s.ci_low > 0.0);
}

TEST_CASE("decay_fit is thread-count independent") {
  const auto em = sample_batch(fixtures::uni_planar(), half, 4, 20000, 30);
  DecayFitOptions a;
  a.bootstrap = 40;
  a.seed = 1;
  DecayFitOptions b = a;
  b.threads = 3;
  const auto ladder = geometric_ladder(1.0, 2.0, 5);
  const auto x = decay_fit(em, cplx(1, 0), ladder, em.size(), a);
  const auto y = decay_fit(em, cplx(1, 0), ladder, em.size(), b);
  CHECK(x.alpha_hat == y.alpha_hat);
  CHECK(x.ci_low == y.ci_low);
  CHECK(x.ci_high == y.ci_high);
}

TEST_CASE("linearization_residual") {
  const auto aff = ConformalIFS::from_primitives({HolomorphicMap::affine(cplx(0.1, 0.2), cplx(0.3, -0.4))});
  const Word w{0, 0, 0};
  const auto r = linearization_residual(aff, w, cplx(0.1, 0.05), cplx(0.12, 0.0), 0.5, 0.1);
  CHECK(r.lhs < 1e-15);
  CHECK(r.pass);

  const auto quad = ConformalIFS::from_primitives({HolomorphicMap::polynomial({0.0, 0.5, 0.125})});
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const cplx y(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6));
    const cplx x = y + std::polar(rng.uniform(1e-4, 0.09), rng.uniform(0, two_pi));
    const double beta = rng.uniform(0.1, 0.9);
    const auto q = linearization_residual(quad, Word{0}, x, y, beta, 0.1);
    const double d = std::abs(x - y);
    CHECK(q.lhs == Approx(d * d / 8.0).epsilon(1e-9));
    const double gp = std::abs(0.5 + 0.25 * y);
    CHECK(q.pass == (std::pow(d, 1.0 - beta) <= 8.0 * gp));
  }
  CHECK_THROWS_AS(linearization_residual(quad, Word{0}, 0.0, 0.2, 0.5, 0.1), std::invalid_argument);
}

TEST_CASE("oscillatory_average") {
  const auto seg = fixtures::segment();
  const auto em = sample_batch(seg, half, 3, 20000, 40);
  CHECK(oscillatory_average(seg, em, Word{}, 1.0, 0.0, 8).value == 1.0);

  const auto one = ConformalIFS::from_primitives({HolomorphicMap::affine(0.0, 0.5)});
  const auto dirac = sample_batch(one, std::vector<double>{1.0}, 1, 500, 60);
  CHECK(oscillatory_average(one, dirac, Word{0}, 1.0, cplx(300, 200), 8).value == Approx(1.0).epsilon(1e-9));

  // Closed form: Lebesgue on [0, 1] pushed by t gives |sinc(pi <q, t>)|^2.
  const int grid = 10;
  double prev = 2.0;
  for (double qa : {3.0, 30.0, 300.0}) {
    const cplx q(qa, 0.0);
    const double k = 1.0;
    double closed = 0.0;
    for (int a = 0; a < grid; ++a)
      for (int j = 0; j < grid; ++j) {
        const double x = two_pi * (a + 0.5) / grid, y = seg.c_max() * (j + 0.5) / grid;
        const double u = dot(q, std::exp(cplx(-y - k, x)));
        closed += u == 0.0 ? 1.0 : std::pow(sinc_abs(u), 2);
      }
    closed /= grid * grid;
    const auto avg = oscillatory_average(seg, em, Word{}, k, q, grid);
    CHECK(std::abs(avg.value - closed) < 0.01);
    CHECK(avg.value < prev);
    prev = avg.value;
  }
  CHECK_THROWS_AS(oscillatory_average(seg, em, Word{}, 0.0, 1.0, 4), std::invalid_argument);
}

TEST_CASE("budget report") {
  for (double q : {10.0, 1e3, 1e6})
    for (double eps : {0.05, 1.0}) CHECK(std::exp(k_for_frequency(q, eps) * (1 + eps / 17)) == Approx(q).epsilon(1e-12));

  BudgetOptions opt;
  opt.samples = 5000;
  opt.walks = 4;
  opt.overshoot_trials = 1000;
  opt.osc_grid = 6;
  const std::vector<cplx> normal{cplx(0, 20), cplx(0, 200)};
  const auto line = decay_pipeline_report(fixtures::segment(), half, normal, 0.5, opt);
  CHECK(line.hypothesis_violation);
  CHECK(line.rows.size() == 2);
  for (const auto& r : line.rows) CHECK(r.fourier_abs == 1.0);

  const std::vector<cplx> qs{cplx(20, 5), cplx(60, -30), cplx(150, 80)};
  const auto uni = decay_pipeline_report(fixtures::uni_planar(), half, qs, 0.5, opt);
  CHECK_FALSE(uni.hypothesis_violation);
  for (const auto& r : uni.rows) {
    CHECK(r.r == Approx(std::exp(-r.k * 0.5 / 1000)));
    CHECK(r.beta == 0.5);
    CHECK(r.within);
  }
}
