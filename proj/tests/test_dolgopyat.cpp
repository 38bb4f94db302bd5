#include <catch_amalgamated.hpp>

#include <cmath>

#include "conflab/dolgopyat.hpp"
#include "fixtures.hpp"

using namespace conflab;
using Catch::Approx;

namespace {

// Two-map model with large, grid-visible bumps: eps_tilde = 0.025 at b = 1,
// bump radius 2 * delta3 * eps_tilde = 0.1.
Model planar_model() { return make_model(fixtures::uni_planar(), {0.5, 0.5}, {{0, 1}}, {{0, 1}}); }

DolgopyatParams visible_params() {
  DolgopyatParams p;
  p.A = 2.0;
  p.theta_damp = 0.3;
  p.eps1 = 0.025;
  p.delta1 = 0.1;
  p.delta2 = 0.5;
  p.delta3 = 2.0;
  p.N = 1;
  p.rho = 0.34;
  return p;
}

DolgopyatSystem visible_system(double theta = 0.3) {
  DolgopyatParams p = visible_params();
  p.theta_damp = theta;
  DolgopyatSetup setup;
  setup.samples = 400;
  setup.check_samples = 400;
  return prepare_dolgopyat(planar_model(), std::vector<int>(20, 0), p, 1.0, 0, 42, setup);
}

DolgopyatSet one_per_center(const DolgopyatSystem& sys, std::uint64_t seed) {
  Rng rng(seed);
  DolgopyatSet J;
  for (std::size_t j = 0; j < sys.cover.size(); ++j) J.push_back({rng.below(2), rng.below(2), j});
  return J;
}

Model uni_model() {
  const auto base = fixtures::uni_planar();
  const std::vector<double> p{0.45, 0.55};
  const auto r = inducing_search(base, 1, 3);
  REQUIRE(r.certificate);
  return build_model(base, p, *r.certificate);
}

}  // namespace

TEST_CASE("solve_parameters meets the five constraints with minimal N") {
  DolgopyatInputs in;
  in.delta1 = 0.2;
  in.delta2 = 0.4;
  in.t_c2 = 1.0;
  in.grad_bound = 0.5;
  in.rho = 0.3;
  in.distortion = 2.0;
  in.B1 = 0.1;
  const DolgopyatParams p = solve_parameters(in);
  CHECK(p.A == Approx(std::max({2.0, 4 * two_pi * 0.5, 16 * 1.001})));
  CHECK(p.delta3 == Approx(p.delta1 * p.delta2 / (4 * p.A)));
  CHECK(p.delta2 <= 1.0 / (2 * in.t_c2));
  const ConstraintReport r = check_constraints(p);
  CHECK(r.ok());
  for (int N = 1; N < p.N; ++N) {
    const double rN = std::pow(p.rho, N);
    const bool blocked = rN > std::min({(p.A - 1) / (2 * p.A), 0.25, 1.0 / 16}) ||
                         p.delta1 * p.delta2 / 2 - 40 * p.A * rN <= 0;
    CHECK(blocked);
  }
  // theta_damp and eps1 sit at their caps.
  CHECK(r.margin[4] == Approx(0.0).margin(1e-3 * std::pow(p.delta1 * p.delta2 * p.eps1, 2) / 128));

  DolgopyatParams bad = p;
  bad.theta_damp *= 4;
  CHECK_FALSE(check_constraints(bad).holds[4]);
  bad = p;
  bad.A = 10;
  CHECK_FALSE(check_constraints(bad).holds[0]);

  in.rho = 1.2;
  CHECK_THROWS_AS(solve_parameters(in), std::invalid_argument);
}

TEST_CASE("vitali_cover") {
  SECTION("separated samples are all kept") {
    const std::vector<cplx> s{0.0, 0.5};
    CHECK(vitali_cover(s, 0.01).size() == 2);
  }
  SECTION("a tight cluster gives one center") {
    const std::vector<cplx> s{0.0, 0.05, cplx(0.0, 0.09), cplx(0.03, -0.04)};
    const auto c = vitali_cover(s, 0.01);
    CHECK(c.size() == 1);
    CHECK(c.centers[0] == cplx(0.0));
  }
  SECTION("attractor sample: brute-force disjointness and covering") {
    const auto em = sample_batch(fixtures::uni_planar(), fixtures::uniform_weights(2), 3, 3000, 30);
    const double e = 0.0005;
    const auto c = vitali_cover(em, e);
    REQUIRE(c.size() > 10);
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j) REQUIRE(std::abs(c.centers[i] - c.centers[j]) >= 20 * e);
    for (const cplx& z : em.points) {
      double best = INFINITY;
      for (const cplx& x : c.centers) best = std::min(best, std::abs(z - x));
      REQUIRE(best < 50 * e);
    }
  }
  CHECK_THROWS_AS(vitali_cover(std::vector<cplx>{}, 0.1), std::invalid_argument);
}

TEST_CASE("direction_data") {
  SECTION("w from the gradient oracle") {
    // (log f')' = 2 c2 / c1 = 0.5 at 0 for the quadratic, 0 for the affine map.
    const auto ifs = ConformalIFS::from_primitives(
        {HolomorphicMap::affine(-0.5, 0.2), HolomorphicMap::polynomial({0.5, 0.2, 0.05})});
    const Model m = make_model(ifs, {0.5, 0.5}, {{0, 1}}, {{1, 0}});
    const std::vector<int> tail(8, 0);
    const auto alpha = designated_words(m, std::vector<int>{0}, 1);
    EmpiricalMeasure em;
    em.points = {0.0};
    em.weights = {1.0};
    em.depth = 8;
    em.coding_length = 1;
    em.codings = {1};
    VitaliCover cover;
    cover.centers = {0.0};
    cover.sample_index = {0};
    cover.eps_tilde = 1e-3;
    const auto dd = direction_data(m, tail, alpha, 1.0, 0, cover, em, 0.1, 0.5, 1);
    CHECK(dd.entries[0].w.real() == Approx(0.5).epsilon(1e-12));
    CHECK(dd.entries[0].w.imag() == Approx(0.0).margin(1e-12));
    CHECK(dd.entries[0].w_hat == cplx(1.0, 0.0));
    CHECK_THROWS_AS(direction_data(m, tail, alpha, 0.0, 0, cover, em, 0.1, 0.5, 1), std::invalid_argument);
  }
  SECTION("similarity witness has w = 0 everywhere") {
    const auto ifs = ConformalIFS::from_primitives({HolomorphicMap::affine(-0.5, 0.3), HolomorphicMap::affine(0.5, 0.3)});
    const Model m = make_model(ifs, {0.5, 0.5}, {{0, 1}}, {{0, 1}});
    DolgopyatParams p = visible_params();
    const auto sys = prepare_dolgopyat(m, std::vector<int>(20, 0), p, 3.0, 2, 5);
    for (const auto& e : sys.directions.entries) CHECK(std::abs(e.w) == 0.0);
    CHECK(sys.directions.magnitude_violations(p.delta2) == sys.cover.size());
  }
  SECTION("partners on the UNI fixture") {
    const auto sys = visible_system();
    REQUIRE(sys.directions.ok());
    for (std::size_t i = 0; i < sys.cover.size(); ++i) {
      const auto& e = sys.directions.entries[i];
      CHECK(std::abs(sys.cover.centers[i] - e.y) <= 5 * sys.eps_tilde());
      CHECK(e.projection > e.threshold);
      CHECK(std::abs(dot(sys.cover.centers[i] - e.y, e.w_hat)) == Approx(e.projection));
    }
  }
}

TEST_CASE("bump profile") {
  const BumpProfile bump;
  for (double eps : {1e-6, 0.01, 0.1, 0.5, 0.9}) {
    CHECK(bump.value(0.0, eps) == 1.0);
    CHECK(bump.value(0.5 * eps, eps) == 1.0);
    CHECK(bump.value(eps, eps) == 0.0);
    double sup_slope = 0.0, prev = 1.0;
    for (int k = 0; k <= 4000; ++k) {
      const double r = eps * k / 4000.0;
      const double v = bump.value(r, eps);
      CHECK(v <= prev + 1e-15);
      prev = v;
      sup_slope = std::max(sup_slope, std::abs(bump.slope(r, eps)));
    }
    CHECK(1.0 + sup_slope <= 4.0 / eps);
  }
  // slope agrees with a difference quotient
  const double eps = 0.1, r = 0.07, d = 1e-7;
  CHECK(bump.slope(r, eps) == Approx((bump.value(r + d, eps) - bump.value(r - d, eps)) / (2 * d)).epsilon(1e-6));
}

TEST_CASE("chi_j") {
  const auto sys = visible_system();
  REQUIRE(sys.cover.size() >= 2);
  const double theta = sys.params.theta_damp;

  SECTION("value at the image of a damped center") {
    const DolgopyatSet J{{0, 0, 0}};
    const Damping damp(sys, J);
    const cplx z = eval_word(sys.model.ifs, sys.alpha[0], sys.cover.centers[0]).value;
    CHECK(chi_eval(sys, damp, z) == Approx(1.0 - theta).epsilon(1e-12));
    CHECK(chi_eval(sys, damp, cplx(0.0, 0.95)) == 1.0);
    CHECK_THROWS_AS(chi_j(sys, DolgopyatSet{}, make_grid(0.1)), std::invalid_argument);
  }
  SECTION("grid sweep: range and C1 budget") {
    const DolgopyatSet J = one_per_center(sys, 3);
    const auto grid = make_grid(0.004);
    const GridFunction chi = chi_j(sys, J, grid);
    double lo = 1.0, hi = 0.0;
    for (const cplx& v : chi.values) {
      lo = std::min(lo, v.real());
      hi = std::max(hi, v.real());
    }
    CHECK(lo >= 1.0 - theta - 1e-12);
    CHECK(lo < 1.0 - 0.9 * theta);  // some node falls on a plateau
    CHECK(hi <= 1.0);
    double min_deriv = INFINITY;
    for (const auto& w : sys.alpha)
      for (const cplx& z : boundary_points(256)) min_deriv = std::min(min_deriv, std::abs(eval_word(sys.model.ifs, w, z).derivative));
    const double budget = 1.0 + theta * (4.0 / sys.bump_radius()) / min_deriv;
    const GridNorms n = grid_norms(chi);
    CHECK(n.c1 <= budget);
    CHECK(n.grad_sup > 0.0);
  }
}

TEST_CASE("dolgopyat_apply") {
  auto sys = visible_system(0.0);
  const DolgopyatSet J = one_per_center(sys, 9);
  const auto grid = make_grid(0.05);
  const GridFunction g = grid_build(grid, [](cplx z) { return cplx(1.5 + std::cos(3 * z.real()) * std::sin(2 * z.imag()), 0.2 * z.real()); });
  for (double a : {0.0, 0.3}) {
    const GridFunction out = dolgopyat_apply(sys, J, a, g);
    const GridFunction ref = transfer_apply_model(sys.model, sys.omega, TwistParams{a, 0.0, 0, sys.params.N}, g);
    double err = 0.0;
    for (std::size_t k = 0; k < grid->size(); ++k) err = std::max(err, std::abs(out.values[k] - ref.values[k]));
    CHECK(err < 1e-12);
  }
  sys.params.theta_damp = 0.3;
  const GridFunction zero(grid);
  for (const cplx& v : dolgopyat_apply(sys, J, 0.0, zero).values) CHECK(v == cplx(0.0));
  // Positivity: 0 <= g1 <= g2 implies N g1 <= N g2 pointwise.
  const GridFunction g1 = grid_build(grid, [](cplx z) { return cplx(0.5 + 0.4 * std::sin(5 * z.real())); });
  const GridFunction g2 = grid_build(grid, [](cplx z) { return cplx(1.0 + 0.4 * std::sin(5 * z.real()) + 0.3 * std::cos(z.imag())); });
  const GridFunction o1 = dolgopyat_apply(sys, J, 0.2, g1), o2 = dolgopyat_apply(sys, J, 0.2, g2);
  for (std::size_t k = 0; k < grid->size(); ++k) {
    CHECK(o1.values[k].real() >= 0.0);
    CHECK(o1.values[k].real() <= o2.values[k].real());
  }
}

TEST_CASE("cone_and_contraction_test") {
  const auto sys0 = visible_system(0.0);
  CHECK_THROWS_AS(cone_and_contraction_test(sys0, 0, 1), std::invalid_argument);
  // theta_damp = 0, a = 0: Cauchy-Schwarz gives ratio <= 1 on the same sample.
  const auto rep0 = cone_and_contraction_test(sys0, 12, 1);
  CHECK(rep0.alpha_hat <= 1.0 + 1e-12);
  const auto sys = visible_system(0.3);
  const auto rep = cone_and_contraction_test(sys, 12, 1);
  REQUIRE(rep.trials.size() == 12);
  for (const auto& t : rep.trials) CHECK(t.ratio <= 1.0 + 1e-12);
  // Thread count does not change results.
  ContractionOptions o;
  o.threads = 3;
  const auto rep3 = cone_and_contraction_test(sys, 12, 1, o);
  for (std::size_t t = 0; t < 12; ++t) CHECK(rep3.trials[t].ratio == rep.trials[t].ratio);
}

TEST_CASE("theta values and domination_select") {
  const auto sys = visible_system(0.3);
  const auto one = [](cplx) { return cplx(1.0); };
  SECTION("f = H = 1, b = ell = 0: direct formula") {
    const TwistParams tp{0.0, 0.0, 0, sys.params.N};
    const cplx x = sys.cover.centers[0];
    const ThetaValues v = theta_values(sys, tp, one, one, x);
    std::array<double, 2> e;
    for (int i = 0; i < 2; ++i) e[i] = sys.eta_alpha[i];
    CHECK(v.numerator == Approx(e[0] + e[1]).epsilon(1e-14));
    CHECK(v.den_plain == Approx(e[0] + e[1]).epsilon(1e-14));
    CHECK(v.theta1 == Approx((e[0] + e[1]) / ((1 - 0.6) * e[0] + e[1])).epsilon(1e-14));
    CHECK(v.theta2 == Approx((e[0] + e[1]) / (e[0] + (1 - 0.6) * e[1])).epsilon(1e-14));
  }
  const auto grid = make_grid(0.05);
  SECTION("precondition guard") {
    const GridFunction H = grid_build(grid, [](cplx) { return cplx(1.0); });
    const GridFunction f = grid_build(grid, [](cplx) { return cplx(2.0); });
    CHECK_THROWS_AS(domination_select(sys, f, H), std::invalid_argument);
  }
  SECTION("verified implies dense and no failures") {
    int verified = 0;
    for (int t = 0; t < 6; ++t) {
      Rng rng(77, t);
      const auto pr = random_domination_pair(rng, grid, sys.params.A * sys.frequency(), t % 2 == 0);
      const auto d = domination_select(sys, pr.f, pr.H);
      verified += d.verified;
      if (d.verified) {
        CHECK(d.dense);
        CHECK(d.failures.empty());
        CHECK(d.worst_excess <= 1.0 + 1e-12);
      }
      std::size_t cases = 0;
      for (auto c : d.case_counts) cases += c;
      CHECK(cases + d.failures.size() == sys.cover.size());
    }
    CHECK(verified > 0);
  }
}

TEST_CASE("W_J coverage and the cylinder lower bound") {
  const auto sys = visible_system();
  const DolgopyatSet J = one_per_center(sys, 5);
  const auto rep = wj_report(sys, J, [](cplx z) { return 1.0 + 0.1 * z.real(); });
  CHECK(rep.covers_100);
  CHECK(rep.max_distance < 50.0 + 5.0);
  CHECK(rep.eps2_cylinder > 0.0);
  CHECK(rep.eps2_empirical >= 0.0);
  DolgopyatSet sparse{J.front()};
  if (sys.cover.size() > 1) CHECK_THROWS_AS(wj_report(sys, sparse, [](cplx) { return 1.0; }), std::invalid_argument);
}

TEST_CASE("solved parameters on the induced UNI model") {
  const Model m = uni_model();
  Rng rng(7, 1);
  const auto omega = sample_omega(m, rng, 40);
  const ParameterChoice pc = choose_parameters(m, omega, 11);
  INFO("A " << pc.params.A << " N " << pc.params.N << " eps1 " << pc.params.eps1 << " theta " << pc.params.theta_damp);
  CHECK(pc.report.ok());
  const auto sys = prepare_dolgopyat(m, omega, pc.params, 50.0, 0, 5);
  CHECK(sys.directions.ok());
  CHECK(sys.directions.magnitude_violations(pc.params.delta2) == 0);
  const auto rep = cone_and_contraction_test(sys, 6, 3);
  CHECK(rep.cone_ok_fraction == 1.0);
  CHECK(rep.alpha_hat < 1.0);
  Rng pr_rng(9, 0);
  const auto pr = random_domination_pair(pr_rng, make_grid(0.1), pc.params.A * 50.0, true);
  const auto d = domination_select(sys, pr.f, pr.H);
  CHECK(d.verified);
  CHECK(omega_prefix_hash(omega).size() == 16);
}
