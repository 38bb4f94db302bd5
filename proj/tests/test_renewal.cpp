#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "conflab/renewal.hpp"
#include "fixtures.hpp"

using namespace conflab;
using Catch::Approx;

namespace {


const std::vector<double> half{0.5, 0.5};

// Smooth bump supported in [0, 1].
double bump(double y) { return (y > 0.0 && y < 1.0) ? std::exp(-1.0 / (y * (1.0 - y))) : 0.0; }

double bump_integral() {
  double s = 0.0;
  const int n = 20000;
  for (int i = 0; i <= n; ++i) s += (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2)) * bump(double(i) / n);
  return s / (3.0 * n);
}

}  // namespace

TEST_CASE("lyapunov_chi") {
  const auto seg = fixtures::segment();
  const auto a = lyapunov_chi(seg, half, 50, 200, 1);
  CHECK(a.chi == Approx(std::log(2.0)).epsilon(1e-13));

  const auto b = lyapunov_chi(fixtures::two_ratio(), half, 200, 400, 2);
  const double expected = 0.5 * (std::log(2.0) + std::log(3.0));
  CHECK(expected == Approx(0.89588).margin(1e-5));
  CHECK(std::abs(b.chi - expected) < 3 * b.stderr_);

  for (const auto& ifs : {fixtures::quadratic_pair(), fixtures::uni_planar(), fixtures::moebius_pair()}) {
    const auto c = lyapunov_chi(ifs, half, 200, 100, 3, 40, 2);
    CHECK(c.chi >= ifs.c_min());
    CHECK(c.chi <= ifs.c_max());
    CHECK(lyapunov_chi(ifs, half, 200, 100, 3, 40, 1).chi == c.chi);
  }
}

TEST_CASE("walk_until lattice cases") {
  const auto one = fixtures::single_half();
  const std::vector<double> p{1.0};
  const auto r = walk_until(one, p, 5.0, 9);
  CHECK(r.tau == 8);
  CHECK(r.overshoot == Approx(8 * std::log(2.0) - 5).margin(1e-12));
  CHECK(r.overshoot == Approx(0.54518).margin(1e-5));
  CHECK(r.S.size() == 8);
  CHECK(r.omega_prefix.size() == 8);

  const auto seg = fixtures::segment();
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(walk_until(seg, half, 0.5 * seg.c_min(), s).tau == 1);
  CHECK_THROWS_AS(walk_until(seg, half, 0.0, 1), std::invalid_argument);
}

TEST_CASE("walk invariants on a nonlinear planar system") {
  const auto ifs = fixtures::uni_planar();
  const std::vector<double> p{0.45, 0.55};
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(17, s);
    const double k = 1.0 + 9.0 * rng.uniform();
    WalkOptions opt;
    opt.unit = CircleUnit::radians;
    const Word w = walk_symbols(ifs, p, k, rng, opt);
    const auto r = walk_from(ifs, w, k, opt);
    const auto path = symbolic_path(ifs, w, r.tau);

    double prev = 0.0;
    for (int n = 0; n < r.tau; ++n) {
      const double inc = r.S[n] - prev;
      CHECK(inc >= ifs.c_min() - 1e-12);
      CHECK(inc <= ifs.c_max() + 1e-12);
      prev = r.S[n];
      // Increment = cocycle of the leading symbol at the shifted point.
      const Cocycle c = cocycle(ifs, Word{w[n]}, path.points[n + 1]);
      CHECK(std::abs(path.steps_c[n] - c.norm) < 1e-9);
      CHECK(circle_distance(path.steps_theta[n], c.angle) < 1e-9);
      CHECK(std::abs(path.points[n] - eval_map(ifs.map(w[n]), path.points[n + 1]).value) < 1e-15);
    }
    CHECK(r.S.back() >= k);
    if (r.tau > 1) CHECK(r.S[r.tau - 2] < k);
    CHECK(r.overshoot >= 0.0);
    CHECK(r.overshoot <= ifs.c_max());

    // Symbolic vs geometric cocycle along the stopped prefix.
    const Cocycle g = cocycle(ifs, r.omega_prefix, path.points[r.tau]);
    CHECK(std::abs(r.S.back() - g.norm) < 1e-9);
    CHECK(circle_distance(r.angle_at_stop, g.angle) < 1e-9);
  }
}

TEST_CASE("tau is monotone and superadditive along a path") {
  const auto ifs = fixtures::quadratic_pair();
  const std::vector<double> p{0.5, 0.5};
  const auto cum = cumulative_weights(p);
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(23, s);
    const Word w = random_word(rng, cum, 120);
    const auto path = symbolic_path(ifs, w, 80);
    std::vector<double> S(path.steps_c.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i) S[i] = acc += path.steps_c[i];
    auto tau = [&](double k, int from) {
      for (int n = from; n < static_cast<int>(S.size()); ++n)
        if (S[n] - (from ? S[from - 1] : 0.0) >= k) return n - from + 1;
      return -1;
    };
    int last = 0;
    for (double k = 0.25; k < 20.0; k += 0.25) {
      const int t = tau(k, 0);
      CHECK(t >= last);
      last = t;
    }
    const double k1 = 4.0 + rng.uniform() * 6.0, k2 = 3.0 + rng.uniform() * 6.0;
    const int t1 = tau(k1, 0);
    CHECK(tau(k1 + k2, 0) <= t1 + tau(k2, t1));
    // The walk agrees with the path helper.
    WalkOptions opt;
    CHECK(walk_from(ifs, w, k1, opt).tau == t1);
  }
}

TEST_CASE("beta stopping rule") {
  const auto ifs = fixtures::uni_planar();
  WalkOptions opt;
  opt.mode = StopMode::beta;
  opt.eps = 0.5;
  opt.x0 = cplx(0.1, -0.2);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const double k = 6.0;
    const auto r = walk_until(ifs, half, k, s, opt);
    REQUIRE(r.beta.has_value());
    const int m = *r.beta;
    const double level = k * (1.0 + opt.eps / 18.0);
    const std::span<const int> w(r.omega_prefix);
    CHECK(std::abs(eval_word(ifs, w.first(m), opt.x0).derivative) < std::exp(-level));
    if (m > 1) CHECK(std::abs(eval_word(ifs, w.first(m - 1), opt.x0).derivative) >= std::exp(-level));
  }
  // Similarities: beta is tau at the raised level.
  const auto seg = fixtures::segment();
  const auto r = walk_until(seg, half, 5.0, 1, opt);
  CHECK(*r.beta == static_cast<int>(std::floor(5.0 * (1 + 0.5 / 18) / std::log(2.0))) + 1);
}

TEST_CASE("fixed tail conditions the walk") {
  const auto ifs = fixtures::uni_planar();
  WalkOptions opt;
  opt.tail = Word(30, 1);
  const auto a = walk_until(ifs, half, 4.0, 3, opt);
  const auto b = walk_until(ifs, half, 4.0, 3, opt);
  CHECK(a.S == b.S);
  opt.tail = Word{5};
  CHECK_THROWS_AS(walk_until(ifs, half, 4.0, 3, opt), std::out_of_range);
}

TEST_CASE("exact stopping law by enumeration") {
  const auto ifs = fixtures::two_ratio();
  const auto law = enumerate_stopping_law(ifs, half, 5.0);
  CHECK(law.total_probability == Approx(1.0).epsilon(1e-14));
  double total = 0.0;
  for (const auto& a : law.atoms) {
    CHECK(a.overshoot >= 0.0);
    CHECK(a.overshoot <= std::log(3.0) + 1e-12);
    CHECK(a.angle == 0.0);
    total += a.probability;
  }
  CHECK(total == Approx(1.0).epsilon(1e-14));
  // Overshoot atoms are a log 2 + b log 3 - 5 for first passages.
  CHECK(law.atoms.size() == 9);
  CHECK_THROWS_AS(enumerate_stopping_law(fixtures::quadratic_pair(), half, 5.0), std::invalid_argument);

  OvershootOptions opt;
  opt.limit_samples = 2000;
  const auto mc = overshoot_law(ifs, half, 5.0, 100000, 31, opt);
  CHECK(ks_to_stopping_law(mc.overshoot, law) < 0.01);
}

TEST_CASE("overshoot law approaches the renewal limit") {
  const auto ifs = fixtures::two_ratio();
  const OvershootLimit limit({std::log(2.0), std::log(3.0)});
  CHECK(limit.chi() == Approx(0.5 * std::log(6.0)));
  CHECK(limit.cdf(0.0) == 0.0);
  CHECK(limit.cdf(2.0) == 1.0);
  CHECK(limit.cdf(0.5) == Approx(0.5 / limit.chi()));

  std::vector<double> exact_ks;
  for (double k : {5.0, 10.0, 20.0}) exact_ks.push_back(ks_stopping_law_to_limit(enumerate_stopping_law(ifs, half, k), limit));
  CHECK(exact_ks[0] > exact_ks[1]);
  CHECK(exact_ks[1] > exact_ks[2]);

  OvershootOptions opt;
  opt.limit_samples = 4000;
  opt.threads = 2;
  std::vector<double> mc_ks;
  for (double k : {5.0, 10.0, 20.0}) {
    const auto law = overshoot_law(ifs, half, k, 40000, 41, opt);
    mc_ks.push_back(law.ks_overshoot);
    for (double o : law.overshoot) {
      CHECK(o >= 0.0);
      CHECK(o <= ifs.c_max() + 1e-12);
    }
  }
  CHECK(mc_ks[0] > mc_ks[1]);
  CHECK(mc_ks[1] > mc_ks[2]);

  // Lattice walk: deterministic overshoot never approaches a spread-out limit.
  const auto one = fixtures::single_half();
  for (double k : {5.0, 10.0, 20.0}) {
    const auto law = overshoot_law(one, std::vector<double>{1.0}, k, 2000, 5, opt);
    CHECK(law.ks_overshoot >= 0.4);
  }
}

TEST_CASE("overshoot_law is deterministic and thread-count independent") {
  const auto ifs = fixtures::uni_planar();
  OvershootOptions opt;
  opt.limit_samples = 1000;
  const auto a = overshoot_law(ifs, half, 6.0, 3000, 8, opt);
  opt.threads = 3;
  const auto b = overshoot_law(ifs, half, 6.0, 3000, 8, opt);
  CHECK(a.overshoot == b.overshoot);
  CHECK(a.angle == b.angle);
  CHECK(a.ks_overshoot == b.ks_overshoot);
  for (double x : a.angle) CHECK((x >= 0.0 && x < 1.0));
  double mass = 0.0;
  for (double m : a.angle_hist.mass) mass += m;
  CHECK(mass == Approx(1.0));
}

TEST_CASE("step_law") {
  const auto ifs = fixtures::uni_planar();
  const auto law = step_law(ifs, half, 5000, 4);
  double mk = 0.0, mb = 0.0;
  for (double m : law.kappa.mass) mk += m;
  for (double m : law.beta.mass) mb += m;
  CHECK(mk == Approx(1.0));
  CHECK(mb == Approx(1.0));
  for (double x : law.x) {
    CHECK(x >= ifs.c_min() - 1e-12);
    CHECK(x <= ifs.c_max() + 1e-12);
  }
}

TEST_CASE("renewal_partial_sum closed forms") {
  const RenewalTestFunction g{[](cplx, double, double y) { return bump(y); }, 0.0, 1.0};
  const auto one = fixtures::single_half();
  const std::vector<double> p1{1.0};
  for (double t : {0.3, 2.0, 7.5}) {
    double closed = 0.0;
    for (int n = 0; n < 100; ++n) closed += bump(n * std::log(2.0) - t);
    CHECK(renewal_partial_sum(one, p1, g, 0.0, t).value == Approx(closed).epsilon(1e-12));
  }
  const RenewalTestFunction zero{[](cplx, double, double) { return 0.0; }, 0.0, 1.0};
  CHECK(renewal_partial_sum(fixtures::uni_planar(), half, zero, 0.2, 5.0).value == 0.0);

  RenewalOptions shallow;
  shallow.n_max = 5;
  CHECK_THROWS_AS(renewal_partial_sum(fixtures::two_ratio(), half, g, 0.0, 10.0, shallow), std::runtime_error);
}

TEST_CASE("renewal sum matches the limit for the two-ratio walk") {
  const RenewalTestFunction g{[](cplx, double, double y) { return bump(y); }, 0.0, 1.0};
  const auto ifs = fixtures::two_ratio();
  RenewalOptions opt;
  opt.n_max = 25;
  const auto r = renewal_partial_sum(ifs, half, g, 0.0, 10.0, opt);
  CHECK(r.exact);
  CHECK(r.max_depth_reached <= 25);
  const double chi = 0.5 * std::log(6.0);
  CHECK(std::abs(r.value / (bump_integral() / chi) - 1.0) < 0.05);

  // The Monte Carlo variant estimates the same sum.
  opt.mc_trials = 40000;
  opt.seed = 3;
  const auto mc = renewal_partial_sum(ifs, half, g, 0.0, 10.0, opt);
  CHECK(std::abs(mc.value - r.value) < 4 * mc.stderr_);
}

TEST_CASE("renewal sum on a nonlinear system") {
  const auto ifs = fixtures::uni_planar();
  const RenewalTestFunction g{
      [](cplx z, double a, double y) { return bump(y) * (1.0 + 0.5 * std::cos(a)) * (1.0 + 0.2 * z.real()); }, 0.0,
      1.0};
  RenewalOptions opt;
  opt.n_max = 40;
  const auto exact = renewal_partial_sum(ifs, half, g, 0.3, 6.0, opt);
  opt.mc_trials = 20000;
  opt.seed = 9;
  opt.threads = 2;
  const auto mc = renewal_partial_sum(ifs, half, g, 0.3, 6.0, opt);
  CHECK(std::abs(mc.value - exact.value) < 4 * mc.stderr_);
}

TEST_CASE("residue sum is the renewal sum of the averaged function") {
  const auto ifs = fixtures::uni_planar();
  const ResidueTestFunction f{
      [](double c, double a, double y) { return bump(y) * c * (1.0 + 0.3 * std::sin(a)); }, 0.0, 1.0};
  const RenewalTestFunction qf{[&](cplx z, double a, double y) {
                                 double s = 0.0;
                                 for (std::size_t i = 0; i < ifs.size(); ++i) {
                                   const WordJet j = eval_map(ifs.map(i), z);
                                   s += half[i] * f.f(j.norm_cocycle(), wrap_angle(a + j.arg_sum), y);
                                 }
                                 return s;
                               },
                               0.0, 1.0};
  const double e = residue_partial_sum(ifs, half, f, 0.1, 5.0).value;
  const double r = renewal_partial_sum(ifs, half, qf, 0.1, 5.0).value;
  CHECK(e > 0.0);
  CHECK(e == Approx(r).epsilon(1e-12));

  // Similarities: the step factor separates.
  const auto two = fixtures::two_ratio();
  const ResidueTestFunction sep{[](double c, double, double y) { return c * bump(y); }, 0.0, 1.0};
  const RenewalTestFunction plain{[](cplx, double, double y) { return bump(y); }, 0.0, 1.0};
  const double mean_step = 0.5 * std::log(6.0);
  CHECK(residue_partial_sum(two, half, sep, 0.0, 8.0).value ==
        Approx(mean_step * renewal_partial_sum(two, half, plain, 0.0, 8.0).value).epsilon(1e-12));
}

TEST_CASE("renewal_limit quadrature") {
  const auto em = sample_batch(fixtures::segment(), half, 1, 200, 30);
  const RenewalTestFunction g{[](cplx, double, double y) { return bump(y); }, 0.0, 1.0};
  CHECK(renewal_limit(g, em, 2.0, 5.0) == Approx(bump_integral() / 2.0).epsilon(1e-6));
  // Only y >= -t counts.
  const RenewalTestFunction h{[](cplx, double, double y) { return (y >= -1.0 && y <= 1.0) ? 1.0 : 0.0; }, -1.0, 1.0};
  CHECK(renewal_limit(h, em, 1.0, 0.5) == Approx(1.5).epsilon(1e-9));
  const RenewalTestFunction ang{[](cplx, double a, double y) { return bump(y) * (1 + std::cos(a)); }, 0.0, 1.0};
  CHECK(renewal_limit(ang, em, 1.0, 5.0) == Approx(bump_integral()).epsilon(1e-6));
}

TEST_CASE("local_c8_norm") {
  CHECK(local_c8_norm([](double x, double y) { return std::sin(x) * std::sin(y); }, -1.0, 2.0) ==
        Approx(1.0).epsilon(0.01));
  CHECK(local_c8_norm([](double x, double y) { return std::cos(2 * x) * std::cos(3 * y); }, -1.0, 2.0) ==
        Approx(16.0 * 81.0).epsilon(0.03));
  CHECK(local_c8_norm([](double, double) { return 0.0; }, 0.0, 1.0) == 0.0);
}

TEST_CASE("circle units") {
  CHECK(parse_circle_unit("turns") == CircleUnit::turns);
  CHECK(parse_circle_unit("radians") == CircleUnit::radians);
  CHECK_THROWS_AS(parse_circle_unit("degrees"), std::invalid_argument);
  CHECK(report_angle(std::numbers::pi, CircleUnit::turns) == Approx(0.5));
  CHECK(report_angle(-std::numbers::pi / 2, CircleUnit::radians) == Approx(1.5 * std::numbers::pi));
}
