#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "conflab/model.hpp"
#include "fixtures.hpp"

using namespace conflab;
using Catch::Approx;

namespace {

Model triple_model() {
  return make_model(fixtures::overlap_triple(), {0.2, 0.3, 0.5}, {{0, 2}, {1, 2}, {0, 2}});
}

Model uni_model() {
  const auto base = fixtures::uni_planar();
  const std::vector<double> p{0.45, 0.55};
  const auto r = inducing_search(base, 1, 3);
  REQUIRE(r.certificate);
  return build_model(base, p, *r.certificate);
}

}  // namespace

TEST_CASE("make_model weights and counts") {
  const Model m = triple_model();
  CHECK(m.n_counts == std::vector<int>{2, 1, 3});
  // q_k = sum_{i in Phi_k} p_i / n_i
  CHECK(m.q[0] == Approx(0.2 / 2 + 0.5 / 3));
  CHECK(m.q[1] == Approx(0.3 / 1 + 0.5 / 3));
  CHECK(m.q[2] == Approx(0.2 / 2 + 0.5 / 3));
  double qs = 0.0;
  for (std::size_t k = 0; k < m.q.size(); ++k) {
    qs += m.q[k];
    double ps = 0.0;
    for (double v : m.p_tilde[k]) ps += v;
    CHECK(ps == Approx(1.0).epsilon(1e-14));
  }
  CHECK(qs == Approx(1.0).epsilon(1e-14));
  // Overlapping images in one sub-system and uncovered maps are rejected.
  CHECK_THROWS_AS(make_model(fixtures::overlap_triple(), {0.2, 0.3, 0.5}, {{0, 1}, {1, 2}, {0, 2}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_model(fixtures::overlap_triple(), {0.2, 0.3, 0.5}, {{0, 2}, {0, 2}, {0, 2}}),
                  std::invalid_argument);
}

TEST_CASE("build_model with separated images keeps the full system") {
  const Model m = uni_model();
  const std::size_t n = m.ifs.size();
  for (std::size_t k = 0; k < n; ++k) {
    CHECK(m.sub_ifss[k].size() == n);
    CHECK(m.q[k] == Approx(1.0 / n));
    for (std::size_t a = 0; a < n; ++a) CHECK(m.p_tilde[k][a] == Approx(m.p[m.sub_ifss[k][a]]));
    const auto d = m.designated[k];
    CHECK(std::find(m.sub_ifss[k].begin(), m.sub_ifss[k].end(), d[0]) != m.sub_ifss[k].end());
    CHECK(std::find(m.sub_ifss[k].begin(), m.sub_ifss[k].end(), d[1]) != m.sub_ifss[k].end());
    CHECK(uni_witness(m.ifs, Word{d[0]}, Word{d[1]}, 0.05).m_hat > 0.0);
  }
}

TEST_CASE("model operator with trivial sub-systems equals the iterated operator") {
  const auto ifs = fixtures::quadratic_pair();
  const std::vector<double> p{0.3, 0.7};
  // Images overlap, so build the trivial model by hand without the separation check.
  Model m{ifs, p, {{0, 1}, {0, 1}}, {2, 2}, {0.5, 0.5}, {p, p}, {{-1, -1}, {-1, -1}}};
  const TwistParams base{0.1, 2.0, 1, 1};
  std::function<cplx(cplx)> g = [](cplx z) { return std::exp(cplx(0, 1.5) * z) + 0.3 * z; };
  std::function<cplx(cplx)> rec = g;
  for (int N = 1; N <= 3; ++N) {
    auto prev = rec;
    rec = [&, prev](cplx x) { return transfer_eval(ifs, p, base, prev, x); };
    TwistParams tp = base;
    tp.N = N;
    const std::vector<int> omega(N, 0);
    for (const cplx x : {cplx(0.2, 0.1), cplx(-0.5, -0.5)})
      CHECK(std::abs(model_transfer_eval(m, omega, tp, g, x) - rec(x)) < 1e-9);
  }
}

TEST_CASE("operator disintegration identity") {
  const Model m = triple_model();
  const TwistParams base{0.2, 3.0, 2, 1};
  auto g = [](cplx z) { return std::exp(cplx(0.5, 2.0) * z); };
  for (int N = 1; N <= 3; ++N) {
    TwistParams tp = base;
    tp.N = N;
    for (const cplx x : {cplx(0.0), cplx(0.3, -0.7), cplx(-0.99, 0.0)}) {
      cplx mix = 0.0;
      for_each_word(m.index_count(), N, [&](const Word& omega) {
        mix += omega_probability(m, omega) * model_transfer_eval(m, omega, tp, g, x);
      });
      CHECK(std::abs(mix - transfer_power_eval(m.ifs, m.p, tp, N, g, x)) < 1e-9);
    }
  }
}

TEST_CASE("stochastic stationarity of mu_omega") {
  const Model m = triple_model();
  Rng rng(4);
  const auto omega = sample_omega(m, rng, 30);
  auto g = [](cplx z) { return std::cos(2 * z.real()) + z.imag(); };
  const auto direct = sample_mu_omega_given(m, omega, 1, 40000);
  const auto shifted = sample_mu_omega_given(m, std::span<const int>(omega).subspan(1), 2, 40000);
  Rng pick(9);
  const auto cum = cumulative_weights(m.p_tilde[omega[0]]);
  std::vector<double> pushed(shifted.size());
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    const int j = m.sub_ifss[omega[0]][pick.categorical(cum)];
    pushed[i] = g(eval_map(m.ifs.map(j), shifted.points[i]).value);
  }
  const auto a = integrate(direct, g);
  const auto b = mean_se(pushed);
  CHECK(std::abs(a.mean - b.mean) < 4 * std::hypot(a.se, b.se));
}

TEST_CASE("measure disintegration") {
  const Model m = triple_model();
  auto g = [](cplx z) { return z.real() * z.real() + std::sin(3 * z.imag()); };
  const auto nu = integrate(sample_batch(m.ifs, m.p, 3, 50000, 30), g);
  std::vector<double> means;
  for (int t = 0; t < 2000; ++t) {
    const auto s = sample_mu_omega(m, 1000 + t, 25, 30);
    means.push_back(integrate(s.measure, g).mean);
  }
  const auto mix = mean_se(means);
  CHECK(std::abs(nu.mean - mix.mean) < 4 * std::hypot(nu.se, mix.se));
}

TEST_CASE("cylinder geometry") {
  const Model sim = make_model(
      ConformalIFS::from_primitives({HolomorphicMap::affine(-0.5, 0.3), HolomorphicMap::affine(0.5, 0.3)}),
      {0.5, 0.5}, {{0, 1}, {0, 1}});
  const std::vector<int> omega(8, 0);
  const auto g = cylinder_geometry(sim, omega, 1, 6, 100);
  CHECK(g.r1 == Approx(0.3).epsilon(1e-9));
  CHECK(g.r2 == Approx(0.3).epsilon(1e-9));
  CHECK(g.C == Approx(1.0).epsilon(1e-9));
  CHECK(cylinder_diameter(sim, std::vector<int>{0, 1, 1}) == Approx(2 * std::pow(0.3, 3)).epsilon(1e-3));

  const Model m = uni_model();
  Rng rng(2);
  const auto om = sample_omega(m, rng, 8);
  const auto geo = cylinder_geometry(m, om, 3, 5, 200);
  CHECK(geo.r2 <= m.ifs.rho() * 1.1);
  CHECK(geo.r1 >= m.ifs.rho_min() * 0.9);
  CHECK(geo.B1 > 0.0);
  CHECK(std::isfinite(geo.B1));
}
