#include "catch_amalgamated.hpp"

#include "shapenet/selfloop.hpp"
#include "support.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

using namespace shapenet;
using namespace testing_support;

namespace {

double integrate(const std::function<double(double)> &f) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-14);
}

// Laurent expansions: coth η − 1/η = η/3 − η³/45 + 2η⁵/945,
// coth η/η − csch²η = 2/3 − 4η²/45 + 4η⁴/315.
double g1_series(double e) { return 0.5 * (1.0 + e / 3.0 - std::pow(e, 3) / 45.0 + 2.0 * std::pow(e, 5) / 945.0); }
double g2_series(double e) { return 0.25 * (2.0 / 3.0 - 4.0 * e * e / 45.0 + 4.0 * std::pow(e, 4) / 315.0); }

// Exact finite-L expectations of the single-vertex chain by forward recursion over
// the self-loop count, carrying the weight e^{λ Σ s} and the S1, S2, s(τL) moments.
SelfLoopPoint chain_exact(const ShapeParams &s, double r, int L, double tau) {
  const double a = std::abs(s.psi);
  const double lam = 2.0 * (s.eta + a) / L;
  const double base = (1.0 + 2.0 * s.eta / L) * r;
  const long lt = std::lround(tau * L);
  const std::size_t n = static_cast<std::size_t>(L) + 2;
  std::vector<double> w(n, 0.0), w1(n, 0.0), w2(n, 0.0), wl(n, 0.0);
  w[0] = 1.0;
  for (int l = L; l >= 1; --l) {
    // weight for layer l holding s
    for (std::size_t k = 0; k < n; ++k) {
      const double e = std::exp(lam * static_cast<double>(k));
      const double sk = static_cast<double>(k);
      w2[k] = e * (w2[k] + sk * sk * w[k]);
      w1[k] = e * (w1[k] + sk * w[k]);
      wl[k] = e * (l == lt ? sk * w[k] : wl[k]);
      w[k] *= e;
    }
    // transition to layer l − 1
    std::vector<double> nw(n, 0.0), n1(n, 0.0), n2(n, 0.0), nl(n, 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const double p = a * (1.0 + 2.0 * static_cast<double>(k)) / L;
      nw[k] += (1 - p) * w[k], nw[k + 1] += p * w[k];
      n1[k] += (1 - p) * w1[k], n1[k + 1] += p * w1[k];
      n2[k] += (1 - p) * w2[k], n2[k + 1] += p * w2[k];
      nl[k] += (1 - p) * wl[k], nl[k + 1] += p * wl[k];
    }
    w.swap(nw), w1.swap(n1), w2.swap(n2), wl.swap(nl);
  }
  SelfLoopPoint out;
  for (std::size_t k = 0; k < n; ++k) {
    const double sign = (s.psi < 0 && (k & 1)) ? -1.0 : 1.0;
    const double rp = std::pow(base, static_cast<double>(k));
    const double rm = k > 0 ? std::pow(base, static_cast<double>(k) - 1.0) : 0.0;
    out.t00 += sign * rp * w[k];
    out.t11a += sign * rm * wl[k];
    out.t11b += sign * rm * w1[k] / L;
    out.t20 += sign * rp * w2[k] / L;
  }
  return out;
}

} // namespace

TEST_CASE("g-function limits and endpoints") {
  for (double eta : {-1.3, 0.2, 0.7, 2.0}) {
    CHECK(g3(eta, 1.0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(g3(eta, 0.0) == Catch::Approx(1.0));
  }
  CHECK(g1(0.0) == 0.5);
  CHECK(g2(0.0) == Catch::Approx(1.0 / 6.0).epsilon(1e-15));
  // g1 approaches 1/2 linearly (slope 1/6); compare with the Laurent oracle instead
  CHECK(std::abs(g1(1e-3) - g1_series(1e-3)) < 1e-5);
  CHECK(std::abs(g1(1e-3) - 0.5) < 2e-4);
  CHECK(std::abs(g2(1e-3) - 1.0 / 6.0) < 1e-5);
  for (double e : {-0.02, -1e-3, -5e-5, 5e-5, 2e-4, 1e-3, 0.02}) {
    CHECK(g1(e) == Catch::Approx(g1_series(e)).epsilon(1e-9));
    CHECK(g2(e) == Catch::Approx(g2_series(e)).epsilon(1e-9));
  }
  for (double e : {-3.0, -0.5, 0.0, 0.5, 3.0})
    CHECK(g1(e) > g2(e));
}

TEST_CASE("quadrature identities of g3 and g4") {
  for (double eta : {-2.0, -0.5, -1e-3, 1e-3, 0.5, 2.0}) {
    CHECK(std::abs(integrate([&](double t) { return g3(eta, t); }) - g1(eta)) < 1e-8);
    CHECK(std::abs(integrate([&](double t) { return g3(eta, t) * g3(eta, t); }) -
                   (g1(eta) - g2(eta))) < 1e-8);
    CHECK(std::abs(integrate([&](double t) { return g4(eta, t); }) - g2(eta)) < 1e-8);
  }
  CHECK(std::abs(integrate([](double t) { return g3(0.7, t) * g3(0.7, t); }) -
                 (g1(0.7) - g2(0.7))) < 1e-10);
}

TEST_CASE("closed-form expectations") {
  ShapeParams s{0.3, 0.5};
  const double r = 0.4;
  const auto cf = selfloop_closed_form(s, r);
  const double t11b = integrate([&](double t) { return selfloop_closed_form(s, r, t).t11a; });
  CHECK(std::abs(t11b - cf.t11b) < 1e-10);
  CHECK(selfloop_closed_form({0.0, 0.4}, r).t00 == 1.0);
  CHECK(selfloop_closed_form({-0.3, 0.4}, r).t11b < 0.0);
  CHECK(selfloop_closed_form({0.3, 0.4}, r).t11b > 0.0);
  CHECK_THROWS_AS(selfloop_closed_form({2.0, 0.0}, 0.3), SingularEmbedding);

  CHECK(c_psi_eta({0.0, 0.7}) == 0.0);
  for (double psi : {-0.4, 0.1, 0.5})
    CHECK(c_psi_eta({psi, 0.3}) > 0.0);
}

TEST_CASE("per-point statistics") {
  Engine g(1);
  const RawDataset raw = random_raw(6, 3, g, 0.3);
  ShapeParams s0{0.0, 0.3};
  const auto st0 = selfloop_expectations(build_hat_dataset(raw, s0), s0);
  CHECK((st0.t00.array() == 1.0).all());
  ShapeParams s{-0.35, 0.2};
  const auto h = build_hat_dataset(raw, s);
  const auto st = selfloop_expectations(h, s);
  CHECK((st.t11b.array() < 0.0).all());
  for (Eigen::Index m = 0; m < 3; ++m)
    CHECK(st.Mhat_diag(m) == Catch::Approx(mhat_entry(s, raw.X.col(m).squaredNorm() / 6.0)));
  CHECK(st.mhat_test == Catch::Approx(mhat_entry(s, raw.x_test->squaredNorm() / 6.0)));
}

TEST_CASE("chain simulation matches the exact finite-depth recursion") {
  ShapeParams s{0.3, 0.5};
  const double r = 0.4;
  const int L = 400;
  const auto mc = selfloop_mc(s, r, L, 1'000'000, 77);
  const auto ex = chain_exact(s, r, L, 0.5);
  CHECK(within_se(mc.t00.mean, mc.t00.se, ex.t00));
  CHECK(within_se(mc.t11a.mean, mc.t11a.se, ex.t11a));
  CHECK(within_se(mc.t11b.mean, mc.t11b.se, ex.t11b));
  CHECK(within_se(mc.t20.mean, mc.t20.se, ex.t20));
  // and the closed forms within 3 SE
  const auto cf = selfloop_closed_form(s, r);
  CHECK(within_se(mc.t00.mean, mc.t00.se, cf.t00));
  CHECK(within_se(mc.t11a.mean, mc.t11a.se, cf.t11a));
  CHECK(within_se(mc.t11b.mean, mc.t11b.se, cf.t11b));
  CHECK(within_se(mc.t20.mean, mc.t20.se, cf.t20));

  ShapeParams neg{-0.4, 0.1};
  const auto mn = selfloop_mc(neg, 0.3, 200, 400000, 78);
  const auto en = chain_exact(neg, 0.3, 200, 0.5);
  CHECK(within_se(mn.t00.mean, mn.t00.se, en.t00));
  CHECK(within_se(mn.t20.mean, mn.t20.se, en.t20));
}

TEST_CASE("finite-depth expectations converge at rate 1/L") {
  ShapeParams s{0.3, 0.5};
  const double r = 0.4;
  const auto cf = selfloop_closed_form(s, r);
  std::vector<double> err;
  for (int L : {50, 100, 200, 400})
    err.push_back(chain_exact(s, r, L, 0.5).t00 - cf.t00);
  for (std::size_t i = 0; i + 1 < err.size(); ++i)
    CHECK(err[i] / err[i + 1] == Catch::Approx(2.0).margin(0.1));
  const auto t20 = [&](int L) { return chain_exact(s, r, L, 0.5).t20 - cf.t20; };
  CHECK(t20(100) / t20(200) == Catch::Approx(2.0).margin(0.15));
}

TEST_CASE("linear chain is deterministic") {
  const auto mc = selfloop_mc({0.0, 0.3}, 0.4, 100, 1000, 1);
  CHECK(mc.t00.mean == 1.0);
  CHECK(mc.t00.se == 0.0);
  CHECK(mc.t11a.mean == 0.0);
  CHECK(mc.t11b.mean == 0.0);
  CHECK(mc.t20.mean == 0.0);
  CHECK_THROWS_AS(selfloop_mc({30.0, 0.0}, 0.4, 10, 1000, 1), ProbabilityOverflow);
}

TEST_CASE("prior Laplace transform limits") {
  Engine g(3);
  ShapeParams s{0.3, 0.2};
  const auto h = build_hat_dataset(random_raw(6, 3, g, 0.3), s);
  const auto st = selfloop_expectations(h, s);
  CHECK(prior_laplace_firstorder(h, st, Vec::Zero(3), 0.0, 10, 100.0) == 1.0);
  const Vec t = gaussian_vector(3, g);
  CHECK(prior_laplace_firstorder(h, st, t, 0.0, 10, inf) ==
        Catch::Approx(std::exp(-0.5 * t.dot(h.G * t))).epsilon(1e-14));
  CHECK_THROWS_AS(prior_laplace_firstorder(h, st, Vec::Zero(2), 0.0, 10, 100.0), ShapeMismatch);
}
