#include "catch_amalgamated.hpp"

#include "shapenet/power_law.hpp"
#include "support.hpp"

using namespace shapenet;
using namespace testing_support;

TEST_CASE("power-law data construction") {
  PowerLawSpec sp;
  sp.P = 32;
  sp.N0 = 48;
  sp.alpha = 1.5;
  sp.k = 2;
  sp.seed = 4;
  const auto d = generate_powerlaw(sp);
  CHECK(d.svd.lambda.sum() == Catch::Approx(1.0).epsilon(1e-14));
  for (Eigen::Index j = 1; j < d.svd.lambda.size(); ++j)
    CHECK(d.svd.lambda(j) < d.svd.lambda(j - 1));
  CHECK(d.Y.squaredNorm() == Catch::Approx(32.0).epsilon(1e-12));
  CHECK((d.svd.U.transpose() * d.svd.U - Mat::Identity(32, 32)).norm() < 1e-12);
  CHECK((d.svd.V.transpose() * d.svd.V - Mat::Identity(32, 32)).norm() < 1e-12);

  const auto h = d.hat();
  CHECK(h.theta_norm2() == Catch::Approx(1.0 / d.svd.lambda(1)).epsilon(1e-8));
  CHECK(h.trace_sigma() == Catch::Approx(1.0).epsilon(1e-12));
  // θ̂* is aligned with u_k
  CHECK(std::abs(h.theta_hat.normalized().dot(d.svd.U.col(1))) == Catch::Approx(1.0).epsilon(1e-10));

  auto sc = sp;
  sc.haar_U = false;
  const auto dc = generate_powerlaw(sc);
  CHECK((dc.svd.U - Mat::Identity(48, 32)).norm() == 0.0);

  SECTION("determinism") {
    const auto d2 = generate_powerlaw(sp);
    CHECK((d2.xhat() - d.xhat()).norm() == 0.0);
    CHECK((d2.Y - d.Y).norm() == 0.0);
  }
  SECTION("validation") {
    auto bad = sp;
    bad.P = 48;
    CHECK_THROWS_AS(generate_powerlaw(bad), InvalidArgument);
    bad = sp;
    bad.k = 0;
    CHECK_THROWS_AS(generate_powerlaw(bad), InvalidArgument);
    bad = sp;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(generate_powerlaw(bad), InvalidArgument);
  }
}

TEST_CASE("second moment of the spectrum") {
  // Σλ_j² for λ_j ∝ j^{-2}, summed independently in long double
  const std::size_t P = 4096;
  long double z2 = 0, z4 = 0;
  for (std::size_t j = P; j >= 1; --j) {
    const long double x = 1.0L / (static_cast<long double>(j) * static_cast<long double>(j));
    z2 += x;
    z4 += x * x;
  }
  const double expected = static_cast<double>(z4 / (z2 * z2));
  const Vec l = powerlaw_spectrum(P, 2.0);
  CHECK(l.squaredNorm() == Catch::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(l.squaredNorm() - 0.40012) < 1e-5);
}

TEST_CASE("reference quantities") {
  PowerLawSpec sp;
  sp.P = 20;
  sp.N0 = 30;
  sp.alpha = 1.2;
  sp.seed = 9;
  const auto d = generate_powerlaw(sp);
  const auto h = d.hat();
  const double beta = 0.7;
  const auto a = appendix_scalings(h, beta);
  // dense oracle
  const Mat M = (h.G + Mat::Identity(20, 20) / beta).inverse();
  const Mat XdX = M * h.G;
  CHECK(a.tr_M == Catch::Approx(M.trace()).epsilon(1e-10));
  CHECK(a.tr_XdagX == Catch::Approx(XdX.trace()).epsilon(1e-10));
  CHECK(a.tr_XdagX_sq == Catch::Approx((XdX * XdX).trace()).epsilon(1e-10));
  CHECK(a.tr_log_M == Catch::Approx(std::log(M.determinant())).epsilon(1e-10));
  const Vec w = M * h.Y;
  CHECK(a.M_half_Xt_theta == Catch::Approx(h.Y.dot(w)).epsilon(1e-10));
  CHECK(a.Xdag_theta == Catch::Approx(w.squaredNorm()).epsilon(1e-10));
  CHECK(a.XXdag_theta == Catch::Approx(w.dot(h.G * w)).epsilon(1e-10));
  CHECK(a.XtXXdag_theta_over_P == Catch::Approx((h.G * w).squaredNorm() / 20.0).epsilon(1e-10));
  CHECK(a.dim_below + a.dim_above == 20);
  CHECK_THROWS_AS(appendix_scalings(h, inf), InvalidArgument);
}

TEST_CASE("log-log slope") {
  std::vector<double> x{1, 2, 4, 8, 16}, y;
  for (double v : x)
    y.push_back(3.0 * std::pow(v, -0.75));
  CHECK(loglog_slope(x, y) == Catch::Approx(-0.75).epsilon(1e-12));
  CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), InvalidArgument);
}

TEST_CASE("regime classification and formulas") {
  PowerLawSpec sp;
  sp.P = 1024;
  sp.N0 = 2048;
  sp.alpha = 1.5;
  sp.k = 1;
  const double P = 1024, a = 1.5;
  CHECK(classify_regime(P, a, 1, 2 * std::pow(P, a)) == Regime::lowT);
  CHECK(classify_regime(P, a, 1, 100.0) == Regime::highT_strong);
  CHECK(classify_regime(P, a, 30, 100.0) == Regime::highT_weak);

  SECTION("low temperature linear case") {
    const double B = 2 * std::pow(P, a);
    const auto r = regime_log_evidence(sp, B, 0.01, 0.0);
    CHECK(r.regime == Regime::lowT);
    CHECK(r.leading == Catch::Approx((a - 1) * P * std::log(P) - 1.0));
    CHECK(r.depth_coefficient == Catch::Approx(P * P + 1.0));
    CHECK(r.value() == Catch::Approx(r.leading + 0.01 * (P * P + 1.0)));
  }
  SECTION("depth coefficient grows with B") {
    double prev = -1;
    for (double e = 0.5; e < 1.5; e += 0.25) {
      const auto r = regime_log_evidence(sp, std::pow(P, e), 0.0, 0.0);
      REQUIRE(r.regime == Regime::highT_strong);
      CHECK(r.depth_coefficient > prev);
      prev = r.depth_coefficient;
    }
  }
  SECTION("generalization") {
    const double LN = 0.1 / P;
    const auto g = regime_generalization_error(sp, 2 * std::pow(P, a), LN);
    CHECK(g.value == Catch::Approx(0.9 * std::pow(P, 1 - a)));
    const auto gs = regime_generalization_error(sp, 100.0, LN);
    CHECK(gs.value == Catch::Approx(0.9 * std::pow(100.0, -1 + 1 / a)));
    auto sw = sp;
    sw.k = 30;
    const auto gw = regime_generalization_error(sw, 100.0, 0.0, false);
    CHECK(gw.order_one);
  }
  SECTION("validity guards") {
    auto s = sp;
    s.alpha = 0.9;
    CHECK_THROWS_AS(regime_log_evidence(s, 10.0, 0.0, 0.0), OutsidePerturbativeRegime);
    CHECK_NOTHROW(regime_log_evidence(s, 10.0, 0.0, 0.0, false));
    s = sp;
    s.alpha = 2.5;
    CHECK_THROWS_AS(regime_log_evidence(s, 10.0, 0.0, 0.3), OutsidePerturbativeRegime);
    s = sp;
    s.k = 40;
    CHECK_THROWS_AS(regime_log_evidence(s, 10.0, 0.0, 0.0), OutsidePerturbativeRegime);
    s = sp;
    s.sigma_eps2 = 1.0;
    CHECK_THROWS_AS(regime_log_evidence(s, 10.0, 0.0, 0.0), OutsidePerturbativeRegime);
    CHECK_THROWS_AS(regime_log_evidence(sp, 0.0, 0.0, 0.0), InvalidArgument);
  }
}

TEST_CASE("benign overfitting sweep") {
  PowerLawSpec sp;
  sp.P = 16;
  sp.N0 = 24;
  sp.alpha = 1.5;
  sp.seed = 2;
  const auto d = generate_powerlaw(sp);
  const ShapeParams s{0.0, 0.0};
  const std::vector<double> LN{0.0, 0.002};
  const std::vector<double> B{4.0, 16.0, 64.0};
  const auto rep = benign_overfit_report(d, LN, B, s, 50);
  REQUIRE(rep.rows.size() == 6);
  const auto h = d.hat(s);
  for (const auto &row : rep.rows) {
    const auto ev = log_evidence(h, 1, row.LN > 0 ? 1.0 / row.LN : inf, s, row.B / 16.0);
    CHECK(row.evidence.log_Z0 == Catch::Approx(ev.log_Z0).epsilon(1e-12));
    CHECK(row.gen_error.mean > 0.0);
    CHECK(row.gen_error.n == 50);
  }
  // reproducible test points
  const auto rep2 = benign_overfit_report(d, LN, B, s, 50);
  CHECK(rep2.rows[3].gen_error.mean == rep.rows[3].gen_error.mean);
}
