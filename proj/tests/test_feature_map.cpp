#include "catch_amalgamated.hpp"

#include "shapenet/feature_map.hpp"
#include "support.hpp"

using namespace shapenet;
using namespace testing_support;

TEST_CASE("psi_hat has a removable singularity at eta = 0") {
  ShapeParams s{0.3, 0.0};
  CHECK(s.psi_hat() == Catch::Approx(0.3));
  ShapeParams a{0.3, 5e-5}, b{0.3, 2e-4};
  const double exact_b = 0.3 * std::expm1(4e-4) / 4e-4;
  CHECK(b.psi_hat() == Catch::Approx(exact_b).epsilon(1e-14));
  CHECK(a.psi_hat() == Catch::Approx(0.3 * std::expm1(1e-4) / 1e-4).epsilon(1e-12));
}

TEST_CASE("embedding examples") {
  Engine g(1);
  const Vec x = gaussian_vector(6, g);
  CHECK((embed(x, {0.0, 0.0}, 6) - x / std::sqrt(6.0)).norm() < 1e-15);

  Vec unit = Vec::Ones(4); // ‖x‖² = N₀
  CHECK_THROWS_AS(embed(unit, {0.5, 0.0}, 4), SingularEmbedding);
  CHECK_THROWS_AS(embed(x, {0.0, 0.0}, 5), ShapeMismatch);

  ShapeParams neg{-0.8, 0.3};
  for (double scale : {0.1, 1.0, 10.0, 1000.0}) {
    const Vec xh = embed(scale * x, neg, 6);
    CHECK(xh.squaredNorm() < std::exp(0.6) / (2.0 * std::abs(neg.psi_hat())));
  }
}

TEST_CASE("two forms of the feature map agree") {
  Engine g(2);
  std::uniform_real_distribution<double> up(-1.0, 1.0), ue(-1.5, 1.5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ShapeParams s{up(g), ue(g)};
    if (i % 10 == 0)
      s.eta = 1e-6 * up(g);
    Vec x = gaussian_vector(8, g, 0.3);
    if (2.0 * s.psi_hat_point(x.squaredNorm() / 8.0) >= 0.9)
      continue;
    const Vec a = embed(x, s, 8), b = embed_direct(x, s, 8);
    worst = std::max(worst, (a - b).norm() / a.norm());
  }
  CHECK(worst < 1e-13);
}

TEST_CASE("unembed inverts embed") {
  Engine g(3);
  std::uniform_real_distribution<double> up(-0.7, 0.7), ue(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    ShapeParams s{up(g), ue(g)};
    const Vec xh = gaussian_vector(5, g, 0.2);
    if (s.psi < 0.0 && xh.squaredNorm() >= std::exp(2 * s.eta) / (2 * std::abs(s.psi_hat())))
      continue;
    const Vec back = embed(unembed(xh, s, 5), s, 5);
    worst = std::max(worst, (back - xh).norm() / xh.norm());
  }
  CHECK(worst < 1e-12);
  CHECK((unembed(Vec::Ones(4), {0.0, 0.0}, 4) - 2.0 * Vec::Ones(4)).norm() < 1e-15);

  Vec xh = Vec::Zero(3);
  xh(0) = std::sqrt(1.1);
  CHECK_THROWS_AS(unembed(xh, {-0.5, 0.0}, 3), Unreachable);
}

TEST_CASE("hat dataset construction") {
  Engine g(4);
  ShapeParams s{0.25, 0.15};
  const RawDataset raw = random_raw(7, 4, g);
  const HatDataset h = build_hat_dataset(raw, s);

  for (Eigen::Index m = 0; m < 4; ++m)
    for (Eigen::Index n = 0; n < 4; ++n) {
      const double K = embed(raw.X.col(m), s, 7).dot(embed(raw.X.col(n), s, 7));
      CHECK(h.G(m, n) == Catch::Approx(K).epsilon(1e-13));
      CHECK(h.G3(m, n) == Catch::Approx(K * K * K).epsilon(1e-12));
    }
  CHECK((h.Xhat.transpose() * h.theta_hat - h.Y).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(h.trace_sigma() == Catch::Approx(h.Xhat.squaredNorm() / 4.0));
  const Mat Sigma = h.Xhat * h.Xhat.transpose() / 4.0;
  CHECK(h.trace_sigma2() == Catch::Approx((Sigma * Sigma).trace()).epsilon(1e-12));
  const Vec z = gaussian_vector(7, g);
  CHECK(h.sigma_quadratic(z) == Catch::Approx(z.dot(Sigma * z)).epsilon(1e-12));
  // spectrum reproduces X̂ = √P Σ √λ u vᵀ
  const Mat rec = 2.0 * h.svd.U * h.svd.lambda.cwiseSqrt().asDiagonal() * h.svd.V.transpose();
  CHECK((rec - h.Xhat).norm() < 1e-12);
  REQUIRE(h.xhat_test);
  CHECK((*h.xhat_test - embed(*raw.x_test, s, 7)).norm() < 1e-15);

  SECTION("single point interpolant") {
    RawDataset one;
    one.X = raw.X.col(0);
    one.Y = Vec::Constant(1, 1.7);
    const auto h1 = build_hat_dataset(one, s);
    const Vec expect = 1.7 * h1.Xhat.col(0) / h1.Xhat.col(0).squaredNorm();
    CHECK((h1.theta_hat - expect).norm() < 1e-14);
  }
  SECTION("rank deficiency and size checks") {
    RawDataset dup = raw;
    dup.X.col(1) = dup.X.col(0);
    CHECK_THROWS_AS(build_hat_dataset(dup, s), RankDeficient);
    RawDataset wide;
    wide.X = gaussian_matrix(3, 3, g);
    wide.Y = Vec::Zero(3);
    CHECK_THROWS_AS(build_hat_dataset(wide, s), InvalidArgument);
  }
  SECTION("JSON round trip") {
    const auto j = to_json(h);
    const auto back = hat_dataset_from_json(nlohmann::json::parse(j.dump()));
    CHECK((back.Xhat - h.Xhat).norm() == 0.0);
    CHECK((back.Y - h.Y).norm() == 0.0);
    CHECK(back.shape.psi == s.psi);
    CHECK((back.G - h.G).norm() < 1e-14);
  }
}

TEST_CASE("kernel flow") {
  Engine g(5);
  const Mat A = gaussian_matrix(3, 5, g, 0.35);
  const Mat K0 = A * A.transpose();

  CHECK((kernel_ode_flow(K0, 0.0, FlowMode::closed_form) - K0).norm() == 0.0);
  CHECK((kernel_ode_flow(K0, 0.0, FlowMode::discrete, 20) - K0).norm() == 0.0);
  CHECK(kernel_ode_flow(Mat::Constant(1, 1, 0.4), 1.0, FlowMode::closed_form)(0, 0) ==
        Catch::Approx(2.0));

  for (double psi : {0.3, -0.3}) {
    const Mat c = kernel_ode_flow(K0, psi, FlowMode::closed_form);
    const Mat d = kernel_ode_flow(K0, psi, FlowMode::discrete, 10000);
    const double rel = ((c - d).array().abs() / c.array().abs()).maxCoeff();
    CHECK(rel < 1e-3);
    // Richardson in 1/L removes the leading discretization error
    const Mat d2 = kernel_ode_flow(K0, psi, FlowMode::discrete, 5000);
    const Mat rich = 2.0 * d - d2;
    CHECK(((c - rich).array().abs() / c.array().abs()).maxCoeff() < 1e-6);
  }

  SECTION("closed form reproduces the embedded Gram at eta = 0") {
    const RawDataset raw = random_raw(6, 3, g, 0.5, false);
    for (double psi : {0.4, -0.6}) {
      const auto h = build_hat_dataset(raw, {psi, 0.0});
      const Mat K = raw.X.transpose() * raw.X / 6.0;
      CHECK((kernel_ode_flow(K, psi, FlowMode::closed_form) - h.G).norm() < 1e-12);
    }
  }
  SECTION("blow-up threshold matches the embedding singularity") {
    Vec x = Vec::Ones(4) * std::sqrt(1.25); // ‖x‖²/N₀ = 1.25
    Mat K = Mat::Constant(1, 1, 1.25);
    CHECK_THROWS_AS(kernel_ode_flow(K, 0.4, FlowMode::closed_form), FiniteTimeBlowup);
    CHECK_THROWS_AS(embed(x, {0.4, 0.0}, 4), SingularEmbedding);
    CHECK_NOTHROW(kernel_ode_flow(K, 0.39, FlowMode::closed_form));
    CHECK_NOTHROW(embed(x, {0.39, 0.0}, 4));
  }
}
