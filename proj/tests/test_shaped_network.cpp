#include "catch_amalgamated.hpp"

#include "shapenet/oracle.hpp"
#include "shapenet/shaped_network.hpp"
#include "support.hpp"

using namespace shapenet;
using namespace testing_support;

TEST_CASE("shaped activation values") {
  CHECK(shaped_activation(0.0, 2.5, 4) == 0.0);
  CHECK(shaped_activation(1.5, 0.0, 5) == 1.5);
  CHECK(shaped_activation(1.0, 3.0, 1) == Catch::Approx(2.0));
  Vec t(3);
  t << -1.0, 0.5, 2.0;
  const Vec v = shaped_activation(t, 0.6, 2);
  for (Eigen::Index i = 0; i < 3; ++i)
    CHECK(v(i) == Catch::Approx(t(i) + 0.1 * std::pow(t(i), 3)));
  CHECK_THROWS_AS(shaped_activation(1.0, 1.0, 0), InvalidArgument);
}

namespace {

Estimate entry_variance(const NetworkParams &p) {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto &W : p.weights)
    for (Eigen::Index i = 0; i < W.size(); ++i) {
      const double v = W(i) * W(i);
      s += v;
      s2 += v * v;
      ++n;
    }
  const double m = s / static_cast<double>(n);
  const double var = s2 / static_cast<double>(n) - m * m;
  return {m, std::sqrt(var / static_cast<double>(n)), n};
}

} // namespace

TEST_CASE("prior entries have variance sigma^2") {
  auto unit = NetworkConfig::uniform(1000, 1000, 1, 0.0, 0.0, 3);
  const auto e1 = entry_variance(sample_prior(unit));
  CHECK(e1.n >= 1'000'000);
  CHECK(within_se(e1.mean, e1.se, 1.0, 4.0));

  auto wide = NetworkConfig::uniform(400, 320, 10, 0.0, 1.0, 4);
  const auto e2 = entry_variance(sample_prior(wide));
  CHECK(e2.n >= 1'000'000);
  CHECK(wide.sigma2() == Catch::Approx(1.2));
  CHECK(within_se(e2.mean, e2.se, 1.2, 4.0));

  auto one = wide;
  one.eta_convention = EtaConvention::one_eta;
  CHECK(one.sigma2() == Catch::Approx(1.1));
}

TEST_CASE("prior sampling is deterministic and validates sigma^2") {
  auto cfg = NetworkConfig::uniform(5, 7, 3, 0.2, 0.1, 99);
  const auto a = sample_prior(cfg), b = sample_prior(cfg);
  REQUIRE(a.weights.size() == 4);
  for (std::size_t l = 0; l < a.weights.size(); ++l)
    CHECK(a.weights[l] == b.weights[l]);
  CHECK(a.weights[0].rows() == 7);
  CHECK(a.weights[0].cols() == 5);
  CHECK(a.weights[3].rows() == 1);
  auto bad = NetworkConfig::uniform(5, 7, 2, 0.0, -1.0);
  CHECK_THROWS_AS(sample_prior(bad), InvalidArgument);
  NetworkConfig empty;
  CHECK_THROWS_AS(empty.validate(), InvalidArgument);
}

TEST_CASE("forward pass") {
  SECTION("hand arithmetic") {
    NetworkParams p;
    p.weights = {Mat::Constant(1, 1, 2.0), Mat::Constant(1, 1, 1.0)};
    Vec x(1);
    x << 1.0;
    const auto r = forward(p, x, 3.0);
    CHECK(r.hidden.size() == 2);
    CHECK(r.hidden[1](0) == Catch::Approx(10.0));
    CHECK(r.output == Catch::Approx(10.0));
  }
  SECTION("linear chain and odd symmetry") {
    Engine g(8);
    auto cfg = NetworkConfig::uniform(4, 6, 3, 0.0, 0.0, 1);
    const auto p = sample_prior(cfg, g);
    const Vec x = gaussian_vector(4, g);
    Vec h = x;
    for (int l = 0; l < 3; ++l)
      h = p.weights[static_cast<std::size_t>(l)] * h / std::sqrt(static_cast<double>(h.size()));
    const double lin = (p.weights[3] * h)(0) / std::sqrt(6.0);
    CHECK(forward(p, x, 0.0).output == Catch::Approx(lin).epsilon(1e-12));
    for (double psi : {-0.5, 0.0, 0.7})
      CHECK(forward(p, -x, psi).output == Catch::Approx(-forward(p, x, psi).output).epsilon(1e-12));
  }
  SECTION("shape errors") {
    auto cfg = NetworkConfig::uniform(4, 6, 2, 0.0, 0.0, 1);
    const auto p = sample_prior(cfg);
    CHECK_THROWS_AS(forward(p, Vec::Zero(3), 0.0), ShapeMismatch);
  }
}

TEST_CASE("prior predictive mean vanishes") {
  Engine g(21);
  auto cfg = NetworkConfig::uniform(3, 8, 2, 0.4, 0.2, 5);
  const Vec x = gaussian_vector(3, g, 0.5);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double f = forward(sample_prior(cfg, g), x, cfg.psi).output;
    s += f;
    s2 += f * f;
  }
  const double m = s / n;
  CHECK(within_se(m, std::sqrt((s2 / n - m * m) / n), 0.0, 4.0));
}

TEST_CASE("Monte Carlo prior statistics") {
  Engine g(2);
  const Mat X = gaussian_matrix(5, 3, g, 0.6);
  const Vec t = gaussian_vector(3, g);

  SECTION("zero source gives Laplace transform one") {
    auto cfg = NetworkConfig::uniform(5, 10, 2, 0.3, 0.0, 1);
    const auto r = mc_prior_stats(cfg, X, Vec::Zero(3), 0.0, 1, 1000);
    CHECK(r.laplace.mean == 1.0);
    CHECK(r.laplace.se == 0.0);
  }
  SECTION("sample count and shapes are validated") {
    auto cfg = NetworkConfig::uniform(5, 10, 2, 0.3, 0.0, 1);
    CHECK_THROWS_AS(mc_prior_stats(cfg, X, t, 0.0, 1, 50), InvalidArgument);
    CHECK_THROWS_AS(mc_prior_stats(cfg, X, Vec::Zero(2), 0.0, 1, 500), ShapeMismatch);
  }
  SECTION("linear networks reproduce the exact overlap") {
    auto cfg = NetworkConfig::uniform(5, 12, 3, 0.0, 0.3, 17);
    const auto mc = mc_overlap_moment(cfg, X, {0}, {1}, 40000, false);
    const double exact = linear_exact_moments(cfg, X, {0}, {1});
    CHECK(exact == Catch::Approx(std::pow(cfg.sigma2(), 3) * X.col(0).dot(X.col(1)) / 5.0));
    CHECK(within_se(mc.mean, mc.se, exact));
  }
  SECTION("results do not depend on thread count") {
    auto cfg = NetworkConfig::uniform(5, 10, 2, 0.3, 0.1, 12);
    const auto a = mc_prior_stats(cfg, X, t, 0.0, 2, 3000, nullptr, 1);
    const auto b = mc_prior_stats(cfg, X, t, 0.0, 2, 3000, nullptr, 3);
    CHECK(a.moment.mean == b.moment.mean);
    CHECK(a.laplace.mean == b.laplace.mean);
    CHECK(a.laplace.se == b.laplace.se);
  }
  SECTION("overflow is reported") {
    // cubic growth compounds over layers until the Gram is no longer finite
    auto cfg = NetworkConfig::uniform(5, 10, 8, 50.0, 0.0, 1);
    const Mat big = X * 40.0;
    const auto r = mc_prior_stats(cfg, big, t, 0.0, 1, 200);
    CHECK(r.overflow);
    CHECK(std::isnan(r.laplace.mean));
  }
}
