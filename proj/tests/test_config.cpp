#include "catch_amalgamated.hpp"

#include "shapenet/config.hpp"

using namespace shapenet;

TEST_CASE("defaults validate and round-trip") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  const auto text = c.to_ini();
  const auto back = ExperimentConfig::parse_ini(text);
  CHECK(back == c);
  CHECK(back.to_ini() == text);
  CHECK(ExperimentConfig::from_json(c.to_json()) == c);
  CHECK(std::isinf(c.real("temperature.beta")));
}

TEST_CASE("parsing") {
  const auto c = ExperimentConfig::parse_ini("; comment\n[network]\nN = 64\npsi = -0.25\n"
                                             "[selfloop]\npsi_list = 0.1, 0.2 ,0.3\n"
                                             "[temperature]\nbeta = 2.5\n");
  CHECK(c.count("network.N") == 64);
  CHECK(c.real("network.psi") == -0.25);
  CHECK(c.reals("selfloop.psi_list") == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(c.real("temperature.beta") == 2.5);
  CHECK(c.count("network.L") == 20);
  // non-canonical input still reproduces itself after one pass
  const auto once = c.to_ini();
  CHECK(ExperimentConfig::parse_ini(once).to_ini() == once);
}

TEST_CASE("overrides") {
  ExperimentConfig c;
  c.apply_override("network.eta = 0.4");
  CHECK(c.real("network.eta") == 0.4);
  CHECK_THROWS_AS(c.apply_override("network.eta"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("network.width=3"), ConfigError);
}

TEST_CASE("invalid configs") {
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[network]\nN = abc\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[network]\nL = 0\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[bogus]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[temperature]\nbeta = 0\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[data]\nsource = csv\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[network]\neta_convention = three\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[powerlaw]\nhaar_U = maybe\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_ini("[network\n"), ConfigError);
}

TEST_CASE("real formatting round-trips") {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 123456789.0, -2.5})
    CHECK(std::stod(format_real(x)) == x);
  CHECK(format_real(0.1) == "0.1");
  CHECK(format_real(inf) == "inf");
}
