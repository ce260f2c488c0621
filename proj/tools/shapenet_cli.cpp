// Experiment runner. Every subcommand writes <out_dir>/<command>.csv and a JSON
// sidecar <out_dir>/<command>.json holding the full config, all seeds and a
// summary. Exit codes: 0 ok, 1 tolerance breach, 2 config error, 64 results
// flagged outside the perturbative regime.

#include "shapenet/config.hpp"
#include "shapenet/feature_map.hpp"
#include "shapenet/graph_process.hpp"
#include "shapenet/oracle.hpp"
#include "shapenet/partition.hpp"
#include "shapenet/power_law.hpp"
#include "shapenet/selfloop.hpp"
#include "shapenet/shaped_network.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace shapenet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitFlagged = 64;

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos)
    return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"')
      q += '"';
    q += ch;
  }
  return q + '"';
}

class Csv {
public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}

  Csv &row() {
    rows_.emplace_back();
    return *this;
  }
  Csv &operator<<(const std::string &s) {
    rows_.back().push_back(s);
    return *this;
  }
  Csv &operator<<(const char *s) { return *this << std::string(s); }
  Csv &operator<<(double x) { return *this << format_real(x); }
  Csv &operator<<(int x) { return *this << std::to_string(x); }
  Csv &operator<<(std::size_t x) { return *this << std::to_string(x); }
  Csv &operator<<(bool b) { return *this << std::string(b ? "1" : "0"); }

  void write(const fs::path &p) const {
    std::ofstream os(p, std::ios::binary);
    auto line = [&](const std::vector<std::string> &r) {
      for (std::size_t i = 0; i < r.size(); ++i)
        os << (i ? "," : "") << csv_field(r[i]);
      os << "\r\n";
    };
    line(header_);
    for (const auto &r : rows_) {
      if (r.size() != header_.size())
        throw std::logic_error("csv row width differs from header");
      line(r);
    }
  }

private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct Run {
  std::string command;
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  int threads = 1;
  double tol = 1.0;
  json seeds = json::object();
  std::size_t checks = 0, failures = 0, flagged = 0;
  json extra = json::object();

  std::uint64_t child(const std::string &label) {
    const auto s = child_seed(seed, label.c_str());
    seeds[label] = s;
    return s;
  }
  bool check(bool ok) {
    ++checks;
    failures += !ok;
    return ok;
  }
};

int finish(Run &r, const Csv &csv, bool tolerance_bearing) {
  const fs::path dir = r.cfg.text("run.out_dir");
  fs::create_directories(dir);
  csv.write(dir / (r.command + ".csv"));
  json summary = r.extra;
  summary["flagged"] = r.flagged;
  if (tolerance_bearing) {
    summary["checks"] = r.checks;
    summary["failures"] = r.failures;
    summary["pass"] = r.failures == 0;
  }
  r.seeds["global"] = r.seed;
  json side = {{"schema_version", 1},
               {"command", r.command},
               {"config", r.cfg.to_json()},
               {"seeds", r.seeds},
               {"summary", summary}};
  std::ofstream(dir / (r.command + ".json")) << side.dump(2) << '\n';
  std::cout << r.command << ": " << r.checks << " checks, " << r.failures << " failures, "
            << r.flagged << " flagged -> " << (dir / (r.command + ".csv")).string() << '\n';
  if (r.failures > 0)
    return kExitFail;
  if (r.flagged > 0)
    return kExitFlagged;
  return 0;
}

ShapeParams shape_of(const ExperimentConfig &c) {
  return {c.real("network.psi"), c.real("network.eta")};
}

NetworkConfig network_of(const ExperimentConfig &c, double psi, double eta, std::uint64_t seed) {
  auto n = NetworkConfig::uniform(c.count("network.N0"), c.count("network.N"),
                                  static_cast<int>(c.count("network.L")), psi, eta, seed);
  if (c.text("network.eta_convention") == "one_eta")
    n.eta_convention = EtaConvention::one_eta;
  return n;
}

Mat gaussian(Eigen::Index r, Eigen::Index k, Engine &g, double scale) {
  Normal n;
  Mat A(r, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < r; ++i)
      A(i, j) = scale * n(g);
  return A;
}

// Training data plus test inputs. CSV layout: header "role,y,x1,...,xN0",
// role ∈ {train, test}.
struct Data {
  RawDataset raw;
  std::vector<Vec> tests;
};

Data load_data(Run &r) {
  const auto &c = r.cfg;
  const auto N0 = static_cast<Eigen::Index>(c.count("network.N0"));
  Data d;
  if (c.text("data.source") == "random") {
    Engine g(r.child("data"));
    const auto P = static_cast<Eigen::Index>(c.count("data.P"));
    const double s = std::sqrt(c.real("data.norm_ratio"));
    d.raw.X = gaussian(N0, P, g, s);
    d.raw.Y = gaussian(P, 1, g, 1.0).col(0);
    const Mat T = gaussian(N0, static_cast<Eigen::Index>(c.count("posterior.n_test")), g,
                           s * c.real("posterior.test_scale"));
    for (Eigen::Index j = 0; j < T.cols(); ++j)
      d.tests.push_back(T.col(j));
    return d;
  }
  std::ifstream in(c.text("data.csv"));
  if (!in)
    throw ConfigError("cannot open data file " + c.text("data.csv"));
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_list(line);
  if (header.size() < 3 || header[0] != "role" || header[1] != "y")
    throw ConfigError("data file header must be role,y,x1,...");
  if (static_cast<Eigen::Index>(header.size() - 2) != N0)
    throw ConfigError("data file has " + std::to_string(header.size() - 2) +
                      " input columns but network.N0 = " + std::to_string(N0));
  std::vector<Vec> xs;
  std::vector<double> ys;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty())
      continue;
    const auto f = detail::split_list(line);
    if (f.size() != header.size())
      throw ConfigError("data file: ragged row");
    Vec x(N0);
    for (Eigen::Index i = 0; i < N0; ++i)
      x(i) = detail::parse_real(f[static_cast<std::size_t>(i) + 2], "data");
    if (f[0] == "train") {
      xs.push_back(x);
      ys.push_back(detail::parse_real(f[1], "data"));
    } else if (f[0] == "test") {
      d.tests.push_back(x);
    } else {
      throw ConfigError("data file: role must be train or test");
    }
  }
  if (xs.empty())
    throw ConfigError("data file has no training rows");
  d.raw.X.resize(N0, static_cast<Eigen::Index>(xs.size()));
  d.raw.Y.resize(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t m = 0; m < xs.size(); ++m) {
    d.raw.X.col(static_cast<Eigen::Index>(m)) = xs[m];
    d.raw.Y(static_cast<Eigen::Index>(m)) = ys[m];
  }
  return d;
}

// Inputs and source for the prior comparisons.
struct PriorSetup {
  Mat X;
  Vec t;
};

PriorSetup prior_setup(Run &r) {
  const auto &c = r.cfg;
  Engine g(r.child("prior-data"));
  const auto N0 = static_cast<Eigen::Index>(c.count("network.N0"));
  const auto P = static_cast<Eigen::Index>(c.count("data.P"));
  PriorSetup s;
  s.X = gaussian(N0, P, g, c.real("prior.x_scale"));
  s.t = gaussian(P, 1, g, c.real("prior.t_scale")).col(0);
  return s;
}

double depth_width_scale(const ExperimentConfig &c) {
  const double L = static_cast<double>(c.count("network.L"));
  const double N = static_cast<double>(c.count("network.N"));
  return L / (N * N) + 1.0 / L;
}

int cmd_validate_prior(Run &r) {
  const auto &c = r.cfg;
  const auto setup = prior_setup(r);
  const int L = static_cast<int>(c.count("network.L"));
  const double N = static_cast<double>(c.count("network.N"));
  const double band = c.real("prior.band_C") * depth_width_scale(c);
  Csv csv({"psi", "eta", "closed_form", "order0", "mc", "se", "band", "pass"});
  int idx = 0;
  for (double psi : c.reals("prior.psi_list"))
    for (double eta : c.reals("prior.eta_list")) {
      const ShapeParams s{psi, eta};
      const auto net = network_of(c, psi, eta, r.child("prior-" + std::to_string(idx++)));
      RawDataset raw{setup.X, Vec::Zero(setup.X.cols()), std::nullopt};
      const auto hat = build_hat_dataset(raw, s);
      const auto st = selfloop_expectations(hat, s);
      const double cf = prior_laplace_firstorder(hat, st, setup.t, 0.0, L, N);
      const double cf0 = std::exp(-0.5 * setup.t.dot(hat.G * setup.t));
      const auto mc = mc_prior_stats(net, setup.X, setup.t, 0.0, 1, c.count("prior.n_samples"),
                                     nullptr, r.threads);
      const bool ok = r.check(std::abs(mc.laplace.mean - cf) <= 3.0 * r.tol * mc.laplace.se + band);
      r.flagged += mc.overflow;
      csv.row() << psi << eta << cf << cf0 << mc.laplace.mean << mc.laplace.se << band << ok;
    }
  return finish(r, csv, true);
}

int cmd_validate_selfloop(Run &r) {
  const auto &c = r.cfg;
  const int L = static_cast<int>(c.count("selfloop.L"));
  const double tau = c.real("selfloop.tau");
  Csv csv({"psi", "eta", "norm_ratio", "quantity", "closed_form", "mc", "se", "pass"});
  int idx = 0;
  for (double psi : c.reals("selfloop.psi_list"))
    for (double eta : c.reals("selfloop.eta_list"))
      for (double rr : c.reals("selfloop.norm_ratio_list")) {
        const ShapeParams s{psi, eta};
        const auto cf = selfloop_closed_form(s, rr, tau);
        const auto mc = selfloop_mc(s, rr, L, c.count("selfloop.n_samples"),
                                    r.child("selfloop-" + std::to_string(idx++)), tau, r.threads);
        const std::pair<const char *, std::pair<double, Estimate>> q[] = {
            {"t00", {cf.t00, mc.t00}},
            {"t11a", {cf.t11a, mc.t11a}},
            {"t11b", {cf.t11b, mc.t11b}},
            {"t20", {cf.t20, mc.t20}}};
        for (const auto &[name, v] : q) {
          const bool ok = r.check(std::abs(v.second.mean - v.first) <=
                                  3.0 * r.tol * v.second.se + 1e-12 * (1.0 + std::abs(v.first)));
          csv.row() << psi << eta << rr << name << v.first << v.second.mean << v.second.se << ok;
        }
      }
  return finish(r, csv, true);
}

int cmd_validate_graph(Run &r) {
  const auto &c = r.cfg;
  if (c.count("data.P") < 3)
    throw ConfigError("validate-graph needs data.P >= 3");
  const auto setup = prior_setup(r);
  const Mat gram = setup.X.transpose() * setup.X;
  const double band = c.real("graph.band_C") * depth_width_scale(c);
  Csv csv({"psi", "eta", "q", "graph", "graph_se", "network", "network_se", "band", "pass"});
  int idx = 0;
  for (double psi : c.reals("prior.psi_list"))
    for (double eta : c.reals("prior.eta_list"))
      for (int q : c.ints("graph.q_list")) {
        if (q != 1 && q != 2)
          throw ConfigError("graph.q_list entries must be 1 or 2");
        const std::vector<int> mu = q == 1 ? std::vector<int>{0} : std::vector<int>{0, 1};
        const std::vector<int> nu = q == 1 ? std::vector<int>{1} : std::vector<int>{1, 2};
        const auto net = network_of(c, psi, eta, r.child("graph-" + std::to_string(idx++)));
        const auto gm = estimate_moment(mu, nu, gram, net, c.count("graph.n_samples"),
                                        MomentConvention::readout_scaled, r.threads);
        const auto om =
            mc_overlap_moment(net, setup.X, mu, nu, c.count("graph.network_samples"), true, r.threads);
        const double tol = 3.0 * r.tol * std::hypot(gm.se, om.se) + band * std::abs(om.mean);
        const bool ok = r.check(std::abs(gm.mean - om.mean) <= tol);
        csv.row() << psi << eta << q << gm.mean << gm.se << om.mean << om.se << band << ok;
      }
  return finish(r, csv, true);
}

int cmd_validate_wick(Run &r) {
  const auto &c = r.cfg;
  const auto P = c.count("wick.P");
  const auto betas = c.reals("wick.beta_list");
  const double psis[] = {0.0, 0.3, -0.3};
  const double etas[] = {0.0, 0.4};
  Csv csv({"instance", "P", "beta", "psi", "eta", "slot", "exact", "mc", "se", "pass"});
  const auto labels = IntegralTable::labels();
  for (std::size_t i = 0; i < c.count("wick.instances"); ++i) {
    const ShapeParams s{psis[i % 3], etas[(i / 3) % 2]};
    const double beta = betas[i % betas.size()];
    Engine g(r.child("wick-data-" + std::to_string(i)));
    RawDataset raw;
    raw.X = gaussian(static_cast<Eigen::Index>(P + 2), static_cast<Eigen::Index>(P), g, std::sqrt(0.3));
    raw.Y = gaussian(static_cast<Eigen::Index>(P), 1, g, 1.0).col(0);
    raw.x_test = gaussian(static_cast<Eigen::Index>(P + 2), 1, g, std::sqrt(0.3)).col(0);
    const auto hat = build_hat_dataset(raw, s);
    const auto geom = build_posterior_geometry(hat, beta);
    const auto exact = eval_integrals(geom, hat).flat();
    const auto mc = wick_mc(geom, hat, c.count("wick.n_samples"),
                            r.child("wick-mc-" + std::to_string(i)), r.threads);
    for (std::size_t k = 0; k < exact.size(); ++k) {
      const auto &e = mc.slots[k];
      const bool ok = r.check(std::abs(e.mean - exact[k]) <=
                              3.0 * r.tol * e.se + 1e-9 * (1.0 + std::abs(exact[k])));
      csv.row() << i << P << beta << s.psi << s.eta << labels[k] << exact[k] << e.mean << e.se << ok;
    }
  }
  return finish(r, csv, true);
}

int cmd_evidence(Run &r) {
  const auto &c = r.cfg;
  const auto data = load_data(r);
  const auto s = shape_of(c);
  const auto hat = build_hat_dataset(RawDataset{data.raw.X, data.raw.Y, std::nullopt}, s);
  const int L = static_cast<int>(c.count("network.L"));
  const double N = static_cast<double>(c.count("network.N"));
  const double beta = c.real("temperature.beta");
  const auto ev = std::isinf(beta) ? zero_temp_evidence(hat, L, N, s) : log_evidence(hat, L, N, s, beta);
  r.flagged += ev.flagged;
  Csv csv({"beta", "L", "N", "psi", "eta", "log_Z0", "constant", "kernel", "linear", "nonlinear",
           "leading_kernel", "leading_linear", "leading_nonlinear", "correction", "flagged"});
  csv.row() << beta << L << N << s.psi << s.eta << ev.log_Z0 << ev.constant << ev.kernel << ev.linear
            << ev.nonlinear << ev.leading.kernel << ev.leading.linear << ev.leading.nonlinear
            << ev.correction << ev.flagged;
  r.extra["evidence"] = to_json(ev);
  return finish(r, csv, false);
}

int cmd_posterior(Run &r) {
  const auto &c = r.cfg;
  const auto data = load_data(r);
  if (data.tests.empty())
    throw ConfigError("posterior: no test points");
  const auto s = shape_of(c);
  const auto hat = build_hat_dataset(RawDataset{data.raw.X, data.raw.Y, std::nullopt}, s);
  const int L = static_cast<int>(c.count("network.L"));
  const double N = static_cast<double>(c.count("network.N"));
  const double beta = c.real("temperature.beta");
  const auto base = build_posterior_geometry(hat, beta);
  Csv csv({"point", "mean", "mean_order0", "mean_order1", "variance", "variance_order0",
           "variance_order1", "kappa3", "kappa4", "correction", "flagged"});
  for (std::size_t i = 0; i < data.tests.size(); ++i) {
    const Vec xh = embed(data.tests[i], s, hat.N0());
    const auto g = geometry_for_test(base, hat, xh);
    const auto pc = cumulants_from(g, eval_integrals(g, hat), L, N, s);
    r.flagged += pc.flagged;
    csv.row() << i << pc.mean() << pc.mean0 << pc.mean1 << pc.variance() << pc.var0 << pc.var1
              << pc.kappa3 << pc.kappa4 << pc.correction << pc.flagged;
  }
  return finish(r, csv, false);
}

PowerLawSpec powerlaw_spec(Run &r) {
  const auto &c = r.cfg;
  PowerLawSpec sp;
  sp.P = c.count("powerlaw.P");
  sp.N0 = c.count("powerlaw.N0");
  sp.alpha = c.real("powerlaw.alpha");
  sp.k = c.count("powerlaw.k");
  sp.sigma_eps2 = c.real("powerlaw.noise_scale") * std::pow(static_cast<double>(sp.P), 1.0 - sp.alpha);
  sp.haar_U = c.boolean("powerlaw.haar_U");
  sp.seed = r.child("powerlaw");
  sp.validate();
  return sp;
}

int cmd_powerlaw_sweep(Run &r) {
  const auto &c = r.cfg;
  const auto sp = powerlaw_spec(r);
  const auto data = generate_powerlaw(sp);
  const double P = static_cast<double>(sp.P);
  std::vector<double> Bs;
  for (double e : c.reals("powerlaw.B_exp_list"))
    Bs.push_back(std::pow(P, e));
  const auto rep = benign_overfit_report(data, c.reals("powerlaw.LN_list"), Bs, shape_of(c),
                                         c.count("powerlaw.n_test"),
                                         static_cast<int>(c.count("powerlaw.L")));
  r.seeds["test-points"] = rep.test_seed;
  Csv csv({"LN", "B", "logP_B", "log_Z0", "kernel", "linear", "nonlinear", "evidence_flagged",
           "gen_error", "gen_se", "posterior_flagged", "regime", "regime_value", "gen_prediction"});
  std::map<double, std::pair<double, double>> best; // LN → (B, log Z)
  for (const auto &row : rep.rows) {
    r.flagged += row.evidence.flagged || row.posterior_flagged;
    auto &b = best[row.LN];
    if (b.first == 0.0 || row.evidence.log_Z0 > b.second)
      b = {row.B, row.evidence.log_Z0};
    csv.row() << row.LN << row.B << std::log(row.B) / std::log(P) << row.evidence.log_Z0
              << row.evidence.kernel << row.evidence.linear << row.evidence.nonlinear
              << row.evidence.flagged << row.gen_error.mean << row.gen_error.se
              << row.posterior_flagged << to_string(row.regime.regime) << row.regime.value()
              << row.gen_prediction.value;
  }
  json arg = json::array();
  for (const auto &[ln, b] : best)
    arg.push_back({{"LN", ln}, {"B", b.first}, {"log_Z0", b.second}});
  r.extra["evidence_argmax"] = arg;
  r.extra["spec"] = to_json(sp);
  return finish(r, csv, false);
}

int cmd_phase_diagram(Run &r) {
  const auto &c = r.cfg;
  const double P = static_cast<double>(c.count("phase.P"));
  const double a = c.real("phase.alpha");
  const double LN = c.real("phase.LN"), cc = c.real("phase.c");
  PowerLawSpec sp;
  sp.P = c.count("phase.P");
  sp.alpha = a;
  sp.sigma_eps2 = c.real("phase.sigma_eps2");
  Csv csv({"gamma", "delta", "k", "B", "regime", "leading", "depth_coefficient", "value", "valid"});
  for (double gm : c.reals("phase.gamma_list"))
    for (double de : c.reals("phase.delta_list")) {
      sp.k = static_cast<std::size_t>(std::max(1.0, std::round(std::pow(P, gm))));
      const double B = std::pow(P, de);
      const auto rep = regime_log_evidence(sp, B, LN, cc, false);
      const bool valid = gm < 1.0 / a && (cc == 0.0 || a < 2.0) && a > 1.0;
      csv.row() << gm << de << sp.k << B << to_string(rep.regime) << rep.leading
                << rep.depth_coefficient << rep.value() << valid;
    }
  return finish(r, csv, false);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Shaped-network evidence, posterior and validation runner"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 0;
  double tol_scale = 0.0;
  app.add_option("--config", config_path, "INI config, or a JSON sidecar to reproduce a run");
  app.add_option("--set", overrides, "override, section.key=value (repeatable)");
  auto *seed_opt = app.add_option("--seed", seed, "global seed");
  auto *out_opt = app.add_option("--out-dir", out_dir, "output directory");
  auto *thr_opt = app.add_option("--threads", threads, "worker threads (0 = hardware)");
  auto *tol_opt = app.add_option("--tolerance-scale", tol_scale, "multiplies all SE thresholds");

  struct Command {
    const char *name, *help;
    int (*fn)(Run &);
  };
  const std::vector<Command> commands = {
      {"validate-prior", "first-order prior Laplace transform vs network Monte Carlo", cmd_validate_prior},
      {"validate-selfloop", "self-loop expectations vs birth-chain Monte Carlo", cmd_validate_selfloop},
      {"validate-graph", "graph-process overlap moments vs network Monte Carlo", cmd_validate_graph},
      {"validate-wick", "exact Gaussian integrals vs Monte Carlo", cmd_validate_wick},
      {"evidence", "log evidence and its decomposition", cmd_evidence},
      {"posterior", "posterior mean and variance at the test points", cmd_posterior},
      {"powerlaw-sweep", "evidence and error over (B, L/N) on power-law data", cmd_powerlaw_sweep},
      {"phase-diagram", "asymptotic evidence regimes over (gamma, delta)", cmd_phase_diagram}};
  std::vector<CLI::App *> subs;
  for (const auto &c : commands)
    subs.push_back(app.add_subcommand(c.name, c.help)->fallthrough());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  Run run;
  try {
    run.cfg = config_path.empty() ? ExperimentConfig() : ExperimentConfig::load(config_path);
    for (const auto &o : overrides)
      run.cfg.apply_override(o);
    if (*seed_opt)
      run.cfg.set("run.seed", std::to_string(seed));
    if (*out_opt)
      run.cfg.set("run.out_dir", out_dir);
    if (*thr_opt)
      run.cfg.set("run.threads", std::to_string(threads));
    if (*tol_opt)
      run.cfg.set("run.tolerance_scale", format_real(tol_scale));
    run.cfg.validate();
    run.seed = run.cfg.count("run.seed");
    run.threads = static_cast<int>(run.cfg.integer("run.threads"));
    run.tol = run.cfg.real("run.tolerance_scale");
  } catch (const Error &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed())
      continue;
    run.command = commands[i].name;
    try {
      return commands[i].fn(run);
    } catch (const Error &e) {
      std::cerr << run.command << ": " << e.what() << '\n';
      return kExitConfig;
    }
  }
  return kExitConfig;
}
