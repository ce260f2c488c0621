#pragma once

// Brute-force references: Monte Carlo for the complex-mean Gaussian integrals,
// Metropolis sampling of small-network posteriors, and exact moment recursions
// for linear networks.

#include "shapenet/core.hpp"
#include "shapenet/partition.hpp"
#include "shapenet/rng.hpp"
#include "shapenet/shaped_network.hpp"

#include <array>
#include <map>
#include <vector>

namespace shapenet {

struct OracleConfig {
  std::size_t n_samples = 1'000'000;
  std::uint64_t seed = 0;
  // Metropolis
  int chains = 4;
  std::size_t iterations = 400'000; // per chain, after burn-in
  std::size_t burn_in = 100'000;
  std::size_t thin = 20;
  double step_size = 0.05; // initial, adapted during burn-in
  double target_accept = 0.25;
  double rhat_limit = 1.1;
  int threads = 1;
  double se_multiplier = 3.0;
};

struct WickMC {
  std::vector<Estimate> slots; // same order as IntegralTable::flat()
  std::vector<Estimate> imag;  // component that must vanish
};

namespace detail {

// Integrand values at a coefficient vector λ on the spanning set with Gram G.
inline std::array<cplx, 5> integrands(const Mat &G, const Mat &G2, const Mat &G3, const Vec &D,
                                      const CVec &lam) {
  const CVec y = rmul(G, lam);
  const CVec y3 = rmul(G3, lam);
  std::array<cplx, 5> r{};
  r[0] = (lam.transpose() * y3)(0);
  r[1] = (y.transpose() * D.cast<cplx>().cwiseProduct(lam))(0);
  cplx s4 = 0.0;
  for (Eigen::Index j = 0; j < lam.size(); ++j)
    s4 += lam(j) * y(j) * y(j) * y(j);
  r[2] = s4;
  const CVec w = lam.cwiseProduct(y);
  r[3] = (w.transpose() * rmul(G2, w))(0);
  const cplx q = (lam.transpose() * y)(0);
  r[4] = q * q;
  return r;
}

} // namespace detail

// Samples u ~ N(0, M_β), sets t = u + iX̂_β†θ̂*, and evaluates each integrand at
// the shifted coefficients (t − τX̂_β†x̂, τ) for five τ nodes; the exact
// interpolating quartic gives per-sample τ coefficients, which are divided by
// the packing factors of IntegralTable.
inline WickMC wick_mc(const PosteriorGeometry &geom, const HatDataset &hat, std::size_t n_samples,
                      std::uint64_t seed, int threads = 1) {
  require(n_samples >= 2, "wick_mc: n_samples >= 2");
  const auto P = static_cast<Eigen::Index>(hat.P());
  const bool test = geom.has_test;
  const Eigen::Index n = P + (test ? 1 : 0);
  Mat G = Mat::Zero(n, n);
  G.topLeftCorner(P, P) = hat.G;
  Vec D = Vec::Zero(n);
  D.head(P) = geom.Mhat;
  if (test) {
    G.block(0, P, P, 1) = geom.k;
    G.block(P, 0, 1, P) = geom.k.transpose();
    G(P, P) = geom.xnorm2;
    D(P) = geom.mhat_test;
  }
  const Mat G2 = G.array().square().matrix();
  const Mat G3 = G.array().cube().matrix();
  const Mat A = detail::psd_factor(geom.M);

  constexpr std::array<double, 5> nodes{-2.0, -1.0, 0.0, 1.0, 2.0};
  Mat Vd(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      Vd(i, j) = std::pow(nodes[static_cast<std::size_t>(i)], j);
  const Mat Vinv = Vd.inverse();

  const std::array<std::array<cplx, 5>, 5> fac{{{cplx(1), cplx(0, 2), cplx(1), 0, 0},
                                                {cplx(1), cplx(0, 1), cplx(1), 0, 0},
                                                {cplx(1), cplx(0, 1), cplx(3), cplx(0, 1), cplx(1)},
                                                {cplx(1), cplx(0, 2), cplx(1), cplx(0, 2), cplx(1)},
                                                {cplx(1), cplx(0, 4), cplx(2), cplx(0, 4), cplx(1)}}};
  const std::array<int, 5> deg{2, 2, 4, 4, 4};
  constexpr int kSlots = 21;

  auto blocks = run_replicas(seed, n_samples, 2 * kSlots, threads,
                             [&](Engine &g, std::size_t, BlockSums &b) {
                               Normal nrm;
                               Vec z(P);
                               for (Eigen::Index i = 0; i < P; ++i)
                                 z(i) = nrm(g);
                               const Vec u = A * z;
                               std::array<std::array<cplx, 5>, 5> val{};
                               for (int node = 0; node < (test ? 5 : 1); ++node) {
                                 const double tau = test ? nodes[static_cast<std::size_t>(node)] : 0.0;
                                 CVec lam(n);
                                 for (Eigen::Index i = 0; i < P; ++i)
                                   lam(i) = cplx(u(i) - (test ? tau * geom.a(i) : 0.0),
                                                 geom.theta_proj(i));
                                 if (test)
                                   lam(P) = tau;
                                 const auto r = detail::integrands(G, G2, G3, D, lam);
                                 for (int j = 0; j < 5; ++j)
                                   val[static_cast<std::size_t>(j)][static_cast<std::size_t>(node)] =
                                       r[static_cast<std::size_t>(j)];
                               }
                               std::size_t slot = 0;
                               for (int j = 0; j < 5; ++j) {
                                 const auto J = static_cast<std::size_t>(j);
                                 for (int p = 0; p <= deg[J]; ++p) {
                                   cplx coef = 0.0;
                                   if (test) {
                                     for (int node = 0; node < 5; ++node)
                                       coef += Vinv(p, node) * val[J][static_cast<std::size_t>(node)];
                                   } else {
                                     coef = p == 0 ? val[J][0] : cplx(0.0);
                                   }
                                   const cplx packed = coef / fac[J][static_cast<std::size_t>(p)];
                                   b.add(slot, packed.real());
                                   b.add(kSlots + slot, packed.imag());
                                   ++slot;
                                 }
                               }
                             });
  WickMC out;
  for (std::size_t s = 0; s < kSlots; ++s) {
    out.slots.push_back(jackknife_mean(blocks, s));
    out.imag.push_back(jackknife_mean(blocks, kSlots + s));
  }
  return out;
}

struct McmcResult {
  Estimate mean;     // E[f(x_test)]
  Estimate variance; // Var[f(x_test)]
  double ess = 0.0;
  double rhat = 0.0;
  double accept_rate = 0.0;
  std::size_t draws = 0;
};

namespace detail {

// Effective sample size of one series by Geyer's initial positive sequence.
inline double ess_single(const std::vector<double> &x) {
  const std::size_t n = x.size();
  if (n < 4)
    return static_cast<double>(n);
  double m = 0.0;
  for (double v : x)
    m += v;
  m /= static_cast<double>(n);
  double c0 = 0.0;
  for (double v : x)
    c0 += (v - m) * (v - m);
  c0 /= static_cast<double>(n);
  if (c0 <= 0.0)
    return static_cast<double>(n);
  auto acf = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i)
      s += (x[i] - m) * (x[i + lag] - m);
    return s / static_cast<double>(n) / c0;
  };
  double tau = -1.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = acf(2 * k) + acf(2 * k + 1);
    if (pair <= 0.0)
      break;
    tau += 2.0 * pair;
  }
  return static_cast<double>(n) / std::max(tau, 1.0);
}

// Split-chain potential scale reduction.
inline double split_rhat(const std::vector<std::vector<double>> &chains) {
  std::vector<std::vector<double>> halves;
  for (const auto &c : chains) {
    const std::size_t h = c.size() / 2;
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    halves.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(h),
                        c.begin() + static_cast<std::ptrdiff_t>(2 * h));
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves[0].size());
  std::vector<double> means, vars;
  for (const auto &c : halves) {
    double mu = 0.0;
    for (double v : c)
      mu += v;
    mu /= n;
    double s = 0.0;
    for (double v : c)
      s += (v - mu) * (v - mu);
    means.push_back(mu);
    vars.push_back(s / (n - 1.0));
  }
  double gm = 0.0;
  for (double v : means)
    gm += v / m;
  double Bv = 0.0, W = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    Bv += sqr(means[i] - gm) * n / (m - 1.0);
    W += vars[i] / m;
  }
  if (W <= 0.0)
    return 1.0;
  const double var_plus = (n - 1.0) / n * W + Bv / n;
  return std::sqrt(var_plus / W);
}

inline double network_output(const std::vector<Mat> &W, const Vec &x, double psi, int L) {
  Vec h = x;
  for (int l = 0; l < L; ++l) {
    h = W[static_cast<std::size_t>(l)] * h / std::sqrt(static_cast<double>(h.size()));
    if (psi != 0.0)
      h = shaped_activation(h, psi, L);
  }
  return (W.back() * h)(0) / std::sqrt(static_cast<double>(h.size()));
}

} // namespace detail

// Random-walk Metropolis over all weights of the network, targeting
// prior(θ)·exp(−(β/2)Σ_μ(y_μ − f(x_μ;θ))²). Chains start from independent prior
// draws; the step size is adapted during burn-in only.
inline McmcResult posterior_mcmc_small(const NetworkConfig &cfg, const RawDataset &raw, double beta,
                                       const Vec &x_test, const OracleConfig &oc) {
  cfg.validate();
  require(beta >= 0.0 && std::isfinite(beta), "posterior_mcmc_small: beta must be finite and >= 0");
  if (static_cast<std::size_t>(raw.X.rows()) != cfg.N0 ||
      static_cast<std::size_t>(x_test.size()) != cfg.N0)
    throw ShapeMismatch("posterior_mcmc_small: input length differs from N0");
  std::size_t n_params = 0;
  for (int l = 1; l <= cfg.L() + 1; ++l)
    n_params += (l == cfg.L() + 1 ? 1 : cfg.width(l)) * cfg.width(l - 1);
  if (n_params > 500)
    throw InvalidArgument("posterior_mcmc_small: more than 500 parameters");
  require(oc.chains >= 2, "posterior_mcmc_small: need at least two chains");
  require(oc.thin >= 1 && oc.iterations >= 4 * oc.thin, "posterior_mcmc_small: too few iterations");

  const int L = cfg.L();
  const double s2 = cfg.sigma2();
  const auto P = raw.X.cols();

  struct ChainOut {
    std::vector<double> f;
    double accept = 0.0;
  };
  std::vector<ChainOut> outs(static_cast<std::size_t>(oc.chains));

  auto run_chain = [&](int c) {
    Engine g(child_seed(oc.seed, static_cast<std::uint64_t>(c)));
    Normal nrm;
    std::vector<Mat> W = sample_prior(cfg, g).weights;
    auto log_target = [&](const std::vector<Mat> &w) {
      double lp = 0.0;
      for (const auto &m : w)
        lp -= 0.5 * m.squaredNorm() / s2;
      if (beta > 0.0) {
        double sse = 0.0;
        for (Eigen::Index m = 0; m < P; ++m)
          sse += sqr(raw.Y(m) - detail::network_output(w, raw.X.col(m), cfg.psi, L));
        lp -= 0.5 * beta * sse;
      }
      return lp;
    };
    double cur = log_target(W);
    double step = oc.step_size;
    std::vector<Mat> prop = W;
    std::size_t acc_window = 0, acc_total = 0;
    ChainOut &out = outs[static_cast<std::size_t>(c)];
    const std::size_t total = oc.burn_in + oc.iterations;
    for (std::size_t it = 0; it < total; ++it) {
      for (std::size_t l = 0; l < W.size(); ++l)
        for (Eigen::Index i = 0; i < W[l].size(); ++i)
          prop[l](i) = W[l](i) + step * nrm(g);
      const double np = log_target(prop);
      if (std::log(uniform01(g)) < np - cur) {
        std::swap(W, prop);
        cur = np;
        ++acc_window;
        if (it >= oc.burn_in)
          ++acc_total;
      }
      if (it < oc.burn_in && (it + 1) % 1000 == 0) {
        const double rate = static_cast<double>(acc_window) / 1000.0;
        step *= std::exp(rate - oc.target_accept);
        acc_window = 0;
      }
      if (it >= oc.burn_in && (it - oc.burn_in) % oc.thin == 0)
        out.f.push_back(detail::network_output(W, x_test, cfg.psi, L));
    }
    out.accept = static_cast<double>(acc_total) / static_cast<double>(oc.iterations);
  };

  const int nt = std::min(resolve_threads(oc.threads), oc.chains);
  if (nt <= 1) {
    for (int c = 0; c < oc.chains; ++c)
      run_chain(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&] {
        for (int c = next++; c < oc.chains; c = next++) {
          try {
            run_chain(c);
          } catch (...) {
            std::lock_guard<std::mutex> lk(mu);
            if (!err)
              err = std::current_exception();
          }
        }
      });
    for (auto &t : pool)
      t.join();
    if (err)
      std::rethrow_exception(err);
  }

  std::vector<std::vector<double>> f, f2;
  double ess_f = 0.0, ess_f2 = 0.0, acc = 0.0;
  std::size_t draws = 0;
  for (auto &o : outs) {
    std::vector<double> sq(o.f.size());
    for (std::size_t i = 0; i < o.f.size(); ++i)
      sq[i] = o.f[i] * o.f[i];
    ess_f += detail::ess_single(o.f);
    ess_f2 += detail::ess_single(sq);
    acc += o.accept / oc.chains;
    draws += o.f.size();
    f.push_back(o.f);
    f2.push_back(std::move(sq));
  }
  McmcResult r;
  r.rhat = std::max(detail::split_rhat(f), detail::split_rhat(f2));
  r.ess = std::min(ess_f, ess_f2);
  r.accept_rate = acc;
  r.draws = draws;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t c = 0; c < f.size(); ++c)
    for (std::size_t i = 0; i < f[c].size(); ++i) {
      m1 += f[c][i];
      m2 += f2[c][i];
    }
  m1 /= static_cast<double>(draws);
  m2 /= static_cast<double>(draws);
  double v1 = 0.0, v2 = 0.0, cov = 0.0;
  for (std::size_t c = 0; c < f.size(); ++c)
    for (std::size_t i = 0; i < f[c].size(); ++i) {
      v1 += sqr(f[c][i] - m1);
      v2 += sqr(f2[c][i] - m2);
      cov += (f[c][i] - m1) * (f2[c][i] - m2);
    }
  const double nd = static_cast<double>(draws);
  v1 /= nd;
  v2 /= nd;
  cov /= nd;
  const double var = m2 - m1 * m1;
  r.mean = {m1, std::sqrt(v1 / ess_f), draws};
  // delta method for m2 − m1², using the smaller effective size
  const double dvar = v2 + 4.0 * m1 * m1 * v1 - 4.0 * m1 * cov;
  r.variance = {var, std::sqrt(std::max(0.0, dvar) / r.ess), draws};
  if (r.rhat > oc.rhat_limit)
    throw NonConvergence("posterior_mcmc_small: split R-hat " + std::to_string(r.rhat) +
                         " exceeds limit");
  return r;
}

// Exact E[∏_p K_L(μ_p, ν_p)] for q ≤ 2 in a linear network, K_ℓ the layer-ℓ
// Gram divided by width (no readout factor). Uses E[K_ℓ|K] = σ²K and
// E[K_ℓ(a,b)K_ℓ(c,d)|K] = σ⁴(K_ab K_cd + (K_ac K_bd + K_ad K_bc)/N_ℓ).
inline double linear_exact_moments(const NetworkConfig &cfg, const Mat &X,
                                   const std::vector<int> &mu, const std::vector<int> &nu) {
  cfg.validate();
  if (cfg.psi != 0.0)
    throw InvalidArgument("linear_exact_moments: requires psi = 0");
  if (mu.size() != nu.size() || mu.empty() || mu.size() > 2)
    throw InvalidArgument("linear_exact_moments: order must be 1 or 2");
  if (static_cast<std::size_t>(X.rows()) != cfg.N0)
    throw ShapeMismatch("linear_exact_moments: X rows differ from N0");
  for (std::size_t p = 0; p < mu.size(); ++p)
    if (mu[p] < 0 || nu[p] < 0 || mu[p] >= X.cols() || nu[p] >= X.cols())
      throw InvalidArgument("linear_exact_moments: index out of range");
  const Mat K0 = X.transpose() * X / static_cast<double>(cfg.N0);
  const double s2 = cfg.sigma2();
  const int L = cfg.L();
  if (mu.size() == 1)
    return std::pow(s2, L) * K0(mu[0], nu[0]);

  // second moments over the distinct points involved
  std::vector<int> pts;
  for (int v : {mu[0], nu[0], mu[1], nu[1]})
    if (std::find(pts.begin(), pts.end(), v) == pts.end())
      pts.push_back(v);
  const auto m = pts.size();
  auto idx = [&](std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return ((a * m + b) * m + c) * m + d;
  };
  std::vector<double> F(m * m * m * m), Fn(F.size());
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t c = 0; c < m; ++c)
        for (std::size_t d = 0; d < m; ++d)
          F[idx(a, b, c, d)] = K0(pts[a], pts[b]) * K0(pts[c], pts[d]);
  for (int l = 1; l <= L; ++l) {
    const double invN = 1.0 / static_cast<double>(cfg.width(l));
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        for (std::size_t c = 0; c < m; ++c)
          for (std::size_t d = 0; d < m; ++d)
            Fn[idx(a, b, c, d)] =
                s2 * s2 * (F[idx(a, b, c, d)] + invN * (F[idx(a, c, b, d)] + F[idx(a, d, b, c)]));
    std::swap(F, Fn);
  }
  auto pos = [&](int v) {
    return static_cast<std::size_t>(std::find(pts.begin(), pts.end(), v) - pts.begin());
  };
  return F[idx(pos(mu[0]), pos(nu[0]), pos(mu[1]), pos(nu[1]))];
}

} // namespace shapenet
