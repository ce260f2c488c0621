#pragma once

// Self-loop process statistics: g-functions, closed-form expectations over the
// single-vertex birth chain, a direct simulation of that chain, and the
// first-order prior Laplace transform in hat variables.

#include "shapenet/core.hpp"
#include "shapenet/feature_map.hpp"
#include "shapenet/rng.hpp"

#include <functional>
#include <limits>

namespace shapenet {

inline double g1(double eta) {
  if (std::abs(eta) < 1e-2) {
    const double e2 = eta * eta;
    return 0.5 * (1.0 + eta * (1.0 / 3.0 - e2 / 45.0 + 2.0 * e2 * e2 / 945.0));
  }
  return 0.5 * (1.0 + 1.0 / std::tanh(eta) - 1.0 / eta);
}

inline double g2(double eta) {
  // the closed form cancels like eps/η² near 0
  if (std::abs(eta) < 5e-2) {
    const double e2 = eta * eta;
    return 1.0 / 6.0 - e2 / 45.0 + e2 * e2 / 315.0 - 2.0 * e2 * e2 * e2 / 4725.0;
  }
  const double sh = std::sinh(eta);
  return 0.25 * (1.0 / (std::tanh(eta) * eta) - 1.0 / (sh * sh));
}

// (e^{2η} − e^{2ητ})/(e^{2η} − 1), equal to 1 − τ at η = 0
inline double g3(double eta, double tau) {
  if (eta == 0.0)
    return 1.0 - tau;
  const double d = std::expm1(2.0 * eta);
  return (d - std::expm1(2.0 * eta * tau)) / d;
}

// g₃(1 − g₃) = g₃(e^{2ητ} − 1)/(e^{2η} − 1); integrates to g₂ over [0,1]
inline double g4(double eta, double tau) {
  const double a = g3(eta, tau);
  return a * (1.0 - a);
}

inline double c_psi_eta(const ShapeParams &s) {
  const double ph = s.psi_hat();
  return 2.0 * std::exp(-4.0 * s.eta) * ph * ph * (g1(s.eta) - g2(s.eta));
}

// M̂ diagonal entry for a point with ‖x‖²/N₀ = r.
inline double mhat_entry(const ShapeParams &s, double r) {
  const double pm = s.psi_hat_point(r);
  const double d = 1.0 - 2.0 * pm;
  if (!(d > 0.0))
    throw SingularEmbedding("mhat: 1 - 2 psi_hat_mu <= 0");
  return r / (d * d) * ((1.0 + pm) * g1(s.eta) - 3.0 * pm * g2(s.eta));
}

// Expectations over one vertex's self-loop chain, for norm ratio r and layer fraction tau.
struct SelfLoopPoint {
  double t00 = 0.0, t11a = 0.0, t11b = 0.0, t20 = 0.0;
};

inline SelfLoopPoint selfloop_closed_form(const ShapeParams &s, double r, double tau = 0.5) {
  const double ph = s.psi_hat();
  const double pm = ph * r;
  const double d = 1.0 - 2.0 * pm;
  if (!(d > 0.0))
    throw SingularEmbedding("self-loop expectations: 1 - 2 psi_hat_mu <= 0");
  const double e = std::exp(-std::abs(s.psi));
  SelfLoopPoint p;
  p.t00 = e / std::sqrt(d);
  p.t11a = ph * e * std::pow(d, -1.5) * g3(s.eta, tau);
  p.t11b = ph * e * std::pow(d, -1.5) * g1(s.eta);
  p.t20 = pm * e * std::pow(d, -2.5) * ((1.0 + pm) * g1(s.eta) - 3.0 * pm * g2(s.eta));
  return p;
}

struct SelfLoopStats {
  ShapeParams shape;
  double g1 = 0.0, g2 = 0.0;
  double c_psi_eta = 0.0;
  Vec Mhat_diag;
  double mhat_test = std::numeric_limits<double>::quiet_NaN();
  Vec t00, t11b, t20;
  Vec norm_ratio;

  double g3(double tau) const { return shapenet::g3(shape.eta, tau); }
  double g4(double tau) const { return shapenet::g4(shape.eta, tau); }
  Vec t11a(double tau) const {
    Vec v(norm_ratio.size());
    for (Eigen::Index m = 0; m < v.size(); ++m)
      v(m) = selfloop_closed_form(shape, norm_ratio(m), tau).t11a;
    return v;
  }
};

inline SelfLoopStats selfloop_expectations(const HatDataset &hat, const ShapeParams &shape) {
  SelfLoopStats st;
  st.shape = shape;
  st.g1 = g1(shape.eta);
  st.g2 = g2(shape.eta);
  st.c_psi_eta = c_psi_eta(shape);
  const auto P = static_cast<Eigen::Index>(hat.P());
  st.norm_ratio = hat.raw_norm2;
  st.Mhat_diag.resize(P);
  st.t00.resize(P);
  st.t11b.resize(P);
  st.t20.resize(P);
  for (Eigen::Index m = 0; m < P; ++m) {
    const double r = hat.raw_norm2(m);
    auto p = selfloop_closed_form(shape, r);
    st.t00(m) = p.t00;
    st.t11b(m) = p.t11b;
    st.t20(m) = p.t20;
    st.Mhat_diag(m) = mhat_entry(shape, r);
  }
  if (hat.xhat_test)
    st.mhat_test = mhat_entry(shape, hat.test_raw_norm2);
  return st;
}

struct SelfLoopMC {
  Estimate t00, t11a, t11b, t20;
};

// Simulates s^{(ℓ)} for ℓ = L..0 with s^{(L)} = 0 and birth probability
// |ψ|(1 + 2s)/L per layer, skipping between births with geometric waiting times.
inline SelfLoopMC selfloop_mc(const ShapeParams &s, double norm_ratio, int L, std::size_t n_samples,
                              std::uint64_t seed, double tau = 0.5, int threads = 1) {
  require(L >= 1, "selfloop_mc: L >= 1");
  require(n_samples >= 1, "selfloop_mc: n_samples >= 1");
  const double a = std::abs(s.psi);
  const double sigma2 = 1.0 + 2.0 * s.eta / L;
  const double base = sigma2 * norm_ratio;
  const double lam = 2.0 * (s.eta + a) / L;
  const long lt = std::lround(tau * L);
  const bool neg = s.psi < 0.0;

  auto blocks = run_replicas(seed, n_samples, 4, threads, [&](Engine &g, std::size_t, BlockSums &b) {
    long cur = L;
    long sv = 0;
    double S1 = 0.0, S2 = 0.0;
    long s_lt = 0;
    // layers in [lo, hi] hold the value sv
    auto credit = [&](long lo, long hi) {
      lo = std::max(lo, 1L);
      if (hi < lo)
        return;
      const double cnt = static_cast<double>(hi - lo + 1);
      S1 += cnt * sv;
      S2 += cnt * static_cast<double>(sv) * sv;
      if (lt >= lo && lt <= hi)
        s_lt = sv;
    };
    while (cur > 0) {
      const double p = a * (1.0 + 2.0 * sv) / L;
      if (p > 1.0)
        throw ProbabilityOverflow("selfloop_mc: birth probability exceeds 1");
      long k;
      if (p <= 0.0) {
        k = cur + 1;
      } else if (p >= 1.0) {
        k = 1;
      } else {
        const double steps = std::floor(std::log(uniform01(g)) / std::log1p(-p));
        k = steps >= static_cast<double>(cur) ? cur + 1 : 1 + static_cast<long>(steps);
      }
      if (k > cur) {
        credit(0, cur - 1);
        break;
      }
      credit(cur - k + 1, cur - 1);
      ++sv;
      cur -= k;
      credit(cur, cur);
    }
    const double sign = (neg && (sv & 1)) ? -1.0 : 1.0;
    const double c = sign * std::exp(lam * S1);
    const double rp = std::pow(base, static_cast<double>(sv));
    const double rm = sv > 0 ? std::pow(base, static_cast<double>(sv - 1)) : 0.0;
    b.add(0, c * rp);
    b.add(1, c * rm * static_cast<double>(s_lt));
    b.add(2, c * rm * S1 / L);
    b.add(3, c * rp * S2 / L);
  });
  return {jackknife_mean(blocks, 0), jackknife_mean(blocks, 1), jackknife_mean(blocks, 2),
          jackknife_mean(blocks, 3)};
}

// First-order bracket of the prior Laplace transform for coefficients z over
// points with Gram G and reweighting diagonal D, with L/N = eps.
inline double prior_bracket(const Mat &G, const Vec &D, const Vec &z, const ShapeParams &s) {
  const double ph = s.psi_hat();
  const double gg1 = g1(s.eta), gg2 = g2(s.eta);
  const double e4 = std::exp(-4.0 * s.eta), e2 = std::exp(-2.0 * s.eta);
  const Vec Gz = G * z;
  const double nrm = z.dot(Gz);
  const Mat G3 = G.array().cube().matrix();
  const Mat G2 = G.array().square().matrix();
  const double cube = z.dot(G3 * z);
  const double mix = Gz.dot(D.cwiseProduct(z));
  double tri = 0.0;
  for (Eigen::Index m = 0; m < z.size(); ++m)
    tri += z(m) * Gz(m) * Gz(m) * Gz(m);
  const Vec w = z.cwiseProduct(Gz);
  const double swap = w.dot(G2 * w);
  return -e4 * ph * ph * (gg1 - gg2) * cube - 2.0 * ph * mix + 0.5 * e2 * ph * gg1 * tri +
         0.25 * nrm * nrm + e4 * ph * ph * (gg1 - gg2) * swap;
}

// E[exp(−(σ²/2N)‖X^{(L)}t + x^{(L)}τ‖²)] to first order in L/N.
inline double prior_laplace_firstorder(const HatDataset &hat, const SelfLoopStats &st, const Vec &t,
                                       double tau, int L, double N) {
  if (static_cast<std::size_t>(t.size()) != hat.P())
    throw ShapeMismatch("prior_laplace_firstorder: t length differs from P");
  Mat G = hat.G;
  Vec D = st.Mhat_diag;
  Vec z = t;
  if (tau != 0.0) {
    const Vec &x = hat.test();
    const auto P = G.rows();
    G.conservativeResize(P + 1, P + 1);
    G.block(0, P, P, 1) = hat.g_test;
    G.block(P, 0, 1, P) = hat.g_test.transpose();
    G(P, P) = x.squaredNorm();
    D.conservativeResize(P + 1);
    D(P) = st.mhat_test;
    z.conservativeResize(P + 1);
    z(P) = tau;
  }
  const double nrm = z.dot(G * z);
  if (nrm == 0.0)
    return 1.0;
  const double eps = static_cast<double>(L) / N;
  return std::exp(-0.5 * nrm) * (1.0 + eps * prior_bracket(G, D, z, st.shape));
}

} // namespace shapenet
