#pragma once

// kth-principal power-law data in hat space, exact reference quantities along
// the temperature axis, the leading-order regime formulas, and sweeps over
// (L/N, B) with exact evidence and test-point generalization error.

#include "shapenet/core.hpp"
#include "shapenet/feature_map.hpp"
#include "shapenet/partition.hpp"
#include "shapenet/rng.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace shapenet {

struct PowerLawSpec {
  std::size_t P = 64;
  std::size_t N0 = 128;
  double alpha = 1.5;
  std::size_t k = 1;
  double sigma_eps2 = 0.0;
  std::uint64_t seed = 0;
  bool haar_U = true; // false: u_j are the first P canonical basis vectors

  void validate() const {
    if (P < 1 || P >= N0)
      throw InvalidArgument("power law: need 1 <= P < N0");
    if (!(alpha > 0.0))
      throw InvalidArgument("power law: alpha must be positive");
    if (k < 1 || k > P)
      throw InvalidArgument("power law: k must lie in [1, P]");
    if (!(sigma_eps2 >= 0.0))
      throw InvalidArgument("power law: sigma_eps2 must be >= 0");
  }
};

// λ_j ∝ j^{−α}, normalized to Σλ_j = 1.
inline Vec powerlaw_spectrum(std::size_t P, double alpha) {
  Vec l(static_cast<Eigen::Index>(P));
  for (Eigen::Index j = 0; j < l.size(); ++j)
    l(j) = std::pow(static_cast<double>(j + 1), -alpha);
  // sum smallest first
  double s = 0.0;
  for (Eigen::Index j = l.size() - 1; j >= 0; --j)
    s += l(j);
  return l / s;
}

// Haar-distributed n×m matrix with orthonormal columns (QR with sign fix).
inline Mat haar_orthonormal(Eigen::Index n, Eigen::Index m, Engine &g) {
  Normal nrm;
  Mat A(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      A(i, j) = nrm(g);
  Eigen::HouseholderQR<Mat> qr(A);
  Mat Q = qr.householderQ() * Mat::Identity(n, m);
  const Mat R = qr.matrixQR().topLeftCorner(m, m).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < m; ++j)
    if (R(j, j) < 0.0)
      Q.col(j) = -Q.col(j);
  return Q;
}

struct PowerLawData {
  PowerLawSpec spec;
  Spectrum svd; // λ, U, V with X̂ = √P U diag(√λ) Vᵀ
  Vec Y;
  Vec noise;

  Mat xhat() const {
    const double sP = std::sqrt(static_cast<double>(spec.P));
    return sP * svd.U * svd.lambda.cwiseSqrt().asDiagonal() * svd.V.transpose();
  }
  HatDataset hat(const ShapeParams &shape = {}) const {
    return hat_dataset_from_hat(xhat(), Y, shape, svd);
  }
};

inline PowerLawData generate_powerlaw(const PowerLawSpec &spec) {
  spec.validate();
  Engine g(child_seed(spec.seed, "powerlaw"));
  const auto P = static_cast<Eigen::Index>(spec.P);
  const auto N0 = static_cast<Eigen::Index>(spec.N0);
  PowerLawData d;
  d.spec = spec;
  d.svd.lambda = powerlaw_spectrum(spec.P, spec.alpha);
  if (spec.haar_U) {
    d.svd.U = haar_orthonormal(N0, P, g);
  } else {
    d.svd.U = Mat::Identity(N0, P);
  }
  d.svd.V = haar_orthonormal(P, P, g);
  Normal nrm;
  d.noise.resize(P);
  const double se = std::sqrt(spec.sigma_eps2);
  for (Eigen::Index m = 0; m < P; ++m)
    d.noise(m) = se * nrm(g);
  d.Y = std::sqrt(static_cast<double>(P)) * d.svd.V.col(static_cast<Eigen::Index>(spec.k) - 1) +
        d.noise;
  return d;
}

struct TestSample {
  Vec xhat;
  double y = 0.0; // clean target ⟨x̂, u_k⟩/√λ_k
};

// Fresh input with coordinates √λ_j z_j along u_j and an isotropic orthogonal
// part of mean squared norm Pλ_P; the training points have the same law up to
// the finite-sample orthogonality of V.
inline TestSample powerlaw_test_point(const PowerLawData &d, Engine &g) {
  Normal nrm;
  const auto P = static_cast<Eigen::Index>(d.spec.P);
  const auto N0 = static_cast<Eigen::Index>(d.spec.N0);
  Vec z(P);
  for (Eigen::Index j = 0; j < P; ++j)
    z(j) = nrm(g);
  Vec xi(N0);
  for (Eigen::Index i = 0; i < N0; ++i)
    xi(i) = nrm(g);
  xi -= d.svd.U * (d.svd.U.transpose() * xi);
  const double perp_var = static_cast<double>(P) * d.svd.lambda(P - 1);
  xi *= std::sqrt(perp_var / static_cast<double>(N0 - P));
  TestSample t;
  t.xhat = d.svd.U * d.svd.lambda.cwiseSqrt().cwiseProduct(z) + xi;
  t.y = z(static_cast<Eigen::Index>(d.spec.k) - 1);
  return t;
}

// Exact values of the reference quantities at inverse temperature β.
struct AppendixScalings {
  double B = 0.0;
  std::size_t dim_below = 0, dim_above = 0; // eigenvalues of Σ below / above 1/B
  double tr_sigma_below = 0.0;
  double tr_sigma2_below = 0.0;
  double tr_M = 0.0;
  double tr_XdagX = 0.0;
  double tr_XXdagXXt_over_P = 0.0;
  double tr_XdagX_sq = 0.0;
  double tr_log_M = 0.0;
  // label-dependent
  double M_half_Xt_theta = 0.0;     // ‖M^{1/2}X̂ᵀθ̂*‖²
  double Xdag_theta = 0.0;          // ‖X̂_β†θ̂*‖²
  double XXdag_theta = 0.0;         // ‖X̂X̂_β†θ̂*‖²
  double XtXXdag_theta_over_P = 0.0; // ‖X̂ᵀX̂X̂_β†θ̂*‖²/P
  double M_half_XtXXdag_theta = 0.0; // ‖M^{1/2}X̂ᵀX̂X̂_β†θ̂*‖²
};

inline AppendixScalings appendix_scalings(const Spectrum &svd, const Vec &Y, double beta) {
  if (!(beta > 0.0) || std::isinf(beta))
    throw InvalidArgument("appendix_scalings: beta must be finite and positive");
  const double P = static_cast<double>(svd.lambda.size());
  const Vec e = (P * svd.lambda).array() + 1.0 / beta; // eigenvalues of M⁻¹
  if (!(e.maxCoeff() / e.minCoeff() <= 1e12))
    throw IllConditioned("appendix_scalings: condition number exceeds 1e12");
  const Vec yv = svd.V.transpose() * Y;
  const Vec y2 = yv.cwiseAbs2();
  AppendixScalings a;
  a.B = beta * P;
  for (Eigen::Index j = 0; j < svd.lambda.size(); ++j) {
    const double l = svd.lambda(j), pl = P * l, ej = e(j);
    if (l < 1.0 / a.B) {
      ++a.dim_below;
      a.tr_sigma_below += l;
      a.tr_sigma2_below += l * l;
    } else {
      ++a.dim_above;
    }
    a.tr_M += 1.0 / ej;
    a.tr_XdagX += pl / ej;
    a.tr_XXdagXXt_over_P += pl * pl / ej / P;
    a.tr_XdagX_sq += sqr(pl / ej);
    a.tr_log_M -= std::log(ej);
    a.M_half_Xt_theta += y2(j) / ej;
    a.Xdag_theta += y2(j) / (ej * ej);
    a.XXdag_theta += y2(j) * pl / (ej * ej);
    a.XtXXdag_theta_over_P += y2(j) * pl * pl / (ej * ej) / P;
    a.M_half_XtXXdag_theta += y2(j) * pl * pl / (ej * ej * ej);
  }
  return a;
}

inline AppendixScalings appendix_scalings(const HatDataset &hat, double beta) {
  return appendix_scalings(hat.svd, hat.Y, beta);
}

// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double> &x, const std::vector<double> &y) {
  require(x.size() == y.size() && x.size() >= 2, "loglog_slope: need two or more points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

enum class Regime { lowT, highT_strong, highT_weak };

inline std::string to_string(Regime r) {
  switch (r) {
  case Regime::lowT:
    return "lowT";
  case Regime::highT_strong:
    return "highT_strong";
  case Regime::highT_weak:
    return "highT_weak";
  }
  return "?";
}

inline Regime classify_regime(double P, double alpha, double k, double B) {
  if (B > std::pow(P, alpha))
    return Regime::lowT;
  return k < std::pow(B, 1.0 / alpha) ? Regime::highT_strong : Regime::highT_weak;
}

struct RegimeReport {
  Regime regime = Regime::lowT;
  double leading = 0.0;          // L/N = 0 part
  double depth_coefficient = 0.0; // multiplies L/N
  double depth_correction = 0.0;  // depth_coefficient · L/N
  double B = 0.0;
  double k_over_B_root = 0.0;  // k / B^{1/α}
  double B_over_P_alpha = 0.0; // B / P^α
  bool linear = true;

  double value() const { return leading + depth_correction; }
};

// Leading-order log evidence up to the positive constants the formulas omit.
// c = 0 selects the linear-network formulas (label noise allowed), c ≠ 0 the
// nonlinear ones (noiseless labels, 1 < α < 2).
inline RegimeReport regime_log_evidence(const PowerLawSpec &spec, double B, double LN, double c,
                                        bool enforce_validity = true) {
  const double P = static_cast<double>(spec.P), a = spec.alpha, k = static_cast<double>(spec.k);
  const double s2 = spec.sigma_eps2;
  if (!(B > 0.0))
    throw InvalidArgument("regime_log_evidence: B must be positive");
  if (enforce_validity) {
    if (!(a > 1.0))
      throw OutsidePerturbativeRegime("regime formulas need alpha > 1");
    if (k > std::pow(P, 1.0 / a) / std::log(P))
      throw OutsidePerturbativeRegime("regime formulas need k <= P^(1/alpha)/log P");
    if (c == 0.0 && s2 > std::pow(P, 1.0 - a))
      throw OutsidePerturbativeRegime("linear regime formulas need sigma_eps2 <= P^(1-alpha)");
    if (c != 0.0 && (a >= 2.0 || s2 != 0.0))
      throw OutsidePerturbativeRegime("nonlinear regime formulas need alpha < 2 and no label noise");
  }
  RegimeReport r;
  r.B = B;
  r.linear = c == 0.0;
  r.regime = classify_regime(P, a, k, B);
  r.k_over_B_root = k / std::pow(B, 1.0 / a);
  r.B_over_P_alpha = B / std::pow(P, a);
  const double ka = std::pow(k, a), k2a = std::pow(k, 2.0 * a), B2a = std::pow(B, 2.0 / a);
  if (r.linear) {
    switch (r.regime) {
    case Regime::lowT:
      r.leading = (a - 1.0) * P * std::log(P) - s2 * std::pow(P, a) - ka;
      r.depth_coefficient = P * P + s2 * s2 * std::pow(P, 2.0 * a) + k2a;
      break;
    case Regime::highT_strong:
      r.leading = P * std::log(B / P) + s2 * B - ka;
      r.depth_coefficient = B2a + s2 * s2 / (P * P) * std::pow(B, 2.0 + 2.0 / a) + k2a;
      break;
    case Regime::highT_weak:
      r.leading = P * std::log(B / P) + s2 * B - B;
      r.depth_coefficient =
          B2a + s2 * s2 / (P * P) * std::pow(B, 2.0 + 2.0 / a) + std::pow(B, 4.0) / k2a;
      break;
    }
  } else {
    switch (r.regime) {
    case Regime::lowT:
      r.leading = (a - 1.0) * P * std::log(P) - ka;
      r.depth_coefficient = (1.0 + c) * (P * P + k2a) - c * std::pow(P, a);
      break;
    case Regime::highT_strong:
      r.leading = P * std::log(B / P) - ka;
      r.depth_coefficient = (1.0 + c) * (B2a + k2a) - c * B;
      break;
    case Regime::highT_weak:
      r.leading = P * std::log(B / P) - B;
      r.depth_coefficient = (1.0 + c) * (B2a + std::pow(B, 4.0) / k2a) - c * B;
      break;
    }
  }
  r.depth_correction = r.depth_coefficient * LN;
  return r;
}

struct GeneralizationPrediction {
  Regime regime = Regime::lowT;
  double value = 0.0;
  bool order_one = false; // k > B^{1/α}: error does not vanish
};

inline GeneralizationPrediction regime_generalization_error(const PowerLawSpec &spec, double B,
                                                            double LN,
                                                            bool enforce_validity = true) {
  const double P = static_cast<double>(spec.P), a = spec.alpha, k = static_cast<double>(spec.k);
  if (!(B > 0.0))
    throw InvalidArgument("regime_generalization_error: B must be positive");
  if (enforce_validity) {
    if (!(a > 1.0) || k > std::pow(P, 1.0 / a) / std::log(P))
      throw OutsidePerturbativeRegime("generalization formula needs a non-vanishing model");
    if (spec.sigma_eps2 > std::pow(P, 1.0 - a) / std::log(P))
      throw OutsidePerturbativeRegime("generalization formula needs sigma_eps2 <= P^(1-alpha)/log P");
  }
  GeneralizationPrediction g;
  g.regime = classify_regime(P, a, k, B);
  const double f = 1.0 - LN * P;
  switch (g.regime) {
  case Regime::lowT:
    g.value = f * std::pow(P, 1.0 - a);
    break;
  case Regime::highT_strong:
    g.value = f * std::pow(B, -1.0 + 1.0 / a);
    break;
  case Regime::highT_weak:
    g.value = 1.0;
    g.order_one = true;
    break;
  }
  return g;
}

struct BenignRow {
  double LN = 0.0;
  double B = 0.0;
  EvidenceReport evidence;
  Estimate gen_error;
  bool posterior_flagged = false;
  RegimeReport regime;
  GeneralizationPrediction gen_prediction;
};

struct BenignReport {
  std::vector<BenignRow> rows;
  std::uint64_t test_seed = 0;
};

// Exact evidence and test-point generalization error ⟨(f(x) − y)²⟩ =
// (mean − y)² + variance, averaged over n_test fresh points shared by all cells.
inline BenignReport benign_overfit_report(const PowerLawData &data, const std::vector<double> &LN_grid,
                                          const std::vector<double> &B_grid,
                                          const ShapeParams &shape, std::size_t n_test, int L = 1) {
  require(n_test >= 2, "benign_overfit_report: n_test >= 2");
  const HatDataset hat = data.hat(shape);
  BenignReport rep;
  rep.test_seed = child_seed(data.spec.seed, "test-points");
  Engine g(rep.test_seed);
  std::vector<TestSample> tests;
  for (std::size_t i = 0; i < n_test; ++i)
    tests.push_back(powerlaw_test_point(data, g));
  const double P = static_cast<double>(data.spec.P);
  const double c = c_psi_eta(shape);
  for (double B : B_grid) {
    const double beta = B / P;
    PosteriorGeometry base = build_posterior_geometry(hat, beta);
    base.has_test = false;
    const IntegralTable t0 = eval_integrals(base, hat);
    std::vector<IntegralTable> tables;
    std::vector<PosteriorGeometry> geoms;
    for (const auto &ts : tests) {
      geoms.push_back(geometry_for_test(base, hat, ts.xhat));
      tables.push_back(eval_integrals(geoms.back(), hat));
    }
    for (double LN : LN_grid) {
      BenignRow row;
      row.LN = LN;
      row.B = B;
      const double N = LN > 0.0 ? L / LN : inf;
      row.evidence = evidence_from(hat, base, t0, L, N, shape);
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto pc = cumulants_from(geoms[i], tables[i], L, N, shape);
        row.posterior_flagged = row.posterior_flagged || pc.flagged;
        const double e = sqr(pc.mean() - tests[i].y) + pc.variance();
        s += e;
        s2 += e * e;
      }
      const double n = static_cast<double>(tests.size());
      const double mean = s / n;
      row.gen_error = {mean, std::sqrt(std::max(0.0, s2 / n - mean * mean) / (n - 1.0)),
                       tests.size()};
      row.regime = regime_log_evidence(data.spec, B, LN, c, false);
      row.gen_prediction = regime_generalization_error(data.spec, B, LN, false);
      rep.rows.push_back(row);
    }
  }
  return rep;
}

inline nlohmann::json to_json(const PowerLawSpec &s) {
  return {{"P", s.P},         {"N0", s.N0},     {"alpha", s.alpha}, {"k", s.k},
          {"sigma_eps2", s.sigma_eps2}, {"seed", s.seed}, {"haar_U", s.haar_U}};
}

} // namespace shapenet
