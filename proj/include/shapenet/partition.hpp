#pragma once

// First-order partition function Z(x,τ) in hat variables.
//
// After completing the square, every correction is a Gaussian expectation over
// t ~ N(iX̂_β†θ̂* − τX̂_β†x̂, M_β). Writing λ = (t, τ) ∈ ℂ^{P+1} for coefficients
// on the spanning set v = (x̂_1..x̂_P, x̂) with Gram Ĝ, the integrands are
//   I2 = λᵀĜ∘³λ                       I3 = λᵀĜDλ,  D = diag(M̂, m̂)
//   I4 = Σ_j λ_j (Ĝλ)_j³              I5 = Σ_jk Ĝ²_jk λ_jλ_k(Ĝλ)_j(Ĝλ)_k
//   I6 = (λᵀĜλ)²
// (pure-cube convention), and their expectations are polynomials of degree ≤ 4
// in τ obtained from Gaussian moment identities with a complex mean.

#include "shapenet/core.hpp"
#include "shapenet/feature_map.hpp"
#include "shapenet/selfloop.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <vector>

namespace shapenet {

// Polynomial in τ with complex coefficients, degree ≤ 4.
struct Poly {
  std::array<cplx, 5> c{};

  static Poly constant(cplx v) {
    Poly p;
    p.c[0] = v;
    return p;
  }
  cplx operator()(double tau) const {
    cplx r = 0.0, t = 1.0;
    for (const auto &v : c) {
      r += v * t;
      t *= tau;
    }
    return r;
  }
  Poly &operator+=(const Poly &o) {
    for (int i = 0; i < 5; ++i)
      c[i] += o.c[i];
    return *this;
  }
  friend Poly operator+(Poly a, const Poly &b) { return a += b; }
  friend Poly operator*(cplx s, Poly a) {
    for (auto &v : a.c)
      v *= s;
    return a;
  }
  friend Poly operator*(const Poly &a, const Poly &b) {
    Poly r;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; i + j < 5; ++j)
        r.c[i + j] += a.c[i] * b.c[j];
    for (int i = 1; i < 5; ++i)
      for (int j = 5 - i; j < 5; ++j)
        if (a.c[i] != 0.0 && b.c[j] != 0.0)
          throw InvalidArgument("Poly: degree exceeds 4");
    return r;
  }
};

namespace detail {

// Vector-valued polynomial, c[d] holds the τ^d coefficients.
struct PVec {
  std::vector<CVec> c;
};

inline CVec rmul(const Mat &A, const CVec &v) {
  CVec r(A.rows());
  r.real() = A * v.real();
  r.imag() = A * v.imag();
  return r;
}

inline PVec apply(const Mat &A, const PVec &v) {
  PVec r;
  for (const auto &x : v.c)
    r.c.push_back(rmul(A, x));
  return r;
}

inline PVec hadamard(const PVec &a, const PVec &b) {
  PVec r;
  const auto n = a.c[0].size();
  r.c.assign(a.c.size() + b.c.size() - 1, CVec::Zero(n));
  for (std::size_t i = 0; i < a.c.size(); ++i)
    for (std::size_t j = 0; j < b.c.size(); ++j)
      r.c[i + j] += a.c[i].cwiseProduct(b.c[j]);
  return r;
}

inline PVec add(const PVec &a, const PVec &b) {
  PVec r = a.c.size() >= b.c.size() ? a : b;
  const PVec &s = a.c.size() >= b.c.size() ? b : a;
  for (std::size_t i = 0; i < s.c.size(); ++i)
    r.c[i] += s.c[i];
  return r;
}

inline PVec scale(const PVec &a, const Vec &w) {
  PVec r = a;
  for (auto &x : r.c)
    x = x.cwiseProduct(w.cast<cplx>());
  return r;
}

inline PVec constant(const Vec &w) { return PVec{{w.cast<cplx>()}}; }

inline Poly bilinear(const PVec &a, const Mat &A, const PVec &b) {
  Poly p;
  std::vector<CVec> Ab;
  for (const auto &x : b.c)
    Ab.push_back(rmul(A, x));
  for (std::size_t i = 0; i < a.c.size(); ++i)
    for (std::size_t j = 0; j < Ab.size(); ++j) {
      if (i + j > 4)
        throw InvalidArgument("bilinear: degree exceeds 4");
      p.c[i + j] += (a.c[i].transpose() * Ab[j])(0);
    }
  return p;
}

inline Poly total(const PVec &a) {
  Poly p;
  for (std::size_t i = 0; i < a.c.size(); ++i)
    p.c[i] = a.c[i].sum();
  return p;
}

} // namespace detail

struct PosteriorGeometry {
  double beta = inf;
  bool zero_temp = true;
  Mat M;  // M_β
  Mat MG;  // M_β X̂ᵀX̂ = X̂_β†X̂
  Mat GMG; // X̂ᵀX̂ M_β X̂ᵀX̂
  double logdet_M = 0.0;
  Vec theta_proj; // X̂_β†θ̂* = M_β Y
  double YMY = 0.0;
  Vec Mhat;

  bool has_test = false;
  Vec k;       // X̂ᵀx̂
  Vec a;       // X̂_β†x̂
  double xnorm2 = 0.0;
  double xperp_norm2 = 0.0;
  double mhat_test = 0.0;

  std::size_t P() const { return static_cast<std::size_t>(M.rows()); }
  double trace_XdagX() const { return MG.trace(); }

  Vec x_perp(const HatDataset &hat, const Vec &xhat) const { return xhat - hat.Xhat * a; }
};

namespace detail {

inline double xperp_norm2(const HatDataset &hat, const Vec &a, const Vec &k, double xnorm2) {
  return std::max(0.0, xnorm2 - 2.0 * k.dot(a) + a.dot(hat.G * a));
}

} // namespace detail

inline PosteriorGeometry build_posterior_geometry(const HatDataset &hat, double beta) {
  if (!(beta > 0.0))
    throw InvalidArgument("beta must be positive or infinity");
  PosteriorGeometry g;
  g.beta = beta;
  g.zero_temp = std::isinf(beta);
  const double dP = static_cast<double>(hat.P());
  const Vec ev = (dP * hat.svd.lambda).array() + (g.zero_temp ? 0.0 : 1.0 / beta);
  const double cond = ev.maxCoeff() / ev.minCoeff();
  if (!(cond <= 1e12))
    throw IllConditioned("posterior geometry: condition number exceeds 1e12");
  if (g.zero_temp) {
    g.M = hat.Ginv;
    g.MG = Mat::Identity(hat.G.rows(), hat.G.cols());
  } else {
    const Mat &V = hat.svd.V;
    g.M = V * ev.cwiseInverse().asDiagonal() * V.transpose();
    g.MG = g.M * hat.G;
  }
  g.GMG = hat.G * g.MG;
  g.logdet_M = -ev.array().log().sum();
  g.theta_proj = g.M * hat.Y;
  g.YMY = hat.Y.dot(g.theta_proj);
  g.Mhat.resize(static_cast<Eigen::Index>(hat.P()));
  for (Eigen::Index m = 0; m < g.Mhat.size(); ++m)
    g.Mhat(m) = mhat_entry(hat.shape, hat.raw_norm2(m));
  if (hat.xhat_test) {
    g.has_test = true;
    g.k = hat.g_test;
    g.xnorm2 = hat.xhat_test->squaredNorm();
    g.a = g.M * g.k;
    g.xperp_norm2 = detail::xperp_norm2(hat, g.a, g.k, g.xnorm2);
    g.mhat_test = mhat_entry(hat.shape, hat.test_raw_norm2);
  }
  return g;
}

// Geometry for another test point x̂ on the same data and temperature.
inline PosteriorGeometry geometry_for_test(const PosteriorGeometry &base, const HatDataset &hat,
                                           const Vec &xhat) {
  if (static_cast<std::size_t>(xhat.size()) != hat.N0())
    throw ShapeMismatch("test point length differs from N0");
  PosteriorGeometry g = base;
  g.has_test = true;
  g.k = hat.Xhat.transpose() * xhat;
  g.xnorm2 = xhat.squaredNorm();
  g.a = g.M * g.k;
  g.xperp_norm2 = detail::xperp_norm2(hat, g.a, g.k, g.xnorm2);
  g.mhat_test = mhat_entry(hat.shape, raw_norm2_from_hat(g.xnorm2, hat.shape));
  return g;
}

// Coefficients packed as the τ-expansions
//   I2 = I2[0] + 2iτI2[1] + τ²I2[2]          I3 = I3[0] + iτI3[1] + τ²I3[2]
//   I4 = I4[0] + iτI4[1] + 3τ²I4[2] + iτ³I4[3] + τ⁴I4[4]
//   I5 = I5[0] + 2iτI5[1] + τ²I5[2] + 2iτ³I5[3] + τ⁴I5[4]
//   I6 = I6[0] + 4iτI6[1] + 2τ²I6[2] + 4iτ³I6[3] + τ⁴I6[4]
struct IntegralTable {
  double I1 = 1.0;
  std::array<double, 3> I2{}, I3{};
  std::array<double, 5> I4{}, I5{}, I6{};
  double max_imag_residual = 0.0; // consistency of the i^k structure

  static constexpr std::array<cplx, 3> f2{cplx(1), cplx(0, 2), cplx(1)};
  static constexpr std::array<cplx, 3> f3{cplx(1), cplx(0, 1), cplx(1)};
  static constexpr std::array<cplx, 5> f4{cplx(1), cplx(0, 1), cplx(3), cplx(0, 1), cplx(1)};
  static constexpr std::array<cplx, 5> f5{cplx(1), cplx(0, 2), cplx(1), cplx(0, 2), cplx(1)};
  static constexpr std::array<cplx, 5> f6{cplx(1), cplx(0, 4), cplx(2), cplx(0, 4), cplx(1)};

  template <std::size_t K>
  static Poly unpack(const std::array<double, K> &v, const std::array<cplx, K> &f) {
    Poly p;
    for (std::size_t i = 0; i < K; ++i)
      p.c[i] = f[i] * v[i];
    return p;
  }
  Poly poly(int j) const {
    switch (j) {
    case 1:
      return Poly::constant(I1);
    case 2:
      return unpack(I2, f2);
    case 3:
      return unpack(I3, f3);
    case 4:
      return unpack(I4, f4);
    case 5:
      return unpack(I5, f5);
    case 6:
      return unpack(I6, f6);
    }
    throw InvalidArgument("IntegralTable: index must be 1..6");
  }
  // All 21 coefficients in the order I2[0..2], I3[0..2], I4[0..4], I5[0..4], I6[0..4].
  std::vector<double> flat() const {
    std::vector<double> v(I2.begin(), I2.end());
    v.insert(v.end(), I3.begin(), I3.end());
    v.insert(v.end(), I4.begin(), I4.end());
    v.insert(v.end(), I5.begin(), I5.end());
    v.insert(v.end(), I6.begin(), I6.end());
    return v;
  }
  static std::vector<std::string> labels() {
    std::vector<std::string> s;
    const std::array<int, 5> sizes{3, 3, 5, 5, 5};
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < sizes[static_cast<std::size_t>(j)]; ++i)
        s.push_back("I" + std::to_string(j + 2) + "[" + std::to_string(i) + "]");
    return s;
  }
};

namespace detail {

template <std::size_t K>
std::array<double, K> pack(const Poly &p, const std::array<cplx, K> &f, double &resid) {
  std::array<double, K> out{};
  for (std::size_t i = 0; i < K; ++i) {
    cplx v = p.c[i] / f[i];
    out[i] = v.real();
    resid = std::max(resid, std::abs(v.imag()) / std::max(1.0, std::abs(v.real())));
  }
  for (std::size_t i = K; i < 5; ++i)
    resid = std::max(resid, std::abs(p.c[i]));
  return out;
}

// Augmented Gram Ĝ, covariance C and reweighting D on the spanning set.
struct Span {
  Mat G, C, CG, S; // CG = CĜ, S = ĜCĜ
  Vec D;
  PVec m; // mean of λ as a polynomial in τ
};

inline Span make_span(const PosteriorGeometry &g, const HatDataset &hat) {
  const auto P = static_cast<Eigen::Index>(hat.P());
  const Eigen::Index n = P + (g.has_test ? 1 : 0);
  Span s;
  s.G = Mat::Zero(n, n);
  s.G.topLeftCorner(P, P) = hat.G;
  s.C = Mat::Zero(n, n);
  s.C.topLeftCorner(P, P) = g.M;
  s.CG = Mat::Zero(n, n);
  s.CG.topLeftCorner(P, P) = g.MG;
  s.S = Mat::Zero(n, n);
  s.S.topLeftCorner(P, P) = g.GMG;
  s.D = Vec::Zero(n);
  s.D.head(P) = g.Mhat;
  CVec m0 = CVec::Zero(n);
  m0.head(P) = cplx(0, 1) * g.theta_proj.cast<cplx>();
  s.m.c.push_back(m0);
  if (g.has_test) {
    s.G.block(0, P, P, 1) = g.k;
    s.G.block(P, 0, 1, P) = g.k.transpose();
    s.G(P, P) = g.xnorm2;
    s.D(P) = g.mhat_test;
    const Vec Ga = hat.G * g.a;
    s.CG.block(0, P, P, 1) = g.a;
    s.S.block(0, P, P, 1) = Ga;
    s.S.block(P, 0, 1, P) = Ga.transpose();
    s.S(P, P) = g.k.dot(g.a);
    CVec m1 = CVec::Zero(n);
    m1.head(P) = -g.a.cast<cplx>();
    m1(P) = 1.0;
    s.m.c.push_back(m1);
  }
  return s;
}

} // namespace detail

// Exact Gaussian expectations of I2..I6, packed by τ-power.
inline IntegralTable eval_integrals(const PosteriorGeometry &g, const HatDataset &hat) {
  using namespace detail;
  const Span s = make_span(g, hat);
  const Mat &G = s.G, &C = s.C;
  const Mat G2 = G.array().square().matrix();
  const Mat G3 = G.array().cube().matrix();
  const Mat &CG = s.CG;
  const Mat &S = s.S;
  const Vec cgd = CG.diagonal();
  const Vec sd = S.diagonal();
  const PVec &m = s.m;
  const PVec mu = apply(G, m);

  auto tr = [](const Mat &A, const Mat &B) { return (A.array() * B.transpose().array()).sum(); };

  Poly I2 = bilinear(m, G3, m) + Poly::constant(tr(G3, C));
  const Mat GD = G * s.D.asDiagonal();
  Poly I3 = bilinear(m, GD, m) + Poly::constant(tr(GD, C));
  Poly Eq = bilinear(m, G, m) + Poly::constant(tr(G, C));
  Poly I6 = Eq * Eq + cplx(4) * bilinear(m, S, m) + Poly::constant(2.0 * tr(S, C));

  const PVec mu2 = hadamard(mu, mu);
  const PVec mu3 = hadamard(mu2, mu);
  Poly I4 = total(hadamard(m, add(mu3, scale(mu, 3.0 * sd)))) +
            total(scale(add(mu2, constant(sd)), 3.0 * cgd));

  const PVec p = hadamard(m, mu);
  const Mat G2C = G2.cwiseProduct(C);
  const Mat G2CG = G2.cwiseProduct(CG);
  const Mat G2CGt = G2.cwiseProduct(CG.transpose());
  const Mat G2S = G2.cwiseProduct(S);
  const double T8 = (G2.array() * (C.array() * S.array() + (cgd * cgd.transpose()).array() +
                                   CG.array() * CG.transpose().array()))
                        .sum();
  Poly I5 = bilinear(p, G2, p) + bilinear(mu, G2C, mu) + cplx(2) * bilinear(constant(cgd), G2, p) +
            bilinear(mu, G2CG, m) + bilinear(m, G2CGt, mu) + bilinear(m, G2S, m) +
            Poly::constant(T8);

  IntegralTable t;
  double r = 0.0;
  t.I2 = pack(I2, IntegralTable::f2, r);
  t.I3 = pack(I3, IntegralTable::f3, r);
  t.I4 = pack(I4, IntegralTable::f4, r);
  t.I5 = pack(I5, IntegralTable::f5, r);
  t.I6 = pack(I6, IntegralTable::f6, r);
  t.max_imag_residual = r;
  return t;
}

// Coefficients of the first-order bracket, multiplying I2..I6.
struct BracketCoefficients {
  double c2, c3, c4, c5, c6;
};

inline BracketCoefficients bracket_coefficients(const ShapeParams &s) {
  const double ph = s.psi_hat();
  const double q = std::exp(-4.0 * s.eta) * ph * ph * (g1(s.eta) - g2(s.eta));
  return {-q, -2.0 * ph, 0.5 * std::exp(-2.0 * s.eta) * ph * g1(s.eta), q, 0.25};
}

inline Poly bracket_poly(const IntegralTable &t, const ShapeParams &s) {
  const auto c = bracket_coefficients(s);
  return cplx(c.c2) * t.poly(2) + cplx(c.c3) * t.poly(3) + cplx(c.c4) * t.poly(4) +
         cplx(c.c5) * t.poly(5) + cplx(c.c6) * t.poly(6);
}

// Exponent Q(t*) as a quadratic in τ.
inline Poly q_poly(const PosteriorGeometry &g) {
  Poly q;
  q.c[0] = -0.5 * g.YMY;
  if (g.has_test) {
    q.c[1] = cplx(0, -1) * g.k.dot(g.theta_proj);
    q.c[2] = -0.5 * (g.xnorm2 - g.k.dot(g.a));
  }
  return q;
}

inline void check_shape(const HatDataset &hat, const ShapeParams &s) {
  if (hat.shape.psi != s.psi || hat.shape.eta != s.eta)
    throw InvalidArgument("shape parameters differ from those used to embed the data");
}

struct LogPartition {
  cplx value;
  double correction = 0.0; // |(L/N)·bracket(τ)|
  bool flagged = false;    // correction above 0.5
};

inline constexpr double kPerturbativeLimit = 0.5;

// log Z(x,τ) with the first-order bracket linearized, log(1 + εB) → εB, and the
// normalization −(P/2)log 2π so that L/N = 0 gives log N(Y; 0, X̂ᵀX̂ + I/β).
inline LogPartition log_partition(const HatDataset &hat, const PosteriorGeometry &g,
                                  const IntegralTable &t, int L, double N, const ShapeParams &s,
                                  double tau) {
  check_shape(hat, s);
  const double eps = static_cast<double>(L) / N;
  const double c0 = -0.5 * static_cast<double>(hat.P()) * std::log(2.0 * M_PI) + 0.5 * g.logdet_M;
  const cplx corr = eps * bracket_poly(t, s)(tau);
  LogPartition r;
  r.value = c0 + q_poly(g)(tau) + corr;
  r.correction = std::abs(corr);
  r.flagged = r.correction > kPerturbativeLimit;
  return r;
}

// Leading-order closed-form blocks, kept for comparison with the exact decomposition.
struct LeadingOrderEvidence {
  double kernel = 0.0;
  double linear = 0.0;
  double nonlinear = 0.0;
};

struct EvidenceReport {
  double log_Z0 = 0.0;
  double constant = 0.0;  // −(P/2) log 2π
  double kernel = 0.0;    // ½ log det M_β − ½ YᵀM_βY
  double linear = 0.0;    // (L/N)·¼·I6[0]
  double nonlinear = 0.0; // remaining first-order terms at τ = 0
  double correction = 0.0;
  bool flagged = false;
  double beta = inf;
  double L_over_N = 0.0;
  LeadingOrderEvidence leading;
};

inline double c_shift(const ShapeParams &s) { return c_psi_eta(s); }

// Leading-order finite-temperature evidence blocks in closed form.
inline LeadingOrderEvidence leading_order_evidence(const HatDataset &hat, const PosteriorGeometry &g,
                                                   int L, double N, const ShapeParams &s) {
  const double eps = static_cast<double>(L) / N;
  LeadingOrderEvidence lo;
  lo.kernel = 0.5 * g.logdet_M - 0.5 * g.YMY;
  const Vec v = hat.G * g.theta_proj; // X̂ᵀ(X̂X̂_β†θ̂*)
  const double vn = g.theta_proj.dot(v); // ‖X̂X̂_β†θ̂*‖²
  const double trMG = g.MG.trace();
  lo.linear = 0.25 * eps * (vn * vn - 2.0 * vn * trMG + trMG * trMG);
  const double c = c_shift(s);
  if (c != 0.0) {
    const Vec d = g.MG.diagonal(); // (X̂_β†x̂_μ)_μ
    const Mat &G = hat.G;
    const Mat G2 = hat.G2;
    const Vec &w = g.theta_proj;
    const Vec Gw = G * w;
    double t1 = d.dot(G2 * d);
    // ⟨Σ_μ d_μ x̂_μ^{⊗2} ⊗ X̂w, X̂³w⟩ = Σ_μν d_μ G_μν² (Gw)_ν w_ν
    double t2 = d.dot(G2 * Gw.cwiseProduct(w));
    // ⟨X̂³w ⊗ X̂w, X̂w ⊗ X̂³w⟩ = Σ_μν w_μ w_ν (Gw)_μ G_μν² (Gw)_ν
    const Vec wg = w.cwiseProduct(Gw);
    double t3 = wg.dot(G2 * wg);
    // Σ_μν G_μν² M_μν (⟨x̂_μ,X̂w⟩⟨X̂w,x̂_ν⟩ + G_μν)
    double t4 = (G2.array() * g.M.array() * ((Gw * Gw.transpose()).array() + G.array())).sum();
    lo.nonlinear = 0.5 * c * eps * (t1 - 2.0 * t2 + t3 - t4);
  }
  return lo;
}

// Leading-order zero-temperature evidence blocks in closed form.
inline LeadingOrderEvidence leading_order_zero_temp(const HatDataset &hat, int L, double N,
                                                    const ShapeParams &s) {
  const double eps = static_cast<double>(L) / N;
  const double dP = static_cast<double>(hat.P());
  const double th = hat.theta_norm2();
  LeadingOrderEvidence lo;
  lo.kernel = -0.5 * (dP * hat.svd.lambda).array().log().sum() - 0.5 * th;
  lo.linear = 0.25 * eps * dP * (th * th / dP - 2.0 * th + dP);
  const double c = c_shift(s);
  if (c != 0.0) {
    const Mat &G = hat.G;
    const Mat GG = G * G;
    const Vec w = hat.Ginv * hat.Y;
    const Vec yw = hat.Y.cwiseProduct(w);
    double t = GG.trace() - GG.diagonal().dot(yw) + yw.dot(hat.G2 * yw) -
               (hat.G3.array() * hat.Ginv.array()).sum();
    lo.nonlinear = 0.5 * c * eps * t;
  }
  return lo;
}

inline EvidenceReport evidence_from(const HatDataset &hat, const PosteriorGeometry &g,
                                    const IntegralTable &t, int L, double N, const ShapeParams &s) {
  const double eps = static_cast<double>(L) / N;
  EvidenceReport r;
  r.beta = g.beta;
  r.L_over_N = eps;
  r.constant = -0.5 * static_cast<double>(hat.P()) * std::log(2.0 * M_PI);
  r.kernel = 0.5 * g.logdet_M - 0.5 * g.YMY;
  const auto c = bracket_coefficients(s);
  r.linear = eps * c.c6 * t.I6[0];
  r.nonlinear = eps * (c.c2 * t.I2[0] + c.c3 * t.I3[0] + c.c4 * t.I4[0] + c.c5 * t.I5[0]);
  r.log_Z0 = r.constant + r.kernel + (r.linear + r.nonlinear);
  r.correction = std::abs(r.linear + r.nonlinear);
  r.flagged = r.correction > kPerturbativeLimit;
  r.leading = leading_order_evidence(hat, g, L, N, s);
  return r;
}

inline EvidenceReport log_evidence(const HatDataset &hat, int L, double N, const ShapeParams &s,
                                   double beta) {
  check_shape(hat, s);
  PosteriorGeometry g = build_posterior_geometry(hat, beta);
  g.has_test = false;
  return evidence_from(hat, g, eval_integrals(g, hat), L, N, s);
}

// Exact β = ∞ evidence (Gram-inverse path) with the closed-form zero-temperature
// blocks in `leading`.
inline EvidenceReport zero_temp_evidence(const HatDataset &hat, int L, double N,
                                         const ShapeParams &s) {
  EvidenceReport r = log_evidence(hat, L, N, s, inf);
  r.leading = leading_order_zero_temp(hat, L, N, s);
  return r;
}

struct PosteriorSummary {
  double mean0 = 0.0, mean1 = 0.0; // zeroth order and 1/N part
  double var0 = 0.0, var1 = 0.0;
  double kappa3 = 0.0, kappa4 = 0.0; // first order only
  double correction = 0.0;
  bool flagged = false;

  double mean() const { return mean0 + mean1; }
  double variance() const { return var0 + var1; }
};

inline PosteriorSummary cumulants_from(const PosteriorGeometry &g, const IntegralTable &t, int L,
                                       double N, const ShapeParams &s) {
  if (!g.has_test)
    throw InvalidArgument("posterior cumulants need a test point");
  const double eps = static_cast<double>(L) / N;
  const Poly B = bracket_poly(t, s);
  PosteriorSummary r;
  r.mean0 = g.k.dot(g.theta_proj);
  r.var0 = std::max(0.0, g.xnorm2 - g.k.dot(g.a));
  r.mean1 = (cplx(0, 1) * eps * B.c[1]).real();
  r.var1 = (-2.0 * eps * B.c[2]).real();
  r.kappa3 = (cplx(0, -6) * eps * B.c[3]).real();
  r.kappa4 = (24.0 * eps * B.c[4]).real();
  r.correction = std::abs(eps * B.c[0]);
  r.flagged = r.correction > kPerturbativeLimit;
  return r;
}

inline PosteriorSummary posterior_cumulants(const HatDataset &hat, int L, double N,
                                            const ShapeParams &s, double beta,
                                            const Vec *xhat_test = nullptr) {
  check_shape(hat, s);
  PosteriorGeometry g = build_posterior_geometry(hat, beta);
  if (xhat_test)
    g = geometry_for_test(g, hat, *xhat_test);
  return cumulants_from(g, eval_integrals(g, hat), L, N, s);
}

enum class InterpolantRegime { automatic, small, proportional };

// Closed-form zero-temperature posterior. The small-interpolant branch gives the
// mean shift and the ‖x̂⊥‖²(1 − LP/N) variance; the proportional branch
// (‖θ̂*‖²/P of order one) adds the cubic-contraction mean term and the
// variance addition.
inline PosteriorSummary zero_temp_posterior(const HatDataset &hat, int L, double N,
                                            const ShapeParams &s, const Vec *xhat_test = nullptr,
                                            InterpolantRegime regime = InterpolantRegime::automatic) {
  check_shape(hat, s);
  const double dP = static_cast<double>(hat.P());
  const double ev_min = dP * hat.svd.lambda.minCoeff();
  if (!(hat.svd.lambda.maxCoeff() * dP / ev_min <= 1e12))
    throw IllConditioned("zero_temp_posterior: Gram condition number exceeds 1e12");
  const Vec xh = xhat_test ? *xhat_test : hat.test();
  const Vec k = hat.Xhat.transpose() * xh;
  const Vec a = hat.Ginv * k;
  const double xperp2 = detail::xperp_norm2(hat, a, k, xh.squaredNorm());
  const double eps = static_cast<double>(L) / N;
  const double LP = eps * dP;
  const double c = c_psi_eta(s);
  const double th = hat.theta_norm2();

  PosteriorSummary r;
  const Vec GG_diag = (hat.G * hat.G).diagonal() / dP; // x̂_μᵀΣx̂_μ
  const double xSx = k.squaredNorm() / dP;
  r.mean0 = a.dot(hat.Y);
  double shift = 0.0;
  for (Eigen::Index m = 0; m < a.size(); ++m)
    shift += a(m) * hat.Y(m) * (GG_diag(m) - xSx);
  r.mean1 = LP * c * shift;
  r.var0 = xperp2;
  r.var1 = -xperp2 * LP;

  const bool prop = regime == InterpolantRegime::proportional ||
                    (regime == InterpolantRegime::automatic && th / dP > 0.1);
  if (prop) {
    const Vec w = hat.Ginv * hat.Y;
    const double kw = k.dot(w);
    const Vec ay = a.cwiseProduct(hat.Y);
    // ⟨(x̂³ − X̂³a) ⊗ θ̂*, θ̂* ⊗ X̂³w⟩ with ⟨c³⊗p, q⊗d³⟩ = ⟨c,q⟩⟨c,d⟩²⟨p,d⟩
    double T1 = 0.0;
    const Vec G2ay = hat.G2 * ay;
    for (Eigen::Index n = 0; n < w.size(); ++n)
      T1 += w(n) * hat.Y(n) * (kw * k(n) * k(n) - G2ay(n));
    const double T2 = a.dot(hat.G3 * w);
    r.mean1 += eps * c * (T1 - T2);
    double sum = 0.0;
    for (Eigen::Index m = 0; m < a.size(); ++m)
      sum += k(m) * k(m) * a(m) * hat.Y(m);
    r.var1 += xperp2 * LP * (th / dP + 2.0 * c / dP * sum);
  }
  return r;
}

inline nlohmann::json to_json(const EvidenceReport &r) {
  return {{"log_Z0", r.log_Z0},
          {"parts",
           {{"constant", r.constant},
            {"kernel", r.kernel},
            {"linear", r.linear},
            {"nonlinear", r.nonlinear}}},
          {"leading_order",
           {{"kernel", r.leading.kernel},
            {"linear", r.leading.linear},
            {"nonlinear", r.leading.nonlinear}}},
          {"correction", r.correction},
          {"flagged", r.flagged},
          {"beta", std::isinf(r.beta) ? nlohmann::json("inf") : nlohmann::json(r.beta)},
          {"L_over_N", r.L_over_N}};
}

inline nlohmann::json to_json(const PosteriorSummary &r) {
  return {{"mean", r.mean()},           {"mean_order0", r.mean0}, {"mean_order1", r.mean1},
          {"variance", r.variance()},   {"variance_order0", r.var0},
          {"variance_order1", r.var1},  {"kappa3", r.kappa3},     {"kappa4", r.kappa4},
          {"correction", r.correction}, {"flagged", r.flagged}};
}

} // namespace shapenet
