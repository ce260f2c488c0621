#pragma once

// Literal evaluation of the tabulated closed forms for the 21 coefficients of
// I2..I6, using explicit tensors in an orthonormal basis of span{x̂_1..x̂_P, x̂}.
// Cost grows like (P+1)^4 per contraction, so this is meant for small P and for
// checking the contraction engine in partition.hpp.

#include "shapenet/partition.hpp"

#include <vector>

namespace shapenet::tabulated {

struct Tensor {
  int d = 0;
  std::vector<double> v;
};

inline Tensor vec(const Vec &x) {
  return {static_cast<int>(x.size()), std::vector<double>(x.data(), x.data() + x.size())};
}

inline Tensor outer(const Tensor &a, const Tensor &b) {
  Tensor r{a.d, std::vector<double>(a.v.size() * b.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i)
    for (std::size_t j = 0; j < b.v.size(); ++j)
      r.v[i * b.v.size() + j] = a.v[i] * b.v[j];
  return r;
}

inline double dot(const Tensor &a, const Tensor &b) {
  if (a.v.size() != b.v.size())
    throw ShapeMismatch("tensor orders differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    s += a.v[i] * b.v[i];
  return s;
}

inline Tensor &axpy(Tensor &acc, double s, const Tensor &x) {
  if (acc.v.empty())
    acc = Tensor{x.d, std::vector<double>(x.v.size(), 0.0)};
  for (std::size_t i = 0; i < x.v.size(); ++i)
    acc.v[i] += s * x.v[i];
  return acc;
}

inline Tensor sq(const Vec &x) { return outer(vec(x), vec(x)); }
inline Tensor cube(const Vec &x) { return outer(sq(x), vec(x)); }

inline IntegralTable eval_integrals_tabulated(const PosteriorGeometry &g, const HatDataset &hat) {
  if (!g.has_test)
    throw InvalidArgument("tabulated integrals need a test point");
  const auto P = static_cast<Eigen::Index>(hat.P());
  if (P > 8)
    throw InvalidArgument("tabulated integrals: P must be <= 8");
  const Vec &xh = hat.test();

  // Coordinates in an orthonormal basis of the span.
  Mat A(hat.Xhat.rows(), P + 1);
  A << hat.Xhat, xh;
  Eigen::HouseholderQR<Mat> qr(A);
  const Mat Q = qr.householderQ() * Mat::Identity(A.rows(), P + 1);
  const Mat Cc = Q.transpose() * A;
  std::vector<Vec> x(static_cast<std::size_t>(P));
  for (Eigen::Index m = 0; m < P; ++m)
    x[static_cast<std::size_t>(m)] = Cc.col(m);
  const Vec xt = Cc.col(P);

  const Mat &M = g.M;
  const Mat &G = hat.G;
  const Mat MG = g.MG;        // (X̂_β†x̂_μ)_ν = MG(ν,μ)
  const Mat GMG = G * MG;     // ⟨X̂X̂_β†x̂_μ, x̂_ν⟩
  const Vec &w = g.theta_proj; // X̂_β†θ̂*
  const Vec &a = g.a;          // X̂_β†x̂
  const Vec dm = MG.diagonal();
  const Vec &Mh = g.Mhat;
  const double mh = g.mhat_test;

  auto X = [&](const Vec &z) {
    Vec r = Vec::Zero(xt.size());
    for (Eigen::Index m = 0; m < P; ++m)
      r += z(m) * x[static_cast<std::size_t>(m)];
    return r;
  };
  auto X3 = [&](const Vec &z) {
    Tensor r;
    for (Eigen::Index m = 0; m < P; ++m)
      axpy(r, z(m), cube(x[static_cast<std::size_t>(m)]));
    return r;
  };
  auto xs = [&](Eigen::Index m) -> const Vec & { return x[static_cast<std::size_t>(m)]; };

  const Vec theta = X(hat.Ginv * hat.Y);
  const Vec v = X(w); // X̂X̂_β†θ̂*
  const Vec xp = xt - X(a);
  Tensor x3p = cube(xt);
  axpy(x3p, -1.0, X3(a));
  const Tensor X3w = X3(w);
  Tensor Dsq; // Σ_μ (X̂_β†x̂_μ)_μ x̂_μ^{⊗2}
  for (Eigen::Index m = 0; m < P; ++m)
    axpy(Dsq, dm(m), sq(xs(m)));
  const Tensor V = vec(v), XP = vec(xp);
  const double trMG = (M.array() * G.array()).sum();

  IntegralTable t;

  // I2
  t.I2[0] = (G.array().cube() * M.array()).sum() - dot(X3w, X3w);
  t.I2[1] = dot(X3w, x3p);
  t.I2[2] = dot(x3p, x3p);

  // I3
  {
    const Vec XMw = X(Mh.cwiseProduct(w));
    const Vec u = xt * mh - X(Mh.cwiseProduct(a));
    double s = 0.0;
    for (Eigen::Index m = 0; m < P; ++m)
      for (Eigen::Index n = 0; n < P; ++n)
        s += G(m, n) * Mh(m) * M(m, n);
    t.I3[0] = s - v.dot(XMw);
    t.I3[1] = v.dot(u) + xp.dot(XMw);
    t.I3[2] = xp.dot(u);
  }

  // I4
  {
    double s0 = dot(X3w, cube(v)) - 3.0 * dot(Dsq, sq(v));
    for (Eigen::Index m = 0; m < P; ++m)
      s0 += -3.0 * xs(m).squaredNorm() * w(m) * xs(m).dot(v) + 3.0 * dm(m) * xs(m).squaredNorm();
    t.I4[0] = s0;

    double s1 = 0.0;
    for (Eigen::Index m = 0; m < P; ++m)
      s1 += 6.0 * dm(m) * dot(sq(xs(m)), outer(V, XP)) +
            3.0 * w(m) * GMG(m, m) * xs(m).dot(xp);
    Vec u = g.k.dot(M * g.k) * xt;
    for (Eigen::Index m = 0; m < P; ++m)
      u -= a(m) * GMG(m, m) * xs(m);
    s1 += 3.0 * u.dot(v) - 3.0 * dot(X3w, outer(sq(v), XP)) - dot(x3p, cube(v));
    t.I4[1] = s1;

    double s2 = dot(Dsq, sq(xp)) - dot(X3w, outer(V, sq(xp)));
    const double xXXx = g.k.dot(M * g.k);
    s2 += (xXXx - dot(sq(xt), sq(v))) * xt.dot(xp);
    for (Eigen::Index m = 0; m < P; ++m)
      s2 += a(m) * (dot(sq(xs(m)), sq(v)) - GMG(m, m)) * xs(m).dot(xp);
    t.I4[2] = s2;

    t.I4[3] = dot(X3w, cube(xp)) + 3.0 * dot(x3p, outer(V, sq(xp)));
    t.I4[4] = dot(x3p, cube(xp));
  }

  // I5
  {
    auto cross = [&](const Tensor &A3, const Tensor &b, const Tensor &c, const Tensor &D3) {
      return dot(outer(A3, b), outer(c, D3));
    };
    double s0 = 0.0;
    for (Eigen::Index m = 0; m < P; ++m)
      for (Eigen::Index n = 0; n < P; ++n) {
        const double g2 = dot(sq(xs(m)), sq(xs(n)));
        s0 += g2 * (GMG(m, n) * M(m, n) + dm(m) * dm(n) + MG(n, m) * MG(m, n));
      }
    for (Eigen::Index m = 0; m < P; ++m) {
      Tensor inner;
      for (Eigen::Index n = 0; n < P; ++n)
        axpy(inner, w(n) * MG(m, n), sq(xs(n)));
      s0 -= 2.0 * dot(cube(xs(m)), outer(V, inner));
    }
    s0 -= 2.0 * dot(outer(Dsq, V), X3w);
    for (Eigen::Index m = 0; m < P; ++m)
      for (Eigen::Index n = 0; n < P; ++n)
        s0 -= M(m, n) * cross(cube(xs(m)), V, V, cube(xs(n)));
    for (Eigen::Index m = 0; m < P; ++m)
      for (Eigen::Index n = 0; n < P; ++n)
        s0 -= w(m) * w(n) * GMG(m, n) * std::pow(xs(m).dot(xs(n)), 2);
    s0 += cross(X3w, V, V, X3w);
    t.I5[0] = s0;

    double s1 = -cross(X3w, XP, V, X3w) - cross(x3p, V, V, X3w);
    const Vec Ga = G * a;
    for (Eigen::Index n = 0; n < P; ++n) {
      Tensor left = sq(xt);
      for (auto &e : left.v)
        e *= Ga(n);
      for (Eigen::Index m = 0; m < P; ++m)
        axpy(left, -a(m) * GMG(n, m), sq(xs(m)));
      s1 += w(n) * dot(left, sq(xs(n)));
    }
    s1 += dot(x3p, outer(V, Dsq));
    auto bracket_nu = [&](Eigen::Index n) {
      Tensor left = sq(xt);
      for (auto &e : left.v)
        e *= a(n);
      for (Eigen::Index m = 0; m < P; ++m)
        axpy(left, -a(m) * MG(n, m), sq(xs(m)));
      return left;
    };
    for (Eigen::Index n = 0; n < P; ++n)
      s1 += dot(outer(bracket_nu(n), V), cube(xs(n)));
    s1 += dot(outer(Dsq, XP), X3w);
    for (Eigen::Index m = 0; m < P; ++m)
      for (Eigen::Index n = 0; n < P; ++n)
        s1 += M(m, n) * cross(cube(xs(m)), XP, V, cube(xs(n)));
    for (Eigen::Index n = 0; n < P; ++n) {
      Tensor left;
      for (Eigen::Index m = 0; m < P; ++m)
        axpy(left, w(m) * MG(n, m), sq(xs(m)));
      s1 += dot(outer(left, XP), cube(xs(n)));
    }
    t.I5[1] = s1;

    double s2 = 0.0;
    for (Eigen::Index m = 0; m < P; ++m)
      for (Eigen::Index n = 0; n < P; ++n)
        s2 += M(m, n) * (dot(outer(x3p, vec(xs(m))), outer(vec(xs(n)), x3p)) +
                         cross(cube(xs(m)), XP, XP, cube(xs(n))));
    s2 += -cross(x3p, V, V, x3p) - cross(X3w, XP, XP, X3w) + 2.0 * dot(x3p, outer(XP, Dsq)) -
          2.0 * cross(x3p, V, XP, X3w) - 2.0 * cross(x3p, XP, V, X3w);
    for (Eigen::Index n = 0; n < P; ++n)
      s2 += 2.0 * dot(outer(bracket_nu(n), XP), cube(xs(n)));
    t.I5[2] = s2;

    t.I5[3] = cross(X3w, XP, XP, x3p) + cross(x3p, V, XP, x3p);
    t.I5[4] = cross(x3p, XP, XP, x3p);
  }

  // I6
  {
    const double vn = v.squaredNorm();
    const Vec Gw = G * w;
    t.I6[0] = vn * vn - 2.0 * vn * trMG - 4.0 * Gw.dot(M * Gw) + trMG * trMG +
              2.0 * (M * G * M * G).trace();
    t.I6[1] = trMG * v.dot(xp) + 2.0 * xp.dot(X(M * Gw)) - vn * v.dot(xp);
    // X̂X̂_β†z = X̂ M X̂ᵀz; X̂ᵀ in coordinates is the matrix of x_μ rows
    Mat Xc(xt.size(), P);
    for (Eigen::Index m = 0; m < P; ++m)
      Xc.col(m) = xs(m);
    const Vec proj = Xc * (M * (Xc.transpose() * (xp - theta)));
    t.I6[2] = xp.squaredNorm() * (trMG - vn) + 2.0 * proj.dot(xp);
    t.I6[3] = v.dot(xp) * xp.squaredNorm();
    t.I6[4] = std::pow(xp.squaredNorm(), 2);
  }
  return t;
}

} // namespace shapenet::tabulated
