#pragma once

// Hat-space feature map x -> x̂, its inverse, the hat dataset with cached Gram
// powers and spectrum, and the infinite-width kernel flow.

#include "shapenet/core.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace shapenet {

// (e^{2η} − 1)/(2η), continuous at η = 0.
inline double exp2eta_ratio(double eta) {
  if (std::abs(eta) < 1e-4)
    return 1.0 + eta + (2.0 / 3.0) * eta * eta + (1.0 / 3.0) * eta * eta * eta;
  return std::expm1(2.0 * eta) / (2.0 * eta);
}

struct ShapeParams {
  double psi = 0.0;
  double eta = 0.0;

  double psi_hat() const { return psi * exp2eta_ratio(eta); }
  // ψ̂_μ for a point with ‖x‖²/N₀ = r
  double psi_hat_point(double r) const { return psi_hat() * r; }
};

struct RawDataset {
  Mat X; // N0 x P
  Vec Y; // P
  std::optional<Vec> x_test;

  std::size_t N0() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t P() const { return static_cast<std::size_t>(X.cols()); }
};

// x̂ = e^η (1 − 2ψ̂‖x‖²/N₀)^{−1/2} x/√N₀
inline Vec embed(const Vec &x, const ShapeParams &s, std::size_t N0) {
  if (static_cast<std::size_t>(x.size()) != N0)
    throw ShapeMismatch("embed: input length differs from N0");
  const double r = x.squaredNorm() / static_cast<double>(N0);
  const double d = 1.0 - 2.0 * s.psi_hat_point(r);
  if (!(d > 0.0))
    throw SingularEmbedding("embed: 1 - 2 psi_hat |x|^2/N0 <= 0");
  return std::exp(s.eta) / std::sqrt(d) * x / std::sqrt(static_cast<double>(N0));
}

// Same map written as e^η (1 − (ψ/η)(e^{2η} − 1)‖x‖²/N₀)^{−1/2} x/√N₀.
inline Vec embed_direct(const Vec &x, const ShapeParams &s, std::size_t N0) {
  const double r = x.squaredNorm() / static_cast<double>(N0);
  const double k = std::abs(s.eta) < 1e-4 ? 2.0 * s.psi * exp2eta_ratio(s.eta)
                                          : (s.psi / s.eta) * std::expm1(2.0 * s.eta);
  const double d = 1.0 - k * r;
  if (!(d > 0.0))
    throw SingularEmbedding("embed_direct: singular");
  return std::exp(s.eta) / std::sqrt(d) * x / std::sqrt(static_cast<double>(N0));
}

// ‖x‖²/N₀ of the raw point whose embedding has squared norm rhat.
inline double raw_norm2_from_hat(double rhat, const ShapeParams &s) {
  const double den = std::exp(2.0 * s.eta) + 2.0 * s.psi_hat() * rhat;
  if (!(den > 0.0))
    throw Unreachable("unembed: |xhat|^2 >= e^{2 eta}/(2|psi_hat|)");
  return rhat / den;
}

inline Vec unembed(const Vec &xhat, const ShapeParams &s, std::size_t N0) {
  if (static_cast<std::size_t>(xhat.size()) != N0)
    throw ShapeMismatch("unembed: input length differs from N0");
  const double r = raw_norm2_from_hat(xhat.squaredNorm(), s);
  const double d = 1.0 - 2.0 * s.psi_hat_point(r);
  return std::sqrt(static_cast<double>(N0)) * std::exp(-s.eta) * std::sqrt(d) * xhat;
}

// X̂ = √P Σ_j √λ_j u_j v_jᵀ with λ sorted descending.
struct Spectrum {
  Vec lambda;
  Mat U; // N0 x P
  Mat V; // P x P
};

struct HatDataset {
  ShapeParams shape;
  Mat Xhat;      // N0 x P
  Vec Y;         // P
  Vec theta_hat; // minimal-norm interpolant, X̂ᵀθ̂* = Y
  Mat G, G2, G3; // Gram and its Hadamard square and cube
  Mat Ginv;
  Vec raw_norm2; // ‖x_μ‖²/N₀
  Spectrum svd;

  std::optional<Vec> xhat_test;
  Vec g_test;               // ⟨x̂_μ, x̂⟩
  double test_raw_norm2 = 0.0;

  std::size_t N0() const { return static_cast<std::size_t>(Xhat.rows()); }
  std::size_t P() const { return static_cast<std::size_t>(Xhat.cols()); }

  // Σ = X̂X̂ᵀ/P through its action
  double trace_sigma() const { return G.trace() / static_cast<double>(P()); }
  double trace_sigma2() const { return G.squaredNorm() / sqr(static_cast<double>(P())); }
  double sigma_quadratic(const Vec &x) const {
    return (Xhat.transpose() * x).squaredNorm() / static_cast<double>(P());
  }
  double theta_norm2() const { return theta_hat.squaredNorm(); }

  void set_test_hat(const Vec &xh) {
    if (static_cast<std::size_t>(xh.size()) != N0())
      throw ShapeMismatch("test point length differs from N0");
    xhat_test = xh;
    g_test = Xhat.transpose() * xh;
    test_raw_norm2 = raw_norm2_from_hat(xh.squaredNorm(), shape);
  }
  void set_test_raw(const Vec &x) {
    xhat_test = embed(x, shape, N0());
    g_test = Xhat.transpose() * *xhat_test;
    test_raw_norm2 = x.squaredNorm() / static_cast<double>(N0());
  }
  const Vec &test() const {
    if (!xhat_test)
      throw InvalidArgument("hat dataset has no test point");
    return *xhat_test;
  }
};

namespace detail {

inline void finish_hat(HatDataset &h, std::optional<Spectrum> spec) {
  const auto P = static_cast<Eigen::Index>(h.P());
  if (P >= static_cast<Eigen::Index>(h.N0()))
    throw InvalidArgument("hat dataset requires P < N0");
  if (h.Y.size() != P)
    throw ShapeMismatch("labels length differs from P");
  if (!h.Y.allFinite())
    throw InvalidArgument("labels must be finite");
  h.G = h.Xhat.transpose() * h.Xhat;
  h.G2 = h.G.array().square().matrix();
  h.G3 = h.G.array().cube().matrix();
  const double dP = static_cast<double>(P);
  if (spec) {
    h.svd = std::move(*spec);
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> es(h.G);
    Vec ev = es.eigenvalues().reverse();
    Mat V = es.eigenvectors().rowwise().reverse();
    h.svd.lambda = ev.cwiseMax(0.0) / dP;
    h.svd.V = V;
    h.svd.U.resize(h.Xhat.rows(), P);
    for (Eigen::Index j = 0; j < P; ++j) {
      double s = std::sqrt(dP * h.svd.lambda(j));
      h.svd.U.col(j) = s > 0 ? Vec(h.Xhat * V.col(j) / s) : Vec::Zero(h.Xhat.rows());
    }
  }
  const double smax = std::sqrt(h.svd.lambda.maxCoeff());
  const double smin = std::sqrt(std::max(0.0, h.svd.lambda.minCoeff()));
  if (!(smin >= 1e-10 * smax))
    throw RankDeficient("hat data matrix is numerically rank deficient");
  Eigen::LDLT<Mat> ldlt(h.G);
  h.Ginv = ldlt.solve(Mat::Identity(P, P));
  h.theta_hat = h.Xhat * ldlt.solve(h.Y);
}

} // namespace detail

inline HatDataset build_hat_dataset(const RawDataset &raw, const ShapeParams &shape) {
  HatDataset h;
  h.shape = shape;
  const auto N0 = raw.N0();
  h.Xhat.resize(raw.X.rows(), raw.X.cols());
  h.raw_norm2.resize(raw.X.cols());
  for (Eigen::Index m = 0; m < raw.X.cols(); ++m) {
    h.Xhat.col(m) = embed(raw.X.col(m), shape, N0);
    h.raw_norm2(m) = raw.X.col(m).squaredNorm() / static_cast<double>(N0);
  }
  h.Y = raw.Y;
  detail::finish_hat(h, std::nullopt);
  if (raw.x_test)
    h.set_test_raw(*raw.x_test);
  return h;
}

// Dataset given directly in hat space; raw norms follow from the inverse map.
inline HatDataset hat_dataset_from_hat(const Mat &Xhat, const Vec &Y, const ShapeParams &shape,
                                       std::optional<Spectrum> spec = std::nullopt) {
  HatDataset h;
  h.shape = shape;
  h.Xhat = Xhat;
  h.Y = Y;
  h.raw_norm2.resize(Xhat.cols());
  for (Eigen::Index m = 0; m < Xhat.cols(); ++m)
    h.raw_norm2(m) = raw_norm2_from_hat(Xhat.col(m).squaredNorm(), shape);
  detail::finish_hat(h, std::move(spec));
  return h;
}

inline RawDataset unembed_dataset(const HatDataset &h) {
  RawDataset raw;
  raw.X.resize(h.Xhat.rows(), h.Xhat.cols());
  for (Eigen::Index m = 0; m < h.Xhat.cols(); ++m)
    raw.X.col(m) = unembed(h.Xhat.col(m), h.shape, h.N0());
  raw.Y = h.Y;
  if (h.xhat_test)
    raw.x_test = unembed(*h.xhat_test, h.shape, h.N0());
  return raw;
}

enum class FlowMode { closed_form, discrete };

// Infinite-width kernel after unit depth-time. discrete iterates
// K ← K ∘ (1 + (ψ/L)(K_μμ + K_νν)) L times.
inline Mat kernel_ode_flow(const Mat &K0, double psi, FlowMode mode, int L = 0) {
  const Eigen::Index P = K0.rows();
  if (mode == FlowMode::closed_form) {
    Vec d(P);
    for (Eigen::Index m = 0; m < P; ++m) {
      double den = 1.0 - 2.0 * psi * K0(m, m);
      if (!(den > 0.0))
        throw FiniteTimeBlowup("kernel flow diverges before unit time");
      d(m) = 1.0 / std::sqrt(den);
    }
    return d.asDiagonal() * K0 * d.asDiagonal();
  }
  require(L >= 1, "discrete flow needs L >= 1");
  Mat K = K0;
  for (int l = 0; l < L; ++l) {
    Vec dg = K.diagonal();
    for (Eigen::Index a = 0; a < P; ++a)
      for (Eigen::Index b = 0; b < P; ++b)
        K(a, b) *= 1.0 + (psi / L) * (dg(a) + dg(b));
    if (!K.allFinite() || (K.diagonal().array() <= 0.0).any())
      throw FiniteTimeBlowup("discrete kernel flow left the positive cone");
  }
  return K;
}

// JSON container: matrices row-major with explicit dimensions.
namespace io {

inline nlohmann::json mat_to_json(const Mat &m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Mat mat_from_json(const nlohmann::json &j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto &d = j.at("data");
  if (static_cast<Eigen::Index>(d.size()) != r * c)
    throw ShapeMismatch("matrix payload size mismatch");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k)
      m(i, k) = d[static_cast<std::size_t>(i * c + k)].get<double>();
  return m;
}

inline nlohmann::json vec_to_json(const Vec &v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vec vec_from_json(const nlohmann::json &j) {
  auto s = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(s.data(), static_cast<Eigen::Index>(s.size()));
}

} // namespace io

inline nlohmann::json to_json(const HatDataset &h) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = "hat_dataset";
  j["shape"] = {{"psi", h.shape.psi}, {"eta", h.shape.eta}};
  j["Xhat"] = io::mat_to_json(h.Xhat);
  j["Y"] = io::vec_to_json(h.Y);
  if (h.xhat_test)
    j["xhat_test"] = io::vec_to_json(*h.xhat_test);
  return j;
}

inline HatDataset hat_dataset_from_json(const nlohmann::json &j) {
  ShapeParams s{j.at("shape").at("psi").get<double>(), j.at("shape").at("eta").get<double>()};
  HatDataset h = hat_dataset_from_hat(io::mat_from_json(j.at("Xhat")), io::vec_from_json(j.at("Y")), s);
  if (j.contains("xhat_test"))
    h.set_test_hat(io::vec_from_json(j.at("xhat_test")));
  return h;
}

} // namespace shapenet
