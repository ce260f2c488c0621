#pragma once

// Finite shaped MLP f(x) = W^{L+1} x^{(L)}/√N_L with φ(t) = t + ψt³/(3L).
//
// Prior statistics are estimated by sampling each layer's pre-activations
// directly: given the Gram K = X^{(ℓ-1)ᵀ}X^{(ℓ-1)}/N_{ℓ-1} of the previous layer,
// the rows of W^{(ℓ)}X^{(ℓ-1)}/√N_{ℓ-1} are iid N(0, σ²K). This has the same law
// as sampling the weights but costs N_ℓ·P per layer instead of N_ℓ·N_{ℓ-1}.

#include "shapenet/core.hpp"
#include "shapenet/rng.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace shapenet {

enum class EtaConvention {
  two_eta, // σ² = 1 + 2η/L
  one_eta  // σ² = 1 + η/L
};

struct NetworkConfig {
  std::size_t N0 = 1;
  std::vector<std::size_t> widths; // N_1..N_L
  double psi = 0.0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  EtaConvention eta_convention = EtaConvention::two_eta;

  int L() const { return static_cast<int>(widths.size()); }
  double sigma2() const {
    const double k = eta_convention == EtaConvention::two_eta ? 2.0 : 1.0;
    return 1.0 + k * eta / static_cast<double>(L());
  }
  std::size_t width(int l) const { return l == 0 ? N0 : widths[static_cast<std::size_t>(l - 1)]; }

  void validate() const {
    if (widths.empty())
      throw InvalidArgument("network depth L must be >= 1");
    if (N0 < 1)
      throw InvalidArgument("N0 must be >= 1");
    for (auto w : widths)
      if (w < 1)
        throw InvalidArgument("hidden widths must be >= 1");
    if (!(sigma2() > 0.0))
      throw InvalidArgument("weight variance 1 + 2 eta/L must be positive");
  }

  static NetworkConfig uniform(std::size_t N0, std::size_t N, int L, double psi, double eta,
                               std::uint64_t seed = 0) {
    NetworkConfig c;
    c.N0 = N0;
    c.widths.assign(static_cast<std::size_t>(L), N);
    c.psi = psi;
    c.eta = eta;
    c.seed = seed;
    return c;
  }
};

struct NetworkParams {
  std::vector<Mat> weights; // W^{(1)}..W^{(L+1)}
};

inline double shaped_activation(double t, double psi, int L) {
  require(L >= 1, "shaped_activation: L >= 1");
  return t + psi * t * t * t / (3.0 * L);
}

inline Vec shaped_activation(const Vec &t, double psi, int L) {
  require(L >= 1, "shaped_activation: L >= 1");
  return t.unaryExpr([&](double v) { return v + psi * v * v * v / (3.0 * L); });
}

inline NetworkParams sample_prior(const NetworkConfig &cfg, Engine &g) {
  cfg.validate();
  const double sd = std::sqrt(cfg.sigma2());
  Normal nrm;
  NetworkParams p;
  const int L = cfg.L();
  for (int l = 1; l <= L + 1; ++l) {
    const auto rows = static_cast<Eigen::Index>(l == L + 1 ? 1 : cfg.width(l));
    const auto cols = static_cast<Eigen::Index>(cfg.width(l - 1));
    Mat W(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        W(i, j) = sd * nrm(g);
    p.weights.push_back(std::move(W));
  }
  return p;
}

inline NetworkParams sample_prior(const NetworkConfig &cfg) {
  Engine g(cfg.seed);
  return sample_prior(cfg, g);
}

struct ForwardResult {
  double output = 0.0;
  std::vector<Vec> hidden; // hidden[0] = x, hidden[ℓ] = x^{(ℓ)}
};

inline ForwardResult forward(const NetworkParams &p, const Vec &x, double psi) {
  if (p.weights.size() < 2)
    throw InvalidArgument("forward: need at least one hidden layer");
  const int L = static_cast<int>(p.weights.size()) - 1;
  if (x.size() != p.weights[0].cols())
    throw ShapeMismatch("forward: input length differs from N0");
  ForwardResult r;
  r.hidden.push_back(x);
  for (int l = 1; l <= L; ++l) {
    const Mat &W = p.weights[static_cast<std::size_t>(l - 1)];
    const Vec &prev = r.hidden.back();
    if (W.cols() != prev.size())
      throw ShapeMismatch("forward: weight shapes not chain-compatible");
    Vec h = W * prev / std::sqrt(static_cast<double>(prev.size()));
    r.hidden.push_back(shaped_activation(h, psi, L));
  }
  const Mat &Wout = p.weights.back();
  if (Wout.rows() != 1 || Wout.cols() != r.hidden.back().size())
    throw ShapeMismatch("forward: readout must be 1 x N_L");
  r.output = (Wout * r.hidden.back())(0) / std::sqrt(static_cast<double>(r.hidden.back().size()));
  return r;
}

namespace detail {

// A with AAᵀ = S for a PSD matrix S.
inline Mat psd_factor(const Mat &S) {
  Eigen::LLT<Mat> llt(S);
  if (llt.info() == Eigen::Success)
    return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

} // namespace detail

// One draw of the final-layer Gram X^{(L)ᵀ}X^{(L)}/N_L for the columns of X.
// Returns false if the activations overflowed.
inline bool sample_final_gram(const NetworkConfig &cfg, const Mat &X, Engine &g, Mat &K) {
  const Eigen::Index P = X.cols();
  const int L = cfg.L();
  const double s2 = cfg.sigma2();
  K = X.transpose() * X / static_cast<double>(cfg.N0);
  Normal nrm;
  Vec z(P), h(P);
  Mat Knew(P, P);
  for (int l = 1; l <= L; ++l) {
    const Mat A = detail::psd_factor(s2 * K);
    const auto N = cfg.width(l);
    Knew.setZero();
    for (std::size_t i = 0; i < N; ++i) {
      for (Eigen::Index a = 0; a < P; ++a)
        z(a) = nrm(g);
      h.noalias() = A * z;
      for (Eigen::Index a = 0; a < P; ++a)
        h(a) += cfg.psi * h(a) * h(a) * h(a) / (3.0 * L);
      Knew.selfadjointView<Eigen::Lower>().rankUpdate(h);
    }
    K = Knew.selfadjointView<Eigen::Lower>();
    K /= static_cast<double>(N);
    if (!K.allFinite())
      return false;
  }
  return true;
}

struct PriorStats {
  Estimate moment;  // E[((1/N_L)‖X^{(L)}t + x^{(L)}τ‖²)^q]
  Estimate laplace; // E[exp(−(σ²/2N_L)‖X^{(L)}t + x^{(L)}τ‖²)]
  bool overflow = false;
  std::uint64_t seed = 0;
};

// X holds the training inputs as columns; a test input, when given, is sourced by tau.
inline PriorStats mc_prior_stats(const NetworkConfig &cfg, const Mat &X, const Vec &t, double tau,
                                 int q, std::size_t n_samples, const Vec *x_test = nullptr,
                                 int threads = 1) {
  cfg.validate();
  if (n_samples < 100)
    throw InvalidArgument("mc_prior_stats: n_samples must be >= 100");
  if (static_cast<std::size_t>(X.rows()) != cfg.N0)
    throw ShapeMismatch("mc_prior_stats: X rows differ from N0");
  if (t.size() != X.cols())
    throw ShapeMismatch("mc_prior_stats: t length differs from P");
  require(q >= 1, "mc_prior_stats: q >= 1");
  Mat Xa = X;
  Vec za = t;
  if (x_test) {
    Xa.conservativeResize(Eigen::NoChange, X.cols() + 1);
    Xa.col(X.cols()) = *x_test;
    za.conservativeResize(t.size() + 1);
    za(t.size()) = tau;
  }
  PriorStats out;
  out.seed = cfg.seed;
  if (za.isZero(0.0)) {
    out.moment = {0.0, 0.0, n_samples};
    out.laplace = {1.0, 0.0, n_samples};
    return out;
  }
  const double s2 = cfg.sigma2();
  std::atomic<bool> overflow{false};
  auto blocks = run_replicas(child_seed(cfg.seed, "prior"), n_samples, 2, threads,
                             [&](Engine &g, std::size_t, BlockSums &b) {
                               Mat K;
                               if (!sample_final_gram(cfg, Xa, g, K)) {
                                 overflow = true;
                                 return;
                               }
                               const double v = za.dot(K * za);
                               b.add(0, std::pow(v, q));
                               b.add(1, std::exp(-0.5 * s2 * v));
                             });
  if (overflow) {
    out.overflow = true;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.moment = out.laplace = {nan, nan, n_samples};
    return out;
  }
  out.moment = jackknife_mean(blocks, 0);
  out.laplace = jackknife_mean(blocks, 1);
  return out;
}

// E[∏_p w_p] with w_p = (c/N_L)⟨x^{(L)}_{μ_p}, x^{(L)}_{ν_p}⟩, c = σ² when readout_scaled.
inline Estimate mc_overlap_moment(const NetworkConfig &cfg, const Mat &X,
                                  const std::vector<int> &mu, const std::vector<int> &nu,
                                  std::size_t n_samples, bool readout_scaled = true,
                                  int threads = 1) {
  cfg.validate();
  if (mu.size() != nu.size() || mu.empty())
    throw InvalidArgument("mc_overlap_moment: index tuples must be non-empty and equal length");
  for (std::size_t p = 0; p < mu.size(); ++p)
    if (mu[p] < 0 || nu[p] < 0 || mu[p] >= X.cols() || nu[p] >= X.cols())
      throw InvalidArgument("mc_overlap_moment: index out of range");
  const double c = readout_scaled ? cfg.sigma2() : 1.0;
  std::atomic<bool> overflow{false};
  auto blocks = run_replicas(child_seed(cfg.seed, "overlap"), n_samples, 1, threads,
                             [&](Engine &g, std::size_t, BlockSums &b) {
                               Mat K;
                               if (!sample_final_gram(cfg, X, g, K)) {
                                 overflow = true;
                                 return;
                               }
                               double v = 1.0;
                               for (std::size_t p = 0; p < mu.size(); ++p)
                                 v *= c * K(mu[p], nu[p]);
                               b.add(0, v);
                             });
  if (overflow)
    throw FiniteTimeBlowup("mc_overlap_moment: activations overflowed");
  return jackknife_mean(blocks, 0);
}

} // namespace shapenet
