#pragma once

// Layerwise random-graph chain over the 2q vertices μ_1,ν_1,...,μ_q,ν_q and
// the moment estimator built on it.

#include "shapenet/core.hpp"
#include "shapenet/rng.hpp"
#include "shapenet/shaped_network.hpp"

#include <ostream>
#include <utility>
#include <vector>

namespace shapenet {

struct GraphState {
  std::vector<int> point;                    // data index of each vertex
  std::vector<std::pair<int, int>> edges;    // multiset, self-loops included
  std::vector<int> births;                   // self-loops ever added at each vertex
  std::vector<std::vector<int>> loop_layers; // creation layer of each self-loop
  int layer = 0;
  double log_c = 0.0;
  int sign = 1;

  std::size_t q() const { return point.size() / 2; }
  int degree(int v) const { return 1 + 2 * births[static_cast<std::size_t>(v)]; }
  int self_loops() const {
    int n = 0;
    for (const auto &e : edges)
      n += e.first == e.second;
    return n;
  }
  std::size_t base_edges() const { return edges.size() - static_cast<std::size_t>(self_loops()); }
};

struct GraphTraceRow {
  int layer = 0;
  std::size_t edges = 0;
  int self_loops = 0;
  int births = 0;
  bool shuffle = false;
};

inline GraphState initial_graph(const std::vector<int> &mu, const std::vector<int> &nu, int L) {
  if (mu.size() != nu.size() || mu.empty())
    throw InvalidArgument("graph: index tuples must be non-empty and equal length");
  GraphState st;
  const std::size_t q = mu.size();
  st.point.resize(2 * q);
  for (std::size_t p = 0; p < q; ++p) {
    st.point[2 * p] = mu[p];
    st.point[2 * p + 1] = nu[p];
    st.edges.emplace_back(static_cast<int>(2 * p), static_cast<int>(2 * p + 1));
  }
  st.births.assign(2 * q, 0);
  st.loop_layers.assign(2 * q, {});
  st.layer = L;
  return st;
}

// Transition E^{(ℓ+1)} → E^{(ℓ)}. The width entering the shuffle and c factors is
// that of the layer being integrated out, N_{ℓ+1}.
inline void graph_step(GraphState &st, const NetworkConfig &cfg, Engine &g,
                       GraphTraceRow *trace = nullptr) {
  if (st.layer < 1)
    throw InvalidArgument("graph_step: chain already at layer 0");
  const int L = cfg.L();
  const double a = std::abs(cfg.psi);
  const double N = static_cast<double>(cfg.width(st.layer));
  const double m = static_cast<double>(st.edges.size());
  const double pairs = 0.5 * m * (m - 1.0);
  const double p_shuffle = 2.0 / N * pairs;
  if (p_shuffle > 1.0)
    throw ProbabilityOverflow("graph_step: shuffle probability exceeds 1");
  for (std::size_t v = 0; v < st.births.size(); ++v)
    if (a * st.degree(static_cast<int>(v)) / L > 1.0)
      throw ProbabilityOverflow("graph_step: self-loop probability exceeds 1");

  st.log_c += m * std::log(cfg.sigma2()) + std::log1p(2.0 * a * m / L + p_shuffle);

  bool shuffled = false;
  if (p_shuffle > 0.0 && uniform01(g) < p_shuffle) {
    shuffled = true;
    const auto E = st.edges.size();
    std::uniform_int_distribution<std::size_t> pick(0, E - 1);
    std::size_t i = pick(g), j = pick(g);
    while (j == i)
      j = pick(g);
    auto e1 = st.edges[i], e2 = st.edges[j];
    if (uniform01(g) < 0.5) {
      st.edges[i] = {e1.first, e2.first};
      st.edges[j] = {e1.second, e2.second};
    } else {
      st.edges[i] = {e1.first, e2.second};
      st.edges[j] = {e1.second, e2.first};
    }
  }

  int born = 0;
  if (a > 0.0) {
    const std::size_t nv = st.births.size();
    for (std::size_t v = 0; v < nv; ++v) {
      if (uniform01(g) < a * st.degree(static_cast<int>(v)) / L) {
        st.edges.emplace_back(static_cast<int>(v), static_cast<int>(v));
        st.loop_layers[v].push_back(st.layer - 1);
        ++born;
      }
    }
    for (std::size_t v = 0; v < nv; ++v)
      st.births[v] = static_cast<int>(st.loop_layers[v].size());
    if (cfg.psi < 0.0 && (born & 1))
      st.sign = -st.sign;
  }
  --st.layer;
  if (trace) {
    trace->layer = st.layer;
    trace->edges = st.edges.size();
    trace->self_loops = st.self_loops();
    trace->births = born;
    trace->shuffle = shuffled;
  }
}

// Runs the chain from layer L to 0 and returns sgn·c·∏ω over the final edges.
// gram holds raw inner products ⟨x_μ, x_ν⟩.
inline double graph_sample(const std::vector<int> &mu, const std::vector<int> &nu, const Mat &gram,
                           const NetworkConfig &cfg, Engine &g,
                           std::vector<GraphTraceRow> *trace = nullptr) {
  GraphState st = initial_graph(mu, nu, cfg.L());
  GraphTraceRow row;
  while (st.layer > 0) {
    graph_step(st, cfg, g, trace ? &row : nullptr);
    if (trace)
      trace->push_back(row);
  }
  const double w0 = cfg.sigma2() / static_cast<double>(cfg.N0);
  double prod = 1.0;
  for (const auto &e : st.edges)
    prod *= w0 * gram(st.point[static_cast<std::size_t>(e.first)],
                      st.point[static_cast<std::size_t>(e.second)]);
  return st.sign * std::exp(st.log_c) * prod;
}

enum class MomentConvention {
  readout_scaled, // edge weights σ²⟨·,·⟩/N
  plain           // weights ⟨·,·⟩/N; estimator divided by σ^{2q}
};

inline Estimate estimate_moment(const std::vector<int> &mu, const std::vector<int> &nu,
                                const Mat &gram, const NetworkConfig &cfg, std::size_t n_samples,
                                MomentConvention conv = MomentConvention::readout_scaled,
                                int threads = 1) {
  cfg.validate();
  if (gram.rows() != gram.cols())
    throw ShapeMismatch("estimate_moment: gram must be square");
  for (std::size_t p = 0; p < mu.size(); ++p)
    if (mu[p] < 0 || nu[p] < 0 || mu[p] >= gram.rows() || (p < nu.size() && nu[p] >= gram.rows()))
      throw InvalidArgument("estimate_moment: index out of range");
  require(n_samples >= 1, "estimate_moment: n_samples >= 1");
  const double scale =
      conv == MomentConvention::plain ? std::pow(cfg.sigma2(), -static_cast<double>(mu.size())) : 1.0;
  auto blocks = run_replicas(child_seed(cfg.seed, "graph"), n_samples, 1, threads,
                             [&](Engine &g, std::size_t, BlockSums &b) {
                               b.add(0, scale * graph_sample(mu, nu, gram, cfg, g));
                             });
  return jackknife_mean(blocks, 0);
}

inline void write_trace_csv(std::ostream &os, const std::vector<GraphTraceRow> &rows) {
  os << "layer,edges,self_loops,births,shuffle\n";
  for (const auto &r : rows)
    os << r.layer << ',' << r.edges << ',' << r.self_loops << ',' << r.births << ','
       << (r.shuffle ? 1 : 0) << '\n';
}

} // namespace shapenet
