#pragma once

// Seed splitting and replica-parallel Monte Carlo with block jackknife errors.
//
// Replicas are grouped into fixed blocks; block b draws from an engine seeded
// by child_seed(seed, b). The block layout depends only on the replica count,
// so results are bit-identical for any number of threads.

#include "shapenet/core.hpp"

#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

namespace shapenet {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Named sub-streams, e.g. child_seed(seed, "wick") for per-module seeds.
inline std::uint64_t child_seed(std::uint64_t seed, const char *label) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char *p = label; *p; ++p)
    h = (h ^ static_cast<unsigned char>(*p)) * 1099511628211ULL;
  return child_seed(seed, h);
}

struct Normal {
  boost::random::normal_distribution<double> dist{0.0, 1.0};
  double operator()(Engine &g) { return dist(g); }
};

inline double uniform01(Engine &g) {
  // 53-bit mantissa in (0,1)
  return (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
}

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

// Per-block sums of k scalar observables.
struct BlockSums {
  std::vector<double> s;
  std::size_t count = 0;
  explicit BlockSums(std::size_t k = 0) : s(k, 0.0) {}
  void add(std::size_t q, double v) { s[q] += v; }
};

inline std::size_t default_block_size(std::size_t n) {
  return std::clamp<std::size_t>(n / 256, 1, 256);
}

inline int resolve_threads(int threads) {
  if (threads > 0)
    return threads;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// fn(Engine&, std::size_t replica, BlockSums&) is called once per replica.
template <class Fn>
std::vector<BlockSums> run_replicas(std::uint64_t seed, std::size_t n,
                                    std::size_t k, int threads, Fn fn) {
  const std::size_t bs = default_block_size(n);
  const std::size_t nb = (n + bs - 1) / bs;
  std::vector<BlockSums> blocks(nb, BlockSums(k));
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&]() {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= nb)
        return;
      try {
        Engine g(child_seed(seed, b));
        std::size_t lo = b * bs, hi = std::min(n, lo + bs);
        for (std::size_t r = lo; r < hi; ++r)
          fn(g, r, blocks[b]);
        blocks[b].count = hi - lo;
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err)
          err = std::current_exception();
        next = nb;
        return;
      }
    }
  };
  int nt = std::min<int>(resolve_threads(threads), static_cast<int>(nb));
  if (nt <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nt; ++i)
      pool.emplace_back(worker);
    for (auto &t : pool)
      t.join();
  }
  if (err)
    std::rethrow_exception(err);
  return blocks;
}

// Delete-one-block jackknife of the mean of observable q.
inline Estimate jackknife_mean(const std::vector<BlockSums> &blocks, std::size_t q) {
  double tot = 0.0;
  std::size_t n = 0;
  for (const auto &b : blocks) {
    tot += b.s[q];
    n += b.count;
  }
  Estimate e;
  e.n = n;
  if (n == 0)
    return e;
  e.mean = tot / static_cast<double>(n);
  const std::size_t nb = blocks.size();
  if (nb < 2)
    return e;
  double acc = 0.0;
  for (const auto &b : blocks) {
    double m = (tot - b.s[q]) / static_cast<double>(n - b.count);
    acc += sqr(m - e.mean);
  }
  e.se = std::sqrt(acc * static_cast<double>(nb - 1) / static_cast<double>(nb));
  return e;
}

// Jackknife for the ratio of two block-summed observables.
inline Estimate jackknife_ratio(const std::vector<BlockSums> &blocks, std::size_t qn,
                                std::size_t qd) {
  double tn = 0.0, td = 0.0;
  std::size_t n = 0;
  for (const auto &b : blocks) {
    tn += b.s[qn];
    td += b.s[qd];
    n += b.count;
  }
  Estimate e;
  e.n = n;
  e.mean = tn / td;
  const std::size_t nb = blocks.size();
  if (nb < 2)
    return e;
  double acc = 0.0;
  for (const auto &b : blocks)
    acc += sqr((tn - b.s[qn]) / (td - b.s[qd]) - e.mean);
  e.se = std::sqrt(acc * static_cast<double>(nb - 1) / static_cast<double>(nb));
  return e;
}

} // namespace shapenet
