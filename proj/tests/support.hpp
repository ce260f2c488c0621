#pragma once

#include "shapenet/feature_map.hpp"
#include "shapenet/rng.hpp"

#include <cmath>

namespace testing_support {

using namespace shapenet;

inline Mat gaussian_matrix(Eigen::Index r, Eigen::Index c, Engine &g, double scale = 1.0) {
  Normal n;
  Mat A(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i)
      A(i, j) = scale * n(g);
  return A;
}

inline Vec gaussian_vector(Eigen::Index r, Engine &g, double scale = 1.0) {
  return gaussian_matrix(r, 1, g, scale).col(0);
}

// Raw dataset with ‖x_μ‖²/N₀ close to `ratio`, so embeddings stay valid.
inline RawDataset random_raw(std::size_t N0, std::size_t P, Engine &g, double ratio = 0.3,
                             bool with_test = true) {
  RawDataset raw;
  const double s = std::sqrt(ratio);
  raw.X = gaussian_matrix(static_cast<Eigen::Index>(N0), static_cast<Eigen::Index>(P), g, s);
  raw.Y = gaussian_vector(static_cast<Eigen::Index>(P), g);
  if (with_test)
    raw.x_test = gaussian_vector(static_cast<Eigen::Index>(N0), g, s);
  return raw;
}

inline bool within_se(double est, double se, double exact, double k = 3.0, double floor = 1e-12) {
  return std::abs(est - exact) <= k * se + floor * (1.0 + std::abs(exact));
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

} // namespace testing_support
