#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>

namespace shapenet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;

inline constexpr double inf = std::numeric_limits<double>::infinity();

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define SHAPENET_ERROR(name)                                                   \
  struct name : Error {                                                        \
    using Error::Error;                                                        \
  }

SHAPENET_ERROR(InvalidArgument);
SHAPENET_ERROR(ShapeMismatch);
SHAPENET_ERROR(SingularEmbedding);
SHAPENET_ERROR(Unreachable);
SHAPENET_ERROR(RankDeficient);
SHAPENET_ERROR(FiniteTimeBlowup);
SHAPENET_ERROR(ProbabilityOverflow);
SHAPENET_ERROR(IllConditioned);
SHAPENET_ERROR(OutsidePerturbativeRegime);
SHAPENET_ERROR(NonConvergence);

#undef SHAPENET_ERROR

inline void require(bool ok, const std::string &what) {
  if (!ok)
    throw InvalidArgument(what);
}

inline double sqr(double x) { return x * x; }

} // namespace shapenet
