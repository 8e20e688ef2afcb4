#pragma once

#include <cmath>

#include "rib/gaussian_rib.hpp"
#include "rib/rng.hpp"

namespace rib::testing {

/// Wishart-like SPD matrix with eigenvalues bounded away from zero.
inline Matrix random_spd(Index n, Rng& rng, double ridge = 0.2) {
  const Matrix g = rng.normal_matrix(n, n + 2);
  return linalg::symmetrize(g * g.transpose() / static_cast<double>(n + 2) + ridge * Matrix::Identity(n, n));
}

/// Valid joint: Sigma_y = Sigma_yx Sigma_x^-1 Sigma_xy + Xi with Xi SPD.
inline gauss::GaussianJoint random_joint(Index p, Index k, Rng& rng, bool isotropic) {
  Matrix sx;
  if (isotropic) {
    sx = std::exp(rng.uniform(std::log(0.5), std::log(2.0))) * Matrix::Identity(p, p);
  } else {
    sx = random_spd(p, rng);
  }
  const Matrix sxy = rng.normal_matrix(p, k);
  const Matrix sy =
      linalg::symmetrize(sxy.transpose() * linalg::spd_inverse(sx) * sxy + random_spd(k, rng, 0.3));
  return gauss::GaussianJoint::make(sx, sy, sxy);
}

inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

}  // namespace rib::testing
