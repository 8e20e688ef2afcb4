#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace rib {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

/// Relative eigenvalue floor used by every square root / inverse.
inline constexpr double kEigenFloor = 1e-12;

struct SymEig {
  Vector values;   // descending
  Matrix vectors;  // columns match values
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline SymEig sym_eig_desc(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  require(es.info() == Eigen::Success, ErrorCode::NonFinite, "eigendecomposition failed");
  const Index n = m.rows();
  SymEig out{Vector(n), Matrix(n, n)};
  for (Index i = 0; i < n; ++i) {
    out.values(i) = es.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  return out;
}

/// m^power for a symmetric positive definite m. Eigenvalues below
/// kEigenFloor * lambda_max raise RankDeficient.
inline Matrix sym_power(const Matrix& m, double power, const std::string& what) {
  const SymEig e = sym_eig_desc(m);
  if (e.values.size() == 0) return Matrix(0, 0);
  const double top = e.values(0);
  require(top > 0.0 && std::isfinite(top), ErrorCode::RankDeficient, what + " is not positive definite");
  Vector d(e.values.size());
  for (Index i = 0; i < d.size(); ++i) {
    require(e.values(i) > kEigenFloor * top, ErrorCode::RankDeficient,
            what + " has an eigenvalue below the floor");
    d(i) = std::pow(e.values(i), power);
  }
  return e.vectors * d.asDiagonal() * e.vectors.transpose();
}

inline bool is_positive_definite(const Matrix& m) {
  if (m.rows() == 0) return true;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  return llt.info() == Eigen::Success;
}

/// Returns sigma^2 if m = sigma^2 I up to a relative max-norm deviation of rel_tol.
inline std::optional<double> scalar_identity(const Matrix& m, double rel_tol = 1e-10) {
  if (m.rows() == 0 || m.rows() != m.cols()) return std::nullopt;
  const double s = m.diagonal().mean();
  if (!(s > 0.0)) return std::nullopt;
  const Matrix dev = m - s * Matrix::Identity(m.rows(), m.cols());
  if (dev.cwiseAbs().maxCoeff() > rel_tol * s) return std::nullopt;
  return s;
}

/// log det of a symmetric positive definite matrix.
inline double logdet_spd(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  require(llt.info() == Eigen::Success, ErrorCode::SingularCovariance, "matrix is not positive definite");
  const Matrix& l = llt.matrixLLT();
  double s = 0.0;
  for (Index i = 0; i < m.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

inline Matrix spd_inverse(const Matrix& m) {
  if (m.rows() == 0) return Matrix(0, 0);
  Eigen::LLT<Matrix> llt(symmetrize(m));
  require(llt.info() == Eigen::Success, ErrorCode::SingularCovariance, "matrix is not positive definite");
  return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Random orthogonal matrix from the QR factor of a Gaussian matrix (sign fixed).
template <class Rng>
Matrix random_orthogonal(Index n, Rng& rng) {
  Matrix g = rng.normal_matrix(n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

}  // namespace linalg
}  // namespace rib
