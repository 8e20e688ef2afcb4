#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "optimize.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace rib::gauss {

/// Covariance blocks of a jointly Gaussian (X, Y).
struct GaussianJoint {
  Matrix sigma_x;   // p x p
  Matrix sigma_y;   // k x k
  Matrix sigma_xy;  // p x k

  Index p() const { return sigma_x.rows(); }
  Index k() const { return sigma_y.rows(); }

  Matrix sigma_yx() const { return sigma_xy.transpose(); }

  /// Cov(Y|X) = Sigma_y - Sigma_yx Sigma_x^-1 Sigma_xy.
  Matrix cov_y_given_x() const {
    return linalg::symmetrize(sigma_y - sigma_xy.transpose() * linalg::spd_inverse(sigma_x) * sigma_xy);
  }

  /// Cov(X|Y) = Sigma_x - Sigma_xy Sigma_y^-1 Sigma_yx.
  Matrix cov_x_given_y() const {
    return linalg::symmetrize(sigma_x - sigma_xy * linalg::spd_inverse(sigma_y) * sigma_xy.transpose());
  }

  Matrix joint_covariance() const {
    Matrix c(p() + k(), p() + k());
    c << sigma_x, sigma_xy, sigma_xy.transpose(), sigma_y;
    return c;
  }

  void check_shapes() const {
    require(p() >= 1 && k() >= 1, ErrorCode::DimensionMismatch, "empty covariance block");
    require(sigma_x.cols() == p() && sigma_y.cols() == k(), ErrorCode::DimensionMismatch,
            "covariance blocks must be square");
    require(sigma_xy.rows() == p() && sigma_xy.cols() == k(), ErrorCode::DimensionMismatch,
            "sigma_xy must be p x k");
  }

  void validate() const {
    check_shapes();
    require(sigma_x.allFinite() && sigma_y.allFinite() && sigma_xy.allFinite(), ErrorCode::NonFinite,
            "joint has non-finite entries");
    const auto asym = [](const Matrix& m) {
      return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + m.cwiseAbs().maxCoeff());
    };
    require(asym(sigma_x) && asym(sigma_y), ErrorCode::InvalidArgument, "covariances must be symmetric");
    require(linalg::is_positive_definite(sigma_x), ErrorCode::SingularCovariance, "sigma_x must be positive definite");
    require(linalg::is_positive_definite(cov_y_given_x()), ErrorCode::SingularCovariance,
            "Cov(Y|X) must be positive definite");
  }

  static GaussianJoint make(Matrix sx, Matrix sy, Matrix sxy) {
    GaussianJoint j{std::move(sx), std::move(sy), std::move(sxy)};
    j.validate();
    return j;
  }
};

/// T = A X + eps with eps ~ N(0, I_m).
struct LinearGaussianEncoder {
  Matrix a;

  Index features() const { return a.rows(); }
  Index inputs() const { return a.cols(); }
};

enum class Formulation { Mmse, InformationBottleneck, MutualFisher };

inline const char* to_string(Formulation f) {
  switch (f) {
    case Formulation::Mmse: return "mmse";
    case Formulation::InformationBottleneck: return "ib";
    case Formulation::MutualFisher: return "mutual_fisher";
  }
  return "?";
}

struct RibConfig {
  double beta = 0.0;
  double gamma = 0.0;
  Formulation formulation = Formulation::Mmse;

  void validate() const {
    require(beta >= 0.0 && std::isfinite(beta), ErrorCode::InvalidArgument, "beta must be >= 0");
    require(gamma >= 0.0 && std::isfinite(gamma), ErrorCode::InvalidArgument, "gamma must be >= 0");
    require(formulation != Formulation::MutualFisher || gamma == 0.0, ErrorCode::InvalidArgument,
            "mutual_fisher formulation requires gamma = 0");
  }
};

struct SpectrumEntry {
  double value;    // lambda_i or ell_i
  double scaling;  // d_i
};

struct RibSolution {
  LinearGaussianEncoder encoder;
  double objective_value = 0.0;
  std::vector<SpectrumEntry> spectrum;
  Index active_dims = 0;

  Formulation formulation = Formulation::Mmse;
  double beta = 0.0;
  double gamma = 0.0;
  // Closed forms that are only stationary points (or upper bounds) carry exact = false.
  bool exact = true;
  bool surrogate = false;
  // Surrogate objective at the returned encoder (NaN unless surrogate).
  double surrogate_value = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void check_encoder(const GaussianJoint& joint, const LinearGaussianEncoder& enc) {
  joint.check_shapes();
  require(enc.inputs() == joint.p() || (enc.features() == 0 && enc.inputs() == 0), ErrorCode::DimensionMismatch,
          "encoder input dimension must equal p");
  require(enc.a.allFinite(), ErrorCode::NonFinite, "encoder has non-finite entries");
}

inline double sigma_sq_identity(const GaussianJoint& joint) {
  joint.check_shapes();
  const auto s = linalg::scalar_identity(joint.sigma_x, 1e-10);
  require(s.has_value(), ErrorCode::NotIdentityCovariance, "sigma_x is not a multiple of the identity");
  return *s;
}

inline Matrix drop_zero_rows(const Matrix& a, Index p) {
  std::vector<Index> keep;
  for (Index i = 0; i < a.rows(); ++i)
    if (a.row(i).squaredNorm() > 0.0) keep.push_back(i);
  Matrix out(static_cast<Index>(keep.size()), p);
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = a.row(keep[i]);
  return out;
}

}  // namespace detail

/// tr Cov(Y|T) + beta ||A||_F^2.
inline double eval_mmse_objective(const GaussianJoint& joint, const LinearGaussianEncoder& enc, double beta) {
  detail::check_encoder(joint, enc);
  const Matrix& a = enc.a;
  double value = joint.sigma_y.trace();
  if (a.rows() > 0) {
    const Matrix s = a * joint.sigma_x * a.transpose() + Matrix::Identity(a.rows(), a.rows());
    const Matrix ac = a * joint.sigma_xy;  // m x k
    Eigen::LLT<Matrix> llt(s);
    require(llt.info() == Eigen::Success, ErrorCode::NonFinite, "A Sigma_x A^T + I is not positive definite");
    value -= (ac.transpose() * llt.solve(ac)).trace();
    value += beta * a.squaredNorm();
  }
  return value;
}

inline double mi_t_x(const Matrix& sigma_x, const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  return 0.5 * linalg::logdet_spd(a * sigma_x * a.transpose() + Matrix::Identity(a.rows(), a.rows()));
}

inline double mi_t_y(const GaussianJoint& joint, const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  const Matrix ident = Matrix::Identity(a.rows(), a.rows());
  const Matrix cxy = joint.cov_x_given_y();
  return 0.5 * linalg::logdet_spd(a * joint.sigma_x * a.transpose() + ident) -
         0.5 * linalg::logdet_spd(a * cxy * a.transpose() + ident);
}

/// -I(T;Y) + gamma I(T;X) + beta ||A||_F^2.
inline double eval_ib_objective(const GaussianJoint& joint, const LinearGaussianEncoder& enc, double beta,
                                double gamma) {
  detail::check_encoder(joint, enc);
  if (enc.a.rows() == 0) return 0.0;
  return -mi_t_y(joint, enc.a) + gamma * mi_t_x(joint.sigma_x, enc.a) + beta * enc.a.squaredNorm();
}

inline double eval_objective(const GaussianJoint& joint, const LinearGaussianEncoder& enc, const RibConfig& cfg) {
  if (cfg.formulation == Formulation::Mmse) return eval_mmse_objective(joint, enc, cfg.beta);
  return eval_ib_objective(joint, enc, cfg.beta, cfg.gamma);
}

inline RibSolution solve_mmse_identity(const GaussianJoint& joint, double beta) {
  require(beta > 0.0, ErrorCode::InvalidArgument, "beta must be > 0");
  const double s2 = detail::sigma_sq_identity(joint);
  const Index p = joint.p();
  const auto eig = linalg::sym_eig_desc(joint.sigma_xy * joint.sigma_yx());
  const double top = std::max(eig.values(0), 0.0);

  RibSolution sol;
  sol.formulation = Formulation::Mmse;
  sol.beta = beta;
  Matrix a(p, p);
  a.setZero();
  for (Index i = 0; i < p; ++i) {
    const double lam = eig.values(i);
    if (!(lam > linalg::kEigenFloor * top)) continue;
    const double d = lam >= beta ? std::sqrt(lam / beta) - 1.0 : 0.0;
    sol.spectrum.push_back({lam, d});
    if (d > 0.0) a.row(i) = std::sqrt(d / s2) * eig.vectors.col(i).transpose();
  }
  sol.encoder.a = detail::drop_zero_rows(a, p);
  sol.active_dims = sol.encoder.features();
  sol.objective_value = eval_mmse_objective(joint, sol.encoder, beta);
  return sol;
}

inline constexpr double kDMin = 1e-9;
inline constexpr double kGoldenTol = 1e-12;

/// Scalar problem behind the IB identity solution:
///   1/2 log(d * inv_ell + 1) - gamma/2 log d + beta / (s2 d),  d in [kDMin, 1].
inline double ib_univariate(double d, double inv_ell, double s2, double beta, double gamma) {
  return 0.5 * std::log1p(d * inv_ell) - 0.5 * gamma * std::log(d) + beta / (s2 * d);
}

inline RibSolution solve_ib_identity(const GaussianJoint& joint, double beta, double gamma) {
  require(beta > 0.0, ErrorCode::InvalidArgument, "beta must be > 0");
  require(gamma > 0.0, ErrorCode::InvalidArgument, "gamma must be > 0");
  const double s2 = detail::sigma_sq_identity(joint);
  const Index p = joint.p();
  const Matrix xi = joint.cov_y_given_x();
  const Matrix b = linalg::sym_power(xi, -0.5, "Cov(Y|X)") * joint.sigma_yx() / s2;  // k x p
  Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  const Matrix& w = svd.matrixV();  // p x r

  struct Dim {
    double ell, d;
    Index col;
  };
  std::vector<Dim> dims;
  for (Index i = 0; i < sv.size(); ++i) {
    const double inv_ell = s2 * sv(i) * sv(i);
    const auto f = [&](double d) { return ib_univariate(d, inv_ell, s2, beta, gamma); };
    const auto m = opt::golden_section(f, kDMin, 1.0, kGoldenTol);
    require(m.x - kDMin > 2.0 * kGoldenTol, ErrorCode::DegenerateObjective,
            "univariate minimizer reached the lower clamp d_min");
    const double ell = inv_ell > 0.0 ? 1.0 / inv_ell : std::numeric_limits<double>::infinity();
    dims.push_back({ell, m.x, i});
  }
  std::stable_sort(dims.begin(), dims.end(), [](const Dim& x, const Dim& y) { return x.d < y.d; });

  RibSolution sol;
  sol.formulation = Formulation::InformationBottleneck;
  sol.beta = beta;
  sol.gamma = gamma;
  Matrix a(static_cast<Index>(dims.size()), p);
  a.setZero();
  for (std::size_t i = 0; i < dims.size(); ++i) {
    sol.spectrum.push_back({dims[i].ell, dims[i].d});
    if (dims[i].d < 1.0)
      a.row(static_cast<Index>(i)) = std::sqrt((1.0 / dims[i].d - 1.0) / s2) * w.col(dims[i].col).transpose();
  }
  sol.encoder.a = detail::drop_zero_rows(a, p);
  sol.active_dims = sol.encoder.features();
  sol.objective_value = eval_ib_objective(joint, sol.encoder, beta, gamma);
  return sol;
}

/// Closed form for the gamma = 0 objective. Stationarity of the log-det terms
/// carries a factor 1/2, so the scalar equation uses 2 * beta.
inline RibSolution solve_mutual_fisher(const GaussianJoint& joint, double beta) {
  require(beta > 0.0, ErrorCode::InvalidArgument, "beta must be > 0");
  joint.check_shapes();
  const Index p = joint.p(), k = joint.k();
  {
    Eigen::JacobiSVD<Matrix> s(joint.sigma_xy);
    const Vector v = s.singularValues();
    require(k <= p && v.size() == k && v(k - 1) > linalg::kEigenFloor * v(0), ErrorCode::RankDeficient,
            "sigma_xy must have full column rank");
  }
  const Matrix sx_inv_half = linalg::sym_power(joint.sigma_x, -0.5, "sigma_x");
  const Matrix sx_inv = sx_inv_half * sx_inv_half;
  const Matrix c = sx_inv_half * joint.sigma_xy * linalg::sym_power(joint.cov_y_given_x(), -0.5, "Cov(Y|X)");
  Eigen::JacobiSVD<Matrix> svd(c, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Matrix& w = svd.matrixU();  // p x k
  const Matrix& v = svd.matrixV();  // k x k
  const Vector lam = svd.singularValues();

  const Matrix m = linalg::spd_inverse(c.transpose() * sx_inv * c);
  const auto ud = linalg::sym_eig_desc(m);
  const double b2 = 2.0 * beta;
  Vector dt_inv(k);
  for (Index i = 0; i < k; ++i) {
    const double d = ud.values(i);
    const double dt = (1.0 + std::sqrt(1.0 + 4.0 * d / b2)) / (2.0 * d / b2);
    dt_inv(i) = 1.0 / dt;
  }
  const Matrix vu = v.transpose() * ud.vectors;  // V^T U
  const Matrix j = lam.asDiagonal() * vu * dt_inv.asDiagonal() * vu.transpose() * lam.asDiagonal();
  const auto g = linalg::sym_eig_desc(j - Matrix::Identity(k, k));
  require(g.values(k - 1) >= -1e-10, ErrorCode::BetaTooLarge, "J - I is not positive semidefinite");

  RibSolution sol;
  sol.formulation = Formulation::MutualFisher;
  sol.beta = beta;
  Matrix a(k, p);
  for (Index i = 0; i < k; ++i) {
    const double gi = std::max(g.values(i), 0.0);
    sol.spectrum.push_back({lam(i), gi});
    a.row(i) = std::sqrt(gi) * (g.vectors.col(i).transpose() * w.transpose() * sx_inv_half);
  }
  sol.encoder.a = detail::drop_zero_rows(a, p);
  sol.active_dims = sol.encoder.features();
  sol.objective_value = eval_ib_objective(joint, sol.encoder, beta, 0.0);
  sol.exact = (p == k) || linalg::scalar_identity(joint.sigma_x).has_value();
  return sol;
}

/// Weight multiplying tr(D) in the surrogate objective.
enum class SurrogateWeight {
  SpectralNorm,  // beta * lambda_max(Sigma_x^-1): valid bound, exact at Sigma_x = s2 I
  Trace,         // beta * tr(Sigma_x^-1)
};

inline RibSolution solve_mmse_surrogate(const GaussianJoint& joint, double beta,
                                        SurrogateWeight weight = SurrogateWeight::SpectralNorm) {
  require(beta > 0.0, ErrorCode::InvalidArgument, "beta must be > 0");
  joint.check_shapes();
  const Index p = joint.p();
  const Matrix sx_inv_half = linalg::sym_power(joint.sigma_x, -0.5, "sigma_x");
  const Matrix sx_inv = sx_inv_half * sx_inv_half;
  const double c = weight == SurrogateWeight::Trace ? sx_inv.trace() : linalg::sym_eig_desc(sx_inv).values(0);
  const Matrix mm = sx_inv_half * joint.sigma_xy * joint.sigma_yx() * sx_inv_half;
  const auto eig = linalg::sym_eig_desc(mm);
  const double top = std::max(eig.values(0), 0.0);

  RibSolution sol;
  sol.formulation = Formulation::Mmse;
  sol.beta = beta;
  sol.surrogate = !linalg::scalar_identity(joint.sigma_x).has_value();
  sol.exact = !sol.surrogate && (weight == SurrogateWeight::SpectralNorm || p == 1);
  Matrix a(p, p);
  a.setZero();
  double sur = joint.sigma_y.trace() - mm.trace();
  Vector dvec = Vector::Zero(p);
  for (Index i = 0; i < p; ++i) {
    const double lam = eig.values(i);
    if (!(lam > linalg::kEigenFloor * top)) continue;
    const double d = lam >= beta * c ? std::sqrt(lam / (beta * c)) - 1.0 : 0.0;
    dvec(i) = d;
    sol.spectrum.push_back({lam, d});
    sur += lam / (d + 1.0) + beta * c * d;
    if (d > 0.0) a.row(i) = std::sqrt(d) * eig.vectors.col(i).transpose() * sx_inv_half;
  }
  sol.encoder.a = detail::drop_zero_rows(a, p);
  sol.active_dims = sol.encoder.features();
  sol.objective_value = eval_mmse_objective(joint, sol.encoder, beta);
  sol.surrogate_value = sur;
  return sol;
}

/// Number of singular values of A above 1e-8 of the largest (and of 1).
inline Index numeric_rank(const Matrix& a) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const Vector s = svd.singularValues();
  const double cut = 1e-8 * std::max(1.0, s(0));
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) ++r;
  return r;
}

/// Multi-restart quasi-Newton search over all feature_dim x p matrices.
/// Restart r draws its start from derive_seed(seed, r), so the result does not
/// depend on scheduling.
inline RibSolution brute_force_minimize(const GaussianJoint& joint, const RibConfig& config, Index feature_dim,
                                        int restarts, std::uint64_t seed) {
  config.validate();
  joint.check_shapes();
  require(feature_dim >= 1, ErrorCode::InvalidArgument, "feature_dim must be >= 1");
  require(restarts >= 1, ErrorCode::InvalidArgument, "restarts must be >= 1");
  const Index p = joint.p();
  const auto objective = [&](const Vector& v) {
    LinearGaussianEncoder e{Eigen::Map<const Matrix>(v.data(), feature_dim, p)};
    try {
      return eval_objective(joint, e, config);
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  std::vector<opt::MinimizeResult> results(static_cast<std::size_t>(restarts));
  parallel_for(results.size(), [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    const double scale = std::exp(rng.uniform(std::log(0.1), std::log(3.0)));
    Vector x0 = rng.normal_vector(feature_dim * p) * (scale / std::sqrt(static_cast<double>(p)));
    results[r] = opt::minimize(objective, x0);
  });

  std::size_t best = 0;
  for (std::size_t r = 1; r < results.size(); ++r)
    if (results[r].f < results[best].f) best = r;
  require(std::isfinite(results[best].f), ErrorCode::NonFinite, "brute-force objective diverged");

  RibSolution sol;
  sol.formulation = config.formulation;
  sol.beta = config.beta;
  sol.gamma = config.gamma;
  sol.encoder.a = Eigen::Map<const Matrix>(results[best].x.data(), feature_dim, p);
  sol.objective_value = results[best].f;
  sol.active_dims = numeric_rank(sol.encoder.a);
  return sol;
}

// ---- text serialization ----

inline std::string write_solution(const RibSolution& sol, Index p, Index k) {
  std::ostringstream os;
  os << "# rib solution\n";
  os << "p = " << p << "\n";
  os << "k = " << k << "\n";
  os << "beta = " << fmt_g(sol.beta) << "\n";
  os << "gamma = " << fmt_g(sol.gamma) << "\n";
  os << "formulation = " << to_string(sol.formulation) << "\n";
  os << "objective_value = " << fmt_g(sol.objective_value) << "\n";
  os << "exact = " << (sol.exact ? "true" : "false") << "\n";
  os << "surrogate = " << (sol.surrogate ? "true" : "false") << "\n";
  if (sol.surrogate) os << "surrogate_value = " << fmt_g(sol.surrogate_value) << "\n";
  os << "active_dims = " << sol.active_dims << "\n";
  os << "rows = " << sol.encoder.a.rows() << "\n";
  os << "cols = " << p << "\n";
  for (Index i = 0; i < sol.encoder.a.rows(); ++i) {
    for (Index j = 0; j < sol.encoder.a.cols(); ++j) {
      if (j) os << ' ';
      os << fmt_g(sol.encoder.a(i, j));
    }
    os << "\n";
  }
  return os.str();
}

struct ParsedSolution {
  std::map<std::string, std::string> header;
  Matrix a;
};

inline ParsedSolution read_solution(const std::string& text) {
  ParsedSolution out;
  std::istringstream is(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      out.header[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      continue;
    }
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  require(out.header.count("rows") && out.header.count("cols"), ErrorCode::Io, "solution header incomplete");
  const Index r = std::stol(out.header["rows"]), c = std::stol(out.header["cols"]);
  require(static_cast<Index>(rows.size()) == r, ErrorCode::Io, "solution row count mismatch");
  out.a.resize(r, c);
  for (Index i = 0; i < r; ++i) {
    require(static_cast<Index>(rows[i].size()) == c, ErrorCode::Io, "solution column count mismatch");
    for (Index j = 0; j < c; ++j) out.a(i, j) = rows[i][j];
  }
  return out;
}

}  // namespace rib::gauss
