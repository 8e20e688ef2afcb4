#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "gaussian_rib.hpp"
#include "linalg.hpp"
#include "report.hpp"
#include "rng.hpp"

namespace rib::info {

using gauss::GaussianJoint;
using gauss::LinearGaussianEncoder;

/// P(T = +1 | x) = sigmoid(w^T x), T in {+1, -1}.
struct LogisticEncoder {
  Vector w;
};

struct GaussianDensity {
  Vector mean;
  Matrix cov;
};

struct SampleSet {
  Matrix xs;                // n x p
  std::optional<Matrix> ys; // n x k
  std::uint64_t seed = 0;

  Index size() const { return xs.rows(); }
  Index dim() const { return xs.cols(); }
};

using EncoderDescriptor = std::variant<LinearGaussianEncoder, LogisticEncoder>;

inline double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// ---- Fisher information of the channel ----

inline double fisher_linear(const LinearGaussianEncoder& enc) { return enc.a.squaredNorm(); }

/// Phi for T = A X + n with n ~ N(0, noise_cov): tr(A^T noise_cov^-1 A).
inline double fisher_gaussian_channel(const Matrix& a, const Matrix& noise_cov) {
  require(noise_cov.rows() == a.rows(), ErrorCode::DimensionMismatch, "noise covariance size");
  if (a.rows() == 0) return 0.0;
  return (a.transpose() * linalg::spd_inverse(noise_cov) * a).trace();
}

inline double fisher_logistic_at(const LogisticEncoder& enc, const Vector& x) {
  require(x.size() == enc.w.size(), ErrorCode::DimensionMismatch, "x and w differ in length");
  const double s = sigmoid(enc.w.dot(x));
  return enc.w.squaredNorm() * s * (1.0 - s);
}

inline double fisher_logistic(const LogisticEncoder& enc, const SampleSet& samples) {
  require(samples.size() >= 1, ErrorCode::InvalidArgument, "empty sample set");
  require(samples.dim() == enc.w.size(), ErrorCode::DimensionMismatch, "sample dimension differs from w");
  double sum = 0.0;
  for (Index i = 0; i < samples.size(); ++i) sum += fisher_logistic_at(enc, samples.xs.row(i).transpose());
  return sum / static_cast<double>(samples.size());
}

/// Phi(T|X = x) for either channel family.
inline double fisher_at(const EncoderDescriptor& enc, const Vector& x) {
  if (const auto* lin = std::get_if<LinearGaussianEncoder>(&enc)) return fisher_linear(*lin);
  return fisher_logistic_at(std::get<LogisticEncoder>(enc), x);
}

// ---- Monte-Carlo score estimator ----

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

using ScoreFn = std::function<Vector(const Vector& x, const Vector& t)>;
using ChannelSampler = std::function<Vector(const Vector& x, Rng& rng)>;

/// Double average of ||score(x, t)||^2 over the samples and n_inner draws of
/// t ~ p(.|x). The standard error is that of the outer mean.
inline McEstimate fisher_mc_estimate(const ScoreFn& score_fn, const ChannelSampler& sampler,
                                     const SampleSet& samples, int n_inner) {
  require(n_inner >= 1, ErrorCode::InvalidArgument, "n_inner must be >= 1");
  require(samples.size() >= 1, ErrorCode::InvalidArgument, "empty sample set");
  Rng rng(samples.seed);
  const Index n = samples.size();
  double sum = 0.0, sum2 = 0.0, inner_var = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Vector x = samples.xs.row(i).transpose();
    double s = 0.0, s2 = 0.0;
    for (int j = 0; j < n_inner; ++j) {
      const Vector t = sampler(x, rng);
      const double v = score_fn(x, t).squaredNorm();
      require(std::isfinite(v), ErrorCode::NonFinite, "score is not finite");
      s += v;
      s2 += v * v;
    }
    const double m = s / n_inner;
    sum += m;
    sum2 += m * m;
    if (n_inner > 1) inner_var += (s2 - n_inner * m * m) / (n_inner - 1.0);
  }
  McEstimate out;
  out.estimate = sum / static_cast<double>(n);
  if (n >= 2) {
    const double var = std::max(0.0, (sum2 - n * out.estimate * out.estimate) / (n - 1.0));
    out.std_error = std::sqrt(var / static_cast<double>(n));
  } else if (n_inner >= 2) {
    out.std_error = std::sqrt(std::max(0.0, inner_var) / n_inner);
  }
  return out;
}

inline ScoreFn linear_gaussian_score(const LinearGaussianEncoder& enc) {
  return [a = enc.a](const Vector& x, const Vector& t) -> Vector { return a.transpose() * (t - a * x); };
}

inline ChannelSampler linear_gaussian_sampler(const LinearGaussianEncoder& enc) {
  return [a = enc.a](const Vector& x, Rng& rng) -> Vector { return a * x + rng.normal_vector(a.rows()); };
}

/// grad_x log sigmoid(t w^T x) = t (1 - sigmoid(t w^T x)) w.
inline ScoreFn logistic_score(const LogisticEncoder& enc) {
  return [w = enc.w](const Vector& x, const Vector& t) -> Vector {
    const double tt = t(0);
    return tt * (1.0 - sigmoid(tt * w.dot(x))) * w;
  };
}

inline ChannelSampler logistic_sampler(const LogisticEncoder& enc) {
  return [w = enc.w](const Vector& x, Rng& rng) -> Vector {
    return Vector::Constant(1, rng.uniform() < sigmoid(w.dot(x)) ? 1.0 : -1.0);
  };
}

// ---- Gaussian closed forms ----

inline void check_density(const GaussianDensity& g) {
  require(g.cov.rows() == g.cov.cols() && g.cov.rows() == g.mean.size(), ErrorCode::DimensionMismatch,
          "density mean and covariance differ in size");
  require(linalg::is_positive_definite(g.cov), ErrorCode::SingularCovariance, "covariance is not positive definite");
}

inline double gaussian_entropy(const GaussianDensity& g) {
  check_density(g);
  const double d = static_cast<double>(g.mean.size());
  return 0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e) + 0.5 * linalg::logdet_spd(g.cov);
}

/// D(p || q). The covariance part is sum(l - 1 - log l) over the eigenvalues l
/// of L^-1 Sigma_p L^-T (Sigma_q = L L^T), which stays accurate as p -> q.
inline double gaussian_kl(const GaussianDensity& p, const GaussianDensity& q) {
  check_density(p);
  check_density(q);
  require(p.mean.size() == q.mean.size(), ErrorCode::DimensionMismatch, "densities differ in dimension");
  Eigen::LLT<Matrix> lq(linalg::symmetrize(q.cov));
  const Vector dm = q.mean - p.mean;
  const Vector z = lq.matrixL().solve(dm);
  Matrix w = lq.matrixL().solve(linalg::symmetrize(p.cov));
  w = lq.matrixL().solve(Matrix(w.transpose()));
  const Vector lam = Eigen::SelfAdjointEigenSolver<Matrix>(linalg::symmetrize(w), Eigen::EigenvaluesOnly).eigenvalues();
  double cov_part = 0.0;
  for (Index i = 0; i < lam.size(); ++i) {
    const double x = lam(i) - 1.0;
    cov_part += x - std::log1p(x);
  }
  return 0.5 * (z.squaredNorm() + cov_part);
}

/// J = tr(Sigma^-1).
inline double gaussian_fisher_j(const GaussianDensity& g) {
  check_density(g);
  return linalg::spd_inverse(g.cov).trace();
}

/// I(X;T) for T = A X + n, n ~ N(0, noise_cov).
inline double mutual_information_channel(const Matrix& sigma_x, const Matrix& a, const Matrix& noise_cov) {
  if (a.rows() == 0) return 0.0;
  return 0.5 * linalg::logdet_spd(a * sigma_x * a.transpose() + noise_cov) - 0.5 * linalg::logdet_spd(noise_cov);
}

inline double mutual_information_xt(const Matrix& sigma_x, const LinearGaussianEncoder& enc) {
  return gauss::mi_t_x(sigma_x, enc.a);
}

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

/// I(X;T) <= H(X) - p/2 log(2 pi e p / (Phi + J(X))).
inline BoundCheck check_mi_fisher_bound(const GaussianJoint& joint, const LinearGaussianEncoder& enc) {
  joint.check_shapes();
  require(enc.a.cols() == joint.p(), ErrorCode::DimensionMismatch, "encoder input dimension must equal p");
  const double p = static_cast<double>(joint.p());
  const GaussianDensity gx{Vector::Zero(joint.p()), joint.sigma_x};
  BoundCheck out;
  out.lhs = mutual_information_xt(joint.sigma_x, enc);
  const double phi = fisher_linear(enc);
  const double jx = gaussian_fisher_j(gx);
  out.rhs = gaussian_entropy(gx) -
            0.5 * p * std::log(2.0 * std::numbers::pi * std::numbers::e * p / (phi + jx));
  out.holds = out.lhs <= out.rhs + 1e-9;
  return out;
}

// ---- perturbation checks ----

struct KlPerturbation {
  double kl = 0.0;                  // D(p_{T|x+eps u} || p_{T|x})
  double fisher_at_x = 0.0;         // Phi(T|X=x)
  double directional_fisher = 0.0;  // u^T (E score score^T) u
  double ratio = 0.0;               // kl / (eps^2/2 Phi(T|X=x))
  double ratio_directional = 0.0;   // kl / (eps^2/2 directional_fisher)
};

/// D(Bern(sigmoid(a + delta)) || Bern(sigmoid(a))) without cancellation in the
/// probability difference.
inline double bernoulli_logit_kl(double a, double delta) {
  const double p = sigmoid(a), q = sigmoid(-a);
  const double pn = sigmoid(a + delta), qn = sigmoid(-(a + delta));
  const double diff = pn * q * (-std::expm1(-delta));  // pn - p
  return pn * std::log1p(diff / p) + qn * std::log1p(-diff / q);
}

inline KlPerturbation kl_perturbation_ratio(const EncoderDescriptor& enc, const Vector& x, const Vector& u,
                                            double eps) {
  require(std::abs(u.norm() - 1.0) <= 1e-12, ErrorCode::InvalidArgument, "u must be a unit vector");
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be > 0");
  KlPerturbation out;
  out.fisher_at_x = fisher_at(enc, x);
  require(out.fisher_at_x > 0.0, ErrorCode::ZeroFisher, "Phi(T|X=x) is zero");
  if (const auto* lin = std::get_if<LinearGaussianEncoder>(&enc)) {
    require(x.size() == lin->a.cols() && u.size() == x.size(), ErrorCode::DimensionMismatch, "x, u and A differ");
    const Index m = lin->a.rows();
    const GaussianDensity moved{lin->a * (x + eps * u), Matrix::Identity(m, m)};
    const GaussianDensity base{lin->a * x, Matrix::Identity(m, m)};
    out.kl = gaussian_kl(moved, base);
    out.directional_fisher = (lin->a * u).squaredNorm();
  } else {
    const auto& w = std::get<LogisticEncoder>(enc).w;
    require(x.size() == w.size() && u.size() == x.size(), ErrorCode::DimensionMismatch, "x, u and w differ");
    const double a = w.dot(x);
    const double delta = eps * w.dot(u);
    out.kl = bernoulli_logit_kl(a, delta);
    const double s = sigmoid(a);
    out.directional_fisher = w.dot(u) * w.dot(u) * s * (1.0 - s);
  }
  const double half = 0.5 * eps * eps;
  out.ratio = out.kl / (half * out.fisher_at_x);
  out.ratio_directional = out.directional_fisher > 0.0 ? out.kl / (half * out.directional_fisher)
                                                       : std::numeric_limits<double>::quiet_NaN();
  return out;
}

struct NoiseSensitivity {
  double lhs = 0.0;        // I(X;T) - I(X + sqrt(delta) Z; T)
  double predicted = 0.0;  // delta/2 Phi(T|X)
};

/// Uses Cov(X | X + sqrt(delta) Z) = delta Sigma_x (Sigma_x + delta I)^-1, so
/// lhs = 1/2 log det(I + delta A Sigma_x (Sigma_x + delta I)^-1 A^T) with no
/// difference of large log-determinants.
inline NoiseSensitivity mi_noise_sensitivity(const GaussianJoint& joint, const LinearGaussianEncoder& enc,
                                             double delta) {
  require(delta > 0.0, ErrorCode::InvalidArgument, "delta must be > 0");
  joint.check_shapes();
  require(enc.a.cols() == joint.p(), ErrorCode::DimensionMismatch, "encoder input dimension must equal p");
  NoiseSensitivity out;
  out.predicted = 0.5 * delta * fisher_linear(enc);
  if (enc.a.rows() == 0) return out;
  const Index p = joint.p();
  const Matrix shrink = joint.sigma_x * (joint.sigma_x + delta * Matrix::Identity(p, p)).inverse();
  const Matrix m = delta * enc.a * shrink * enc.a.transpose();
  const auto e = linalg::sym_eig_desc(m);
  for (Index i = 0; i < e.values.size(); ++i) out.lhs += 0.5 * std::log1p(std::max(0.0, e.values(i)));
  return out;
}

/// Least-squares slope of log|y| against log x.
inline double loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size() && xs.size() >= 2, ErrorCode::InvalidArgument, "need >= 2 points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lx = std::log(xs[i]), ly = std::log(std::abs(ys[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---- margin-based robustness bound ----

using FeatureClassifier = std::function<int(const Vector& t)>;

struct MarginBound {
  double lower_bound = 0.0;                // P(B^eta) - eps^2 Phi / eta, first order only
  double empirical_robust_fraction = 0.0;  // fraction unchanged under random eps-ball perturbations
  double margin_fraction = 0.0;            // P(B^eta)
  double fisher = 0.0;                     // Phi(T|X) over the samples
  double std_error = 0.0;                  // combined MC standard error of the two fractions
  bool first_order = true;                 // the o(eps^2) remainder is dropped
};

namespace detail {

/// Feature draws for one input under fixed channel randomness (common random
/// numbers), so perturbed and clean inputs see the same noise.
struct ChannelNoise {
  Matrix gaussian;   // n x m, linear channel
  Vector uniforms;   // n, logistic channel
};

inline ChannelNoise draw_noise(const EncoderDescriptor& enc, int n, Rng& rng) {
  ChannelNoise c;
  if (const auto* lin = std::get_if<LinearGaussianEncoder>(&enc)) {
    c.gaussian = rng.normal_matrix(n, lin->a.rows());
  } else {
    c.uniforms.resize(n);
    for (int i = 0; i < n; ++i) c.uniforms(i) = rng.uniform();
  }
  return c;
}

struct LabelPosterior {
  int label = 0;
  double margin = 0.0;
};

inline LabelPosterior classify(const EncoderDescriptor& enc, const FeatureClassifier& g, const Vector& x,
                               const ChannelNoise& noise, int n) {
  std::map<int, int> counts;
  if (const auto* lin = std::get_if<LinearGaussianEncoder>(&enc)) {
    const Vector mean = lin->a * x;
    for (int j = 0; j < n; ++j) ++counts[g(mean + noise.gaussian.row(j).transpose())];
  } else {
    const double s = sigmoid(std::get<LogisticEncoder>(enc).w.dot(x));
    for (int j = 0; j < n; ++j) ++counts[g(Vector::Constant(1, noise.uniforms(j) < s ? 1.0 : -1.0))];
  }
  int top = 0, second = 0, label = 0;
  for (const auto& [lab, c] : counts) {
    if (c > top) {
      second = top;
      top = c;
      label = lab;
    } else if (c > second) {
      second = c;
    }
  }
  return {label, static_cast<double>(top - second) / n};
}

}  // namespace detail

inline MarginBound margin_robustness_bound(const SampleSet& samples, const FeatureClassifier& classifier,
                                           const EncoderDescriptor& enc, double eps, double eta, int n_mc) {
  require(eps >= 0.0 && eta > 0.0, ErrorCode::InvalidArgument, "eps must be >= 0 and eta > 0");
  require(n_mc >= 1 && samples.size() >= 1, ErrorCode::InvalidArgument, "need samples and n_mc >= 1");
  const Index n = samples.size(), p = samples.dim();
  Rng rng(samples.seed);
  int in_margin = 0, robust = 0;
  double fisher = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Vector x = samples.xs.row(i).transpose();
    fisher += fisher_at(enc, x);
    const auto noise = detail::draw_noise(enc, n_mc, rng);
    const auto clean = detail::classify(enc, classifier, x, noise, n_mc);
    if (clean.margin > std::sqrt(eta)) ++in_margin;
    bool unchanged = true;
    for (int j = 0; j < n_mc; ++j) {
      Vector dir = rng.normal_vector(p);
      dir /= dir.norm();
      const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(p));
      if (unchanged && detail::classify(enc, classifier, x + radius * dir, noise, n_mc).label != clean.label)
        unchanged = false;
    }
    if (unchanged) ++robust;
  }
  MarginBound out;
  const double nd = static_cast<double>(n);
  out.fisher = fisher / nd;
  out.margin_fraction = in_margin / nd;
  out.empirical_robust_fraction = robust / nd;
  out.lower_bound = out.margin_fraction - eps * eps * out.fisher / eta;
  const double v1 = out.margin_fraction * (1.0 - out.margin_fraction) / nd;
  const double v2 = out.empirical_robust_fraction * (1.0 - out.empirical_robust_fraction) / nd;
  out.std_error = std::sqrt(v1 + v2);
  return out;
}

// ---- Fisher identities ----

/// J of a 1-d Gaussian mixture, integral of p'^2 / p by composite Simpson.
inline double mixture_fisher_1d(const std::vector<double>& weights, const std::vector<double>& means,
                                const std::vector<double>& sds, int intervals = 40000) {
  require(weights.size() == means.size() && means.size() == sds.size() && !weights.empty(),
          ErrorCode::DimensionMismatch, "mixture parameter lists differ in length");
  double lo = means[0], hi = means[0], smax = 0.0;
  for (std::size_t c = 0; c < means.size(); ++c) {
    lo = std::min(lo, means[c]);
    hi = std::max(hi, means[c]);
    smax = std::max(smax, sds[c]);
  }
  lo -= 14.0 * smax;
  hi += 14.0 * smax;
  const auto integrand = [&](double x) {
    double p = 0.0, dp = 0.0;
    for (std::size_t c = 0; c < means.size(); ++c) {
      const double z = (x - means[c]) / sds[c];
      const double phi = weights[c] * std::exp(-0.5 * z * z) / (sds[c] * std::sqrt(2.0 * std::numbers::pi));
      p += phi;
      dp += -phi * z / sds[c];
    }
    return p > 0.0 ? dp * dp / p : 0.0;
  };
  if (intervals % 2) ++intervals;
  const double h = (hi - lo) / intervals;
  double s = integrand(lo) + integrand(hi);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * integrand(lo + i * h);
  return s * h / 3.0;
}

struct FisherIdentityReport {
  double phi = 0.0;                    // ||A||_F^2
  double j_x = 0.0;                    // tr Sigma_x^-1
  double j_x_given_t = 0.0;            // tr Cov(X|T)^-1
  double identity_residual = 0.0;      // |Phi - (J(X|T) - J(X))| / (1 + Phi)
  double chain_independent_residual = 0.0;
  double chain_joint_residual = 0.0;   // J(X,T) vs J(X|T) + J(T|X)
  double mixture_j = 0.0;
  double mixture_bound = 0.0;
  bool convexity_holds = true;

  bool passes(double tol = 1e-9) const {
    return identity_residual < tol && chain_independent_residual < tol && chain_joint_residual < tol &&
           convexity_holds;
  }

  std::vector<MetricRow> rows(double tol = 1e-9) const {
    return {
        {"phi_identity_residual", identity_residual, 0.0, tol, identity_residual < tol},
        {"chain_rule_independent_residual", chain_independent_residual, 0.0, tol, chain_independent_residual < tol},
        {"chain_rule_joint_residual", chain_joint_residual, 0.0, tol, chain_joint_residual < tol},
        {"mixture_convexity_gap", mixture_bound - mixture_j, 0.0, 0.0, convexity_holds},
    };
  }
};

inline FisherIdentityReport fisher_identity_checks(const GaussianJoint& joint, const LinearGaussianEncoder& enc) {
  joint.check_shapes();
  require(enc.a.cols() == joint.p(), ErrorCode::DimensionMismatch, "encoder input dimension must equal p");
  const Matrix& a = enc.a;
  const Index p = joint.p(), m = a.rows();
  FisherIdentityReport r;
  r.phi = fisher_linear(enc);
  r.j_x = gaussian_fisher_j({Vector::Zero(p), joint.sigma_x});

  // Conditioning formula, then a numeric inverse.
  const Matrix st = a * joint.sigma_x * a.transpose() + Matrix::Identity(m, m);
  const Matrix cov_x_t = m == 0 ? joint.sigma_x
                                : Matrix(joint.sigma_x - joint.sigma_x * a.transpose() * st.inverse() * a * joint.sigma_x);
  r.j_x_given_t = gaussian_fisher_j({Vector::Zero(p), linalg::symmetrize(cov_x_t)});
  r.identity_residual = std::abs(r.phi - (r.j_x_given_t - r.j_x)) / (1.0 + r.phi);

  // Independent pair (X, eps): block-diagonal joint.
  {
    Matrix block = Matrix::Zero(p + m, p + m);
    block.topLeftCorner(p, p) = joint.sigma_x;
    block.bottomRightCorner(m, m) = st;
    const double joint_j = gaussian_fisher_j({Vector::Zero(p + m), block});
    const double parts = r.j_x + (m ? gaussian_fisher_j({Vector::Zero(m), st}) : 0.0);
    r.chain_independent_residual = std::abs(joint_j - parts) / (1.0 + std::abs(parts));
  }
  // Correlated pair (X, T): J(X,T) = J(X|T) + J(T|X), with J(T|X) = tr(I_m).
  {
    Matrix full(p + m, p + m);
    full.topLeftCorner(p, p) = joint.sigma_x;
    full.topRightCorner(p, m) = joint.sigma_x * a.transpose();
    full.bottomLeftCorner(m, p) = a * joint.sigma_x;
    full.bottomRightCorner(m, m) = st;
    const double joint_j = gaussian_fisher_j({Vector::Zero(p + m), full});
    const double parts = r.j_x_given_t + static_cast<double>(m);
    r.chain_joint_residual = std::abs(joint_j - parts) / (1.0 + std::abs(parts));
  }
  // Convexity: marginal of the first feature mixed with its conditional noise.
  {
    const double v1 = m ? st(0, 0) : 1.0;
    const std::vector<double> w{0.5, 0.5}, mu{0.0, 1.0}, sd{std::sqrt(v1), 1.0};
    r.mixture_j = mixture_fisher_1d(w, mu, sd);
    r.mixture_bound = 0.5 / v1 + 0.5;
    r.convexity_holds = r.mixture_j <= r.mixture_bound + 1e-10;
  }
  return r;
}

}  // namespace rib::info
