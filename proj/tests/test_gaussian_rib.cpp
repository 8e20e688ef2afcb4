#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rib/gaussian_rib.hpp"
#include "support.hpp"

using namespace rib;
using namespace rib::gauss;
using rib::testing::log_uniform;
using rib::testing::random_joint;

namespace {

GaussianJoint scalar_joint() {
  return GaussianJoint::make(Matrix::Identity(1, 1), Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.0));
}

GaussianJoint two_by_one() {
  Matrix sxy(2, 1);
  sxy << 1, 0;
  return GaussianJoint::make(Matrix::Identity(2, 2), Matrix::Constant(1, 1, 2.0), sxy);
}

// Samples (X, Y) from the joint through a Cholesky factor.
struct JointSampler {
  Matrix l;
  Index p, k;
  explicit JointSampler(const GaussianJoint& j) : p(j.p()), k(j.k()) {
    Eigen::LDLT<Matrix> ldlt(j.joint_covariance());
    const Matrix lm = ldlt.matrixL();
    const Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    l = ldlt.transpositionsP().transpose() * lm * d.asDiagonal();
  }
  void draw(Rng& rng, Vector& x, Vector& y) const {
    const Vector z = l * rng.normal_vector(p + k);
    x = z.head(p);
    y = z.tail(k);
  }
};

double cosine_distance(const Vector& a, const Vector& b) {
  return 1.0 - std::abs(a.dot(b)) / (a.norm() * b.norm());
}

}  // namespace

TEST(GaussianJoint, RejectsInvalidBlocks) {
  Matrix sxy(2, 1);
  sxy << 1, 0;
  EXPECT_THROW(GaussianJoint::make(Matrix::Identity(2, 2), Matrix::Constant(1, 1, 2.0), Matrix::Ones(3, 1)), Error);
  // Cov(Y|X) = 1 - 1 = 0 is not positive definite.
  EXPECT_THROW(GaussianJoint::make(Matrix::Identity(2, 2), Matrix::Constant(1, 1, 1.0), sxy), Error);
}

TEST(EvalMmse, ZeroEncoderGivesTraceSigmaY) {
  Rng rng(1);
  const auto j = random_joint(3, 2, rng, false);
  EXPECT_DOUBLE_EQ(eval_mmse_objective(j, {Matrix::Zero(2, 3)}, 0.7), j.sigma_y.trace());
  EXPECT_DOUBLE_EQ(eval_mmse_objective(j, {Matrix(0, 3)}, 0.7), j.sigma_y.trace());
}

TEST(EvalMmse, ScalarAlgebra) {
  const auto j = scalar_joint();
  for (double beta : {0.0, 0.3, 2.0})
    EXPECT_NEAR(eval_mmse_objective(j, {Matrix::Ones(1, 1)}, beta), 1.5 + beta, 1e-15);
}

TEST(EvalMmse, MatchesMonteCarloWithAnalyticPosteriorMean) {
  Rng rng(7);
  const auto j = random_joint(3, 2, rng, false);
  const Matrix a = rng.normal_matrix(2, 3);
  const double beta = 0.2;
  const Matrix st = a * j.sigma_x * a.transpose() + Matrix::Identity(2, 2);
  const Matrix gain = j.sigma_yx() * a.transpose() * st.inverse();
  JointSampler sampler(j);
  const int n = 1000000;
  double sum = 0.0, sum2 = 0.0;
  Vector x, y;
  for (int i = 0; i < n; ++i) {
    sampler.draw(rng, x, y);
    const Vector t = a * x + rng.normal_vector(2);
    const double e = (y - gain * t).squaredNorm();
    sum += e;
    sum2 += e * e;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  const double mc = mean + beta * a.squaredNorm();
  EXPECT_NEAR(eval_mmse_objective(j, {a}, beta), mc, 3.0 * se);
}

TEST(EvalIb, ZeroEncoderIsZero) {
  Rng rng(2);
  const auto j = random_joint(2, 2, rng, false);
  EXPECT_EQ(eval_ib_objective(j, {Matrix::Zero(1, 2)}, 0.5, 0.5), 0.0);
}

TEST(EvalIb, InvariantUnderFeatureRotation) {
  Rng rng(3);
  const auto j = random_joint(4, 2, rng, false);
  const Matrix a = rng.normal_matrix(3, 4);
  const Matrix q = linalg::random_orthogonal(3, rng);
  EXPECT_NEAR(eval_ib_objective(j, {a}, 0.3, 0.4), eval_ib_objective(j, {q * a}, 0.3, 0.4), 1e-12);
  EXPECT_NEAR(eval_mmse_objective(j, {a}, 0.3), eval_mmse_objective(j, {q * a}, 0.3), 1e-12);
}

TEST(EvalIb, ScalarMutualInformationMatchesMonteCarlo) {
  // I(T;Y) = E[log p(t|y) - log p(t)] sampled at one dimension.
  const auto j = scalar_joint();
  const double a = 1.0;
  const double var_t = a * a * 1.0 + 1.0;
  const double cov_ty = a * 1.0;
  const double var_t_given_y = var_t - cov_ty * cov_ty / 2.0;
  JointSampler sampler(j);
  Rng rng(11);
  const int n = 400000;
  double sum = 0.0, sum2 = 0.0;
  Vector x, y;
  for (int i = 0; i < n; ++i) {
    sampler.draw(rng, x, y);
    const double t = a * x(0) + rng.normal();
    const double mt = cov_ty / 2.0 * y(0);
    const double lc = -0.5 * std::log(var_t_given_y) - 0.5 * (t - mt) * (t - mt) / var_t_given_y;
    const double lm = -0.5 * std::log(var_t) - 0.5 * t * t / var_t;
    sum += lc - lm;
    sum2 += (lc - lm) * (lc - lm);
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_NEAR(-eval_ib_objective(j, {Matrix::Constant(1, 1, a)}, 0.0, 0.0), mean, 3.0 * se);
}

TEST(MmseIdentity, ThresholdDropsAllRows) {
  const auto sol = solve_mmse_identity(two_by_one(), 4.0);
  EXPECT_EQ(sol.encoder.a.rows(), 0);
  EXPECT_EQ(sol.encoder.a.cols(), 2);
  EXPECT_EQ(sol.active_dims, 0);
  EXPECT_DOUBLE_EQ(sol.objective_value, 2.0);
}

TEST(MmseIdentity, InteriorExampleMatchesBruteForce) {
  const auto j = two_by_one();
  const auto sol = solve_mmse_identity(j, 0.25);
  ASSERT_EQ(sol.encoder.a.rows(), 1);
  EXPECT_NEAR(std::abs(sol.encoder.a(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(sol.encoder.a(0, 1), 0.0, 1e-14);
  ASSERT_EQ(sol.spectrum.size(), 1u);
  EXPECT_NEAR(sol.spectrum[0].scaling, 1.0, 1e-14);
  const auto bf = brute_force_minimize(j, {0.25, 0.0, Formulation::Mmse}, 1, 6, 5);
  EXPECT_NEAR(sol.objective_value, bf.objective_value, 1e-6 * (1.0 + std::abs(bf.objective_value)));
}

TEST(MmseIdentity, BoundaryLambdaEqualsBeta) {
  const auto sol = solve_mmse_identity(scalar_joint(), 1.0);
  EXPECT_EQ(sol.active_dims, 0);
  EXPECT_DOUBLE_EQ(sol.objective_value, 2.0);
}

TEST(MmseIdentity, RejectsNonIdentityCovariance) {
  Rng rng(4);
  const auto j = random_joint(3, 1, rng, false);
  try {
    solve_mmse_identity(j, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotIdentityCovariance);
  }
}

TEST(MmseIdentity, ObjectiveValueMatchesEvaluator) {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto j = random_joint(4, 2, rng, true);
    const auto sol = solve_mmse_identity(j, log_uniform(rng, 1e-3, 10));
    EXPECT_DOUBLE_EQ(sol.objective_value, eval_mmse_objective(j, sol.encoder, sol.beta));
    EXPECT_EQ(sol.active_dims, sol.encoder.features());
  }
}

TEST(MmseIdentity, ClosedFormNotWorseThanOracle) {
  Rng rng(6);
  for (int i = 0; i < 8; ++i) {
    const Index p = 1 + static_cast<Index>(rng.below(4)), k = 1 + static_cast<Index>(rng.below(3));
    const auto j = random_joint(p, k, rng, true);
    const double beta = log_uniform(rng, 1e-3, 10);
    const auto sol = solve_mmse_identity(j, beta);
    const auto bf = brute_force_minimize(j, {beta, 0.0, Formulation::Mmse}, p, 4, 100 + i);
    EXPECT_LE(sol.objective_value, bf.objective_value + 1e-6 * (1.0 + std::abs(bf.objective_value)));
  }
}

TEST(MmseIdentity, MonotoneTradeoffAndTruncation) {
  Rng rng(8);
  const auto j = random_joint(4, 3, rng, true);
  const double lmax = linalg::sym_eig_desc(j.sigma_xy * j.sigma_yx()).values(0);
  double prev_mmse = -1.0, prev_phi = 1e300;
  Index prev_active = 1000;
  for (int i = 0; i < 10; ++i) {
    const double beta = std::pow(10.0, -3.0 + 0.45 * i);
    const auto sol = solve_mmse_identity(j, beta);
    const double phi = sol.encoder.a.squaredNorm();
    const double mmse = sol.objective_value - beta * phi;
    EXPECT_GE(mmse, prev_mmse - 1e-12);
    EXPECT_LE(phi, prev_phi + 1e-12);
    EXPECT_LE(sol.active_dims, prev_active);
    EXPECT_EQ(sol.active_dims == 0, beta >= lmax);
    prev_mmse = mmse;
    prev_phi = phi;
    prev_active = sol.active_dims;
  }
  EXPECT_EQ(solve_mmse_identity(j, lmax).active_dims, 0);
}

TEST(MmseIdentity, StationaryInInteriorCase) {
  Rng rng(9);
  const auto j = random_joint(3, 3, rng, true);
  const double lmin = linalg::sym_eig_desc(j.sigma_xy * j.sigma_yx()).values(2);
  const double beta = 0.5 * lmin;  // all d_i > 0
  const auto sol = solve_mmse_identity(j, beta);
  ASSERT_EQ(sol.active_dims, 3);
  const Index m = sol.encoder.features();
  const auto f = [&](const Vector& v) {
    return eval_mmse_objective(j, {Eigen::Map<const Matrix>(v.data(), m, 3)}, beta);
  };
  const Vector v0 = Eigen::Map<const Vector>(sol.encoder.a.data(), m * 3);
  const Vector g = opt::numeric_gradient(f, v0, 1e-6);
  Rng r2(10);
  const Vector g_pert = opt::numeric_gradient(f, v0 + 0.1 * r2.normal_vector(m * 3), 1e-6);
  EXPECT_LT(g.norm(), 1e-5 * (1.0 + g_pert.norm()));
}

TEST(IbIdentity, UnivariateMatchesDenseGrid) {
  const auto sol = solve_ib_identity(two_by_one(), 0.1, 0.5);
  ASSERT_EQ(sol.spectrum.size(), 1u);
  const double ell = sol.spectrum[0].value;
  EXPECT_NEAR(ell, 1.0, 1e-14);
  const auto f = [&](double d) { return 0.5 * std::log(d / ell + 1.0) - 0.25 * std::log(d) + 0.1 / d; };
  const int n = 1000000;
  double best = 1e300, best_d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = kDMin + (1.0 - kDMin) * i / (n - 1.0);
    const double v = f(d);
    if (v < best) {
      best = v;
      best_d = d;
    }
  }
  EXPECT_NEAR(sol.spectrum[0].scaling, best_d, 1e-6);
}

TEST(IbIdentity, BracketsAndRepeatsAgree) {
  const auto j = two_by_one();
  const auto a = solve_ib_identity(j, 0.1, 0.5);
  const auto b = solve_ib_identity(j, 0.1, 0.5);
  EXPECT_EQ(a.spectrum[0].scaling, b.spectrum[0].scaling);
  const auto f = [](double d) { return ib_univariate(d, 1.0, 1.0, 0.1, 0.5); };
  const auto m1 = opt::golden_section(f, kDMin, 1.0, kGoldenTol);
  const auto m2 = opt::golden_section(f, 0.25, 1.0, kGoldenTol);
  EXPECT_NEAR(m1.x, m2.x, 1e-9);
}

TEST(IbIdentity, HugeBetaGivesEmptyMap) {
  Rng rng(12);
  const auto j = random_joint(3, 2, rng, true);
  const double s2 = j.sigma_x(0, 0);
  const auto probe = solve_ib_identity(j, 1e-2, 0.5);
  double min_ell = 1e300;
  for (const auto& e : probe.spectrum) min_ell = std::min(min_ell, e.value);
  const double beta = 1e6 * s2 * std::max({0.5, 1.0, s2 / min_ell});
  const auto sol = solve_ib_identity(j, beta, 0.5);
  EXPECT_EQ(sol.active_dims, 0);
  for (const auto& e : sol.spectrum) EXPECT_EQ(e.scaling, 1.0);
}

TEST(IbIdentity, ClosedFormNotWorseThanOracle) {
  Rng rng(13);
  for (int i = 0; i < 6; ++i) {
    const Index p = 1 + static_cast<Index>(rng.below(4)), k = 1 + static_cast<Index>(rng.below(3));
    const auto j = random_joint(p, k, rng, true);
    const double beta = log_uniform(rng, 1e-3, 1e-1), gamma = rng.uniform(0.05, 0.9);
    const auto sol = solve_ib_identity(j, beta, gamma);
    const auto bf = brute_force_minimize(j, {beta, gamma, Formulation::InformationBottleneck}, p, 4, 200 + i);
    EXPECT_LE(sol.objective_value, bf.objective_value + 1e-5 * (1.0 + std::abs(bf.objective_value)));
  }
}

TEST(MutualFisher, ScalarLargeBetaFailsPrecondition) {
  // Scalar case: C = 1, D = 1, J = 1 / dtilde with dtilde = b(1 + sqrt(1 + 4/b)) / 2, b = 2 beta.
  const double b = 20.0;
  const double jm1 = 2.0 / (b * (1.0 + std::sqrt(1.0 + 4.0 / b))) - 1.0;
  ASSERT_LT(jm1, 0.0);
  try {
    solve_mutual_fisher(scalar_joint(), 10.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BetaTooLarge);
  }
}

TEST(MutualFisher, ScalarSmallBetaMatchesOracle) {
  const auto j = scalar_joint();
  const auto sol = solve_mutual_fisher(j, 0.01);
  const auto bf = brute_force_minimize(j, {0.01, 0.0, Formulation::MutualFisher}, 1, 6, 3);
  EXPECT_NEAR(sol.objective_value, bf.objective_value, 1e-5 * (1.0 + std::abs(bf.objective_value)));
  EXPECT_NEAR(sol.encoder.a.squaredNorm(), bf.encoder.a.squaredNorm(), 1e-4);
  EXPECT_TRUE(sol.exact);
}

TEST(MutualFisher, RotationOfXLeavesObjectiveUnchanged) {
  Rng rng(14);
  const auto j = random_joint(3, 2, rng, false);
  const Matrix q = linalg::random_orthogonal(3, rng);
  const auto jr = GaussianJoint::make(q * j.sigma_x * q.transpose(), j.sigma_y, q * j.sigma_xy);
  const auto a = solve_mutual_fisher(j, 1e-3);
  const auto b = solve_mutual_fisher(jr, 1e-3);
  EXPECT_NEAR(a.objective_value, b.objective_value, 1e-10 * (1.0 + std::abs(a.objective_value)));
}

TEST(MutualFisher, RankDeficientCrossCovariance) {
  Matrix sxy(2, 2);
  sxy << 1, 2, 0.5, 1;
  Matrix sy = sxy.transpose() * sxy + Matrix::Identity(2, 2);
  const auto j = GaussianJoint::make(Matrix::Identity(2, 2), sy, sxy);
  try {
    solve_mutual_fisher(j, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(MutualFisher, ExactWhenSquareOrIsotropic) {
  Rng rng(15);
  for (int i = 0; i < 6; ++i) {
    const bool iso = i % 2 == 0;
    const Index k = 1 + static_cast<Index>(rng.below(2));
    const Index p = iso ? k + static_cast<Index>(rng.below(3)) : k;
    const auto j = random_joint(p, k, rng, iso);
    const auto sol = solve_mutual_fisher(j, 1e-3);
    ASSERT_TRUE(sol.exact);
    const auto bf = brute_force_minimize(j, {1e-3, 0.0, Formulation::MutualFisher}, p, 4, 300 + i);
    EXPECT_LE(sol.objective_value, bf.objective_value + 1e-5 * (1.0 + std::abs(bf.objective_value)));
  }
}

TEST(MutualFisher, AnisotropicWideCaseIsOnlyStationaryWithinFamily) {
  // With p > k and a non-isotropic Sigma_x the construction is flagged inexact
  // and never beats the oracle.
  Rng rng(16);
  const auto j = random_joint(3, 1, rng, false);
  const auto sol = solve_mutual_fisher(j, 1e-2);
  EXPECT_FALSE(sol.exact);
  const auto bf = brute_force_minimize(j, {1e-2, 0.0, Formulation::MutualFisher}, 3, 4, 17);
  EXPECT_GE(sol.objective_value, bf.objective_value - 1e-8);
}

TEST(Surrogate, MatchesIdentitySolverOnIsotropicCovariance) {
  Rng rng(18);
  for (int i = 0; i < 10; ++i) {
    const auto j = random_joint(4, 2, rng, true);
    const double beta = log_uniform(rng, 1e-3, 1.0);
    const auto s = solve_mmse_surrogate(j, beta);
    const auto e = solve_mmse_identity(j, beta);
    EXPECT_FALSE(s.surrogate);
    EXPECT_NEAR(s.objective_value, e.objective_value, 1e-10);
    ASSERT_EQ(s.encoder.features(), e.encoder.features());
    const Matrix gs = s.encoder.a.transpose() * s.encoder.a;
    const Matrix ge = e.encoder.a.transpose() * e.encoder.a;
    EXPECT_LT((gs - ge).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(s.surrogate_value, s.objective_value, 1e-10);
  }
}

TEST(Surrogate, TraceWeightOnlyAgreesInOneDimension) {
  Rng rng(19);
  const auto j1 = random_joint(1, 1, rng, true);
  EXPECT_NEAR(solve_mmse_surrogate(j1, 0.05, SurrogateWeight::Trace).objective_value,
              solve_mmse_identity(j1, 0.05).objective_value, 1e-12);
  const auto j3 = random_joint(3, 1, rng, true);
  const auto t = solve_mmse_surrogate(j3, 0.05, SurrogateWeight::Trace);
  EXPECT_GT(t.objective_value, solve_mmse_identity(j3, 0.05).objective_value + 1e-6);
}

TEST(Surrogate, LargeWeightGivesEmptyMap) {
  Rng rng(20);
  const auto j = random_joint(3, 2, rng, false);
  const auto probe = solve_mmse_surrogate(j, 1.0);
  const double lmax = probe.spectrum.front().value;
  const double c = linalg::sym_eig_desc(linalg::spd_inverse(j.sigma_x)).values(0);
  const auto sol = solve_mmse_surrogate(j, lmax / c);
  EXPECT_EQ(sol.active_dims, 0);
  EXPECT_DOUBLE_EQ(sol.objective_value, j.sigma_y.trace());
}

TEST(Surrogate, DiagonalExampleUpperBoundsOracle) {
  Matrix sx(2, 2), sxy(2, 1);
  sx << 1, 0, 0, 4;
  sxy << 1, 1;
  const auto j = GaussianJoint::make(sx, Matrix::Constant(1, 1, 3.0), sxy);
  const auto s = solve_mmse_surrogate(j, 0.05);
  EXPECT_TRUE(s.surrogate);
  const auto bf = brute_force_minimize(j, {0.05, 0.0, Formulation::Mmse}, 2, 6, 21);
  EXPECT_GE(s.objective_value, bf.objective_value - 1e-8);
  EXPECT_GE(s.surrogate_value, s.objective_value - 1e-12);
}

TEST(AllSolvers, SingleTargetDirectionIsWhitenedCrossCovariance) {
  Rng rng(22);
  for (int i = 0; i < 5; ++i) {
    const auto j = random_joint(3, 1, rng, false);
    const Vector target = linalg::spd_inverse(j.sigma_x) * j.sigma_xy.col(0);
    const auto mf = solve_mutual_fisher(j, 1e-3);
    const auto su = solve_mmse_surrogate(j, 1e-3);
    ASSERT_EQ(mf.active_dims, 1);
    ASSERT_EQ(su.active_dims, 1);
    EXPECT_LT(cosine_distance(mf.encoder.a.row(0).transpose(), target), 1e-8);
    EXPECT_LT(cosine_distance(su.encoder.a.row(0).transpose(), target), 1e-8);
    const auto ji = random_joint(3, 1, rng, true);
    const Vector ti = ji.sigma_xy.col(0);
    const auto mi = solve_mmse_identity(ji, 1e-3);
    const auto ib = solve_ib_identity(ji, 1e-3, 0.05);
    ASSERT_EQ(mi.active_dims, 1);
    ASSERT_EQ(ib.active_dims, 1);
    EXPECT_LT(cosine_distance(mi.encoder.a.row(0).transpose(), ti), 1e-8);
    EXPECT_LT(cosine_distance(ib.encoder.a.row(0).transpose(), ti), 1e-8);
  }
}

TEST(BruteForce, DeterministicGivenSeed) {
  Rng rng(23);
  const auto j = random_joint(3, 2, rng, false);
  const RibConfig cfg{0.1, 0.0, Formulation::Mmse};
  const auto a = brute_force_minimize(j, cfg, 2, 1, 99);
  const auto b = brute_force_minimize(j, cfg, 2, 1, 99);
  EXPECT_EQ(a.objective_value, b.objective_value);
  EXPECT_TRUE((a.encoder.a.array() == b.encoder.a.array()).all());
}

TEST(BruteForce, HugeBetaCollapsesToZero) {
  Rng rng(24);
  const auto j = random_joint(3, 2, rng, false);
  const double lmax = linalg::sym_eig_desc(j.sigma_xy * j.sigma_yx()).values(0);
  const auto bf = brute_force_minimize(j, {1e6 * lmax, 0.0, Formulation::Mmse}, 2, 2, 1);
  EXPECT_LT(bf.encoder.a.norm(), 1e-6);
  EXPECT_NEAR(bf.objective_value, j.sigma_y.trace(), 1e-9 * j.sigma_y.trace());
}

TEST(BruteForce, IndependentOfThreadCount) {
  Rng rng(25);
  const auto j = random_joint(2, 2, rng, false);
  const RibConfig cfg{0.05, 0.0, Formulation::Mmse};
  setenv("RIB_THREADS", "1", 1);
  const auto a = brute_force_minimize(j, cfg, 2, 3, 5);
  setenv("RIB_THREADS", "3", 1);
  const auto b = brute_force_minimize(j, cfg, 2, 3, 5);
  unsetenv("RIB_THREADS");
  EXPECT_EQ(a.objective_value, b.objective_value);
}

TEST(SolutionText, RoundTripsExactly) {
  Rng rng(26);
  const auto j = random_joint(3, 2, rng, true);
  const auto sol = solve_mmse_identity(j, 0.01);
  const std::string text = write_solution(sol, j.p(), j.k());
  const auto parsed = read_solution(text);
  EXPECT_EQ(parsed.header.at("formulation"), "mmse");
  EXPECT_EQ(std::stod(parsed.header.at("objective_value")), sol.objective_value);
  EXPECT_TRUE((parsed.a.array() == sol.encoder.a.array()).all());
}
