#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rib/gmm_lab.hpp"

using namespace rib;
using namespace rib::gmm;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const TwoClassGmm kFigure{2.0, 0.2};

AccuracyModel l2_noise() { return {PerturbationNorm::L2, true}; }

}  // namespace

TEST(ScalarF, DegenerateAtZero) {
  const auto f0 = mmse_scalar_f(0.0, 10, 1);
  EXPECT_EQ(f0.value, 2.0);
  EXPECT_EQ(f0.std_error, 0.0);
}

TEST(ScalarF, CollapsesForLargeArgument) { EXPECT_LT(mmse_scalar_f(10.0, 1000000, 2).value, 1e-3); }

TEST(ScalarF, DecreasingOnGrid) {
  McValue prev = mmse_scalar_f(0.0, 1, 3);
  for (double a : {0.5, 1.0, 2.0, 4.0}) {
    const auto cur = mmse_scalar_f(a, 1000000, 4);
    EXPECT_LT(cur.value, prev.value + 3.0 * std::hypot(cur.std_error, prev.std_error)) << a;
    prev = cur;
  }
}

TEST(OptimalProbe, SymmetricVariancesGiveDiagonal) {
  for (double r : {0.01, 1.0, 50.0}) {
    const auto w = optimal_probe({1.3, 1.3}, r);
    EXPECT_NEAR(w.angle(), 45.0 * kDeg, 1e-7);  // flat maximum: sqrt(machine eps) resolution
    EXPECT_NEAR(w.w.norm(), r, 1e-12 * r);
  }
}

TEST(OptimalProbe, SmallRadiusTendsToDiagonal) {
  EXPECT_NEAR(optimal_probe(kFigure, 1e-4).angle(), 45.0 * kDeg, 1e-6);
  EXPECT_GT(optimal_probe(kFigure, 100.0).angle(), 80.0 * kDeg);
}

TEST(OptimalProbe, MatchesDenseAngularGrid) {
  const double r = 10.0;
  const int n = 100000;
  double best = -1e300, best_th = 0.0;
  for (int i = 0; i < n; ++i) {
    const double th = -std::numbers::pi / 2.0 + std::numbers::pi * (i + 1) / n;
    const double v = probe_ratio(kFigure, r * Eigen::Vector2d(std::cos(th), std::sin(th)));
    if (v > best) {
      best = v;
      best_th = th;
    }
  }
  EXPECT_NEAR(optimal_probe(kFigure, r).angle(), best_th, 1e-4);
}

TEST(OptimalProbe, RatioGrowsWithRadiusAtOptimum) {
  for (double r : {0.1, 1.0, 10.0}) {
    const double h = 1e-6 * r;
    const double up = probe_ratio(kFigure, optimal_probe(kFigure, r + h).w);
    const double down = probe_ratio(kFigure, optimal_probe(kFigure, r - h).w);
    EXPECT_GE((up - down) / (2.0 * h), 0.0);
  }
}

TEST(OptimalProbe, AngleInvariantToVarianceScaleWhenNoiseNegligible) {
  const TwoClassGmm scaled{4.0 * kFigure.sigma1_sq, 4.0 * kFigure.sigma2_sq};
  EXPECT_NEAR(optimal_probe(kFigure, 100.0).angle(), optimal_probe(scaled, 100.0).angle(), 1e-3);
}

TEST(AdversarialAccuracy, UnitExampleMatchesSimulation) {
  const TwoClassGmm g{1.0, 1.0};
  const LinearProbe w{Eigen::Vector2d(1.0, 1.0)};
  const double exact = adversarial_accuracy(w, g, 0.0);
  EXPECT_NEAR(exact, 0.5 * std::erfc(-1.0), 1e-15);
  EXPECT_NEAR(exact, 0.92135, 1e-5);
  const auto mc = simulate_adversarial_accuracy(w, g, 0.0, {}, 10000000, 5);
  EXPECT_NEAR(exact, mc.value, 3.0 * mc.std_error);
}

TEST(AdversarialAccuracy, DependsOnlyOnDirection) {
  const LinearProbe w{Eigen::Vector2d(0.3, 1.7)};
  const LinearProbe w4{4.0 * w.w};
  for (double e : {0.0, 0.5, 1.1})
    for (auto norm : {PerturbationNorm::L1Formula, PerturbationNorm::L2}) {
      EXPECT_EQ(adversarial_accuracy(w, kFigure, e, {norm, false}), adversarial_accuracy(w4, kFigure, e, {norm, false}));
      EXPECT_NEAR(adversarial_accuracy(w, kFigure, e, {norm, false}),
                  adversarial_accuracy({3.7 * w.w}, kFigure, e, {norm, false}), 1e-15);
    }
}

TEST(AdversarialAccuracy, BothBallsMatchSimulatedWorstCase) {
  const LinearProbe w{Eigen::Vector2d(0.4, 1.2)};
  for (auto model : {AccuracyModel{PerturbationNorm::L1Formula, false}, AccuracyModel{PerturbationNorm::L2, false},
                     AccuracyModel{PerturbationNorm::L2, true}}) {
    const auto mc = simulate_adversarial_accuracy(w, kFigure, 0.5, model, 2000000, 6);
    EXPECT_NEAR(adversarial_accuracy(w, kFigure, 0.5, model), mc.value, 3.0 * mc.std_error);
  }
}

TEST(AdversarialAccuracy, ZeroProbeIsAnError) {
  try {
    adversarial_accuracy({}, kFigure, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroProbe);
  }
}

TEST(AdversarialAccuracy, ProbabilitiesBoundedAndVanishForHugeBudget) {
  const auto t = sweep_angle(kFigure, {0.0, 0.5, 1.1, 1.5, 1e6}, 90, l2_noise());
  for (const auto& row : t.rows)
    for (std::size_t j = 1; j < row.size(); ++j) {
      EXPECT_GE(row[j], 0.0);
      EXPECT_LE(row[j], 1.0);
    }
  for (double v : t.column(5)) EXPECT_LT(v, 1e-12);
}

TEST(Sweeps, RadiusTrendsOfFigure) {
  const std::vector<double> eps{0.0, 0.5, 1.1, 1.5};
  const auto t = sweep_radius(kFigure, eps, log_grid(1e-4, 100.0, 61), l2_noise());
  const auto clean = t.column(1);
  for (std::size_t i = 1; i < clean.size(); ++i) EXPECT_GE(clean[i], clean[i - 1] - 1e-12);
  const auto mid = t.column(3);
  const auto peak = std::max_element(mid.begin(), mid.end()) - mid.begin();
  EXPECT_GT(peak, 0);
  EXPECT_LT(peak, static_cast<long>(mid.size()) - 1);
  EXPECT_GT(mid[peak], mid.front() + 1e-3);
  EXPECT_GT(mid[peak], mid.back() + 1e-3);
  for (std::size_t j = 1; j <= eps.size(); ++j) EXPECT_NEAR(t.rows.front()[j], 0.5, 0.01);
}

TEST(Sweeps, HeadersAndShape) {
  const auto t = sweep_angle(kFigure, {0.0, 1.1}, 4);
  ASSERT_EQ(t.header.size(), 3u);
  EXPECT_EQ(t.header[0], "angle_deg");
  EXPECT_EQ(t.header[2], "eps=1.1");
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows.back()[0], 90.0);
  const std::string csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "angle_deg,eps=0,eps=1.1");
}

TEST(Sweeps, AnglePeakMatchesSimulatedClassifier) {
  const int n_angles = 181;
  const auto t = sweep_angle(kFigure, {0.0}, n_angles, {PerturbationNorm::L2, false});
  const auto acc = t.column(1);
  const auto peak = std::max_element(acc.begin(), acc.end()) - acc.begin();
  const double mc_best = simulated_best_angle(kFigure, n_angles, 1000000, 7);
  EXPECT_LE(std::abs(t.rows[peak][0] - mc_best), 2.0);
}
