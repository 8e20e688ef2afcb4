#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "format.hpp"
#include "optimize.hpp"
#include "rng.hpp"

namespace rib::gmm {

/// Classes y = +1 / -1 with equal weight, X | y ~ N(y (1,1), diag(s1, s2)).
struct TwoClassGmm {
  double sigma1_sq = 2.0;
  double sigma2_sq = 0.2;

  void validate() const {
    require(sigma1_sq > 0.0 && sigma2_sq > 0.0, ErrorCode::InvalidArgument, "class variances must be > 0");
  }
};

struct LinearProbe {
  Eigen::Vector2d w = Eigen::Vector2d::Zero();

  double mu_w() const { return w(0) + w(1); }
  /// Standard deviation of T = w^T X + xi given the class (unit feature noise).
  double sigma_w(const TwoClassGmm& g) const {
    return std::sqrt(w(0) * w(0) * g.sigma1_sq + w(1) * w(1) * g.sigma2_sq + 1.0);
  }
  double angle() const { return std::atan2(w(1), w(0)); }
};

struct McValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// Standard normal upper tail P{Z >= z}.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// f(a) = E 8 / (1 + exp(2Z))^2 with Z ~ N(a^2, a^2).
inline McValue mmse_scalar_f(double a, std::int64_t n_mc, std::uint64_t seed) {
  require(n_mc >= 1, ErrorCode::InvalidArgument, "n_mc must be >= 1");
  require(a >= 0.0, ErrorCode::InvalidArgument, "a must be >= 0");
  const auto g = [](double z) {
    const double d = 1.0 + std::exp(2.0 * z);
    return 8.0 / (d * d);
  };
  if (a == 0.0) return {g(0.0), 0.0};
  Rng rng(seed);
  double s = 0.0, s2 = 0.0;
  for (std::int64_t i = 0; i < n_mc; ++i) {
    const double v = g(a * a + a * rng.normal());
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(n_mc);
  const double mean = s / n;
  const double var = n > 1 ? std::max(0.0, (s2 - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

inline double probe_ratio(const TwoClassGmm& g, const Eigen::Vector2d& w) {
  const LinearProbe p{w};
  return p.mu_w() / p.sigma_w(g);
}

/// argmax mu_w / sigma_w over ||w|| = radius. The angle runs over the
/// half-circle where mu_w >= 0; a coarse scan brackets the peak before the
/// golden-section refinement.
inline LinearProbe optimal_probe(const TwoClassGmm& g, double radius) {
  g.validate();
  require(radius > 0.0, ErrorCode::InvalidArgument, "radius must be > 0");
  const double lo = -std::numbers::pi / 4.0, hi = 3.0 * std::numbers::pi / 4.0;
  const auto neg = [&](double th) {
    return -probe_ratio(g, radius * Eigen::Vector2d(std::cos(th), std::sin(th)));
  };
  const int grid = 720;
  int best = 0;
  double fbest = neg(lo);
  for (int i = 1; i <= grid; ++i) {
    const double v = neg(lo + (hi - lo) * i / grid);
    if (v < fbest) {
      fbest = v;
      best = i;
    }
  }
  const double step = (hi - lo) / grid;
  const double a = lo + std::max(0, best - 1) * step;
  const double b = lo + std::min(grid, best + 1) * step;
  const auto m = opt::golden_section(neg, a, b, 1e-10);
  return {radius * Eigen::Vector2d(std::cos(m.x), std::sin(m.x))};
}

/// How the budget eps enters the worst-case margin.
enum class PerturbationNorm {
  L1Formula,  // eps ||w||_1, the worst case over an l_inf ball
  L2,         // eps ||w||_2, the worst case over an l_2 ball
};

struct AccuracyModel {
  PerturbationNorm norm = PerturbationNorm::L1Formula;
  bool feature_noise = false;  // classify sign(w^T x + xi) instead of sign(w^T x)
};

inline const char* to_string(PerturbationNorm n) { return n == PerturbationNorm::L2 ? "l2" : "l1_formula"; }

/// P{Z >= (eps ||w|| - mu_w) / s} with s^2 = w^T Sigma w (+ 1 with feature noise).
inline double adversarial_accuracy(const LinearProbe& probe, const TwoClassGmm& g, double eps,
                                   AccuracyModel model = {}) {
  g.validate();
  require(eps >= 0.0, ErrorCode::InvalidArgument, "eps must be >= 0");
  const auto& w = probe.w;
  require(w.squaredNorm() > 0.0, ErrorCode::ZeroProbe, "probe weight vector is zero");
  const double norm = model.norm == PerturbationNorm::L2 ? w.norm() : w.lpNorm<1>();
  double var = w(0) * w(0) * g.sigma1_sq + w(1) * w(1) * g.sigma2_sq;
  if (model.feature_noise) var += 1.0;
  return normal_sf((eps * norm - probe.mu_w()) / std::sqrt(var));
}

/// Simulated accuracy under the worst-case shift of the chosen ball:
/// delta = -eps y sign(w) (l_inf) or -eps y w / ||w||_2 (l_2).
inline McValue simulate_adversarial_accuracy(const LinearProbe& probe, const TwoClassGmm& g, double eps,
                                             AccuracyModel model, std::int64_t n, std::uint64_t seed) {
  g.validate();
  require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
  const auto& w = probe.w;
  require(w.squaredNorm() > 0.0, ErrorCode::ZeroProbe, "probe weight vector is zero");
  Eigen::Vector2d dir;
  if (model.norm == PerturbationNorm::L2) {
    dir = w / w.norm();
  } else {
    dir << (w(0) > 0) - (w(0) < 0), (w(1) > 0) - (w(1) < 0);
  }
  const double s1 = std::sqrt(g.sigma1_sq), s2 = std::sqrt(g.sigma2_sq);
  Rng rng(seed);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double y = (rng.next_u64() >> 63) ? 1.0 : -1.0;
    const double x0 = y + s1 * rng.normal() - eps * y * dir(0);
    const double x1 = y + s2 * rng.normal() - eps * y * dir(1);
    double t = w(0) * x0 + w(1) * x1;
    if (model.feature_noise) t += rng.normal();
    if ((t > 0.0 ? 1.0 : -1.0) == y) ++correct;
  }
  const double p = static_cast<double>(correct) / static_cast<double>(n);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::string to_csv(int digits = 10) const {
    std::string out = join(header, ",") + "\n";
    for (const auto& r : rows) {
      std::vector<std::string> cells;
      for (double v : r) cells.push_back(fmt_g(v, digits));
      out += join(cells, ",") + "\n";
    }
    return out;
  }

  /// Column j as a vector.
  std::vector<double> column(std::size_t j) const {
    std::vector<double> c;
    for (const auto& r : rows) c.push_back(r.at(j));
    return c;
  }
};

inline std::string eps_label(double eps) { return "eps=" + fmt_g(eps, 10); }

/// Angles (degrees) evenly covering (-90, 90].
inline Table sweep_angle(const TwoClassGmm& g, const std::vector<double>& eps_list, int n_angles,
                         AccuracyModel model = {}) {
  require(!eps_list.empty() && n_angles >= 1, ErrorCode::InvalidArgument, "empty sweep");
  Table t;
  t.header.push_back("angle_deg");
  for (double e : eps_list) t.header.push_back(eps_label(e));
  for (int i = 0; i < n_angles; ++i) {
    const double deg = -90.0 + 180.0 * (i + 1) / n_angles;
    const double th = deg * std::numbers::pi / 180.0;
    const LinearProbe probe{Eigen::Vector2d(std::cos(th), std::sin(th))};
    std::vector<double> row{deg};
    for (double e : eps_list) row.push_back(adversarial_accuracy(probe, g, e, model));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table sweep_radius(const TwoClassGmm& g, const std::vector<double>& eps_list,
                          const std::vector<double>& radii, AccuracyModel model = {}) {
  require(!eps_list.empty() && !radii.empty(), ErrorCode::InvalidArgument, "empty sweep");
  Table t;
  t.header.push_back("radius");
  for (double e : eps_list) t.header.push_back(eps_label(e));
  for (double r : radii) {
    const auto probe = optimal_probe(g, r);
    std::vector<double> row{r};
    for (double e : eps_list) row.push_back(adversarial_accuracy(probe, g, e, model));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// n log-spaced values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, int n) {
  require(lo > 0.0 && hi >= lo && n >= 1, ErrorCode::InvalidArgument, "bad log grid");
  std::vector<double> v;
  for (int i = 0; i < n; ++i)
    v.push_back(n == 1 ? lo : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1.0)));
  return v;
}

/// Best sign(w^T x) angle (degrees) on a shared sample, scanning the same
/// angle grid as sweep_angle.
inline double simulated_best_angle(const TwoClassGmm& g, int n_angles, std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> ys(n), x0(n), x1(n);
  const double s1 = std::sqrt(g.sigma1_sq), s2 = std::sqrt(g.sigma2_sq);
  for (std::int64_t i = 0; i < n; ++i) {
    ys[i] = (rng.next_u64() >> 63) ? 1.0 : -1.0;
    x0[i] = ys[i] + s1 * rng.normal();
    x1[i] = ys[i] + s2 * rng.normal();
  }
  double best_deg = 0.0;
  std::int64_t best = -1;
  for (int a = 0; a < n_angles; ++a) {
    const double deg = -90.0 + 180.0 * (a + 1) / n_angles;
    const double th = deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n; ++i)
      if ((c * x0[i] + s * x1[i] > 0.0 ? 1.0 : -1.0) == ys[i]) ++correct;
    if (correct > best) {
      best = correct;
      best_deg = deg;
    }
  }
  return best_deg;
}

}  // namespace rib::gmm
