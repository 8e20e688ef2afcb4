#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include "linalg.hpp"

namespace rib::opt {

struct ScalarMin {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
};

/// Golden-section search for a minimum of f on [lo, hi]. The endpoints are
/// also compared so boundary minima are returned exactly.
inline ScalarMin golden_section(const std::function<double(double)>& f, double lo, double hi,
                                double abs_tol = 1e-12, int max_iter = 500) {
  require(lo <= hi, ErrorCode::InvalidArgument, "golden_section: empty bracket");
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  int it = 0;
  while (b - a > abs_tol && it < max_iter) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
    ++it;
  }
  ScalarMin best{fc <= fd ? c : d, std::min(fc, fd), it};
  for (double e : {lo, hi}) {
    const double fe = f(e);
    if (fe <= best.fx) best = {e, fe, it};
  }
  return best;
}

using Objective = std::function<double(const Vector&)>;

inline Vector numeric_gradient(const Objective& f, const Vector& x, double rel_step = 1e-6) {
  Vector g(x.size());
  Vector y = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x(i)));
    y(i) = x(i) + h;
    const double fp = f(y);
    y(i) = x(i) - h;
    const double fm = f(y);
    y(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct MinimizeOptions {
  int max_iters = 3000;
  double grad_tol = 1e-10;
  double fd_step = 1e-6;
  int max_halvings = 60;
};

struct MinimizeResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Quasi-Newton descent on central-difference gradients with a step-halving
/// (Armijo) line search. Non-finite trial values count as failed steps.
inline MinimizeResult minimize(const Objective& f, Vector x, const MinimizeOptions& opt = {}) {
  const Index n = x.size();
  double fx = f(x);
  require(std::isfinite(fx), ErrorCode::NonFinite, "objective is not finite at the start point");
  MinimizeResult res{x, fx, 0, false};
  if (n == 0) {
    res.converged = true;
    return res;
  }
  Matrix h = Matrix::Identity(n, n);
  Vector g = numeric_gradient(f, x, opt.fd_step);
  bool first = true;
  int stalls = 0;
  for (int it = 0; it < opt.max_iters; ++it) {
    res.iterations = it + 1;
    require(g.allFinite(), ErrorCode::NonFinite, "objective gradient diverged");
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      res.converged = true;
      break;
    }
    Vector dir = -h * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      h.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double t = first ? std::min(1.0, 1.0 / std::max(1e-300, dir.norm())) : 1.0;
    first = false;
    bool accepted = false;
    Vector xn;
    double fn = 0.0;
    for (int k = 0; k < opt.max_halvings; ++k) {
      xn = x + t * dir;
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (h.isIdentity()) {
        res.converged = true;
        break;
      }
      h.setIdentity();
      continue;
    }
    const Vector gn = numeric_gradient(f, xn, opt.fd_step);
    const Vector s = xn - x;
    const Vector y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Matrix ident = Matrix::Identity(n, n);
      h = (ident - rho * s * y.transpose()) * h * (ident - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    stalls = (fx - fn <= 1e-16 * std::max(1.0, std::abs(fx))) ? stalls + 1 : 0;
    x = xn;
    fx = fn;
    g = gn;
    if (stalls >= 5) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  return res;
}

}  // namespace rib::opt
