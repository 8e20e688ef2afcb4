#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "var_rib.hpp"

namespace rib::adv {

using vib::Model;

struct AttackSpec {
  double eps = 0.1;  // l_inf budget
  int restarts = 10;
  int posterior_samples = 12;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(std::isfinite(eps) && eps >= 0.0, ErrorCode::InvalidArgument, "eps must be >= 0");
    require(restarts >= 1, ErrorCode::InvalidArgument, "restarts must be >= 1");
    require(posterior_samples >= 1, ErrorCode::InvalidArgument, "posterior_samples must be >= 1");
    require(clip_lo < clip_hi, ErrorCode::InvalidArgument, "clip range must satisfy lo < hi");
  }
};

struct Prediction {
  int label = 0;
  Vector probs;
};

inline void require_softmax(const Model& model) {
  require(model.head.kind == vib::HeadKind::SoftmaxDirect, ErrorCode::InvalidArgument,
          "adversarial evaluation needs a softmax head");
}

/// Mean of softmax(mu + sigma * e_s) over the columns e_s of `draws`;
/// argmax with ties to the lowest class.
inline Prediction predict_with(const Model& model, const Vector& x, const Matrix& draws) {
  require_softmax(model);
  require(draws.rows() == model.k() && draws.cols() >= 1, ErrorCode::DimensionMismatch, "draws must be K x S");
  const auto e = vib::encode(model, x);
  Prediction p;
  p.probs = Vector::Zero(model.k());
  for (Index s = 0; s < draws.cols(); ++s) p.probs += vib::softmax(e.mu + e.sigma.cwiseProduct(draws.col(s)));
  p.probs /= static_cast<double>(draws.cols());
  Index best = 0;
  p.probs.maxCoeff(&best);  // first maximum
  p.label = static_cast<int>(best);
  return p;
}

inline Prediction predict(const Model& model, const Vector& x, int posterior_samples, std::uint64_t seed) {
  require(posterior_samples >= 1, ErrorCode::InvalidArgument, "posterior_samples must be >= 1");
  Rng rng(seed);
  return predict_with(model, x, rng.normal_matrix(model.k(), posterior_samples));
}

/// Input gradient of -log(mean_s softmax(t_s)[y]) with t_s = mu + sigma * e_s.
inline Vector input_gradient(const Model& model, const Vector& x, int y, const Matrix& draws) {
  require_softmax(model);
  require(y >= 0 && y < model.k(), ErrorCode::InvalidArgument, "label out of range");
  const Index k = model.k();
  nn::Mlp::Cache cache;
  const Vector out = model.encoder.forward(model.theta, x, &cache);
  const Vector mu = out.head(k);
  Vector sigma(k), d1(k);
  for (Index j = 0; j < k; ++j) {
    const auto s = vib::sigma_map(model.transform, out(k + j));
    sigma(j) = s.sigma;
    d1(j) = s.d1;
  }
  const Index n = draws.cols();
  std::vector<Vector> sm(static_cast<std::size_t>(n));
  double py = 0.0;
  for (Index s = 0; s < n; ++s) {
    sm[static_cast<std::size_t>(s)] = vib::softmax(mu + sigma.cwiseProduct(draws.col(s)));
    py += sm[static_cast<std::size_t>(s)](y);
  }
  py /= static_cast<double>(n);
  Vector mu_bar = Vector::Zero(k), sig_bar = Vector::Zero(k);
  for (Index s = 0; s < n; ++s) {
    const Vector& p = sm[static_cast<std::size_t>(s)];
    Vector tbar = p(y) * p;
    tbar(y) -= p(y);
    tbar /= static_cast<double>(n) * py;
    mu_bar += tbar;
    sig_bar += tbar.cwiseProduct(draws.col(s));
  }
  Vector out_bar(2 * k);
  out_bar << mu_bar, d1.cwiseProduct(sig_bar);
  Vector gx;
  model.encoder.backward(model.theta, cache, out_bar, nullptr, &gx);
  return gx;
}

struct AttackResult {
  Vector x_adv;
  bool success = false;
  int clean_label = 0;
  bool clean_correct = false;
};

inline Vector clip_to_ball(const Vector& v, const Vector& centre, const AttackSpec& spec) {
  Vector out = v;
  for (Index i = 0; i < v.size(); ++i)
    out(i) = std::clamp(std::clamp(v(i), centre(i) - spec.eps, centre(i) + spec.eps), spec.clip_lo, spec.clip_hi);
  return out;
}

inline double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

/// FGSM with random restarts. The candidate set is the clean input followed
/// by one signed-gradient step per restart; restart 0 starts at x, later
/// restarts at x plus uniform noise in [-eps, eps]^p. Every candidate is
/// classified with the same posterior draws (stream 0 of example_seed), and
/// restart r draws its start and gradient samples from stream 1 + r.
/// Success means some candidate is classified differently from y_true.
inline AttackResult fgsm_attack(const Model& model, const Vector& x, int y_true, const AttackSpec& spec,
                                std::uint64_t example_seed) {
  spec.validate();
  require(x.size() == model.input_dim(), ErrorCode::DimensionMismatch, "input dimension does not match the model");
  Rng pred_rng(derive_seed(example_seed, 0));
  const Matrix pred_draws = pred_rng.normal_matrix(model.k(), spec.posterior_samples);
  AttackResult r;
  r.clean_label = predict_with(model, x, pred_draws).label;
  r.clean_correct = r.clean_label == y_true;
  r.x_adv = x;
  if (!r.clean_correct) {
    r.success = true;
    return r;
  }
  if (spec.eps == 0.0) return r;
  for (int k = 0; k < spec.restarts; ++k) {
    Rng rng(derive_seed(example_seed, 1 + static_cast<std::uint64_t>(k)));
    Vector start = x;
    if (k > 0)
      for (Index i = 0; i < x.size(); ++i) start(i) += rng.uniform(-spec.eps, spec.eps);
    start = clip_to_ball(start, x, spec);
    const Matrix draws = rng.normal_matrix(model.k(), spec.posterior_samples);
    const Vector g = input_gradient(model, start, y_true, draws);
    require(g.allFinite(), ErrorCode::NonFinite, "attack gradient is not finite");
    const Vector cand = clip_to_ball(start + spec.eps * g.unaryExpr([](double v) { return sign(v); }), x, spec);
    r.x_adv = cand;
    if (predict_with(model, cand, pred_draws).label != y_true) {
      r.success = true;
      return r;
    }
  }
  return r;
}

struct EvalReport {
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  double relative_adversarial_accuracy = std::numeric_limits<double>::quiet_NaN();
  Index examples = 0;
};

/// Clean and adversarial accuracy; example i uses sub-seed derive_seed(seed, i).
/// The relative accuracy divides by `baseline_adversarial` when given.
inline EvalReport evaluate(const Model& model, const data::Dataset& d, const AttackSpec& spec,
                           std::optional<double> baseline_adversarial = std::nullopt) {
  spec.validate();
  d.validate();
  require(d.has_labels(), ErrorCode::InvalidArgument, "evaluation needs labels");
  require(d.dim() == model.input_dim(), ErrorCode::DimensionMismatch, "input dimension does not match the model");
  const auto n = static_cast<std::size_t>(d.size());
  std::vector<char> clean(n), robust(n);
  parallel_for(n, [&](std::size_t i) {
    const auto r = fgsm_attack(model, d.x.col(static_cast<Index>(i)), d.labels[i], spec, derive_seed(spec.seed, i));
    clean[i] = r.clean_correct;
    robust[i] = !r.success;
  });
  EvalReport rep;
  rep.examples = d.size();
  for (std::size_t i = 0; i < n; ++i) {
    rep.clean_accuracy += clean[i];
    rep.adversarial_accuracy += robust[i];
  }
  rep.clean_accuracy /= static_cast<double>(n);
  rep.adversarial_accuracy /= static_cast<double>(n);
  if (baseline_adversarial) rep.relative_adversarial_accuracy = rep.adversarial_accuracy / *baseline_adversarial;
  return rep;
}

struct AttackRow {
  double beta = 0.0;
  EvalReport report;
  AttackSpec spec;
};

inline std::string attack_report_csv(const std::vector<AttackRow>& rows) {
  std::string out =
      "beta,clean_accuracy,adversarial_accuracy,relative_adversarial_accuracy,eps,restarts,posterior_samples,seed\n";
  for (const auto& r : rows)
    out += fmt_g(r.beta, 10) + "," + fmt_g(r.report.clean_accuracy, 10) + "," + fmt_g(r.report.adversarial_accuracy, 10) +
           "," + fmt_g(r.report.relative_adversarial_accuracy, 10) + "," + fmt_g(r.spec.eps, 10) + "," +
           std::to_string(r.spec.restarts) + "," + std::to_string(r.spec.posterior_samples) + "," +
           std::to_string(r.spec.seed) + "\n";
  return out;
}

}  // namespace rib::adv
