#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "mlp.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace rib::vib {

using nn::Activation;

/// sigma = sqrt(softplus(r)) + floor (softplus gives the variance) or
/// sigma = softplus(r) + floor (softplus gives the scale).
enum class VarianceTransform { SoftplusVariance, SoftplusScale };

inline const char* to_string(VarianceTransform t) {
  return t == VarianceTransform::SoftplusScale ? "softplus_scale" : "softplus_variance";
}

inline VarianceTransform parse_variance_transform(const std::string& s) {
  if (s == "softplus_variance") return VarianceTransform::SoftplusVariance;
  if (s == "softplus_scale") return VarianceTransform::SoftplusScale;
  fail(ErrorCode::InvalidArgument, "unknown variance transform '" + s + "'");
}

inline constexpr double kSigmaFloor = 1e-6;

/// sigma(r) with its first two derivatives.
struct SigmaMap {
  double sigma, d1, d2;
};

inline SigmaMap sigma_map(VarianceTransform t, double r) {
  const double sp = nn::softplus(r);
  const double s = nn::logistic(r);
  if (t == VarianceTransform::SoftplusScale) return {sp + kSigmaFloor, s, s * (1.0 - s)};
  const double q = std::sqrt(sp);
  if (q == 0.0) return {kSigmaFloor, 0.0, 0.0};
  return {q + kSigmaFloor, s / (2.0 * q), s * (1.0 - s) / (2.0 * q) - s * s / (4.0 * q * q * q)};
}

struct MlpSpec {
  std::vector<Index> layer_sizes;         // p, hidden..., 2K
  std::vector<Activation> activations;    // one per hidden layer
  Index k = 1;

  static MlpSpec linear(Index p, Index k) { return {{p, 2 * k}, {}, k}; }

  void validate() const {
    require(k >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
    require(layer_sizes.size() >= 2, ErrorCode::InvalidArgument, "encoder needs input and output layers");
    require(layer_sizes.back() == 2 * k, ErrorCode::InvalidArgument, "last layer size must be 2K");
    require(activations.size() + 2 == layer_sizes.size(), ErrorCode::InvalidArgument,
            "need one activation per hidden layer");
  }
};

enum class HeadKind { SoftmaxDirect, Regressor };

inline const char* to_string(HeadKind h) { return h == HeadKind::Regressor ? "regressor" : "softmax"; }

/// SoftmaxDirect uses the features as logits. Regressor is a small network
/// T -> Y with its own parameters phi.
struct PredictionHead {
  HeadKind kind = HeadKind::SoftmaxDirect;
  std::vector<Index> layer_sizes;  // regressor only: K, hidden..., q
  std::vector<Activation> activations;

  static PredictionHead softmax() { return {}; }
  static PredictionHead linear_regressor(Index k, Index q) { return {HeadKind::Regressor, {k, q}, {}}; }
};

enum class LossKind { Mmse, CrossEntropyIB };

inline const char* to_string(LossKind l) { return l == LossKind::Mmse ? "mmse" : "xent"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mmse") return LossKind::Mmse;
  if (s == "xent") return LossKind::CrossEntropyIB;
  fail(ErrorCode::InvalidArgument, "unknown loss '" + s + "'");
}

struct TrainConfig {
  double beta = 0.0;
  double gamma = 0.0;
  LossKind loss = LossKind::CrossEntropyIB;
  int epochs = 10;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int mc_samples = 1;
  std::uint64_t seed = 0;
  bool log_wall_time = false;

  void validate() const {
    require(std::isfinite(beta) && beta >= 0.0, ErrorCode::InvalidArgument, "beta must be >= 0");
    require(std::isfinite(gamma) && gamma >= 0.0, ErrorCode::InvalidArgument, "gamma must be >= 0");
    require(epochs >= 0, ErrorCode::InvalidArgument, "epochs must be >= 0");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(learning_rate > 0.0, ErrorCode::InvalidArgument, "learning_rate must be > 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, ErrorCode::InvalidArgument,
            "adam betas must be in [0, 1)");
    require(adam_eps > 0.0, ErrorCode::InvalidArgument, "adam_eps must be > 0");
    require(mc_samples >= 1, ErrorCode::InvalidArgument, "mc_samples must be >= 1");
  }
};

/// Encoder network, variance transform and prediction head with parameters.
struct Model {
  MlpSpec spec;
  VarianceTransform transform = VarianceTransform::SoftplusVariance;
  PredictionHead head;
  nn::Mlp encoder;
  nn::Mlp regressor;  // unused for SoftmaxDirect
  Vector theta;
  Vector phi;

  Index k() const { return spec.k; }
  Index input_dim() const { return spec.layer_sizes.front(); }
  Index output_dim() const { return head.kind == HeadKind::Regressor ? regressor.output_dim() : spec.k; }
  Index num_params() const { return theta.size() + phi.size(); }

  /// Builds the networks with zero parameters.
  static Model build(const MlpSpec& spec, const PredictionHead& head,
                     VarianceTransform transform = VarianceTransform::SoftplusVariance) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.transform = transform;
    m.head = head;
    m.encoder = nn::Mlp(spec.layer_sizes, spec.activations);
    m.theta = Vector::Zero(m.encoder.num_params());
    if (head.kind == HeadKind::Regressor) {
      require(!head.layer_sizes.empty() && head.layer_sizes.front() == spec.k, ErrorCode::InvalidArgument,
              "regressor input size must be K");
      m.regressor = nn::Mlp(head.layer_sizes, head.activations);
      m.phi = Vector::Zero(m.regressor.num_params());
    }
    return m;
  }

  static Model create(const MlpSpec& spec, const PredictionHead& head, VarianceTransform transform,
                      std::uint64_t seed) {
    Model m = build(spec, head, transform);
    Rng rng(seed);
    m.encoder.init_glorot(m.theta, rng);
    if (head.kind == HeadKind::Regressor) m.regressor.init_glorot(m.phi, rng);
    return m;
  }

  Vector params() const {
    Vector v(num_params());
    v << theta, phi;
    return v;
  }

  void set_params(const Vector& v) {
    require(v.size() == num_params(), ErrorCode::DimensionMismatch, "parameter count mismatch");
    theta = v.head(theta.size());
    phi = v.tail(phi.size());
  }
};

struct Encoding {
  Vector mu;
  Vector sigma;
};

inline Encoding encode(const Model& model, const Vector& x) {
  const Vector out = model.encoder.forward(model.theta, x);
  const Index k = model.k();
  Encoding e{out.head(k), Vector(k)};
  for (Index j = 0; j < k; ++j) e.sigma(j) = sigma_map(model.transform, out(k + j)).sigma;
  require(e.mu.allFinite() && e.sigma.allFinite(), ErrorCode::NonFinite, "encoder output is not finite");
  return e;
}

inline Vector sample_feature(const Vector& mu, const Vector& sigma, const Vector& eps_draw) {
  require(mu.size() == sigma.size() && mu.size() == eps_draw.size(), ErrorCode::DimensionMismatch,
          "mu, sigma and draw sizes differ");
  require((sigma.array() > 0.0).all(), ErrorCode::InvalidArgument, "sigma must be > 0");
  return mu + sigma.cwiseProduct(eps_draw);
}

/// D(N(mu, diag sigma^2) || N(0, I)).
inline double kl_regularizer(const Vector& mu, const Vector& sigma) {
  require(mu.size() == sigma.size(), ErrorCode::DimensionMismatch, "mu and sigma sizes differ");
  require((sigma.array() > 0.0).all(), ErrorCode::InvalidArgument, "sigma must be > 0");
  double s = 0.0;
  for (Index j = 0; j < mu.size(); ++j)
    s += mu(j) * mu(j) + sigma(j) * sigma(j) - 1.0 - 2.0 * std::log(sigma(j));
  return 0.5 * s;
}

/// Encoder outputs with input Jacobians of mu and sigma (K x p each).
struct JacobianEncoding {
  Vector mu, sigma, raw, d1, d2;
  Matrix jmu, jraw, jsigma;
  nn::Mlp::JacCache cache;
};

inline JacobianEncoding encode_with_jacobian(const Model& model, const Vector& x) {
  JacobianEncoding e;
  Matrix j;
  const Vector out = model.encoder.forward_jac(model.theta, x, e.cache, j);
  const Index k = model.k();
  e.mu = out.head(k);
  e.raw = out.tail(k);
  e.sigma.resize(k);
  e.d1.resize(k);
  e.d2.resize(k);
  for (Index i = 0; i < k; ++i) {
    const auto s = sigma_map(model.transform, e.raw(i));
    e.sigma(i) = s.sigma;
    e.d1(i) = s.d1;
    e.d2(i) = s.d2;
  }
  e.jmu = j.topRows(k);
  e.jraw = j.bottomRows(k);
  e.jsigma = e.d1.asDiagonal() * e.jraw;
  return e;
}

/// grad_x log p(t | x) at t = mu + sigma * e, for diagonal Gaussian kernels.
inline Vector score_at(const JacobianEncoding& e, const Vector& eps_draw) {
  const Vector a = (eps_draw.array().square() - 1.0).matrix().cwiseQuotient(e.sigma);
  const Vector b = eps_draw.cwiseQuotient(e.sigma);
  return e.jsigma.transpose() * a + e.jmu.transpose() * b;
}

/// Single-draw Fisher penalty ||grad_x log p(t | x)||^2.
inline double fisher_penalty(const Model& model, const Vector& x, const Vector& eps_draw) {
  require(eps_draw.size() == model.k(), ErrorCode::DimensionMismatch, "draw size must be K");
  const auto e = encode_with_jacobian(model, x);
  const double v = score_at(e, eps_draw).squaredNorm();
  require(std::isfinite(v), ErrorCode::NonFinite, "Fisher penalty is not finite");
  return v;
}

inline double log_sum_exp(const Vector& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

inline Vector softmax(const Vector& z) {
  const Vector e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Per-example random inputs: task draws (K x m) and one Fisher draw (K).
struct ExampleDraws {
  Matrix task;
  Vector fisher;
};

inline std::vector<ExampleDraws> make_draws(Rng& rng, Index k, int m, std::size_t count) {
  std::vector<ExampleDraws> d(count);
  for (auto& e : d) {
    e.task = rng.normal_matrix(k, m);
    e.fisher = rng.normal_vector(k);
  }
  return d;
}

struct LossTerms {
  double task = 0.0;
  double kl = 0.0;
  double fisher = 0.0;

  double total(double task_w, double gamma, double beta) const { return task_w * task + gamma * kl + beta * fisher; }
  LossTerms& operator+=(const LossTerms& o) {
    task += o.task;
    kl += o.kl;
    fisher += o.fisher;
    return *this;
  }
};

/// Weights of the three terms; the training objective uses task = 1.
struct Weights {
  double task = 1.0;
  double gamma = 0.0;
  double beta = 0.0;
};

inline void check_compatible(const Model& model, LossKind loss, const data::Dataset& d) {
  require(d.dim() == model.input_dim(), ErrorCode::DimensionMismatch, "input dimension does not match the encoder");
  if (loss == LossKind::CrossEntropyIB) {
    require(model.head.kind == HeadKind::SoftmaxDirect, ErrorCode::InvalidArgument,
            "cross-entropy loss uses the softmax head");
    require(d.has_labels(), ErrorCode::InvalidArgument, "cross-entropy loss needs labels");
    require(model.k() == d.num_classes, ErrorCode::DimensionMismatch, "softmax head needs K = number of classes");
  } else {
    require(model.head.kind == HeadKind::Regressor, ErrorCode::InvalidArgument, "MMSE loss uses a regressor head");
    require(d.has_targets(), ErrorCode::InvalidArgument, "MMSE loss needs targets");
    require(d.targets.rows() == model.regressor.output_dim(), ErrorCode::DimensionMismatch,
            "regressor output size does not match targets");
  }
}

/// Loss terms of one example; with gradients requested, adds the gradient of
/// w.task * task + w.gamma * kl + w.beta * fisher into g_theta / g_phi.
inline LossTerms example_objective(const Model& model, LossKind loss, const Weights& w, const data::Dataset& d,
                                   Index i, const ExampleDraws& draws, Vector* g_theta, Vector* g_phi) {
  const Index k = model.k();
  const int m = static_cast<int>(draws.task.cols());
  const Vector x = d.x.col(i);
  const auto e = encode_with_jacobian(model, x);
  const bool grad = g_theta != nullptr;
  LossTerms terms;
  Vector mu_bar = Vector::Zero(k), sig_bar = Vector::Zero(k);
  const double scale = w.task / m;
  for (int s = 0; s < m; ++s) {
    const Vector eps = draws.task.col(s);
    const Vector t = e.mu + e.sigma.cwiseProduct(eps);
    Vector tbar;
    if (loss == LossKind::CrossEntropyIB) {
      const int y = d.labels[static_cast<std::size_t>(i)];
      terms.task += log_sum_exp(t) - t(y);
      if (grad) {
        tbar = softmax(t);
        tbar(y) -= 1.0;
        tbar *= scale;
      }
    } else {
      nn::Mlp::Cache hc;
      const Vector f = model.regressor.forward(model.phi, t, grad ? &hc : nullptr);
      const Vector diff = f - d.targets.col(i);
      terms.task += diff.squaredNorm();
      if (grad) model.regressor.backward(model.phi, hc, (2.0 * scale) * diff, g_phi, &tbar);
    }
    if (grad) {
      mu_bar += tbar;
      sig_bar += tbar.cwiseProduct(eps);
    }
  }
  terms.task /= m;
  terms.kl = kl_regularizer(e.mu, e.sigma);
  const Vector& fe = draws.fisher;
  const Vector a = (fe.array().square() - 1.0).matrix().cwiseQuotient(e.sigma);
  const Vector b = fe.cwiseQuotient(e.sigma);
  const Vector g = e.jsigma.transpose() * a + e.jmu.transpose() * b;
  terms.fisher = g.squaredNorm();
  if (!grad) return terms;

  mu_bar += w.gamma * e.mu;
  sig_bar += w.gamma * (e.sigma - e.sigma.cwiseInverse());
  const Index k2 = 2 * k;
  Vector out_bar(k2);
  if (w.beta == 0.0) {
    sig_bar = sig_bar.cwiseProduct(e.d1);
    out_bar << mu_bar, sig_bar;
    model.encoder.backward(model.theta, e.cache, out_bar, g_theta);
    return terms;
  }
  const Vector gbar = 2.0 * w.beta * g;
  const Matrix jsig_bar = a * gbar.transpose();
  const Matrix jmu_bar = b * gbar.transpose();
  const Vector abar = e.jsigma * gbar;
  const Vector bbar = e.jmu * gbar;
  sig_bar -= (abar.array() * (fe.array().square() - 1.0) / e.sigma.array().square()).matrix();
  sig_bar -= (bbar.array() * fe.array() / e.sigma.array().square()).matrix();
  const Vector r_bar =
      e.d1.cwiseProduct(sig_bar) + e.d2.cwiseProduct(jsig_bar.cwiseProduct(e.jraw).rowwise().sum());
  Matrix j_bar(k2, x.size());
  j_bar << jmu_bar, e.d1.asDiagonal() * jsig_bar;
  out_bar << mu_bar, r_bar;
  model.encoder.backward_jac(model.theta, e.cache, out_bar, j_bar, *g_theta);
  return terms;
}

struct BatchResult {
  LossTerms mean;
  double objective = 0.0;
  Vector grad;  // [theta; phi], empty unless requested
};

/// Mean over `idx` of the per-example objective. Examples are reduced in
/// fixed chunks in index order, so results do not depend on thread count.
inline BatchResult batch_objective(const Model& model, LossKind loss, const Weights& w, const data::Dataset& d,
                                   const std::vector<Index>& idx, const std::vector<ExampleDraws>& draws,
                                   bool want_grad) {
  require(idx.size() == draws.size() && !idx.empty(), ErrorCode::InvalidArgument, "batch and draws differ in size");
  constexpr std::size_t kChunks = 8;
  const std::size_t n = idx.size();
  const std::size_t chunks = std::min(kChunks, n);
  std::vector<LossTerms> part(chunks);
  std::vector<Vector> gt(chunks), gp(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    if (want_grad) {
      gt[c] = Vector::Zero(model.theta.size());
      gp[c] = Vector::Zero(model.phi.size());
    }
    for (std::size_t j = c * n / chunks; j < (c + 1) * n / chunks; ++j)
      part[c] += example_objective(model, loss, w, d, idx[j], draws[j], want_grad ? &gt[c] : nullptr,
                                   want_grad ? &gp[c] : nullptr);
  });
  BatchResult r;
  for (const auto& p : part) r.mean += p;
  const double inv = 1.0 / static_cast<double>(n);
  r.mean.task *= inv;
  r.mean.kl *= inv;
  r.mean.fisher *= inv;
  r.objective = r.mean.total(w.task, w.gamma, w.beta);
  if (want_grad) {
    Vector g_theta = Vector::Zero(model.theta.size()), g_phi = Vector::Zero(model.phi.size());
    for (std::size_t c = 0; c < chunks; ++c) {
      g_theta += gt[c];
      g_phi += gp[c];
    }
    r.grad.resize(model.num_params());
    r.grad << g_theta * inv, g_phi * inv;
  }
  return r;
}

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

/// Mean cross-entropy of the sampled features as logits.
inline double loss_xent(const Model& model, const data::Dataset& batch, const std::vector<ExampleDraws>& draws) {
  check_compatible(model, LossKind::CrossEntropyIB, batch);
  return batch_objective(model, LossKind::CrossEntropyIB, {}, batch, all_indices(batch.size()), draws, false)
      .mean.task;
}

/// Mean squared error of the regressor at the sampled features.
inline double loss_mmse(const Model& model, const data::Dataset& batch, const std::vector<ExampleDraws>& draws) {
  check_compatible(model, LossKind::Mmse, batch);
  return batch_objective(model, LossKind::Mmse, {}, batch, all_indices(batch.size()), draws, false).mean.task;
}

// ---- optimizer and training loop ----

struct EpochLog {
  int epoch = 0;
  double objective = 0.0;
  double task = 0.0;
  double kl = 0.0;
  double fisher = 0.0;
  double wall_time = 0.0;
};

struct TrainState {
  Vector adam_m;
  Vector adam_v;
  std::int64_t step = 0;
  Rng rng;
  int epochs_done = 0;
  std::vector<EpochLog> log;
};

inline TrainState start_training(const Model& model, const TrainConfig& cfg) {
  TrainState s;
  s.adam_m = Vector::Zero(model.num_params());
  s.adam_v = Vector::Zero(model.num_params());
  s.rng = Rng(derive_seed(cfg.seed, 1));
  return s;
}

inline void adam_step(Vector& params, const Vector& g, TrainState& s, const TrainConfig& cfg) {
  ++s.step;
  s.adam_m = cfg.adam_beta1 * s.adam_m + (1.0 - cfg.adam_beta1) * g;
  s.adam_v = cfg.adam_beta2 * s.adam_v + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(s.step));
  params.array() -= cfg.learning_rate * (s.adam_m.array() / c1) / ((s.adam_v.array() / c2).sqrt() + cfg.adam_eps);
}

/// Runs `epochs` more epochs, continuing from `state`.
inline void train_epochs(Model& model, TrainState& state, const data::Dataset& d, const TrainConfig& cfg,
                         int epochs) {
  cfg.validate();
  d.validate();
  check_compatible(model, cfg.loss, d);
  const Weights w{1.0, cfg.gamma, cfg.beta};
  const Index n = d.size();
  for (int ep = 0; ep < epochs; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Index> order = all_indices(n);
    state.rng.shuffle(order);
    LossTerms sum;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index end = std::min(n, start + cfg.batch_size);
      const std::vector<Index> idx(order.begin() + start, order.begin() + end);
      const auto draws = make_draws(state.rng, model.k(), cfg.mc_samples, idx.size());
      const auto r = batch_objective(model, cfg.loss, w, d, idx, draws, true);
      if (!std::isfinite(r.objective) || !r.grad.allFinite())
        fail(ErrorCode::NonFinite, "non-finite loss or gradient at step " + std::to_string(state.step + 1));
      Vector p = model.params();
      adam_step(p, r.grad, state, cfg);
      if (!p.allFinite()) fail(ErrorCode::NonFinite, "non-finite parameters after step " + std::to_string(state.step));
      model.set_params(p);
      const double bs = static_cast<double>(end - start);
      sum.task += r.mean.task * bs;
      sum.kl += r.mean.kl * bs;
      sum.fisher += r.mean.fisher * bs;
    }
    EpochLog row;
    row.epoch = ++state.epochs_done;
    row.task = sum.task / n;
    row.kl = sum.kl / n;
    row.fisher = sum.fisher / n;
    row.objective = row.task + cfg.gamma * row.kl + cfg.beta * row.fisher;
    if (cfg.log_wall_time)
      row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.log.push_back(row);
  }
}

struct TrainedModel {
  Model model;
  TrainState state;
};

inline TrainedModel train(const data::Dataset& d, const MlpSpec& spec, const PredictionHead& head,
                          const TrainConfig& cfg, VarianceTransform transform = VarianceTransform::SoftplusVariance) {
  cfg.validate();
  Model model = Model::create(spec, head, transform, derive_seed(cfg.seed, 0));
  TrainState state = start_training(model, cfg);
  TrainedModel t{std::move(model), std::move(state)};
  train_epochs(t.model, t.state, d, cfg, cfg.epochs);
  return t;
}

inline std::string train_log_csv(const std::vector<EpochLog>& log, const TrainConfig& cfg) {
  std::string out = "epoch,objective,task_loss,kl,fisher,beta,gamma";
  if (cfg.log_wall_time) out += ",wall_time_s";
  out += "\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + fmt_g(r.objective, 12) + "," + fmt_g(r.task, 12) + "," + fmt_g(r.kl, 12) +
           "," + fmt_g(r.fisher, 12) + "," + fmt_g(cfg.beta) + "," + fmt_g(cfg.gamma);
    if (cfg.log_wall_time) out += "," + fmt_g(r.wall_time, 6);
    out += "\n";
  }
  return out;
}

/// Mean over the set of ||diag(1/sigma) d mu / dx||_F, the mean sensitivity
/// measured in units of the feature noise.
inline double mean_effective_sensitivity(const Model& model, const data::Dataset& d) {
  double s = 0.0;
  for (Index i = 0; i < d.size(); ++i) {
    const auto e = encode_with_jacobian(model, d.x.col(i));
    s += (e.sigma.cwiseInverse().asDiagonal() * e.jmu).norm();
  }
  return s / static_cast<double>(d.size());
}

// ---- checkpoints ----

namespace detail {

inline void put_vector(std::ostringstream& os, const std::string& name, const Vector& v) {
  os << name << ' ' << v.size();
  for (Index i = 0; i < v.size(); ++i) os << ' ' << fmt_g(v(i));
  os << '\n';
}

template <class T>
void put_list(std::ostringstream& os, const std::string& name, const std::vector<T>& v) {
  os << name << ' ' << v.size();
  for (const auto& x : v) os << ' ' << x;
  os << '\n';
}

inline std::vector<std::string> activation_names(const std::vector<Activation>& v) {
  std::vector<std::string> out;
  for (auto a : v) out.push_back(nn::to_string(a));
  return out;
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : is_(text) {}

  /// Next non-comment line, which must start with `key`; returns the rest.
  std::istringstream expect(const std::string& key) {
    std::string line;
    while (std::getline(is_, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string k;
      ls >> k;
      require(k == key, ErrorCode::Io, "checkpoint: expected '" + key + "', found '" + k + "'");
      return ls;
    }
    fail(ErrorCode::Io, "checkpoint: missing '" + key + "'");
  }

  template <class T>
  T value(const std::string& key) {
    auto ls = expect(key);
    T v{};
    ls >> v;
    require(static_cast<bool>(ls), ErrorCode::Io, "checkpoint: bad value for '" + key + "'");
    return v;
  }

  double real(const std::string& key) {
    auto ls = expect(key);
    std::string s;
    ls >> s;
    return parse_real(s, key);
  }

  Vector vector(const std::string& key) {
    auto ls = expect(key);
    Index n = -1;
    ls >> n;
    require(static_cast<bool>(ls) && n >= 0, ErrorCode::Io, "checkpoint: bad length for '" + key + "'");
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
      std::string s;
      ls >> s;
      v(i) = parse_real(s, key);
    }
    return v;
  }

  template <class T>
  std::vector<T> list(const std::string& key) {
    auto ls = expect(key);
    std::size_t n = 0;
    ls >> n;
    std::vector<T> v(n);
    for (auto& x : v) ls >> x;
    require(static_cast<bool>(ls), ErrorCode::Io, "checkpoint: bad list '" + key + "'");
    return v;
  }

  static double parse_real(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    require(!s.empty() && end == s.c_str() + s.size(), ErrorCode::Io, "checkpoint: bad number in '" + key + "'");
    return v;
  }

 private:
  std::istringstream is_;
};

inline std::vector<Activation> parse_activations(const std::vector<std::string>& names) {
  std::vector<Activation> out;
  for (const auto& n : names) out.push_back(nn::parse_activation(n));
  return out;
}

}  // namespace detail

/// Plain-text checkpoint; reals use 17 significant digits so every value
/// round-trips exactly.
inline std::string write_checkpoint(const Model& model, const TrainConfig& cfg, const TrainState& state) {
  std::ostringstream os;
  os << "# rib checkpoint\n";
  os << "version 1\n";
  detail::put_list(os, "encoder_sizes", model.spec.layer_sizes);
  detail::put_list(os, "encoder_activations", detail::activation_names(model.spec.activations));
  os << "k " << model.spec.k << '\n';
  os << "variance " << to_string(model.transform) << '\n';
  os << "head " << to_string(model.head.kind) << '\n';
  detail::put_list(os, "head_sizes", model.head.layer_sizes);
  detail::put_list(os, "head_activations", detail::activation_names(model.head.activations));
  os << "loss " << to_string(cfg.loss) << '\n';
  os << "beta " << fmt_g(cfg.beta) << '\n';
  os << "gamma " << fmt_g(cfg.gamma) << '\n';
  os << "epochs " << cfg.epochs << '\n';
  os << "batch_size " << cfg.batch_size << '\n';
  os << "learning_rate " << fmt_g(cfg.learning_rate) << '\n';
  os << "adam_beta1 " << fmt_g(cfg.adam_beta1) << '\n';
  os << "adam_beta2 " << fmt_g(cfg.adam_beta2) << '\n';
  os << "adam_eps " << fmt_g(cfg.adam_eps) << '\n';
  os << "mc_samples " << cfg.mc_samples << '\n';
  os << "seed " << cfg.seed << '\n';
  os << "log_wall_time " << (cfg.log_wall_time ? 1 : 0) << '\n';
  os << "epochs_done " << state.epochs_done << '\n';
  os << "step " << state.step << '\n';
  os << "rng ";
  state.rng.save(os);
  os << '\n';
  detail::put_vector(os, "theta", model.theta);
  detail::put_vector(os, "phi", model.phi);
  detail::put_vector(os, "adam_m", state.adam_m);
  detail::put_vector(os, "adam_v", state.adam_v);
  os << "log_rows " << state.log.size() << '\n';
  for (const auto& r : state.log)
    os << "row " << r.epoch << ' ' << fmt_g(r.objective) << ' ' << fmt_g(r.task) << ' ' << fmt_g(r.kl) << ' '
       << fmt_g(r.fisher) << ' ' << fmt_g(r.wall_time) << '\n';
  os << "end\n";
  return os.str();
}

struct Checkpoint {
  Model model;
  TrainConfig config;
  TrainState state;
};

inline Checkpoint read_checkpoint(const std::string& text) {
  detail::LineReader in(text);
  require(in.value<int>("version") == 1, ErrorCode::Io, "unsupported checkpoint version");
  MlpSpec spec;
  spec.layer_sizes = in.list<Index>("encoder_sizes");
  spec.activations = detail::parse_activations(in.list<std::string>("encoder_activations"));
  spec.k = in.value<Index>("k");
  const auto transform = parse_variance_transform(in.value<std::string>("variance"));
  PredictionHead head;
  const auto head_kind = in.value<std::string>("head");
  require(head_kind == "softmax" || head_kind == "regressor", ErrorCode::Io, "checkpoint: unknown head");
  head.kind = head_kind == "regressor" ? HeadKind::Regressor : HeadKind::SoftmaxDirect;
  head.layer_sizes = in.list<Index>("head_sizes");
  head.activations = detail::parse_activations(in.list<std::string>("head_activations"));
  Checkpoint c;
  c.model = Model::build(spec, head, transform);
  auto& cfg = c.config;
  cfg.loss = parse_loss_kind(in.value<std::string>("loss"));
  cfg.beta = in.real("beta");
  cfg.gamma = in.real("gamma");
  cfg.epochs = in.value<int>("epochs");
  cfg.batch_size = in.value<int>("batch_size");
  cfg.learning_rate = in.real("learning_rate");
  cfg.adam_beta1 = in.real("adam_beta1");
  cfg.adam_beta2 = in.real("adam_beta2");
  cfg.adam_eps = in.real("adam_eps");
  cfg.mc_samples = in.value<int>("mc_samples");
  cfg.seed = in.value<std::uint64_t>("seed");
  cfg.log_wall_time = in.value<int>("log_wall_time") != 0;
  cfg.validate();
  auto& st = c.state;
  st.epochs_done = in.value<int>("epochs_done");
  st.step = in.value<std::int64_t>("step");
  {
    auto ls = in.expect("rng");
    st.rng.load(ls);
  }
  const Vector theta = in.vector("theta");
  const Vector phi = in.vector("phi");
  require(theta.size() == c.model.theta.size() && phi.size() == c.model.phi.size(), ErrorCode::Io,
          "checkpoint: parameter count does not match the architecture");
  c.model.theta = theta;
  c.model.phi = phi;
  st.adam_m = in.vector("adam_m");
  st.adam_v = in.vector("adam_v");
  require(st.adam_m.size() == c.model.num_params() && st.adam_v.size() == c.model.num_params(), ErrorCode::Io,
          "checkpoint: optimizer state size mismatch");
  const auto rows = in.value<std::size_t>("log_rows");
  for (std::size_t i = 0; i < rows; ++i) {
    auto ls = in.expect("row");
    EpochLog r;
    std::string o, t, k, f, w;
    ls >> r.epoch >> o >> t >> k >> f >> w;
    require(static_cast<bool>(ls), ErrorCode::Io, "checkpoint: bad log row");
    r.objective = detail::LineReader::parse_real(o, "row");
    r.task = detail::LineReader::parse_real(t, "row");
    r.kl = detail::LineReader::parse_real(k, "row");
    r.fisher = detail::LineReader::parse_real(f, "row");
    r.wall_time = detail::LineReader::parse_real(w, "row");
    st.log.push_back(r);
  }
  in.expect("end");
  return c;
}

// ---- gradient check ----

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double max_grad = 0.0;
  Index components = 0;
  double min_kink_distance = std::numeric_limits<double>::infinity();
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-8;

/// Analytic gradient of the batch objective against central differences of
/// the same objective with the draws held fixed. Relative error per
/// component is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const Model& model, LossKind loss, const Weights& w, const data::Dataset& batch,
                                  std::uint64_t seed, int mc_samples = 1) {
  require(batch.size() >= 1 && batch.size() <= 8, ErrorCode::InvalidArgument, "grad_check batch must hold 1..8 examples");
  check_compatible(model, loss, batch);
  Rng rng(seed);
  const auto draws = make_draws(rng, model.k(), mc_samples, static_cast<std::size_t>(batch.size()));
  const auto idx = all_indices(batch.size());
  const Vector analytic = batch_objective(model, loss, w, batch, idx, draws, true).grad;
  GradCheckReport rep;
  for (Index i = 0; i < batch.size(); ++i) {
    nn::Mlp::Cache c;
    model.encoder.forward(model.theta, batch.x.col(i), &c);
    rep.min_kink_distance = std::min(rep.min_kink_distance, model.encoder.min_kink_distance(c));
  }
  Model probe = model;
  const Vector base = model.params();
  const auto objective = [&](const Vector& p) {
    probe.set_params(p);
    return batch_objective(probe, loss, w, batch, idx, draws, false).objective;
  };
  rep.components = base.size();
  for (Index j = 0; j < base.size(); ++j) {
    Vector p = base;
    p(j) = base(j) + kGradCheckStep;
    const double up = objective(p);
    p(j) = base(j) - kGradCheckStep;
    const double down = objective(p);
    const double numeric = (up - down) / (2.0 * kGradCheckStep);
    const double a = analytic(j);
    const double err = std::abs(a - numeric);
    rep.max_abs_error = std::max(rep.max_abs_error, err);
    rep.max_grad = std::max(rep.max_grad, std::abs(a));
    rep.max_rel_error =
        std::max(rep.max_rel_error, err / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor}));
  }
  return rep;
}

}  // namespace rib::vib
