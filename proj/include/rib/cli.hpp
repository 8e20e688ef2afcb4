#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "adv_eval.hpp"
#include "config.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "gaussian_rib.hpp"
#include "gmm_lab.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "var_rib.hpp"

namespace rib::cli {

namespace fs = std::filesystem;

/// Files a command wants to write, kept in memory until the run has succeeded.
struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;

  void add(std::string name, std::string content) { files.emplace_back(std::move(name), std::move(content)); }

  void flush(const fs::path& dir, std::ostream& log) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorCode::Io, "cannot create " + dir.string());
    for (const auto& [name, content] : files) {
      write_file_atomic(dir / name, content);
      log << "wrote " << (dir / name).string() << '\n';
    }
  }
};

inline std::set<std::string> keys(std::initializer_list<const char*> names) { return {names.begin(), names.end()}; }

// ---- gauss-solve ----

inline std::set<std::string> gauss_keys() {
  return keys({"name", "formulation", "beta", "gamma", "sigma_x", "sigma_y", "sigma_xy", "feature_dim", "restarts",
               "surrogate_weight", "tolerance"});
}

inline gauss::GaussianJoint joint_from(const Config& c) {
  for (const char* k : {"sigma_x", "sigma_y", "sigma_xy"})
    require(c.has(k), ErrorCode::Config, std::string("missing key '") + k + "'");
  gauss::GaussianJoint j{c.matrix("sigma_x", {}), c.matrix("sigma_y", {}), c.matrix("sigma_xy", {})};
  j.validate();
  return j;
}

inline Outputs gauss_solve(const Config& c, std::uint64_t seed) {
  c.reject_unknown(gauss_keys());
  const auto joint = joint_from(c);
  const std::string form = c.str("formulation", "mmse");
  const double beta = c.real("beta", 1.0);
  const double gamma = c.real("gamma", 0.0);
  const Index feature_dim = c.integer("feature_dim", joint.p());
  const int restarts = static_cast<int>(c.integer("restarts", 20));
  const std::string weight_name = c.str("surrogate_weight", "spectral");
  require(weight_name == "spectral" || weight_name == "trace", ErrorCode::Config,
          "surrogate_weight must be spectral or trace");
  const auto weight = weight_name == "trace" ? gauss::SurrogateWeight::Trace : gauss::SurrogateWeight::SpectralNorm;

  gauss::RibConfig rc;
  rc.beta = beta;
  rc.gamma = gamma;
  gauss::RibSolution sol;
  if (form == "mmse") {
    sol = gauss::solve_mmse_identity(joint, beta);
  } else if (form == "ib") {
    rc.formulation = gauss::Formulation::InformationBottleneck;
    sol = gauss::solve_ib_identity(joint, beta, gamma);
  } else if (form == "mutual_fisher") {
    rc.formulation = gauss::Formulation::MutualFisher;
    sol = gauss::solve_mutual_fisher(joint, beta);
  } else if (form == "surrogate") {
    sol = gauss::solve_mmse_surrogate(joint, beta, weight);
  } else {
    fail(ErrorCode::Config, "formulation must be mmse, ib, mutual_fisher or surrogate");
  }
  const double tol = c.real("tolerance", form == "mmse" || form == "surrogate" ? 1e-6 : 1e-5);
  const auto oracle = gauss::brute_force_minimize(joint, rc, feature_dim, restarts, derive_seed(seed, 200));

  const double scale = std::max(1.0, std::abs(oracle.objective_value));
  std::vector<MetricRow> rows;
  rows.push_back({"closed_form_objective", sol.objective_value, 0.0, 0.0, true});
  rows.push_back({"oracle_objective", oracle.objective_value, 0.0, 0.0, true});
  const double gap = (sol.objective_value - oracle.objective_value) / scale;
  rows.push_back({"relative_gap", gap, 0.0, tol, gap <= tol});
  rows.push_back({"abs_relative_gap", std::abs(gap), 0.0, tol, std::abs(gap) <= tol});
  if (form == "surrogate") {
    const double slack = sol.surrogate_value - oracle.objective_value;
    rows.push_back({"surrogate_minus_oracle", slack, 0.0, 1e-8, slack >= -1e-8});
  }
  rows.push_back({"exact_closed_form", sol.exact ? 1.0 : 0.0, 0.0, 0.0, true});

  Outputs out;
  out.add("solution.txt", gauss::write_solution(sol, joint.p(), joint.k()));
  out.add("verify.csv", metric_csv(rows));
  return out;
}

// ---- gmm-sweep ----

inline std::set<std::string> gmm_keys() {
  return keys({"name", "sigma1_sq", "sigma2_sq", "eps_list", "n_angles", "radius_min", "radius_max", "radius_count",
               "mc_samples", "angle_mc_samples", "f_grid", "f_mc_samples"});
}

inline Outputs gmm_sweep(const Config& c, std::uint64_t seed) {
  c.reject_unknown(gmm_keys());
  gmm::TwoClassGmm g{c.real("sigma1_sq", 2.0), c.real("sigma2_sq", 0.2)};
  g.validate();
  const auto eps = c.reals("eps_list", {0.0, 0.5, 1.1, 1.5});
  const int n_angles = static_cast<int>(c.integer("n_angles", 181));
  const auto radii = gmm::log_grid(c.real("radius_min", 1e-4), c.real("radius_max", 100.0),
                                   static_cast<int>(c.integer("radius_count", 61)));
  const std::int64_t n_mc = c.integer("mc_samples", 1000000);
  const std::int64_t n_angle_mc = c.integer("angle_mc_samples", 1000000);
  const auto f_grid = c.reals("f_grid", {0.0, 0.25, 0.5, 1.0, 2.0, 4.0});
  const std::int64_t n_f = c.integer("f_mc_samples", 200000);
  for (double e : eps) require(e >= 0.0, ErrorCode::Config, "eps_list entries must be >= 0");
  require(n_mc >= 1 && n_angle_mc >= 1 && n_f >= 1, ErrorCode::Config, "sample counts must be >= 1");

  // The angle table scores the bare classifier sign(w^T x); radius tables add
  // unit feature noise so the norm constraint matters.
  const gmm::AccuracyModel angle_l2{gmm::PerturbationNorm::L2, false};
  const gmm::AccuracyModel angle_l1{gmm::PerturbationNorm::L1Formula, false};
  const gmm::AccuracyModel radius_l2{gmm::PerturbationNorm::L2, true};
  const gmm::AccuracyModel radius_l1{gmm::PerturbationNorm::L1Formula, true};
  const auto angle = gmm::sweep_angle(g, eps, n_angles, angle_l2);
  const auto radius = gmm::sweep_radius(g, eps, radii, radius_l2);

  std::vector<MetricRow> rows;
  // f(a) at a = 0 and its decrease along the grid
  std::vector<gmm::McValue> f;
  for (std::size_t i = 0; i < f_grid.size(); ++i)
    f.push_back(gmm::mmse_scalar_f(f_grid[i], n_f, derive_seed(seed, 400, i)));
  for (std::size_t i = 0; i < f_grid.size(); ++i) {
    if (f_grid[i] == 0.0) rows.push_back({"f(0)", f[i].value, 0.0, 0.0, f[i].value == 2.0});
    if (i == 0) continue;
    const double se = std::hypot(f[i].std_error, f[i - 1].std_error);
    rows.push_back({"f_step_" + fmt_g(f_grid[i], 10), f[i].value - f[i - 1].value, se, 3.0 * se,
                    f[i].value <= f[i - 1].value + 3.0 * se});
  }
  // radius trends, eps = 0 and eps = 1.1 columns when present
  for (std::size_t j = 0; j < eps.size(); ++j) {
    const auto col = radius.column(j + 1);
    if (eps[j] == 0.0) {
      double worst = 0.0;
      for (std::size_t i = 1; i < col.size(); ++i) worst = std::min(worst, col[i] - col[i - 1]);
      rows.push_back({"radius_eps0_min_step", worst, 0.0, 1e-12, worst >= -1e-12});
    }
    if (std::abs(eps[j] - 1.1) < 1e-12) {
      const auto peak = static_cast<std::size_t>(std::max_element(col.begin(), col.end()) - col.begin());
      const bool interior = peak > 0 && peak + 1 < col.size() && col[peak] > col.front() && col[peak] > col.back();
      rows.push_back({"radius_eps1.1_peak_radius", radii[peak], 0.0, 0.0, interior});
    }
  }
  // small-radius row
  double dev = 0.0;
  for (std::size_t j = 1; j < radius.rows.front().size(); ++j) dev = std::max(dev, std::abs(radius.rows.front()[j] - 0.5));
  rows.push_back({"min_radius_max_dev_from_half", dev, 0.0, 0.01, dev <= 0.01});
  // closed form against simulation at the optimal probe of the largest radius
  const auto probe = gmm::optimal_probe(g, radii.back());
  for (std::size_t j = 0; j < eps.size(); ++j) {
    for (const auto& [name, model] : {std::pair{"l2", radius_l2}, std::pair{"l1_formula", radius_l1}}) {
      const double exact = gmm::adversarial_accuracy(probe, g, eps[j], model);
      const auto mc = gmm::simulate_adversarial_accuracy(probe, g, eps[j], model, n_mc, derive_seed(seed, 401, j));
      const double se = std::max(mc.std_error, 1.0 / static_cast<double>(n_mc));
      rows.push_back({std::string("mc_") + name + "_" + gmm::eps_label(eps[j]), mc.value - exact, mc.std_error, 3.0 * se,
                      std::abs(mc.value - exact) <= 3.0 * se});
    }
  }
  // angle peak at eps = 0 against a simulated classifier scan
  for (std::size_t j = 0; j < eps.size(); ++j) {
    if (eps[j] != 0.0) continue;
    const auto col = angle.column(j + 1);
    const auto peak = static_cast<std::size_t>(std::max_element(col.begin(), col.end()) - col.begin());
    const double mc_best = gmm::simulated_best_angle(g, n_angles, n_angle_mc, derive_seed(seed, 402));
    const double diff = angle.rows[peak][0] - mc_best;
    rows.push_back({"angle_peak_minus_simulated_deg", diff, 0.0, 2.0, std::abs(diff) <= 2.0});
  }

  Outputs out;
  out.add("angle_sweep.csv", angle.to_csv());
  out.add("angle_sweep_l1.csv", gmm::sweep_angle(g, eps, n_angles, angle_l1).to_csv());
  out.add("radius_sweep.csv", radius.to_csv());
  out.add("radius_sweep_l1.csv", gmm::sweep_radius(g, eps, radii, radius_l1).to_csv());
  out.add("gmm_checks.csv", metric_csv(rows));
  return out;
}

// ---- train / attack / report ----

inline std::set<std::string> experiment_keys() {
  return keys({"name",
               "dataset", "n_train", "n_test", "sigma1_sq", "sigma2_sq", "sigma_x", "sigma_y", "sigma_xy",
               "train_images", "train_labels", "test_images", "test_labels",
               "blobs_classes", "blobs_robust_dims", "blobs_fragile_dims", "blobs_robust_sep", "blobs_robust_noise",
               "blobs_fragile_sep", "blobs_fragile_noise",
               "hidden", "activation", "k", "variance", "loss", "head_hidden", "head_activation",
               "beta_list", "gamma", "epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps",
               "mc_samples", "log_wall_time", "stop_after_epoch",
               "eps", "restarts", "posterior_samples", "clip_lo", "clip_hi"});
}

/// Everything train, attack and report need, resolved and validated up front.
struct Experiment {
  data::Dataset train;
  data::Dataset test;
  vib::MlpSpec spec;
  vib::PredictionHead head;
  vib::VarianceTransform transform = vib::VarianceTransform::SoftplusVariance;
  vib::TrainConfig train_config;  // beta filled in per run
  std::vector<double> betas;
  int stop_after_epoch = 0;  // 0: run to the end
  adv::AttackSpec attack;
};

inline std::string beta_tag(double beta) { return fmt_g(beta, 6); }
inline std::string checkpoint_name(double beta) { return "model_beta_" + beta_tag(beta) + ".ckpt"; }
inline std::string train_log_name(double beta) { return "train_log_beta_" + beta_tag(beta) + ".csv"; }

inline std::pair<data::Dataset, data::Dataset> load_datasets(const Config& c, std::uint64_t seed) {
  const std::string kind = c.str("dataset", "blobs");
  const Index n_train = c.integer("n_train", 5000);
  const Index n_test = c.integer("n_test", 1000);
  require(n_train >= 1 && n_test >= 1, ErrorCode::Config, "n_train and n_test must be >= 1");
  const auto s_train = derive_seed(seed, 100), s_test = derive_seed(seed, 101);
  if (kind == "gmm") {
    gmm::TwoClassGmm g{c.real("sigma1_sq", 2.0), c.real("sigma2_sq", 0.2)};
    return {data::make_gmm(g, n_train, s_train), data::make_gmm(g, n_test, s_test)};
  }
  if (kind == "gaussian") {
    const auto joint = joint_from(c);
    return {data::make_gaussian(joint, n_train, s_train), data::make_gaussian(joint, n_test, s_test)};
  }
  if (kind == "blobs") {
    data::BlobsSpec b;
    b.num_classes = static_cast<int>(c.integer("blobs_classes", b.num_classes));
    b.robust_dims = c.integer("blobs_robust_dims", b.robust_dims);
    b.fragile_dims = c.integer("blobs_fragile_dims", b.fragile_dims);
    b.robust_sep = c.real("blobs_robust_sep", b.robust_sep);
    b.robust_noise = c.real("blobs_robust_noise", b.robust_noise);
    b.fragile_sep = c.real("blobs_fragile_sep", b.fragile_sep);
    b.fragile_noise = c.real("blobs_fragile_noise", b.fragile_noise);
    require(b.robust_dims >= 0 && b.fragile_dims >= 0, ErrorCode::Config, "blob dimensions must be >= 0");
    return {data::make_blobs(b, n_train, s_train), data::make_blobs(b, n_test, s_test)};
  }
  if (kind == "idx") {
    for (const char* k : {"train_images", "train_labels", "test_images", "test_labels"})
      require(c.has(k), ErrorCode::Config, std::string("missing key '") + k + "'");
    const auto tr = data::load_idx(c.str("train_images", ""), c.str("train_labels", ""));
    const auto te = data::load_idx(c.str("test_images", ""), c.str("test_labels", ""));
    require(tr.dim() == te.dim(), ErrorCode::Io, "train and test images differ in size");
    const int classes = std::max(tr.num_classes, te.num_classes);
    auto a = tr.subset(data::stratified_indices(tr.labels, classes, std::min(n_train, tr.size()), derive_seed(seed, 102)));
    auto b = te.subset(data::stratified_indices(te.labels, classes, std::min(n_test, te.size()), derive_seed(seed, 103)));
    a.num_classes = b.num_classes = classes;
    return {std::move(a), std::move(b)};
  }
  fail(ErrorCode::Config, "dataset must be gmm, blobs, gaussian or idx");
}

inline std::vector<Index> sizes_from(const Config& c, const std::string& key) {
  std::vector<Index> out;
  for (auto v : c.integers(key, {})) {
    require(v >= 1, ErrorCode::Config, "'" + key + "' entries must be >= 1");
    out.push_back(static_cast<Index>(v));
  }
  return out;
}

inline Experiment load_experiment(const Config& c, std::uint64_t seed) {
  c.reject_unknown(experiment_keys());
  Experiment e;
  auto [tr, te] = load_datasets(c, seed);
  e.train = std::move(tr);
  e.test = std::move(te);
  e.train.validate();
  e.test.validate();

  auto& t = e.train_config;
  t.loss = vib::parse_loss_kind(c.str("loss", "xent"));
  t.gamma = c.real("gamma", 0.0);
  t.epochs = static_cast<int>(c.integer("epochs", 10));
  t.batch_size = static_cast<int>(c.integer("batch_size", 128));
  t.learning_rate = c.real("learning_rate", 1e-3);
  t.adam_beta1 = c.real("adam_beta1", 0.9);
  t.adam_beta2 = c.real("adam_beta2", 0.999);
  t.adam_eps = c.real("adam_eps", 1e-8);
  t.mc_samples = static_cast<int>(c.integer("mc_samples", 1));
  t.log_wall_time = c.flag("log_wall_time", false);
  t.seed = seed;
  t.validate();

  e.betas = c.reals("beta_list", {0.0});
  std::set<double> seen;
  for (double b : e.betas) {
    require(b >= 0.0, ErrorCode::Config, "beta_list entries must be >= 0");
    require(seen.insert(b).second, ErrorCode::Config, "beta_list has a duplicate");
  }
  e.stop_after_epoch = static_cast<int>(c.integer("stop_after_epoch", 0));
  require(e.stop_after_epoch >= 0, ErrorCode::Config, "stop_after_epoch must be >= 0");

  e.transform = vib::parse_variance_transform(c.str("variance", "softplus_variance"));
  const auto act = nn::parse_activation(c.str("activation", "softplus"));
  const bool classify = t.loss == vib::LossKind::CrossEntropyIB;
  const Index default_k = classify ? e.train.num_classes : (e.train.has_targets() ? e.train.targets.rows() : 1);
  e.spec.k = c.integer("k", default_k);
  e.spec.layer_sizes = {e.train.dim()};
  for (Index h : sizes_from(c, "hidden")) {
    e.spec.layer_sizes.push_back(h);
    e.spec.activations.push_back(act);
  }
  e.spec.layer_sizes.push_back(2 * e.spec.k);
  e.spec.validate();
  if (classify) {
    require(!c.has("head_hidden") && !c.has("head_activation"), ErrorCode::Config,
            "head_hidden and head_activation apply to the mmse loss only");
    e.head = vib::PredictionHead::softmax();
  } else {
    require(e.train.has_targets(), ErrorCode::Config, "the mmse loss needs a dataset with targets");
    e.head.kind = vib::HeadKind::Regressor;
    e.head.layer_sizes = {e.spec.k};
    const auto head_act = nn::parse_activation(c.str("head_activation", "softplus"));
    for (Index h : sizes_from(c, "head_hidden")) {
      e.head.layer_sizes.push_back(h);
      e.head.activations.push_back(head_act);
    }
    e.head.layer_sizes.push_back(e.train.targets.rows());
  }
  vib::check_compatible(vib::Model::build(e.spec, e.head, e.transform), t.loss, e.train);

  e.attack.eps = c.real("eps", 0.1);
  e.attack.restarts = static_cast<int>(c.integer("restarts", 10));
  e.attack.posterior_samples = static_cast<int>(c.integer("posterior_samples", 12));
  e.attack.clip_lo = c.real("clip_lo", 0.0);
  e.attack.clip_hi = c.real("clip_hi", 1.0);
  e.attack.seed = derive_seed(seed, 300);
  e.attack.validate();
  return e;
}

/// True when a stored checkpoint was produced by the same model and optimiser
/// settings; the epoch count may differ so runs can be extended.
inline bool same_setup(const vib::Checkpoint& ck, const Experiment& e, const vib::TrainConfig& cfg) {
  const auto& a = ck.config;
  const auto& m = ck.model;
  return m.spec.layer_sizes == e.spec.layer_sizes && m.spec.activations == e.spec.activations && m.spec.k == e.spec.k &&
         m.transform == e.transform && m.head.kind == e.head.kind && m.head.layer_sizes == e.head.layer_sizes &&
         m.head.activations == e.head.activations && a.beta == cfg.beta && a.gamma == cfg.gamma && a.loss == cfg.loss &&
         a.batch_size == cfg.batch_size && a.learning_rate == cfg.learning_rate && a.adam_beta1 == cfg.adam_beta1 &&
         a.adam_beta2 == cfg.adam_beta2 && a.adam_eps == cfg.adam_eps && a.mc_samples == cfg.mc_samples &&
         a.seed == cfg.seed && a.log_wall_time == cfg.log_wall_time;
}

struct TrainOutcome {
  vib::Model model;
  bool complete = false;
};

/// Trains (or resumes) one beta, writing the checkpoint and log after every epoch.
inline TrainOutcome train_one(const Experiment& e, double beta, const fs::path& dir, std::ostream& log) {
  vib::TrainConfig cfg = e.train_config;
  cfg.beta = beta;
  const auto ck_path = dir / checkpoint_name(beta);
  vib::Model model;
  vib::TrainState state;
  if (fs::exists(ck_path)) {
    auto ck = vib::read_checkpoint(read_file(ck_path));
    require(same_setup(ck, e, cfg), ErrorCode::Config,
            ck_path.string() + " was written with different settings; use a fresh output directory");
    require(ck.model.input_dim() == e.train.dim(), ErrorCode::Config, ck_path.string() + " has another input size");
    model = std::move(ck.model);
    state = std::move(ck.state);
    if (state.epochs_done > 0) log << "resuming beta=" << beta_tag(beta) << " at epoch " << state.epochs_done << '\n';
  } else {
    model = vib::Model::create(e.spec, e.head, e.transform, derive_seed(cfg.seed, 0));
    state = vib::start_training(model, cfg);
  }
  const int target = e.stop_after_epoch > 0 ? std::min(cfg.epochs, e.stop_after_epoch) : cfg.epochs;
  const auto save = [&] {
    write_file_atomic(ck_path, vib::write_checkpoint(model, cfg, state));
    write_file_atomic(dir / train_log_name(beta), vib::train_log_csv(state.log, cfg));
  };
  bool saved = false;
  while (state.epochs_done < target) {
    vib::train_epochs(model, state, e.train, cfg, 1);
    save();
    saved = true;
  }
  if (!saved) save();  // reruns on a finished checkpoint rewrite identical files
  log << "beta=" << beta_tag(beta) << " epochs " << state.epochs_done << "/" << cfg.epochs << '\n';
  return {std::move(model), state.epochs_done >= cfg.epochs};
}

inline void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::Io, "cannot create " + dir.string());
}

/// Returns true when every beta reached its final epoch.
inline bool cmd_train(const Config& c, const fs::path& dir, std::uint64_t seed, std::ostream& log) {
  const auto e = load_experiment(c, seed);
  make_dir(dir);
  bool complete = true;
  for (double b : e.betas) complete = train_one(e, b, dir, log).complete && complete;
  return complete;
}

inline std::vector<adv::AttackRow> attack_all(const Experiment& e, const std::vector<vib::Model>& models) {
  std::optional<double> baseline;
  std::vector<adv::AttackRow> rows(e.betas.size());
  // the beta = 0 model goes first so every other row can be made relative to it
  for (std::size_t i = 0; i < e.betas.size(); ++i) {
    if (e.betas[i] != 0.0) continue;
    rows[i].report = adv::evaluate(models[i], e.test, e.attack);
    baseline = rows[i].report.adversarial_accuracy;
    rows[i].report.relative_adversarial_accuracy = 1.0;  // also when the baseline is 0
  }
  for (std::size_t i = 0; i < e.betas.size(); ++i) {
    rows[i].beta = e.betas[i];
    rows[i].spec = e.attack;
    if (e.betas[i] != 0.0) rows[i].report = adv::evaluate(models[i], e.test, e.attack, baseline);
  }
  return rows;
}

inline std::vector<vib::Model> load_models(const Experiment& e, const fs::path& dir) {
  std::vector<vib::Model> models;
  for (double b : e.betas) {
    const auto path = dir / checkpoint_name(b);
    require(fs::exists(path), ErrorCode::Io, "missing checkpoint " + path.string() + "; run train first");
    auto ck = vib::read_checkpoint(read_file(path));
    vib::TrainConfig cfg = e.train_config;
    cfg.beta = b;
    require(same_setup(ck, e, cfg), ErrorCode::Config, path.string() + " was written with different settings");
    require(ck.state.epochs_done >= cfg.epochs, ErrorCode::Config, path.string() + " is not fully trained");
    models.push_back(std::move(ck.model));
  }
  return models;
}

inline void cmd_attack(const Config& c, const fs::path& dir, std::uint64_t seed, std::ostream& log) {
  const auto e = load_experiment(c, seed);
  const auto models = load_models(e, dir);
  const auto rows = attack_all(e, models);
  Outputs out;
  out.add("attack_report.csv", adv::attack_report_csv(rows));
  out.flush(dir, log);
}

inline std::string beta_sweep_csv(const std::vector<adv::AttackRow>& rows) {
  std::string out = "beta,clean_accuracy,adversarial_accuracy,relative_adversarial_accuracy\n";
  for (const auto& r : rows)
    out += fmt_g(r.beta, 10) + "," + fmt_g(r.report.clean_accuracy, 10) + "," +
           fmt_g(r.report.adversarial_accuracy, 10) + "," + fmt_g(r.report.relative_adversarial_accuracy, 10) + "\n";
  return out;
}

/// Trains whatever is missing, attacks every model, and merges the table.
inline std::vector<adv::AttackRow> cmd_report(const Config& c, const fs::path& dir, std::uint64_t seed,
                                              std::ostream& log) {
  const auto e = load_experiment(c, seed);
  require(std::find(e.betas.begin(), e.betas.end(), 0.0) != e.betas.end(), ErrorCode::Config,
          "report needs beta = 0 in beta_list as the baseline");
  require(e.stop_after_epoch == 0, ErrorCode::Config, "stop_after_epoch is for train only");
  adv::require_softmax(vib::Model::build(e.spec, e.head, e.transform));
  make_dir(dir);
  std::vector<vib::Model> models;
  for (double b : e.betas) models.push_back(train_one(e, b, dir, log).model);
  const auto rows = attack_all(e, models);
  Outputs out;
  out.add("attack_report.csv", adv::attack_report_csv(rows));
  out.add("beta_sweep.csv", beta_sweep_csv(rows));
  out.flush(dir, log);
  return rows;
}

/// Command dispatch; returns the process exit code.
inline int run(const std::string& command, const fs::path& config_path, const fs::path& dir, std::uint64_t seed,
               std::ostream& log, std::ostream& err) {
  try {
    const auto c = Config::parse(read_file(config_path));
    if (command == "gauss-solve") {
      gauss_solve(c, seed).flush(dir, log);
    } else if (command == "gmm-sweep") {
      gmm_sweep(c, seed).flush(dir, log);
    } else if (command == "train") {
      cmd_train(c, dir, seed, log);
    } else if (command == "attack") {
      cmd_attack(c, dir, seed, log);
    } else if (command == "report") {
      cmd_report(c, dir, seed, log);
    } else {
      err << "unknown command " << command << '\n';
      return 1;
    }
    return 0;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return is_numeric(ex.code()) ? 2 : 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
}

}  // namespace rib::cli
