#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace rib::nn {

enum class Activation { ReLU, Softplus, Linear };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Linear: return "linear";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "softplus") return Activation::Softplus;
  if (s == "linear") return Activation::Linear;
  fail(ErrorCode::InvalidArgument, "unknown activation '" + s + "'");
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double act(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Softplus: return softplus(z);
    case Activation::Linear: return z;
  }
  return z;
}

inline double act_d1(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return logistic(z);
    case Activation::Linear: return 1.0;
  }
  return 1.0;
}

inline double act_d2(Activation a, double z) {
  if (a == Activation::Softplus) {
    const double s = logistic(z);
    return s * (1.0 - s);
  }
  return 0.0;
}

/// Fully connected network with hidden activations and a linear output layer.
/// Parameters live in one flat vector: for each layer, W (column-major,
/// out x in) followed by b.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Index> sizes, std::vector<Activation> hidden) : sizes_(std::move(sizes)), hidden_(std::move(hidden)) {
    require(sizes_.size() >= 2, ErrorCode::InvalidArgument, "network needs at least input and output sizes");
    require(hidden_.size() + 2 == sizes_.size(), ErrorCode::InvalidArgument,
            "need one activation per hidden layer");
    for (Index s : sizes_) require(s >= 1, ErrorCode::InvalidArgument, "layer sizes must be positive");
    Index off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(off);
      off += sizes_[l + 1] * sizes_[l];
      b_off_.push_back(off);
      off += sizes_[l + 1];
    }
    n_params_ = off;
  }

  Index num_params() const { return n_params_; }
  Index input_dim() const { return sizes_.front(); }
  Index output_dim() const { return sizes_.back(); }
  std::size_t layers() const { return sizes_.size() - 1; }
  const std::vector<Index>& sizes() const { return sizes_; }
  const std::vector<Activation>& hidden() const { return hidden_; }

  Activation layer_activation(std::size_t l) const { return l + 1 < layers() ? hidden_[l] : Activation::Linear; }

  Eigen::Map<const Matrix> weight(const Vector& params, std::size_t l) const {
    return {params.data() + w_off_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Vector> bias(const Vector& params, std::size_t l) const {
    return {params.data() + b_off_[l], sizes_[l + 1]};
  }
  Eigen::Map<Matrix> weight(Vector& params, std::size_t l) const {
    return {params.data() + w_off_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vector> bias(Vector& params, std::size_t l) const { return {params.data() + b_off_[l], sizes_[l + 1]}; }

  /// pre[l] = W_l h_l + b_l, post[0] = x, post[l+1] = act(pre[l]).
  struct Cache {
    std::vector<Vector> pre;
    std::vector<Vector> post;
  };

  /// Adds forward-mode input Jacobians: dpre[l] = d pre[l] / dx and
  /// dpost[l] = d post[l+1] / dx (the input's own Jacobian is the identity).
  struct JacCache : Cache {
    std::vector<Matrix> dpre;
    std::vector<Matrix> dpost;
  };

  Vector forward(const Vector& params, const Vector& x, Cache* cache = nullptr) const {
    check(params, x);
    Vector h = x;
    if (cache) {
      cache->pre.clear();
      cache->post.assign(1, x);
    }
    for (std::size_t l = 0; l < layers(); ++l) {
      Vector z = weight(params, l) * h + bias(params, l);
      const Activation a = layer_activation(l);
      h = z.unaryExpr([a](double v) { return act(a, v); });
      if (cache) {
        cache->pre.push_back(std::move(z));
        cache->post.push_back(h);
      }
    }
    return h;
  }

  /// Output and its input Jacobian (output_dim x input_dim).
  Vector forward_jac(const Vector& params, const Vector& x, JacCache& c, Matrix& out_jac) const {
    check(params, x);
    c.pre.clear();
    c.post.assign(1, x);
    c.dpre.clear();
    c.dpost.clear();
    Vector h = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      const auto w = weight(params, l);
      Vector z = w * h + bias(params, l);
      Matrix dz = l == 0 ? Matrix(w) : Matrix(w * c.dpost.back());
      const Activation a = layer_activation(l);
      h = z.unaryExpr([a](double v) { return act(a, v); });
      const Vector d1 = z.unaryExpr([a](double v) { return act_d1(a, v); });
      Matrix dh = d1.asDiagonal() * dz;
      c.pre.push_back(std::move(z));
      c.post.push_back(h);
      c.dpre.push_back(std::move(dz));
      c.dpost.push_back(std::move(dh));
    }
    out_jac = c.dpost.back();
    return h;
  }

  /// Reverse pass for d(loss)/d(output) = out_grad. Accumulates into
  /// param_grad and writes the input gradient if requested.
  void backward(const Vector& params, const Cache& c, const Vector& out_grad, Vector* param_grad,
                Vector* input_grad = nullptr) const {
    Vector zbar = out_grad;  // output layer is linear
    for (std::size_t l = layers(); l-- > 0;) {
      if (l + 1 < layers()) {
        const Activation a = layer_activation(l);
        zbar = zbar.cwiseProduct(c.pre[l].unaryExpr([a](double v) { return act_d1(a, v); }));
      }
      if (param_grad) {
        weight(*param_grad, l).noalias() += zbar * c.post[l].transpose();
        bias(*param_grad, l) += zbar;
      }
      if (l > 0 || input_grad) {
        Vector hbar = weight(params, l).transpose() * zbar;
        if (l == 0) {
          *input_grad = std::move(hbar);
        } else {
          zbar = std::move(hbar);
        }
      }
    }
  }

  /// Reverse pass through both the output and its input Jacobian, given
  /// out_grad = dL/d(output) and jac_grad = dL/d(output Jacobian).
  void backward_jac(const Vector& params, const JacCache& c, const Vector& out_grad, const Matrix& jac_grad,
                    Vector& param_grad) const {
    Vector zbar = out_grad;
    Matrix dzbar = jac_grad;
    for (std::size_t l = layers(); l-- > 0;) {
      if (l + 1 < layers()) {
        // h = act(z), dh = act'(z) dz
        const Activation a = layer_activation(l);
        const Vector d1 = c.pre[l].unaryExpr([a](double v) { return act_d1(a, v); });
        const Vector d2 = c.pre[l].unaryExpr([a](double v) { return act_d2(a, v); });
        const Vector hbar = zbar;
        const Matrix dhbar = dzbar;
        zbar = d1.cwiseProduct(hbar) + d2.cwiseProduct(dhbar.cwiseProduct(c.dpre[l]).rowwise().sum());
        dzbar = d1.asDiagonal() * dhbar;
      }
      // z = W h_prev + b, dz = W dh_prev (dh_prev = I for the first layer)
      auto gw = weight(param_grad, l);
      gw.noalias() += zbar * c.post[l].transpose();
      if (l == 0) {
        gw += dzbar;
      } else {
        gw.noalias() += dzbar * c.dpost[l - 1].transpose();
      }
      bias(param_grad, l) += zbar;
      if (l > 0) {
        const auto w = weight(params, l);
        Vector hbar = w.transpose() * zbar;
        Matrix dhbar = w.transpose() * dzbar;
        zbar = std::move(hbar);
        dzbar = std::move(dhbar);
      }
    }
  }

  /// Glorot-uniform weights, zero biases.
  void init_glorot(Vector& params, Rng& rng) const {
    params = Vector::Zero(n_params_);
    for (std::size_t l = 0; l < layers(); ++l) {
      const double lim = std::sqrt(6.0 / static_cast<double>(sizes_[l] + sizes_[l + 1]));
      auto w = weight(params, l);
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-lim, lim);
    }
  }

  /// Smallest |pre-activation| over ReLU units, +inf if there are none.
  double min_kink_distance(const Cache& c) const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l + 1 < layers(); ++l)
      if (layer_activation(l) == Activation::ReLU) m = std::min(m, c.pre[l].cwiseAbs().minCoeff());
    return m;
  }

 private:
  void check(const Vector& params, const Vector& x) const {
    require(params.size() == n_params_, ErrorCode::DimensionMismatch, "parameter count does not match the network");
    require(x.size() == input_dim(), ErrorCode::DimensionMismatch, "input dimension does not match the network");
  }

  std::vector<Index> sizes_;
  std::vector<Activation> hidden_;
  std::vector<Index> w_off_, b_off_;
  Index n_params_ = 0;
};

}  // namespace rib::nn
