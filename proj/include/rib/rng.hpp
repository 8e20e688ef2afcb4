#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace rib {

/// splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for stream (a, b) of a master seed. Independent of call order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(seed ^ mix_seed(a + 1)) + b);
}

/// mt19937_64 plus a cached Box-Muller spare. The whole state round-trips
/// through save/load, so a resumed stream continues bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  /// Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = 0;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  void save(std::ostream& os) const {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &spare_, sizeof bits);
    os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << bits;
  }

  void load(std::istream& is) {
    int flag = 0;
    std::uint64_t bits = 0;
    is >> engine_ >> flag >> bits;
    require(static_cast<bool>(is), ErrorCode::Io, "malformed rng state");
    has_spare_ = flag != 0;
    std::memcpy(&spare_, &bits, sizeof bits);
  }

  bool operator==(const Rng& o) const {
    return engine_ == o.engine_ && has_spare_ == o.has_spare_ &&
           (!has_spare_ || std::memcmp(&spare_, &o.spare_, sizeof spare_) == 0);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rib
