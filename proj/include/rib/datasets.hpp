#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "format.hpp"
#include "gaussian_rib.hpp"
#include "gmm_lab.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace rib::data {

/// Examples are columns. Classification sets fill labels, regression sets
/// fill targets; a set may carry both.
struct Dataset {
  Matrix x;                 // p x n
  std::vector<int> labels;  // n, in [0, num_classes)
  Matrix targets;           // q x n, or empty
  int num_classes = 0;

  Index size() const { return x.cols(); }
  Index dim() const { return x.rows(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_targets() const { return targets.size() > 0; }

  void validate() const {
    require(size() > 0, ErrorCode::InvalidArgument, "dataset is empty");
    if (has_labels()) {
      require(static_cast<Index>(labels.size()) == size(), ErrorCode::DimensionMismatch, "label count mismatch");
      for (int l : labels)
        require(l >= 0 && l < num_classes, ErrorCode::InvalidArgument, "label out of range");
    }
    if (has_targets())
      require(targets.cols() == size(), ErrorCode::DimensionMismatch, "target count mismatch");
    require(has_labels() || has_targets(), ErrorCode::InvalidArgument, "dataset has neither labels nor targets");
    require(x.allFinite(), ErrorCode::NonFinite, "dataset contains non-finite inputs");
  }

  Dataset subset(const std::vector<Index>& idx) const {
    Dataset d;
    d.num_classes = num_classes;
    d.x.resize(dim(), static_cast<Index>(idx.size()));
    if (has_targets()) d.targets.resize(targets.rows(), static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      d.x.col(static_cast<Index>(j)) = x.col(idx[j]);
      if (has_labels()) d.labels.push_back(labels[static_cast<std::size_t>(idx[j])]);
      if (has_targets()) d.targets.col(static_cast<Index>(j)) = targets.col(idx[j]);
    }
    return d;
  }
};

/// Two-class mixture with labels 0 (y = -1) and 1 (y = +1).
inline Dataset make_gmm(const gmm::TwoClassGmm& g, Index n, std::uint64_t seed) {
  g.validate();
  require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
  Rng rng(seed);
  Dataset d;
  d.num_classes = 2;
  d.x.resize(2, n);
  const double s1 = std::sqrt(g.sigma1_sq), s2 = std::sqrt(g.sigma2_sq);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(2));
    const double y = label == 1 ? 1.0 : -1.0;
    d.x(0, i) = y + s1 * rng.normal();
    d.x(1, i) = y + s2 * rng.normal();
    d.labels.push_back(label);
  }
  return d;
}

/// Samples (X, Y) from a zero-mean joint Gaussian; Y goes into targets.
inline Dataset make_gaussian(const gauss::GaussianJoint& joint, Index n, std::uint64_t seed) {
  joint.validate();
  require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
  const Matrix cov = joint.joint_covariance();
  Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success, ErrorCode::SingularCovariance, "joint covariance is not positive definite");
  Rng rng(seed);
  const Matrix z = llt.matrixL() * rng.normal_matrix(cov.rows(), n);
  Dataset d;
  d.x = z.topRows(joint.p());
  d.targets = z.bottomRows(joint.k());
  return d;
}

/// Ten-class synthetic stand-in for digit images, values in [0, 1].
/// The first `robust_dims` coordinates carry class means spread over
/// 0.5 +- robust_sep under heavy noise; each is weak alone but together they
/// classify well, and a small l_inf shift barely moves them. The remaining
/// `fragile_dims` carry means 0.5 +- fragile_sep with very little noise: they
/// classify almost perfectly but flip under any shift larger than fragile_sep.
struct BlobsSpec {
  int num_classes = 10;
  Index robust_dims = 100;
  Index fragile_dims = 20;
  double robust_sep = 0.2;
  double robust_noise = 0.3;
  double fragile_sep = 0.04;
  double fragile_noise = 0.01;
};

inline Dataset make_blobs(const BlobsSpec& s, Index n, std::uint64_t seed) {
  require(s.num_classes >= 2 && s.robust_dims + s.fragile_dims >= 1 && n >= 1, ErrorCode::InvalidArgument,
          "bad blobs spec");
  const Index p = s.robust_dims + s.fragile_dims;
  // Class centres are fixed by the spec, not the seed, so train and test
  // draws with different seeds share them.
  Rng centre_rng(0x5eedb10b5ULL);
  Matrix centres(p, s.num_classes);
  for (int c = 0; c < s.num_classes; ++c) {
    for (Index j = 0; j < s.robust_dims; ++j) centres(j, c) = 0.5 + s.robust_sep * centre_rng.uniform(-1.0, 1.0);
    for (Index j = 0; j < s.fragile_dims; ++j) {
      // a random sign pattern of small steps around 0.5
      centres(s.robust_dims + j, c) = 0.5 + s.fragile_sep * (centre_rng.below(2) ? 1.0 : -1.0);
    }
  }
  Rng rng(seed);
  Dataset d;
  d.num_classes = s.num_classes;
  d.x.resize(p, n);
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.num_classes)));
    for (Index j = 0; j < p; ++j) {
      const double noise = j < s.robust_dims ? s.robust_noise : s.fragile_noise;
      d.x(j, i) = std::clamp(centres(j, c) + noise * rng.normal(), 0.0, 1.0);
    }
    d.labels.push_back(c);
  }
  return d;
}

/// Per-class round-robin draw of `count` examples, seeded.
inline std::vector<Index> stratified_indices(const std::vector<int>& labels, int num_classes, Index count,
                                             std::uint64_t seed) {
  require(count >= 1 && count <= static_cast<Index>(labels.size()), ErrorCode::InvalidArgument,
          "subset size must be in [1, n]");
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(static_cast<Index>(i));
  Rng rng(seed);
  for (auto& v : by_class) rng.shuffle(v);
  std::vector<Index> out;
  std::vector<std::size_t> pos(by_class.size(), 0);
  while (static_cast<Index>(out.size()) < count) {
    for (std::size_t c = 0; c < by_class.size() && static_cast<Index>(out.size()) < count; ++c)
      if (pos[c] < by_class[c].size()) out.push_back(by_class[c][pos[c]++]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- IDX files ----

struct IdxTensor {
  std::uint8_t type = 0x08;  // unsigned byte
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline std::uint32_t read_be32(const std::string& s, std::size_t off) {
  require(off + 4 <= s.size(), ErrorCode::Io, "truncated IDX header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
  return v;
}

inline IdxTensor parse_idx(const std::string& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  require((magic >> 16) == 0 && ((magic >> 8) & 0xff) == 0x08, ErrorCode::Io, "unsupported IDX magic");
  IdxTensor t;
  t.type = 0x08;
  const std::uint32_t ndim = magic & 0xff;
  require(ndim >= 1, ErrorCode::Io, "IDX tensor has no dimensions");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    t.dims.push_back(read_be32(bytes, 4 + 4 * i));
    count *= t.dims.back();
  }
  const std::size_t off = 4 + 4 * static_cast<std::size_t>(ndim);
  require(bytes.size() == off + count, ErrorCode::Io, "IDX payload size does not match its header");
  t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return t;
}

inline std::string serialize_idx(const IdxTensor& t) {
  std::string out;
  const auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
  };
  put(0x0800u | static_cast<std::uint32_t>(t.dims.size()));
  std::size_t count = 1;
  for (auto d : t.dims) {
    put(d);
    count *= d;
  }
  require(count == t.data.size(), ErrorCode::InvalidArgument, "IDX data size does not match dims");
  out.append(t.data.begin(), t.data.end());
  return out;
}

/// Images (magic 0x803) and labels (magic 0x801) into a [0, 1]-scaled set.
inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = parse_idx(read_file(images));
  const auto lab = parse_idx(read_file(labels));
  require(img.dims.size() == 3, ErrorCode::Io, "image file must have magic 0x00000803");
  require(lab.dims.size() == 1, ErrorCode::Io, "label file must have magic 0x00000801");
  require(img.dims[0] == lab.dims[0], ErrorCode::Io, "image and label counts differ");
  const Index n = img.dims[0];
  const Index p = static_cast<Index>(img.dims[1]) * img.dims[2];
  Dataset d;
  d.x.resize(p, n);
  int max_label = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) d.x(j, i) = img.data[static_cast<std::size_t>(i * p + j)] / 255.0;
    d.labels.push_back(lab.data[static_cast<std::size_t>(i)]);
    max_label = std::max(max_label, d.labels.back());
  }
  d.num_classes = std::max(10, max_label + 1);
  return d;
}

}  // namespace rib::data
