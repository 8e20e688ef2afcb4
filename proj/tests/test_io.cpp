#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "rib/datasets.hpp"

using namespace rib;
using namespace rib::data;
namespace fs = std::filesystem;

namespace {

IdxTensor random_tensor(Rng& rng, std::vector<std::uint32_t> dims) {
  IdxTensor t;
  t.dims = std::move(dims);
  std::size_t n = 1;
  for (auto d : t.dims) n *= d;
  for (std::size_t i = 0; i < n; ++i) t.data.push_back(static_cast<std::uint8_t>(rng.below(256)));
  return t;
}

}  // namespace

TEST(Idx, RoundTripIsIdentity) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> dims;
    const int nd = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < nd; ++i) dims.push_back(1 + static_cast<std::uint32_t>(rng.below(7)));
    const auto t = random_tensor(rng, dims);
    const auto bytes = serialize_idx(t);
    const auto back = parse_idx(bytes);
    EXPECT_EQ(back.dims, t.dims);
    EXPECT_EQ(back.data, t.data);
    EXPECT_EQ(serialize_idx(back), bytes);
  }
}

TEST(Idx, MagicNumbersAreBigEndian) {
  IdxTensor img;
  img.dims = {2, 3, 4};
  img.data.assign(24, 0);
  const auto b = serialize_idx(img);
  EXPECT_EQ(read_be32(b, 0), 0x00000803u);
  EXPECT_EQ(read_be32(b, 4), 2u);
  EXPECT_EQ(read_be32(b, 12), 4u);
  IdxTensor lab;
  lab.dims = {2};
  lab.data = {3, 7};
  EXPECT_EQ(read_be32(serialize_idx(lab), 0), 0x00000801u);
}

TEST(Idx, RejectsCorruptFiles) {
  Rng rng(2);
  const auto bytes = serialize_idx(random_tensor(rng, {3, 2, 2}));
  EXPECT_THROW(parse_idx(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(parse_idx(bytes + "x"), Error);
  EXPECT_THROW(parse_idx(bytes.substr(0, 6)), Error);
  std::string wrong_type = bytes;
  wrong_type[2] = 0x0d;  // float payloads are not supported
  EXPECT_THROW(parse_idx(wrong_type), Error);
}

TEST(Idx, LoaderScalesPixelsAndPairsLabels) {
  const auto dir = fs::temp_directory_path() / "rib_idx_test";
  fs::create_directories(dir);
  IdxTensor img;
  img.dims = {3, 2, 2};
  img.data = {0, 255, 51, 102, 1, 2, 3, 4, 255, 255, 0, 0};
  IdxTensor lab;
  lab.dims = {3};
  lab.data = {7, 0, 9};
  write_file_atomic(dir / "img", serialize_idx(img));
  write_file_atomic(dir / "lab", serialize_idx(lab));
  const auto d = load_idx(dir / "img", dir / "lab");
  ASSERT_EQ(d.dim(), 4);
  ASSERT_EQ(d.size(), 3);
  EXPECT_EQ(d.x(0, 0), 0.0);
  EXPECT_EQ(d.x(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(d.x(2, 0), 0.2);
  EXPECT_DOUBLE_EQ(d.x(3, 1), 4.0 / 255.0);
  EXPECT_EQ(d.labels, (std::vector<int>{7, 0, 9}));
  EXPECT_EQ(d.num_classes, 10);
  d.validate();
  // swapped files fail on the magic check
  EXPECT_THROW(load_idx(dir / "lab", dir / "img"), Error);
  lab.dims = {2};
  lab.data = {1, 2};
  write_file_atomic(dir / "lab2", serialize_idx(lab));
  EXPECT_THROW(load_idx(dir / "img", dir / "lab2"), Error);
  EXPECT_THROW(load_idx(dir / "nope", dir / "lab"), Error);
}

TEST(Stratified, BalancedSortedAndSeeded) {
  std::vector<int> labels;
  for (int i = 0; i < 1000; ++i) labels.push_back(i % 7 == 0 ? 3 : i % 4);  // unbalanced
  const auto a = stratified_indices(labels, 4, 200, 11);
  EXPECT_EQ(a.size(), 200u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<Index>(a.begin(), a.end()).size(), a.size());
  std::vector<int> count(4, 0);
  for (Index i : a) ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  for (int c : count) EXPECT_EQ(c, 50);
  EXPECT_EQ(a, stratified_indices(labels, 4, 200, 11));
  EXPECT_NE(a, stratified_indices(labels, 4, 200, 12));
  EXPECT_THROW(stratified_indices(labels, 4, 0, 1), Error);
  EXPECT_THROW(stratified_indices(labels, 4, 1001, 1), Error);
}

TEST(Stratified, SmallClassesRunOutGracefully) {
  const std::vector<int> labels{0, 0, 0, 0, 0, 0, 1};
  const auto a = stratified_indices(labels, 2, 5, 3);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_NE(std::find(a.begin(), a.end(), 6), a.end());
}

TEST(Generators, DeterministicShapesAndRanges) {
  const auto b = make_blobs({}, 300, 4);
  EXPECT_EQ(b.dim(), 120);
  EXPECT_EQ(b.num_classes, 10);
  EXPECT_GE(b.x.minCoeff(), 0.0);
  EXPECT_LE(b.x.maxCoeff(), 1.0);
  b.validate();
  EXPECT_EQ(make_blobs({}, 300, 4).x, b.x);
  EXPECT_NE(make_blobs({}, 300, 5).x, b.x);
  const auto g = make_gmm({}, 200000, 6);
  // class means (+-1, +-1) and variances (2, 0.2)
  double m0 = 0.0, v1 = 0.0;
  for (Index i = 0; i < g.size(); ++i) {
    const double y = g.labels[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    m0 += g.x(0, i) * y;
    v1 += (g.x(1, i) - y) * (g.x(1, i) - y);
  }
  EXPECT_NEAR(m0 / g.size(), 1.0, 4.0 * std::sqrt(2.0 / g.size()));
  EXPECT_NEAR(v1 / g.size(), 0.2, 4.0 * 0.2 * std::sqrt(2.0 / g.size()));
}
