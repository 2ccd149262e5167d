#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fewrel/rng.hpp"

using namespace fewrel;

// Known-answer vectors from the Random123 distribution (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswerVectors) {
  using A4 = std::array<std::uint32_t, 4>;
  EXPECT_EQ(detail::philox4x32_10({0, 0, 0, 0}, {0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(detail::philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(detail::philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, SameCoordinatesSameSequence) {
  RngStream a(42, 7, 1), b(42, 7, 1);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(RngStream, StreamsAndSubstreamsDiffer) {
  auto head = [](RngStream r) {
    std::vector<std::uint32_t> v;
    for (int i = 0; i < 8; ++i) v.push_back(r());
    return v;
  };
  const RngStream base(42, 7);
  EXPECT_NE(head(base), head(RngStream(42, 8)));
  EXPECT_NE(head(base), head(RngStream(43, 7)));
  EXPECT_NE(head(base), head(base.substream(1)));
  EXPECT_EQ(head(base.substream(3)), head(RngStream(42, 7, 3)));
}

TEST(RngStream, SubstreamDoesNotAdvanceParent) {
  RngStream a(1, 2), b(1, 2);
  (void)a.substream(5)();
  EXPECT_EQ(a(), b());
}

TEST(RngStream, UniformInUnitInterval) {
  RngStream r(3);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.005);
}

TEST(RngStream, UniformIndexChiSquare) {
  // 10 cells, 100k draws; 0.999 quantile of chi-square with 9 dof is 27.88.
  RngStream r(4);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_index(10)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  EXPECT_LT(chi2, 27.88);
  EXPECT_THROW(r.uniform_index(0), std::invalid_argument);
}

TEST(RngStream, NormalMoments) {
  RngStream r(5);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(RngStream, SampleWithoutReplacementDistinct) {
  RngStream r(6);
  for (int t = 0; t < 200; ++t) {
    const auto v = r.sample_without_replacement(20, 7);
    ASSERT_EQ(v.size(), 7u);
    ASSERT_EQ(std::set<std::size_t>(v.begin(), v.end()).size(), 7u);
    for (auto x : v) ASSERT_LT(x, 20u);
  }
  EXPECT_THROW(r.sample_without_replacement(3, 4), std::invalid_argument);
  EXPECT_EQ(r.sample_without_replacement(5, 0).size(), 0u);
}

TEST(RngStream, ShuffleIsPermutation) {
  RngStream r(7);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto w = v;
  r.shuffle(w);
  EXPECT_NE(w, v);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, v);
}

TEST(DeriveSeed, DistinctTagsDistinctSeeds) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 1000; ++tag) seen.insert(derive_seed(42, tag));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(42, 3), derive_seed(42, 3));
  EXPECT_NE(derive_seed(42, 3), derive_seed(43, 3));
}
