#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedstab/rng.hpp"

namespace fedstab {
namespace {

using Block = std::array<std::uint32_t, 4>;

// Random123 known-answer vectors for philox4x32 with 10 rounds.
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
            (Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(CounterStream, SameAddressSameNumbers) {
  CounterStream a(42, Purpose::minibatch, 3, 7), b(42, Purpose::minibatch, 3, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(CounterStream, DifferentAddressesDiffer) {
  const std::uint64_t base = CounterStream(42, Purpose::minibatch, 3, 7).next_u64();
  EXPECT_NE(base, CounterStream(43, Purpose::minibatch, 3, 7).next_u64());
  EXPECT_NE(base, CounterStream(42, Purpose::init, 3, 7).next_u64());
  EXPECT_NE(base, CounterStream(42, Purpose::minibatch, 4, 7).next_u64());
  EXPECT_NE(base, CounterStream(42, Purpose::minibatch, 3, 8).next_u64());
  EXPECT_NE(base, CounterStream(42, Purpose::minibatch, 7, 3).next_u64());
}

TEST(CounterStream, UniformRange) {
  CounterStream s(1, Purpose::probes);
  for (int i = 0; i < 100000; ++i) {
    const double u = s.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = s.uniform_open_zero();
    ASSERT_GT(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(CounterStream, UniformIndexIsUnbiased) {
  // Chi-square with 12 degrees of freedom; 40 is far beyond the 0.9999 quantile.
  CounterStream s(5, Purpose::minibatch);
  constexpr std::size_t bins = 13, draws = 130000;
  std::vector<double> count(bins, 0.0);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto k = s.uniform_index(bins);
    ASSERT_LT(k, bins);
    count[k] += 1.0;
  }
  const double expected = static_cast<double>(draws) / bins;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 40.0);
}

TEST(CounterStream, NormalMoments) {
  CounterStream s(9, Purpose::init);
  constexpr int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.015);
  EXPECT_NEAR(sq / n, 1.0, 0.015);
}

TEST(CounterStream, GammaMean) {
  for (double shape : {0.1, 0.5, 1.0, 3.0}) {
    CounterStream s(11, Purpose::partition_proportions);
    double sum = 0.0;
    constexpr int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double g = s.gamma(shape);
      ASSERT_GE(g, 0.0);
      sum += g;
    }
    EXPECT_NEAR(sum / n, shape, 0.03 * std::max(shape, 0.3)) << shape;
  }
}

TEST(Dirichlet, OnSimplex) {
  CounterStream s(3, Purpose::partition_proportions);
  for (double beta : {0.01, 0.1, 1.0, 1e6}) {
    const auto p = dirichlet(s, 10, beta);
    ASSERT_EQ(p.size(), 10u);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Shuffle, IsAPermutation) {
  CounterStream s(2, Purpose::partition_shuffle);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  shuffle(std::span<int>(v), s);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(SampleWithoutReplacement, DistinctSortedAndUniform) {
  std::vector<double> hits(8, 0.0);
  for (std::uint32_t t = 0; t < 4000; ++t) {
    CounterStream s(7, Purpose::client_selection, t);
    const auto pick = sample_without_replacement(s, 8, 3);
    ASSERT_EQ(pick.size(), 3u);
    ASSERT_TRUE(std::is_sorted(pick.begin(), pick.end()));
    ASSERT_EQ(std::set<std::size_t>(pick.begin(), pick.end()).size(), 3u);
    for (auto i : pick) hits[i] += 1.0;
  }
  for (double h : hits) EXPECT_NEAR(h / 4000.0, 3.0 / 8.0, 0.03);
  CounterStream s(7, Purpose::client_selection);
  EXPECT_THROW(sample_without_replacement(s, 3, 4), std::invalid_argument);
}

}  // namespace
}  // namespace fedstab
