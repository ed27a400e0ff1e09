#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "fedstab/data.hpp"

namespace fedstab::data {
namespace {

using Key = std::pair<int, std::vector<double>>;

std::vector<Key> multiset(const Dataset& d) {
  std::vector<Key> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto f = d.features(i);
    out.emplace_back(d.label(i), std::vector<double>(f.begin(), f.end()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(Synthetic, BalancedClassesAndUnitMeans) {
  const auto pool = generate_synthetic(6, 4, 103, 17);
  ASSERT_EQ(pool.samples.size(), 103u);
  std::map<int, int> count;
  for (std::size_t i = 0; i < pool.samples.size(); ++i) ++count[pool.samples.label(i)];
  EXPECT_EQ(count[0], 26);
  EXPECT_EQ(count[1], 26);
  EXPECT_EQ(count[2], 26);
  EXPECT_EQ(count[3], 25);
  for (int c = 0; c < 4; ++c) {
    double n2 = 0.0;
    for (double x : pool.source.mean(c)) n2 += x * x;
    EXPECT_NEAR(n2, 1.0, 1e-12);
  }
}

TEST(Synthetic, DeterministicInSeed) {
  EXPECT_EQ(generate_synthetic(5, 3, 60, 4).samples, generate_synthetic(5, 3, 60, 4).samples);
  EXPECT_NE(generate_synthetic(5, 3, 60, 4).samples, generate_synthetic(5, 3, 60, 5).samples);
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic(0, 3, 60, 1), ValidationError);
  EXPECT_THROW(generate_synthetic(4, 1, 60, 1), ValidationError);
  EXPECT_THROW(generate_synthetic(4, 10, 5, 1), ValidationError);
  EXPECT_THROW(generate_synthetic(4, 3, 60, 1, -1.0), ValidationError);
}

TEST(Partition, EveryShardHasExactlySDistinctPoolSamples) {
  const auto pool = generate_synthetic(4, 5, 1000, 3);
  for (double beta : {0.01, 0.1, 1.0, 100.0}) {
    const auto fed = dirichlet_partition(pool, 16, beta, 3);
    ASSERT_EQ(fed.clients(), 16u);
    EXPECT_EQ(fed.samples_per_client, 62u);
    Dataset all(4);
    for (std::size_t i = 0; i < fed.clients(); ++i) {
      ASSERT_EQ(fed.shard(i).size(), 62u);
      for (std::size_t j = 0; j < 62; ++j) {
        ASSERT_GE(fed.shard(i).label(j), 0);
        ASSERT_LT(fed.shard(i).label(j), 5);
        all.push_back(fed.shard(i).features(j), fed.shard(i).label(j));
      }
    }
    // Union of shards is a sub-multiset of the pool with no repeats.
    const auto used = multiset(all);
    const auto source = multiset(pool.samples);
    EXPECT_TRUE(std::includes(source.begin(), source.end(), used.begin(), used.end()));
    EXPECT_EQ(std::adjacent_find(used.begin(), used.end()), used.end());
  }
}

TEST(Partition, SingleClientKeepsThePool) {
  const auto pool = generate_synthetic(3, 4, 80, 9);
  const auto fed = dirichlet_partition(pool, 1, 0.1, 9);
  EXPECT_EQ(multiset(fed.shard(0)), multiset(pool.samples));
}

TEST(Partition, ConcentrationControlsHeterogeneity) {
  const auto pool = generate_synthetic(4, 5, 5000, 2);
  auto max_share = [&](double beta) {
    const auto fed = dirichlet_partition(pool, 10, beta, 2);
    double mean = 0.0;
    for (std::size_t i = 0; i < fed.clients(); ++i) {
      const auto p = fed.class_proportions(i);
      EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
      mean += *std::max_element(p.begin(), p.end());
    }
    return mean / static_cast<double>(fed.clients());
  };
  // Tiny beta: nearly one class per client. Huge beta: close to uniform 1/5.
  EXPECT_GT(max_share(0.01), 0.9);
  EXPECT_LT(max_share(1e4), 0.3);
}

TEST(Partition, DeterministicAndValidated) {
  const auto pool = generate_synthetic(4, 3, 90, 1);
  const auto a = dirichlet_partition(pool, 5, 0.5, 8), b = dirichlet_partition(pool, 5, 0.5, 8);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.shard(i), b.shard(i));
  EXPECT_THROW(dirichlet_partition(pool, 5, 0.0, 8), ValidationError);
  EXPECT_THROW(dirichlet_partition(pool, 0, 0.5, 8), ValidationError);
  EXPECT_THROW(dirichlet_partition(pool, 91, 0.5, 8), ValidationError);
}

TEST(Neighbor, DiffersInExactlyOnePosition) {
  const auto pool = generate_synthetic(4, 3, 120, 6);
  const auto fed = dirichlet_partition(pool, 6, 0.3, 6);
  for (std::size_t client : {0u, 3u, 5u}) {
    for (std::size_t sample : {0u, 7u, 19u}) {
      const auto nb = make_neighbor(fed, client, sample, 11);
      EXPECT_EQ(hamming_distance(fed, nb.federation), 1u);
      EXPECT_EQ(nb.perturbation.original, fed.shard(client).sample(sample));
      EXPECT_EQ(nb.perturbation.replacement, nb.federation.shard(client).sample(sample));
      EXPECT_EQ(nb.perturbation.replacement.label, nb.perturbation.original.label);
      for (std::size_t i = 0; i < fed.clients(); ++i) {
        if (i != client) {
          EXPECT_EQ(fed.shards[i], nb.federation.shards[i]);
        }
      }
    }
  }
  const auto same = make_neighbor(fed, 2, 4, 11, true);
  EXPECT_EQ(hamming_distance(fed, same.federation), 0u);
  EXPECT_THROW(make_neighbor(fed, 6, 0, 1), ValidationError);
  EXPECT_THROW(make_neighbor(fed, 0, 20, 1), ValidationError);
}

TEST(Probes, DeterministicAndLabelsFollowClients) {
  const auto pool = generate_synthetic(4, 5, 500, 4);
  const auto fed = dirichlet_partition(pool, 5, 0.01, 4);
  const auto p = draw_probe_set(fed, 300, 4);
  EXPECT_EQ(p, draw_probe_set(fed, 300, 4));
  EXPECT_EQ(p.size(), 300u);
  std::vector<bool> present(5, false);
  for (std::size_t i = 0; i < fed.clients(); ++i) {
    const auto props = fed.class_proportions(i);
    for (std::size_t c = 0; c < 5; ++c) present[c] = present[c] || props[c] > 0.0;
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_TRUE(present[static_cast<std::size_t>(p.label(i))]);
}

TEST(Export, WritesOneCsvPerClient) {
  const auto pool = generate_synthetic(2, 2, 12, 1);
  const auto fed = dirichlet_partition(pool, 3, 1.0, 1);
  const auto dir = std::filesystem::temp_directory_path() / "fedstab_test_export";
  std::filesystem::remove_all(dir);
  write_federation(fed, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  std::size_t csvs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 3u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace fedstab::data
