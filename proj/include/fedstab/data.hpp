#pragma once

// Synthetic labeled data, heterogeneous client partitioning, and the
// one-sample-perturbed neighboring federation used to measure stability.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "fedstab/errors.hpp"
#include "fedstab/rng.hpp"

namespace fedstab::data {

struct Sample {
  std::vector<double> features;
  int label = 0;

  bool operator==(const Sample&) const = default;
};

// Row-major collection of samples with a common feature dimension.
class Dataset {
 public:
  explicit Dataset(std::size_t dim) : dim_(dim) {}

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const double> features(std::size_t i) const {
    return {features_.data() + i * dim_, dim_};
  }
  int label(std::size_t i) const { return labels_[i]; }
  Sample sample(std::size_t i) const;

  void push_back(std::span<const double> features, int label);
  void set(std::size_t i, const Sample& sample);

  bool operator==(const Dataset&) const = default;

 private:
  std::size_t dim_;
  std::vector<double> features_;
  std::vector<int> labels_;
};

// Class-conditional isotropic Gaussians with unit-norm means.
struct GaussianMixture {
  std::size_t dim = 0;
  std::size_t classes = 0;
  double noise = 0.0;
  std::vector<double> means;  // classes x dim, row-major

  std::span<const double> mean(int label) const {
    return {means.data() + static_cast<std::size_t>(label) * dim, dim};
  }
  Sample draw(int label, CounterStream& stream) const;
};

struct LabeledPool {
  GaussianMixture source;
  Dataset samples{0};
  std::uint64_t seed = 0;
};

// Balanced pool: class c receives total / C samples, plus one if
// c < total % C. Deterministic in `seed`.
LabeledPool generate_synthetic(std::size_t dim, std::size_t classes,
                               std::size_t total, std::uint64_t seed,
                               double noise = 0.5);

struct Federation {
  std::size_t samples_per_client = 0;
  std::size_t dim = 0;
  std::size_t classes = 0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  GaussianMixture source;
  // Shards are immutable and may be shared with a neighboring federation.
  std::vector<std::shared_ptr<const Dataset>> shards;
  // Dirichlet draw per client (what the partition aimed for).
  std::vector<std::vector<double>> target_proportions;

  std::size_t clients() const { return shards.size(); }
  const Dataset& shard(std::size_t i) const { return *shards[i]; }
  // Realized class proportions of client i's shard.
  std::vector<double> class_proportions(std::size_t i) const;
};

// Splits the pool over m clients with per-client class proportions drawn
// from Dirichlet(beta * 1_C). Every client receives exactly
// S = floor(total / m) distinct pool samples; when a class runs dry the
// client's remaining slots are refilled from the classes still available,
// in proportion to its Dirichlet weights.
Federation dirichlet_partition(const LabeledPool& pool, std::size_t m,
                               double beta, std::uint64_t seed);

struct Perturbation {
  std::size_t client = 0;
  std::size_t sample = 0;
  Sample original;
  Sample replacement;
};

struct NeighborFederation {
  Federation federation;
  Perturbation perturbation;
};

// Replaces sample `sample` of client `client` with a fresh draw of the same
// class from the generating mixture. With force_identical the replacement is
// the original sample itself (a zero perturbation).
NeighborFederation make_neighbor(const Federation& fed, std::size_t client,
                                 std::size_t sample, std::uint64_t seed,
                                 bool force_identical = false);

// Number of (client, sample) positions at which the two federations differ.
std::size_t hamming_distance(const Federation& a, const Federation& b);

// Fresh samples from the union of client distributions: a client is chosen
// uniformly, then a label from its realized class proportions, then features
// from the mixture. Independent of the training shards.
Dataset draw_probe_set(const Federation& fed, std::size_t count,
                       std::uint64_t seed);

// One CSV per client (d feature columns then the label) plus manifest.json
// with {m, S, d, C, beta, seed}.
void write_federation(const Federation& fed, const std::filesystem::path& dir);

}  // namespace fedstab::data
