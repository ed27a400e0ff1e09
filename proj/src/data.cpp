#include "fedstab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include "json.hpp"

namespace fedstab::data {

Sample Dataset::sample(std::size_t i) const {
  const auto f = features(i);
  return Sample{{f.begin(), f.end()}, labels_[i]};
}

void Dataset::push_back(std::span<const double> features, int label) {
  if (features.size() != dim_) {
    throw ValidationError(fmt::format("sample has dimension {}, dataset expects {}",
                                      features.size(), dim_));
  }
  features_.insert(features_.end(), features.begin(), features.end());
  labels_.push_back(label);
}

void Dataset::set(std::size_t i, const Sample& sample) {
  if (sample.features.size() != dim_) throw ValidationError("sample dimension mismatch");
  std::copy(sample.features.begin(), sample.features.end(), features_.begin() + i * dim_);
  labels_[i] = sample.label;
}

Sample GaussianMixture::draw(int label, CounterStream& stream) const {
  Sample s{std::vector<double>(dim), label};
  const auto mu = mean(label);
  for (std::size_t k = 0; k < dim; ++k) s.features[k] = mu[k] + noise * stream.normal();
  return s;
}

LabeledPool generate_synthetic(std::size_t dim, std::size_t classes, std::size_t total,
                               std::uint64_t seed, double noise) {
  if (dim < 1) throw ValidationError("dimension must be >= 1");
  if (classes < 2) throw ValidationError("need at least 2 classes");
  if (total < classes) {
    throw ValidationError(fmt::format("total {} is smaller than class count {}", total, classes));
  }
  if (!(noise >= 0.0)) throw ValidationError("noise must be non-negative");

  LabeledPool pool;
  pool.seed = seed;
  pool.source.dim = dim;
  pool.source.classes = classes;
  pool.source.noise = noise;
  pool.source.means.resize(classes * dim);
  for (std::size_t c = 0; c < classes; ++c) {
    CounterStream stream(seed, Purpose::data_means, static_cast<std::uint32_t>(c));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double v = stream.normal();
        pool.source.means[c * dim + k] = v;
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < dim; ++k) pool.source.means[c * dim + k] /= norm;
  }

  pool.samples = Dataset(dim);
  // Labels cycle 0..C-1, which yields the balanced counts.
  for (std::size_t i = 0; i < total; ++i) {
    CounterStream stream(seed, Purpose::data_pool, static_cast<std::uint32_t>(i));
    const Sample s = pool.source.draw(static_cast<int>(i % classes), stream);
    pool.samples.push_back(s.features, s.label);
  }
  return pool;
}

std::vector<double> Federation::class_proportions(std::size_t i) const {
  std::vector<double> counts(classes, 0.0);
  const Dataset& d = shard(i);
  for (std::size_t j = 0; j < d.size(); ++j) counts[static_cast<std::size_t>(d.label(j))] += 1.0;
  for (auto& c : counts) c /= static_cast<double>(d.size());
  return counts;
}

namespace {

// Largest-remainder apportionment of `slots` by `weights` restricted to
// classes with capacity left.
std::vector<std::size_t> apportion(const std::vector<double>& weights,
                                   const std::vector<std::size_t>& capacity,
                                   std::size_t slots) {
  const std::size_t k = weights.size();
  std::vector<std::size_t> out(k, 0);
  double mass = 0.0;
  std::size_t open = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (capacity[c] > 0) {
      mass += weights[c];
      ++open;
    }
  }
  if (open == 0 || slots == 0) return out;
  std::vector<double> share(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (capacity[c] == 0) continue;
    share[c] = mass > 0.0 ? weights[c] / mass * static_cast<double>(slots)
                          : static_cast<double>(slots) / static_cast<double>(open);
  }
  std::size_t given = 0;
  std::vector<std::pair<double, std::size_t>> remainders;
  for (std::size_t c = 0; c < k; ++c) {
    out[c] = static_cast<std::size_t>(std::floor(share[c]));
    given += out[c];
    if (capacity[c] > 0) remainders.emplace_back(share[c] - std::floor(share[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; given < slots; r = (r + 1) % remainders.size()) {
    ++out[remainders[r].second];
    ++given;
  }
  return out;
}

}  // namespace

Federation dirichlet_partition(const LabeledPool& pool, std::size_t m, double beta,
                               std::uint64_t seed) {
  if (!(beta > 0.0)) throw ValidationError(fmt::format("beta must be > 0, got {}", beta));
  if (m < 1) throw ValidationError("need at least one client");
  const std::size_t total = pool.samples.size();
  if (total < m) {
    throw ValidationError(fmt::format("pool of {} samples cannot give {} clients one sample each",
                                      total, m));
  }
  const std::size_t per_client = total / m;
  const std::size_t classes = pool.source.classes;

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < total; ++i) {
    by_class[static_cast<std::size_t>(pool.samples.label(i))].push_back(i);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    CounterStream stream(seed, Purpose::partition_shuffle, static_cast<std::uint32_t>(c));
    shuffle(std::span<std::size_t>(by_class[c]), stream);
  }
  std::vector<std::size_t> cursor(classes, 0);

  Federation fed;
  fed.samples_per_client = per_client;
  fed.dim = pool.source.dim;
  fed.classes = classes;
  fed.beta = beta;
  fed.seed = seed;
  fed.source = pool.source;

  for (std::size_t client = 0; client < m; ++client) {
    CounterStream stream(seed, Purpose::partition_proportions, static_cast<std::uint32_t>(client));
    std::vector<double> target = dirichlet(stream, classes, beta);
    auto shard = std::make_shared<Dataset>(pool.source.dim);
    std::size_t remaining = per_client;
    while (remaining > 0) {
      std::vector<std::size_t> capacity(classes);
      for (std::size_t c = 0; c < classes; ++c) capacity[c] = by_class[c].size() - cursor[c];
      const auto want = apportion(target, capacity, remaining);
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t take = std::min(want[c], capacity[c]);
        for (std::size_t j = 0; j < take; ++j) {
          const std::size_t idx = by_class[c][cursor[c]++];
          shard->push_back(pool.samples.features(idx), pool.samples.label(idx));
        }
        remaining -= take;
      }
    }
    fed.shards.push_back(std::move(shard));
    fed.target_proportions.push_back(std::move(target));
  }
  return fed;
}

NeighborFederation make_neighbor(const Federation& fed, std::size_t client,
                                 std::size_t sample, std::uint64_t seed,
                                 bool force_identical) {
  if (client >= fed.clients()) {
    throw ValidationError(fmt::format("client index {} out of range [0, {})", client, fed.clients()));
  }
  if (sample >= fed.shard(client).size()) {
    throw ValidationError(fmt::format("sample index {} out of range [0, {})", sample,
                                      fed.shard(client).size()));
  }
  NeighborFederation out{fed, {}};
  out.perturbation.client = client;
  out.perturbation.sample = sample;
  out.perturbation.original = fed.shard(client).sample(sample);
  if (force_identical) {
    out.perturbation.replacement = out.perturbation.original;
  } else {
    CounterStream stream(seed, Purpose::neighbor, static_cast<std::uint32_t>(client),
                         static_cast<std::uint32_t>(sample));
    out.perturbation.replacement = fed.source.draw(out.perturbation.original.label, stream);
  }
  auto copy = std::make_shared<Dataset>(fed.shard(client));
  copy->set(sample, out.perturbation.replacement);
  out.federation.shards[client] = std::move(copy);
  return out;
}

std::size_t hamming_distance(const Federation& a, const Federation& b) {
  if (a.clients() != b.clients()) throw ValidationError("federations have different client counts");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.clients(); ++i) {
    const Dataset& x = a.shard(i);
    const Dataset& y = b.shard(i);
    if (x.size() != y.size()) throw ValidationError("federations have different shard sizes");
    if (a.shards[i] == b.shards[i]) continue;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x.label(j) != y.label(j) || !std::ranges::equal(x.features(j), y.features(j))) ++diff;
    }
  }
  return diff;
}

Dataset draw_probe_set(const Federation& fed, std::size_t count, std::uint64_t seed) {
  Dataset probes(fed.dim);
  for (std::size_t i = 0; i < count; ++i) {
    CounterStream stream(seed, Purpose::probes, static_cast<std::uint32_t>(i));
    const std::size_t client = stream.uniform_index(fed.clients());
    const auto props = fed.class_proportions(client);
    double u = stream.uniform();
    int label = 0;
    for (std::size_t c = 0; c < props.size(); ++c) {
      if (props[c] <= 0.0) continue;
      label = static_cast<int>(c);
      if (u < props[c]) break;
      u -= props[c];
    }
    const Sample s = fed.source.draw(label, stream);
    probes.push_back(s.features, s.label);
  }
  return probes;
}

void write_federation(const Federation& fed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < fed.clients(); ++i) {
    std::ofstream out(dir / fmt::format("client_{:04d}.csv", i));
    const Dataset& d = fed.shard(i);
    for (std::size_t j = 0; j < d.size(); ++j) {
      for (double v : d.features(j)) out << fmt::format("{:.17g},", v);
      out << d.label(j) << '\n';
    }
  }
  nlohmann::ordered_json manifest = {
      {"m", fed.clients()},      {"S", fed.samples_per_client}, {"d", fed.dim},
      {"C", fed.classes},        {"beta", fed.beta},            {"seed", fed.seed}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace fedstab::data
