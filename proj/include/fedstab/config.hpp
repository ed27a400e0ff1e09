#pragma once

// Declarative experiment description. The file is JSON:
//
//   {
//     "schema_version": 1,
//     "data":      {"d": 10, "C": 5, "clients": 16, "total": 1024, "beta": 0.1,
//                   "noise": 0.5, "seed": 1},
//     "model":     {"family": "logistic", "hidden": 0, "weight_decay": 0.001,
//                   "init_scale": 0.01},
//     "train":     {"T": 50, "K": 5, "n": 4, "batch": 1, "mu": "auto",
//                   "schedule": "inverse_iteration", "seed": 100},
//     "stability": {"seeds": 20, "positions": 1, "probe_size": 500,
//                   "probe_count": 100, "probe_radius": 0.5},
//     "output":    {"directory": "out", "formats": ["csv", "json"]},
//     "sweep":     {"n_list": [1, 7, 16]}
//   }
//
// "train" holds exactly one of "n" (FedAvg) or "topology" (D-FedAvg).
// Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedstab/engine.hpp"
#include "fedstab/model.hpp"
#include "fedstab/topology.hpp"

namespace fedstab::config {

inline constexpr int kSchemaVersion = 1;

struct DataBlock {
  std::size_t d = 10;
  std::size_t C = 5;
  std::size_t clients = 16;
  std::size_t total = 1024;
  double beta = 0.1;
  double noise = 0.5;
  std::uint64_t seed = 1;

  std::size_t samples_per_client() const { return total / clients; }
};

struct ModelBlock {
  model::Family family = model::Family::logistic;
  std::size_t hidden = 0;
  double weight_decay = 0.0;
  double init_scale = 0.01;
};

struct TrainBlock {
  std::size_t T = 50;
  std::size_t K = 5;
  std::optional<std::size_t> n;
  std::optional<topology::Kind> topology;
  std::size_t batch = 1;
  std::optional<double> mu;  // empty means 1 / L
  engine::Schedule schedule = engine::Schedule::inverse_iteration;
  // Topology coefficient exponent; empty means 1 - muL (floored at 1e-3).
  std::optional<double> alpha;
  std::uint64_t seed = 0;
};

struct StabilityBlock {
  std::size_t seeds = 20;
  std::size_t positions = 1;
  std::size_t probe_size = 500;
  std::size_t probe_count = 100;
  double probe_radius = 0.5;
  bool zero_perturbation = false;
};

struct OutputBlock {
  std::string directory = "out";
  std::vector<std::string> formats{"csv", "json"};
};

struct SweepBlock {
  std::vector<std::size_t> n_list;
  std::vector<topology::Kind> kinds;
  std::vector<std::size_t> m_list;
  std::optional<std::size_t> fixed_S;
};

struct ExperimentConfig {
  DataBlock data;
  ModelBlock model;
  TrainBlock train;
  StabilityBlock stability;
  OutputBlock output;
  SweepBlock sweep;

  engine::Algorithm algorithm() const {
    return train.topology ? engine::Algorithm::dfl : engine::Algorithm::cfl;
  }
};

// Parses and validates; throws ValidationError with the offending key.
ExperimentConfig parse(std::string_view json_text);
ExperimentConfig load(const std::filesystem::path& path);

// Stable serialization (sorted keys, no whitespace variance); the config
// hash is the git blob hash of this text.
std::string canonical(const ExperimentConfig& cfg);
std::string hash(const ExperimentConfig& cfg);

// Checks every module precondition a run of `cfg` would hit.
void validate(const ExperimentConfig& cfg);

}  // namespace fedstab::config
