#pragma once

// Experiment orchestration: one cell is a (config, factor setting) pair run
// over many seeds and perturbation positions on a bounded worker pool.
// Results are collected by job index, so outputs do not depend on the
// thread count.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedstab/config.hpp"
#include "fedstab/engine.hpp"
#include "fedstab/stability.hpp"
#include "fedstab/topology.hpp"

namespace fedstab::runner {

// Runs job(0..count-1) on up to `threads` workers; rethrows the first
// failure after all workers stop.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& job);

struct TraceOutcome {
  std::size_t seed_index = 0;
  std::size_t position_index = 0;
  std::uint64_t master_seed = 0;
  std::size_t client = 0;
  std::size_t sample = 0;
  std::optional<std::size_t> tau_hat;
  double final_delta_over_m = 0.0;
  double param_distance = 0.0;
  double loss_gap = 0.0;
  double lipschitz_proxy = 0.0;
  double sigma_hat = 0.0;
  double max_sample_loss = 0.0;
  engine::CoupledTrace trace;  // kept only when requested
};

struct CellResult {
  config::ExperimentConfig cfg;
  double mu = 0.0;
  std::size_t S = 0;
  model::AssumptionConstants constants;
  std::optional<topology::SpectralProfile> spectrum;
  std::optional<stability::BoundReport> bound;  // empty if muL > 1
  std::vector<TraceOutcome> traces;
  std::vector<std::uint64_t> seeds;

  std::vector<double> loss_gaps() const;
  std::vector<double> lipschitz_proxies() const;
};

struct RunOptions {
  std::size_t threads = 1;
  bool keep_traces = false;
};

// Master seed of seed index s.
std::uint64_t master_seed(const config::ExperimentConfig& cfg, std::size_t s);

CellResult run_cell(const config::ExperimentConfig& cfg, const RunOptions& options);

struct TopologyReport {
  topology::Kind kind;
  std::size_t m = 0;
  topology::SpectralProfile profile;
  stability::CollapseCheck collapse;
  std::size_t t_max = 0;
  bool contraction_holds = false;
  std::string json() const;
};

TopologyReport cmd_topology(topology::Kind kind, std::size_t m, double alpha, std::size_t t_max,
                            const std::optional<std::filesystem::path>& out);

// Each writes its artifacts plus manifest.json under `out` and returns the
// cell results in output order.
std::vector<CellResult> cmd_run(const config::ExperimentConfig& cfg,
                                const std::filesystem::path& out, std::size_t threads);
std::vector<CellResult> cmd_sweep_participation(const config::ExperimentConfig& cfg,
                                                const std::vector<std::size_t>& n_list,
                                                const std::filesystem::path& out,
                                                std::size_t threads);
std::vector<CellResult> cmd_sweep_topology(const config::ExperimentConfig& cfg,
                                           const std::vector<topology::Kind>& kinds,
                                           const std::filesystem::path& out,
                                           std::size_t threads);
std::vector<CellResult> cmd_collapse(const config::ExperimentConfig& cfg,
                                     const std::vector<topology::Kind>& kinds,
                                     const std::vector<std::size_t>& m_list, std::size_t fixed_S,
                                     const std::filesystem::path& out, std::size_t threads);

}  // namespace fedstab::runner
