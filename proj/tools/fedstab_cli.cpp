// fedstab: federated stability experiments from the command line.
//
//   fedstab topology --kind ring --m 16 [--alpha 0.5] [--out DIR]
//   fedstab run --config exp.json [--out DIR] [--seeds N] [--threads N]
//   fedstab sweep-participation --config exp.json [--n-list 1,7,16]
//   fedstab sweep-topology --config exp.json [--kinds full,exp,grid,ring]
//   fedstab collapse --config exp.json [--m-list 9,16,25] [--fixed-s 64]
//
// Exit status: 0 success, 2 invalid input, 3 numeric divergence.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <fmt/format.h>

#include "fedstab/config.hpp"
#include "fedstab/errors.hpp"
#include "fedstab/runner.hpp"

namespace {

constexpr int kValidationExit = 2;
constexpr int kDivergenceExit = 3;

std::vector<fedstab::topology::Kind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<fedstab::topology::Kind> out;
  for (const auto& n : names) out.push_back(fedstab::topology::parse_kind(n));
  return out;
}

struct Common {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::size_t> seeds;
  std::size_t threads = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", out, "output directory (overrides output.directory)");
    cmd->add_option("--seeds", seeds, "seeds per cell (overrides stability.seeds)");
    cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  }

  fedstab::config::ExperimentConfig load() const {
    auto cfg = fedstab::config::load(config_path);
    if (out) cfg.output.directory = *out;
    if (seeds) cfg.stability.seeds = *seeds;
    fedstab::config::validate(cfg);
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Stability experiments for centralized and decentralized federated learning"};
  app.require_subcommand(1);

  auto* topo = app.add_subcommand("topology", "spectral report of a mixing topology");
  std::string kind_name;
  std::size_t m = 0;
  double alpha = 0.5;
  std::size_t t_max = 50;
  std::optional<std::string> topo_out;
  topo->add_option("--kind", kind_name, "ring, grid, star, exp or full")->required();
  topo->add_option("--m", m, "client count")->required();
  topo->add_option("--alpha", alpha, "exponent of the topology coefficient, in (0, 1)");
  topo->add_option("--t-max", t_max, "powers checked by the contraction test");
  topo->add_option("--out", topo_out, "directory for matrix.csv and topology.json");

  Common run_opts, part_opts, topo_sweep_opts, collapse_opts;
  auto* run_cmd = app.add_subcommand("run", "coupled runs of one configuration");
  run_opts.attach(run_cmd);

  auto* part = app.add_subcommand("sweep-participation", "FedAvg over active-client counts");
  part_opts.attach(part);
  std::vector<std::size_t> n_list;
  part->add_option("--n-list", n_list, "active-client counts")->delimiter(',');

  auto* tsweep = app.add_subcommand("sweep-topology", "D-FedAvg over topologies");
  topo_sweep_opts.attach(tsweep);
  std::vector<std::string> kinds;
  tsweep->add_option("--kinds", kinds, "topology kinds")->delimiter(',');

  auto* collapse = app.add_subcommand("collapse", "D-FedAvg over client counts at fixed S");
  collapse_opts.attach(collapse);
  std::vector<std::string> collapse_kinds;
  std::vector<std::size_t> m_list;
  std::optional<std::size_t> fixed_s;
  collapse->add_option("--kinds", collapse_kinds, "topology kinds")->delimiter(',');
  collapse->add_option("--m-list", m_list, "client counts")->delimiter(',');
  collapse->add_option("--fixed-s", fixed_s, "samples per client");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationExit;
  }

  if (*topo) {
    const auto report = fedstab::runner::cmd_topology(
        fedstab::topology::parse_kind(kind_name), m, alpha, t_max,
        topo_out ? std::optional<std::filesystem::path>(*topo_out) : std::nullopt);
    std::cout << report.json();
    return 0;
  }
  if (*run_cmd) {
    const auto cfg = run_opts.load();
    const auto cells = fedstab::runner::cmd_run(cfg, cfg.output.directory, run_opts.threads);
    fmt::print("wrote {} traces to {}\n", cells.front().traces.size(), cfg.output.directory);
    return 0;
  }
  if (*part) {
    const auto cfg = part_opts.load();
    if (n_list.empty()) n_list = cfg.sweep.n_list;
    fedstab::runner::cmd_sweep_participation(cfg, n_list, cfg.output.directory, part_opts.threads);
    fmt::print("wrote {}/sweep_participation.csv\n", cfg.output.directory);
    return 0;
  }
  if (*tsweep) {
    const auto cfg = topo_sweep_opts.load();
    const auto list = kinds.empty() ? cfg.sweep.kinds : parse_kinds(kinds);
    fedstab::runner::cmd_sweep_topology(cfg, list, cfg.output.directory, topo_sweep_opts.threads);
    fmt::print("wrote {}/sweep_topology.csv\n", cfg.output.directory);
    return 0;
  }
  const auto cfg = collapse_opts.load();
  auto list = collapse_kinds.empty() ? cfg.sweep.kinds : parse_kinds(collapse_kinds);
  if (list.empty() && cfg.train.topology) list.push_back(*cfg.train.topology);
  if (m_list.empty()) m_list = cfg.sweep.m_list;
  const std::size_t s = fixed_s.value_or(cfg.sweep.fixed_S.value_or(cfg.data.samples_per_client()));
  fedstab::runner::cmd_collapse(cfg, list, m_list, s, cfg.output.directory, collapse_opts.threads);
  fmt::print("wrote {}/collapse.csv\n", cfg.output.directory);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const fedstab::ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kValidationExit;
  } catch (const fedstab::DivergenceError& e) {
    fmt::print(stderr, "diverged: {}\n", e.what());
    return kDivergenceExit;
  } catch (const std::exception& e) {
    fmt::print(stderr, "fatal: {}\n", e.what());
    return 1;
  }
}
