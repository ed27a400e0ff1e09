#include "fedstab/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include "json.hpp"

#include "fedstab/io.hpp"

namespace fedstab::runner {
namespace {

using nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

}  // namespace

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count && !failed; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

std::vector<double> CellResult::loss_gaps() const {
  std::vector<double> out;
  for (const auto& t : traces) out.push_back(t.loss_gap);
  return out;
}

std::vector<double> CellResult::lipschitz_proxies() const {
  std::vector<double> out;
  for (const auto& t : traces) out.push_back(t.lipschitz_proxy);
  return out;
}

std::uint64_t master_seed(const config::ExperimentConfig& cfg, std::size_t s) {
  return cfg.train.seed + s;
}

CellResult run_cell(const config::ExperimentConfig& cfg, const RunOptions& options) {
  config::validate(cfg);
  CellResult result;
  result.cfg = cfg;
  const std::size_t m = cfg.data.clients;
  result.S = cfg.data.samples_per_client();

  const auto pool = data::generate_synthetic(cfg.data.d, cfg.data.C, cfg.data.total, cfg.data.seed,
                                             cfg.data.noise);
  const auto fed = data::dirichlet_partition(pool, m, cfg.data.beta, cfg.data.seed);
  const auto model = model::make_model({cfg.model.family, cfg.data.d, cfg.data.C, cfg.model.hidden,
                                        cfg.model.weight_decay, cfg.model.init_scale});
  const auto probes = data::draw_probe_set(fed, cfg.stability.probe_size, cfg.data.seed);
  const model::EstimateOptions estimate{cfg.stability.probe_count, cfg.stability.probe_radius,
                                        cfg.data.seed, &probes};

  if (cfg.train.mu) {
    result.mu = *cfg.train.mu;
  } else {
    CounterStream init(master_seed(cfg, 0), Purpose::init);
    const auto c = model::estimate_constants(*model, fed, model->initial_params(init), estimate);
    result.mu = c.L > 0.0 ? 1.0 / c.L : 0.0;
  }

  std::optional<topology::MixingMatrix> mixing;
  if (cfg.train.topology) mixing = topology::build(*cfg.train.topology, m);

  engine::TrainConfig train;
  train.T = cfg.train.T;
  train.K = cfg.train.K;
  train.n = cfg.train.n.value_or(m);
  train.batch = cfg.train.batch;
  train.mu = result.mu;
  train.schedule = cfg.train.schedule;
  train.record_losses = options.keep_traces;
  engine::CoupledOptions coupled{cfg.algorithm(), mixing ? &*mixing : nullptr, false};

  const std::size_t positions = cfg.stability.positions;
  const std::size_t jobs = cfg.stability.seeds * positions;
  for (std::size_t s = 0; s < cfg.stability.seeds; ++s) result.seeds.push_back(master_seed(cfg, s));
  result.traces.resize(jobs);

  parallel_for(jobs, options.threads, [&](std::size_t job) {
    TraceOutcome& out = result.traces[job];
    out.seed_index = job / positions;
    out.position_index = job % positions;
    out.master_seed = master_seed(cfg, out.seed_index);
    CounterStream where(out.master_seed, Purpose::positions,
                        static_cast<std::uint32_t>(out.position_index));
    out.client = where.uniform_index(m);
    out.sample = where.uniform_index(fed.shard(out.client).size());
    const auto neighbor = data::make_neighbor(fed, out.client, out.sample, out.master_seed,
                                              cfg.stability.zero_perturbation);
    engine::TrainConfig local = train;
    local.master_seed = out.master_seed;
    auto run = engine::run_coupled(fed, neighbor, *model, local, coupled);
    const auto gap = stability::empirical_gen_gap(run.coupled.final_C, run.coupled.final_Ctilde,
                                                  *model, probes);
    out.tau_hat = run.coupled.tau_hat;
    out.final_delta_over_m = run.coupled.delta.back().delta / static_cast<double>(m);
    out.param_distance = gap.param_distance;
    out.loss_gap = gap.loss_gap;
    out.sigma_hat = run.coupled.sigma_hat;
    out.max_sample_loss = run.coupled.max_sample_loss;
    out.trace = std::move(run.coupled);
    if (!options.keep_traces) out.trace.delta.clear();
  });

  result.constants = model::estimate_constants(*model, fed, result.traces.front().trace.final_C,
                                               estimate);
  result.constants.mu = result.mu;
  for (auto& t : result.traces) t.lipschitz_proxy = result.constants.G * t.param_distance;

  const double muL = result.mu * result.constants.L;
  if (mixing) {
    const double alpha = cfg.train.alpha.value_or(std::clamp(1.0 - muL, 1e-3, 1.0 - 1e-3));
    result.spectrum = topology::profile(*mixing, alpha);
  }
  const auto& c = result.constants;
  if (c.L > 0.0 && c.sigma_l > 0.0 && c.G > 0.0 && c.U > 0.0 && c.mu > 0.0 && muL <= 1.0 + 1e-12) {
    result.bound = mixing ? stability::bound_theorem2(c, m, result.spectrum->kappa_lambda, result.S,
                                                      train.T, train.K)
                          : stability::bound_theorem1(c, m, train.n, result.S, train.T, train.K);
    result.bound->empirical_gap = stability::mean(result.lipschitz_proxies());
  }
  return result;
}

std::string TopologyReport::json() const {
  ordered_json j = {{"kind", std::string(topology::to_string(kind))},
                    {"m", m},
                    {"lambda", profile.lambda},
                    {"kappa_lambda", profile.kappa_lambda},
                    {"alpha", profile.alpha},
                    {"collapse_threshold", collapse.threshold},
                    {"collapse_pass", collapse.passes},
                    {"contraction_t_max", t_max},
                    {"contraction_pass", contraction_holds}};
  return j.dump(2) + "\n";
}

TopologyReport cmd_topology(topology::Kind kind, std::size_t m, double alpha, std::size_t t_max,
                            const std::optional<std::filesystem::path>& out) {
  if (t_max < 1) throw ValidationError("t_max must be >= 1");
  const auto a = topology::build(kind, m);
  TopologyReport r{kind, m, topology::profile(a, alpha), {}, t_max, false};
  r.collapse = stability::collapse_check(r.profile.kappa_lambda, m);
  r.contraction_holds = topology::contraction_check(a, t_max).all_hold();
  if (out) {
    io::write_text(*out / "matrix.csv", topology::to_csv(a));
    io::write_text(*out / "topology.json", r.json());
  }
  return r;
}

namespace {

bool wants(const config::ExperimentConfig& cfg, std::string_view format) {
  return std::find(cfg.output.formats.begin(), cfg.output.formats.end(), format) !=
         cfg.output.formats.end();
}

void write_manifest(const std::filesystem::path& out, std::string_view command,
                    const config::ExperimentConfig& cfg, const std::vector<CellResult>& cells,
                    const std::vector<std::string>& files) {
  ordered_json seeds = ordered_json::array();
  if (!cells.empty()) {
    for (auto s : cells.front().seeds) seeds.push_back(s);
  }
  ordered_json modules = ordered_json::object();
  for (const char* name : {"topology", "data", "model", "engine", "stability", "cli"}) {
    modules[name] = kVersion;
  }
  ordered_json j = {{"tool", "fedstab"},
                    {"version", kVersion},
                    {"command", command},
                    {"config_hash", config::hash(cfg)},
                    {"config", ordered_json::parse(config::canonical(cfg))},
                    {"master_seeds", seeds},
                    {"positions_per_seed", cfg.stability.positions},
                    {"data_seed", cfg.data.seed},
                    {"modules", modules},
                    {"files", files}};
  io::write_text(out / "manifest.json", j.dump(2) + "\n");
}

std::string summary_csv(const CellResult& cell) {
  std::string s =
      "seed_index,position,master_seed,client,sample,tau_hat,final_delta_over_m,param_distance,"
      "loss_gap,lipschitz_proxy,sigma_hat,max_sample_loss\n";
  for (const auto& t : cell.traces) {
    s += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", t.seed_index, t.position_index,
                     t.master_seed, t.client, t.sample,
                     t.tau_hat ? std::to_string(*t.tau_hat) : std::string("none"),
                     io::format_double(t.final_delta_over_m), io::format_double(t.param_distance),
                     io::format_double(t.loss_gap), io::format_double(t.lipschitz_proxy),
                     io::format_double(t.sigma_hat), io::format_double(t.max_sample_loss));
  }
  return s;
}

std::string final_models_csv(const CellResult& cell) {
  std::string s = "seed_index,position,arm,values\n";
  for (const auto& t : cell.traces) {
    for (int arm = 0; arm < 2; ++arm) {
      const auto& w = arm == 0 ? t.trace.final_C : t.trace.final_Ctilde;
      s += fmt::format("{},{},{},", t.seed_index, t.position_index, arm == 0 ? "C" : "Ctilde");
      for (std::size_t i = 0; i < w.size(); ++i) {
        s += (i ? ";" : "") + io::format_double(w[i]);
      }
      s += '\n';
    }
  }
  return s;
}

std::string cell_json(const CellResult& cell) {
  ordered_json j = ordered_json::parse(cell.bound ? io::bound_json(*cell.bound) : "{}");
  if (!cell.bound) j["bound_note"] = "not evaluated: a constant is zero or mu * L > 1";
  j["mu"] = cell.mu;
  j["constants"] = {{"L", cell.constants.L},
                    {"L_shard", cell.constants.L_shard},
                    {"sigma_l", cell.constants.sigma_l},
                    {"G", cell.constants.G},
                    {"U", cell.constants.U},
                    {"probes_used", cell.constants.probes_used}};
  double worst = 0.0;
  for (const auto& t : cell.traces) worst = std::max(worst, t.max_sample_loss);
  j["max_training_loss"] = worst;
  j["training_loss_within_U"] = worst <= cell.constants.U;
  if (cell.spectrum) {
    j["topology"] = {{"kind", std::string(topology::to_string(*cell.cfg.train.topology))},
                     {"lambda", cell.spectrum->lambda},
                     {"kappa_lambda", cell.spectrum->kappa_lambda},
                     {"alpha", cell.spectrum->alpha}};
  }
  return j.dump(2) + "\n";
}

std::vector<stability::TraceSummary> summaries(const CellResult& cell, const std::string& group) {
  std::vector<stability::TraceSummary> out;
  for (const auto& t : cell.traces) {
    out.push_back({group, t.final_delta_over_m, t.loss_gap, t.lipschitz_proxy});
  }
  return out;
}

io::LongRow factors(const CellResult& cell, std::string sweep) {
  io::LongRow r;
  r.sweep = std::move(sweep);
  r.n = cell.cfg.train.n ? std::to_string(*cell.cfg.train.n) : "";
  r.topology = cell.cfg.train.topology ? std::string(topology::to_string(*cell.cfg.train.topology))
                                       : "cfl";
  r.m = cell.cfg.data.clients;
  r.S = cell.S;
  r.K = cell.cfg.train.K;
  return r;
}

std::vector<io::LongRow> cell_rows(const CellResult& cell, const std::string& sweep) {
  const io::LongRow f = factors(cell, sweep);
  std::vector<io::LongRow> rows;
  for (const auto& p : stability::stability_curve(summaries(cell, sweep))) {
    rows.push_back(io::curve_row(f, p));
  }
  const double nan = std::nan("");
  const std::string bound_metric = cell.spectrum ? "bound_theorem2" : "bound_theorem1";
  rows.push_back(io::scalar_row(f, bound_metric, cell.bound ? cell.bound->epsilon : nan));
  rows.push_back(io::scalar_row(f, "tau0", cell.bound ? cell.bound->tau0 : nan));
  if (cell.spectrum) {
    rows.push_back(io::scalar_row(f, "lambda", cell.spectrum->lambda));
    rows.push_back(io::scalar_row(f, "kappa_lambda", cell.spectrum->kappa_lambda));
  }
  return rows;
}

void require_curve_size(const config::ExperimentConfig& cfg) {
  const std::size_t traces = cfg.stability.seeds * cfg.stability.positions;
  if (traces < 10) {
    throw ValidationError(fmt::format(
        "sweeps need at least 10 traces per cell, got seeds * positions = {}", traces));
  }
}

config::ExperimentConfig as_cfl(config::ExperimentConfig cfg, std::size_t n) {
  cfg.train.topology.reset();
  cfg.train.n = n;
  return cfg;
}

config::ExperimentConfig as_dfl(config::ExperimentConfig cfg, topology::Kind kind) {
  cfg.train.n.reset();
  cfg.train.topology = kind;
  return cfg;
}

}  // namespace

std::vector<CellResult> cmd_run(const config::ExperimentConfig& cfg,
                                const std::filesystem::path& out, std::size_t threads) {
  std::vector<CellResult> cells{run_cell(cfg, {threads, true})};
  const CellResult& cell = cells.front();
  std::vector<std::string> files;
  if (wants(cfg, "csv")) {
    for (const auto& t : cell.traces) {
      const std::string name = fmt::format("traces/trace_s{:03d}_p{:03d}.csv", t.seed_index,
                                           t.position_index);
      io::write_text(out / name, engine::trace_csv(t.trace));
      files.push_back(name);
    }
    io::write_text(out / "summary.csv", summary_csv(cell));
    io::write_text(out / "final_models.csv", final_models_csv(cell));
    files.insert(files.end(), {"summary.csv", "final_models.csv"});
    if (cell.traces.size() >= 10) {
      io::write_text(out / "curve.csv", io::long_csv(cell_rows(cell, "run")));
      files.push_back("curve.csv");
    }
  }
  if (wants(cfg, "json")) {
    io::write_text(out / "bound.json", cell_json(cell));
    files.push_back("bound.json");
  }
  write_manifest(out, "run", cfg, cells, files);
  return cells;
}

std::vector<CellResult> cmd_sweep_participation(const config::ExperimentConfig& cfg,
                                                const std::vector<std::size_t>& n_list,
                                                const std::filesystem::path& out,
                                                std::size_t threads) {
  if (n_list.empty()) throw ValidationError("n_list is empty");
  for (std::size_t n : n_list) {
    if (n < 1 || n > cfg.data.clients) {
      throw ValidationError(fmt::format("n = {} outside [1, {}]", n, cfg.data.clients));
    }
  }
  require_curve_size(cfg);
  std::vector<CellResult> cells;
  std::vector<io::LongRow> rows;
  for (std::size_t n : n_list) {
    cells.push_back(run_cell(as_cfl(cfg, n), {threads, false}));
    auto r = cell_rows(cells.back(), "participation");
    rows.insert(rows.end(), r.begin(), r.end());
  }
  io::write_text(out / "sweep_participation.csv", io::long_csv(rows));
  write_manifest(out, "sweep-participation", cfg, cells, {"sweep_participation.csv"});
  return cells;
}

std::vector<CellResult> cmd_sweep_topology(const config::ExperimentConfig& cfg,
                                           const std::vector<topology::Kind>& kinds,
                                           const std::filesystem::path& out,
                                           std::size_t threads) {
  if (kinds.empty()) throw ValidationError("kinds is empty");
  for (auto k : kinds) topology::build(k, cfg.data.clients);
  require_curve_size(cfg);
  std::vector<CellResult> cells;
  std::vector<io::LongRow> rows;
  for (auto k : kinds) {
    cells.push_back(run_cell(as_dfl(cfg, k), {threads, false}));
    auto r = cell_rows(cells.back(), "topology");
    rows.insert(rows.end(), r.begin(), r.end());
  }
  io::write_text(out / "sweep_topology.csv", io::long_csv(rows));
  write_manifest(out, "sweep-topology", cfg, cells, {"sweep_topology.csv"});
  return cells;
}

std::vector<CellResult> cmd_collapse(const config::ExperimentConfig& cfg,
                                     const std::vector<topology::Kind>& kinds,
                                     const std::vector<std::size_t>& m_list, std::size_t fixed_S,
                                     const std::filesystem::path& out, std::size_t threads) {
  if (kinds.empty()) throw ValidationError("kinds is empty");
  if (m_list.empty()) throw ValidationError("m_list is empty");
  if (fixed_S < 1) throw ValidationError("fixed_S must be >= 1");
  for (auto k : kinds) {
    for (std::size_t m : m_list) topology::build(k, m);
  }
  require_curve_size(cfg);
  std::vector<CellResult> cells;
  std::vector<io::LongRow> rows;
  std::string trends = "topology,metric,statistic,values,trend\n";
  for (auto k : kinds) {
    std::vector<double> gap, proxy, delta;
    for (std::size_t m : m_list) {
      config::ExperimentConfig c = as_dfl(cfg, k);
      c.data.clients = m;
      c.data.total = m * fixed_S;
      cells.push_back(run_cell(c, {threads, false}));
      const CellResult& cell = cells.back();
      auto r = cell_rows(cell, "collapse");
      const auto check = stability::collapse_check(cell.spectrum->kappa_lambda, m);
      r.push_back(io::scalar_row(factors(cell, "collapse"), "collapse_threshold", check.threshold));
      r.push_back(io::scalar_row(factors(cell, "collapse"), "collapse_pass", check.passes ? 1.0 : 0.0));
      rows.insert(rows.end(), r.begin(), r.end());
      gap.push_back(stability::median(cell.loss_gaps()));
      proxy.push_back(stability::median(cell.lipschitz_proxies()));
      std::vector<double> d;
      for (const auto& t : cell.traces) d.push_back(t.final_delta_over_m);
      delta.push_back(stability::median(d));
    }
    for (auto [metric, values] : {std::pair{"loss_gap", &gap}, {"lipschitz_proxy", &proxy},
                                  {"final_delta_over_m", &delta}}) {
      std::string joined;
      for (std::size_t i = 0; i < values->size(); ++i) {
        joined += (i ? ";" : "") + io::format_double((*values)[i]);
      }
      trends += fmt::format("{},{},median,{},{}\n", topology::to_string(k), metric, joined,
                            stability::to_string(stability::trend(*values)));
    }
  }
  io::write_text(out / "collapse.csv", io::long_csv(rows));
  io::write_text(out / "collapse_trends.csv", trends);
  write_manifest(out, "collapse", cfg, cells, {"collapse.csv", "collapse_trends.csv"});
  return cells;
}

}  // namespace fedstab::runner
