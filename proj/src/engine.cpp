#include "fedstab/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fedstab/kernels.hpp"

namespace fedstab::engine {

std::string_view to_string(Schedule schedule) {
  return schedule == Schedule::constant ? "constant" : "inverse_iteration";
}

Schedule parse_schedule(std::string_view name) {
  if (name == "inverse_iteration") return Schedule::inverse_iteration;
  if (name == "constant") return Schedule::constant;
  throw ValidationError(fmt::format("unknown schedule '{}'", name));
}

std::string_view to_string(Algorithm algorithm) {
  return algorithm == Algorithm::cfl ? "cfl" : "dfl";
}

void validate(const TrainConfig& cfg, std::size_t m, Algorithm algorithm) {
  if (cfg.T < 1) throw ValidationError("T must be >= 1");
  if (cfg.K < 1) throw ValidationError("K must be >= 1");
  if (cfg.batch < 1) throw ValidationError("batch must be >= 1");
  if (!(cfg.mu >= 0.0) || !std::isfinite(cfg.mu)) {
    throw ValidationError(fmt::format("mu must be finite and >= 0, got {}", cfg.mu));
  }
  if (algorithm == Algorithm::cfl && (cfg.n < 1 || cfg.n > m)) {
    throw ValidationError(fmt::format("n must lie in [1, {}], got {}", m, cfg.n));
  }
}

double step_size(const TrainConfig& cfg, std::size_t t, std::size_t k) {
  if (cfg.schedule == Schedule::constant) return cfg.mu;
  return cfg.mu / static_cast<double>(t * cfg.K + k + 1);
}

std::vector<std::size_t> active_clients(std::uint64_t seed, std::size_t t, std::size_t m,
                                        std::size_t n) {
  CounterStream stream(seed, Purpose::client_selection, static_cast<std::uint32_t>(t));
  return sample_without_replacement(stream, m, n);
}

std::vector<std::uint32_t> round_minibatches(std::uint64_t seed, std::size_t t,
                                             std::size_t client, std::size_t K,
                                             std::size_t batch, std::size_t S) {
  CounterStream stream(seed, Purpose::minibatch, static_cast<std::uint32_t>(t),
                       static_cast<std::uint32_t>(client));
  std::vector<std::uint32_t> out(K * batch);
  for (auto& idx : out) idx = static_cast<std::uint32_t>(stream.uniform_index(S));
  return out;
}

Simulator::Simulator(const data::Federation& fed, const model::Model& model,
                     const TrainConfig& cfg, const topology::MixingMatrix* mixing)
    : fed_(fed), model_(model), cfg_(cfg), mixing_(mixing) {
  const std::size_t m = fed.clients();
  if (m == 0) throw ValidationError("federation has no clients");
  validate(cfg, m, mixing ? Algorithm::dfl : Algorithm::cfl);
  if (mixing && mixing->size() != m) {
    throw ValidationError(fmt::format("mixing matrix is {}x{} but the federation has {} clients",
                                      mixing->size(), mixing->size(), m));
  }
  if (fed.dim != model.config().dim) {
    throw ValidationError(fmt::format("federation dimension {} does not match model dimension {}",
                                      fed.dim, model.config().dim));
  }
  CounterStream init(cfg.master_seed, Purpose::init);
  trace_.initial_model = model.initial_params(init);
  clients_.assign(m, trace_.initial_model);
  active_mask_.assign(m, false);
  batches_.resize(m);
  all_clients_.resize(m);
  std::iota(all_clients_.begin(), all_clients_.end(), std::size_t{0});
  grad_.resize(model.num_params());
}

ParamVector Simulator::aggregate(std::span<const std::size_t> members, double weight) const {
  ParamVector acc(model_.num_params(), 0.0);
  for (std::size_t j : members) simd::axpy(weight, clients_[j], acc);
  return acc;
}

ParamVector Simulator::average() const {
  return aggregate(all_clients_, 1.0 / static_cast<double>(clients_.size()));
}

ParamVector Simulator::round_model() const {
  if (mixing_) return average();
  return aggregate(active_, 1.0 / static_cast<double>(active_.size()));
}

void Simulator::begin_round(std::size_t t) {
  const std::size_t m = clients_.size();
  if (t > 0) {
    if (mixing_) {
      std::vector<ParamVector> mixed(m, ParamVector(model_.num_params(), 0.0));
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j : mixing_->neighbors(i)) simd::axpy((*mixing_)(i, j), clients_[j], mixed[i]);
      }
      clients_ = std::move(mixed);
    } else {
      const ParamVector global = round_model();
      for (auto& c : clients_) c = global;
    }
  }
  active_ = mixing_ ? all_clients_ : active_clients(cfg_.master_seed, t, m, cfg_.n);
  std::fill(active_mask_.begin(), active_mask_.end(), false);
  for (std::size_t i : active_) {
    active_mask_[i] = true;
    batches_[i] = round_minibatches(cfg_.master_seed, t, i, cfg_.K, cfg_.batch,
                                    fed_.shard(i).size());
  }
}

std::span<const std::uint32_t> Simulator::batch(std::size_t i, std::size_t k) const {
  return std::span<const std::uint32_t>(batches_[i]).subspan(k * cfg_.batch, cfg_.batch);
}

double Simulator::batch_gradient(std::size_t i, std::size_t k, std::span<const double> w,
                                 std::span<double> out) const {
  const data::Dataset& shard = fed_.shard(i);
  const auto idx = batch(i, k);
  if (idx.size() == 1) return model_.grad(w, shard.features(idx[0]), shard.label(idx[0]), out);
  std::fill(out.begin(), out.end(), 0.0);
  ParamVector g(out.size());
  double worst = 0.0;
  for (std::uint32_t j : idx) {
    worst = std::max(worst, model_.grad(w, shard.features(j), shard.label(j), g));
    simd::axpy(1.0, g, out);
  }
  simd::scale(1.0 / static_cast<double>(idx.size()), out);
  return worst;
}

void Simulator::snapshot(std::size_t t, std::size_t k) {
  const std::size_t step = t * cfg_.K + k;
  if (cfg_.snapshot_every == 0 || step % cfg_.snapshot_every != 0) return;
  trace_.snapshots.push_back(Snapshot{t, k, step, clients_});
}

void Simulator::local_step(std::size_t t, std::size_t k) {
  snapshot(t, k);
  const double eta = step_size(cfg_, t, k);
  for (std::size_t i : active_) {
    const double worst = batch_gradient(i, k, clients_[i], grad_);
    trace_.max_sample_loss = std::max(trace_.max_sample_loss, worst);
    simd::axpy(-eta, grad_, clients_[i]);
    if (!std::all_of(clients_[i].begin(), clients_[i].end(), [](double v) { return std::isfinite(v); })) {
      throw DivergenceError(fmt::format(
          "non-finite parameter on client {} at round {} step {} (eta = {:.6g})", i, t, k, eta));
    }
  }
}

void Simulator::end_round(std::size_t) {
  if (!cfg_.record_losses) return;
  const ParamVector w = round_model();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < fed_.clients(); ++i) {
    total += model::mean_loss(model_, w, fed_.shard(i)) * static_cast<double>(fed_.shard(i).size());
    count += fed_.shard(i).size();
  }
  trace_.round_loss.push_back(total / static_cast<double>(count));
}

void Simulator::finish() {
  trace_.final_model = round_model();
  if (cfg_.snapshot_every > 0 && (cfg_.T * cfg_.K) % cfg_.snapshot_every == 0) {
    trace_.snapshots.push_back(Snapshot{cfg_.T, 0, cfg_.T * cfg_.K, {trace_.final_model}});
  }
}

namespace {

RunTrace run(const data::Federation& fed, const model::Model& model,
             const topology::MixingMatrix* mixing, const TrainConfig& cfg) {
  Simulator sim(fed, model, cfg, mixing);
  for (std::size_t t = 0; t < cfg.T; ++t) {
    sim.begin_round(t);
    for (std::size_t k = 0; k < cfg.K; ++k) sim.local_step(t, k);
    sim.end_round(t);
  }
  sim.finish();
  return std::move(sim.trace());
}

double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(simd::squared_distance(a, b));
}

double delta(const Simulator& a, const Simulator& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.clients(); ++i) sum += distance(a.client(i), b.client(i));
  return sum;
}

}  // namespace

RunTrace run_cfl(const data::Federation& fed, const model::Model& model, const TrainConfig& cfg) {
  return run(fed, model, nullptr, cfg);
}

RunTrace run_dfl(const data::Federation& fed, const model::Model& model,
                 const topology::MixingMatrix& mixing, const TrainConfig& cfg) {
  return run(fed, model, &mixing, cfg);
}

CoupledResult run_coupled(const data::Federation& fed, const data::NeighborFederation& neighbor,
                          const model::Model& model, const TrainConfig& cfg,
                          const CoupledOptions& options) {
  const data::Federation& twin = neighbor.federation;
  const data::Perturbation& p = neighbor.perturbation;
  if (twin.clients() != fed.clients() || twin.dim != fed.dim) {
    throw ValidationError("neighbor federation does not match the original");
  }
  for (std::size_t i = 0; i < fed.clients(); ++i) {
    if (fed.shard(i).size() != twin.shard(i).size()) {
      throw ValidationError(fmt::format("shard {} sizes differ between the federations", i));
    }
    if (i != p.client && fed.shards[i] != twin.shards[i] && !(fed.shard(i) == twin.shard(i))) {
      throw ValidationError(fmt::format("federations differ on client {} outside the perturbation", i));
    }
  }
  const topology::MixingMatrix* mixing = nullptr;
  if (options.algorithm == Algorithm::dfl) {
    if (!options.mixing) throw ValidationError("dfl coupled run needs a mixing matrix");
    mixing = options.mixing;
  }

  Simulator a(fed, model, cfg, mixing);
  Simulator b(twin, model, cfg, mixing);
  CoupledTrace out;
  const std::size_t m = fed.clients();
  ParamVector g_c(model.num_params()), g_t(model.num_params());
  std::vector<double> before(m, 0.0);

  for (std::size_t t = 0; t < cfg.T; ++t) {
    a.begin_round(t);
    b.begin_round(t);
    out.delta.push_back(DeltaRecord{t, 0, t * cfg.K, delta(a, b)});
    for (std::size_t k = 0; k < cfg.K; ++k) {
      const std::size_t tau = t * cfg.K + k + 1;
      bool differing = false;
      if (a.is_active(p.client)) {
        const auto idx = a.batch(p.client, k);
        differing = std::find(idx.begin(), idx.end(), p.sample) != idx.end();
      }
      if (differing && !out.tau_hat) out.tau_hat = tau;
      double sigma_step = 0.0;
      if (differing) {
        a.batch_gradient(p.client, k, b.client(p.client), g_c);
        b.batch_gradient(p.client, k, b.client(p.client), g_t);
        sigma_step = 0.5 * distance(g_c, g_t);
        out.sigma_hat = std::max(out.sigma_hat, sigma_step);
      }
      if (options.record_steps) {
        for (std::size_t i : a.active()) before[i] = distance(a.client(i), b.client(i));
      }
      a.local_step(t, k);
      b.local_step(t, k);
      if (options.record_steps) {
        const double eta = step_size(cfg, t, k);
        for (std::size_t i : a.active()) {
          const bool here = differing && i == p.client;
          out.steps.push_back(StepRecord{t, k, i, here, eta, before[i],
                                         distance(a.client(i), b.client(i)),
                                         here ? sigma_step : 0.0});
        }
      }
      out.delta.push_back(DeltaRecord{t, k + 1, tau, delta(a, b)});
    }
    a.end_round(t);
    b.end_round(t);
    if (cfg.record_losses) {
      out.delta.back().loss_C = a.trace().round_loss.back();
      out.delta.back().loss_Ctilde = b.trace().round_loss.back();
    }
  }
  a.finish();
  b.finish();
  out.final_C = a.trace().final_model;
  out.final_Ctilde = b.trace().final_model;
  out.max_sample_loss = std::max(a.trace().max_sample_loss, b.trace().max_sample_loss);
  return CoupledResult{std::move(a.trace()), std::move(b.trace()), std::move(out)};
}

std::optional<std::size_t> first_touch(const TrainConfig& cfg, std::size_t m, std::size_t S,
                                       Algorithm algorithm, const data::Perturbation& p) {
  validate(cfg, m, algorithm);
  for (std::size_t t = 0; t < cfg.T; ++t) {
    if (algorithm == Algorithm::cfl) {
      const auto active = active_clients(cfg.master_seed, t, m, cfg.n);
      if (!std::binary_search(active.begin(), active.end(), p.client)) continue;
    }
    const auto idx = round_minibatches(cfg.master_seed, t, p.client, cfg.K, cfg.batch, S);
    for (std::size_t k = 0; k < cfg.K; ++k) {
      const auto first = idx.begin() + static_cast<std::ptrdiff_t>(k * cfg.batch);
      if (std::find(first, first + static_cast<std::ptrdiff_t>(cfg.batch), p.sample) !=
          first + static_cast<std::ptrdiff_t>(cfg.batch)) {
        return t * cfg.K + k + 1;
      }
    }
  }
  return std::nullopt;
}

bool LemmaReport::all_hold() const {
  return same_sample_violations == 0 && differing_violations == 0 &&
         aggregation_violations == 0 && zero_before_tau_hat_violations == 0 &&
         final_distance_holds;
}

LemmaReport check_lemmas(const CoupledTrace& trace, double L, std::size_t m, double tolerance) {
  LemmaReport r;
  for (const auto& s : trace.steps) {
    const double grown = (1.0 + s.eta * L) * s.before;
    if (s.differing) {
      ++r.differing_steps;
      if (s.after > grown + 2.0 * s.eta * trace.sigma_hat + tolerance) ++r.differing_violations;
    } else {
      ++r.same_sample_steps;
      if (s.after > grown + tolerance) ++r.same_sample_violations;
    }
  }
  for (std::size_t i = 1; i < trace.delta.size(); ++i) {
    const auto& prev = trace.delta[i - 1];
    const auto& cur = trace.delta[i];
    if (cur.k == 0 && cur.t == prev.t + 1) {
      ++r.round_boundaries;
      if (cur.delta > prev.delta + tolerance) ++r.aggregation_violations;
    }
  }
  for (const auto& d : trace.delta) {
    if ((!trace.tau_hat || d.tau < *trace.tau_hat) && d.delta != 0.0) {
      ++r.zero_before_tau_hat_violations;
    }
  }
  r.final_distance = std::sqrt(simd::squared_distance(trace.final_C, trace.final_Ctilde));
  r.final_delta_over_m = trace.delta.empty() ? 0.0 : trace.delta.back().delta / static_cast<double>(m);
  r.final_distance_holds = r.final_distance <= r.final_delta_over_m + tolerance;
  return r;
}

std::string trace_csv(const CoupledTrace& trace) {
  std::string out = "t,k,tau,delta,mean_loss_C,mean_loss_Ctilde\n";
  for (const auto& d : trace.delta) {
    out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g}\n", d.t, d.k, d.tau, d.delta, d.loss_C,
                       d.loss_Ctilde);
  }
  return out;
}

}  // namespace fedstab::engine
