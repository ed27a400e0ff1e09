#pragma once

// FedAvg (server selects n of m clients per round) and D-FedAvg (every client
// trains, then gossips through a mixing matrix), plus coupled twin runs on
// neighboring federations that share every random draw.
//
// Iterations are indexed by round t in [0, T) and local step k in [0, K).
// Step (t, k) is global iteration tau = tK + k + 1 and uses eta = mu / tau
// under the inverse schedule.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedstab/data.hpp"
#include "fedstab/model.hpp"
#include "fedstab/topology.hpp"

namespace fedstab::engine {

using model::ParamVector;

enum class Schedule { inverse_iteration, constant };
enum class Algorithm { cfl, dfl };

std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view name);
std::string_view to_string(Algorithm algorithm);

struct TrainConfig {
  std::size_t T = 1;
  std::size_t K = 1;
  std::size_t n = 1;  // active clients per round, CFL only
  std::size_t batch = 1;
  double mu = 0.0;
  Schedule schedule = Schedule::inverse_iteration;
  std::uint64_t master_seed = 0;
  // Keep every snapshot_every-th client snapshot (0 keeps none).
  std::size_t snapshot_every = 0;
  // Evaluate the averaged model's training loss at the end of each round.
  bool record_losses = false;
};

// Throws ValidationError for out-of-range fields.
void validate(const TrainConfig& cfg, std::size_t m, Algorithm algorithm);

double step_size(const TrainConfig& cfg, std::size_t t, std::size_t k);

// Client-selection outcome of round t, ascending.
std::vector<std::size_t> active_clients(std::uint64_t seed, std::size_t t, std::size_t m,
                                        std::size_t n);

// Sample indices used by `client` in round t: K * batch draws with
// replacement, step k reads entries [k * batch, (k + 1) * batch).
std::vector<std::uint32_t> round_minibatches(std::uint64_t seed, std::size_t t,
                                             std::size_t client, std::size_t K,
                                             std::size_t batch, std::size_t S);

// Client models before step k of round t. The final snapshot (step == TK)
// holds the single reported model.
struct Snapshot {
  std::size_t t = 0;
  std::size_t k = 0;
  std::size_t step = 0;
  std::vector<ParamVector> clients;
};

struct RunTrace {
  std::vector<Snapshot> snapshots;
  ParamVector initial_model;
  ParamVector final_model;
  // Mean training loss of the averaged model after each round (if recorded).
  std::vector<double> round_loss;
  // Largest per-sample loss evaluated by any SGD step.
  double max_sample_loss = 0.0;
};

// One arm of a run. Drive it with begin_round / local_step / finish, or use
// run_cfl / run_dfl.
class Simulator {
 public:
  // `mixing` selects D-FedAvg; nullptr selects FedAvg.
  Simulator(const data::Federation& fed, const model::Model& model, const TrainConfig& cfg,
            const topology::MixingMatrix* mixing);

  // Communication: broadcast of the aggregate (FedAvg) or one gossip step
  // (D-FedAvg; skipped at t = 0 where all clients hold w^0). Then fixes the
  // round's active set.
  void begin_round(std::size_t t);
  // One SGD step on every active client.
  void local_step(std::size_t t, std::size_t k);
  // Records the round's loss (if enabled) after the K local steps.
  void end_round(std::size_t t);
  // Aggregates the last round into the reported model.
  void finish();

  const std::vector<std::size_t>& active() const { return active_; }
  bool is_active(std::size_t i) const { return active_mask_[i]; }
  std::span<const double> client(std::size_t i) const { return clients_[i]; }
  std::size_t clients() const { return clients_.size(); }
  // Sample indices client i uses at step k of the current round.
  std::span<const std::uint32_t> batch(std::size_t i, std::size_t k) const;
  // Gradient of the step-k minibatch of client i evaluated at `w`; returns
  // the largest per-sample loss in the batch.
  double batch_gradient(std::size_t i, std::size_t k, std::span<const double> w,
                        std::span<double> out) const;
  // Uniform average of all client models, ascending accumulation.
  ParamVector average() const;
  // Model the round reports: the aggregate of the active clients (FedAvg)
  // or the uniform average (D-FedAvg).
  ParamVector round_model() const;

  RunTrace& trace() { return trace_; }
  const RunTrace& trace() const { return trace_; }

 private:
  ParamVector aggregate(std::span<const std::size_t> members, double weight) const;
  void snapshot(std::size_t t, std::size_t k);

  const data::Federation& fed_;
  const model::Model& model_;
  TrainConfig cfg_;
  const topology::MixingMatrix* mixing_;
  std::vector<ParamVector> clients_;
  std::vector<std::size_t> active_;
  std::vector<bool> active_mask_;
  std::vector<std::vector<std::uint32_t>> batches_;
  std::vector<std::size_t> all_clients_;
  ParamVector grad_;
  RunTrace trace_;
};

RunTrace run_cfl(const data::Federation& fed, const model::Model& model, const TrainConfig& cfg);
RunTrace run_dfl(const data::Federation& fed, const model::Model& model,
                 const topology::MixingMatrix& mixing, const TrainConfig& cfg);

struct DeltaRecord {
  std::size_t t = 0;
  std::size_t k = 0;  // 0 after communication, K at the end of the round
  std::size_t tau = 0;
  double delta = 0.0;
  double loss_C = std::numeric_limits<double>::quiet_NaN();
  double loss_Ctilde = std::numeric_limits<double>::quiet_NaN();
};

// One local step of one client in both arms.
struct StepRecord {
  std::size_t t = 0;
  std::size_t k = 0;
  std::size_t client = 0;
  bool differing = false;  // the minibatch contained the perturbed index
  double eta = 0.0;
  double before = 0.0;  // ||w_i - w~_i|| before the step
  double after = 0.0;
  // Half the gradient gap caused by the swapped sample at w~ (differing steps).
  double sigma_step = 0.0;
};

struct CoupledTrace {
  std::vector<DeltaRecord> delta;
  std::vector<StepRecord> steps;  // filled when requested
  std::optional<std::size_t> tau_hat;
  double sigma_hat = 0.0;  // max sigma_step over differing steps
  ParamVector final_C;
  ParamVector final_Ctilde;
  double max_sample_loss = 0.0;
};

struct CoupledOptions {
  Algorithm algorithm = Algorithm::cfl;
  const topology::MixingMatrix* mixing = nullptr;  // required for dfl
  bool record_steps = false;
};

struct CoupledResult {
  RunTrace run_C;
  RunTrace run_Ctilde;
  CoupledTrace coupled;
};

CoupledResult run_coupled(const data::Federation& fed, const data::NeighborFederation& neighbor,
                          const model::Model& model, const TrainConfig& cfg,
                          const CoupledOptions& options);

// First iteration tau at which an active client draws the perturbed index,
// replaying the selection and minibatch streams without training.
std::optional<std::size_t> first_touch(const TrainConfig& cfg, std::size_t m, std::size_t S,
                                       Algorithm algorithm, const data::Perturbation& p);

struct LemmaReport {
  std::size_t same_sample_steps = 0;
  std::size_t same_sample_violations = 0;
  std::size_t differing_steps = 0;
  std::size_t differing_violations = 0;
  std::size_t round_boundaries = 0;
  std::size_t aggregation_violations = 0;
  std::size_t zero_before_tau_hat_violations = 0;
  double final_distance = 0.0;       // ||w^T - w~^T||
  double final_delta_over_m = 0.0;   // Delta_K^{T-1} / m
  bool final_distance_holds = false;

  bool all_hold() const;
};

// Checks the per-step and per-round inequalities against smoothness L.
LemmaReport check_lemmas(const CoupledTrace& trace, double L, std::size_t m,
                         double tolerance = 1e-10);

// Columns t,k,tau,delta,mean_loss_C,mean_loss_Ctilde.
std::string trace_csv(const CoupledTrace& trace);

}  // namespace fedstab::engine
