#pragma once

// Smooth per-sample objectives f(w, z) with hand-derived gradients, and
// estimators for the constants the stability bounds depend on.
//
// Three families:
//   quadratic  ridge least squares onto one-hot targets (exact curvature)
//   logistic   binary (C == 2, one weight vector) or multinomial softmax
//   mlp        one tanh hidden layer with softmax output (non-convex)
// Weight decay is part of the loss, so gradients are loss gradients.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedstab/data.hpp"
#include "fedstab/errors.hpp"
#include "fedstab/rng.hpp"

namespace fedstab::model {

using ParamVector = std::vector<double>;

enum class Family { quadratic, logistic, mlp };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

struct ModelConfig {
  Family family = Family::logistic;
  std::size_t dim = 0;
  std::size_t classes = 2;
  std::size_t hidden = 0;  // mlp only
  double weight_decay = 0.0;
  double init_scale = 0.01;
};

class Model {
 public:
  virtual ~Model() = default;

  const ModelConfig& config() const { return config_; }
  virtual std::size_t num_params() const = 0;

  double loss(std::span<const double> w, std::span<const double> x, int label) const;
  // Writes the gradient into `out` (overwritten) and returns the loss.
  double grad(std::span<const double> w, std::span<const double> x, int label,
              std::span<double> out) const;

  ParamVector initial_params(CounterStream& stream) const;

  // sup over the given samples of the per-sample smoothness constant, when
  // the family admits a closed form; nullopt otherwise (mlp).
  virtual std::optional<double> sample_smoothness(std::span<const double> x) const = 0;
  // lambda_max(X^T X) scale factor of the shard-averaged Hessian bound
  // (1 for quadratic, 1/4 binary logistic, 1/2 multinomial); nullopt for mlp.
  virtual std::optional<double> curvature_factor() const = 0;

 protected:
  explicit Model(ModelConfig config) : config_(config) {}

  virtual double loss_impl(std::span<const double> w, std::span<const double> x,
                           int label) const = 0;
  virtual double grad_impl(std::span<const double> w, std::span<const double> x,
                           int label, std::span<double> out) const = 0;
  virtual void init_impl(CounterStream& stream, std::span<double> w) const;

 private:
  void check(std::span<const double> w, std::span<const double> x, int label) const;

  ModelConfig config_;
};

std::shared_ptr<const Model> make_model(const ModelConfig& config);

// Mean per-sample loss over a dataset.
double mean_loss(const Model& model, std::span<const double> w, const data::Dataset& d);

// Full-batch gradient of the shard objective: mean of per-sample gradients,
// accumulated in sample order.
ParamVector shard_gradient(const Model& model, std::span<const double> w,
                           const data::Dataset& d);

struct AssumptionConstants {
  double L = 0.0;        // per-sample smoothness
  double L_shard = 0.0;  // smoothness of the shard-averaged objectives
  double sigma_l = 0.0;  // max per-sample gradient deviation from the shard mean
  double G = 0.0;        // loss Lipschitz ratio near the anchor
  double U = 0.0;        // largest loss seen near the anchor
  double mu = 0.0;       // step-size scale, 1 / L
  std::size_t probes_used = 0;
};

struct EstimateOptions {
  std::size_t probe_count = 100;
  // Probes are drawn in a ball of this radius around the anchor.
  double radius = 0.5;
  std::uint64_t seed = 0;
  // Extra samples (e.g. held-out probes) to include in the G and U maxima.
  const data::Dataset* extra_samples = nullptr;
};

// L is exact for quadratic and logistic (largest per-sample curvature over
// the federation, plus weight decay); for mlp it is the largest observed
// gradient-difference ratio over probe pairs. sigma_l, G and U are empirical
// maxima over probe points around `anchor` (typically a trained model).
AssumptionConstants estimate_constants(const Model& model, const data::Federation& fed,
                                       std::span<const double> anchor,
                                       const EstimateOptions& options);

}  // namespace fedstab::model
