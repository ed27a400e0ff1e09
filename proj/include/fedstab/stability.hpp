#pragma once

// Empirical stability estimates from coupled runs and the closed-form
// generalization bounds they are compared against.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedstab/data.hpp"
#include "fedstab/model.hpp"

namespace fedstab::stability {

using model::ParamVector;

struct GenGap {
  double loss_gap = 0.0;        // max over probes of |f(w, z) - f(w~, z)|
  double param_distance = 0.0;  // ||w - w~||
  std::optional<double> lipschitz_proxy;  // G_est * ||w - w~||, if G_est given
};

GenGap empirical_gen_gap(std::span<const double> w, std::span<const double> w_tilde,
                         const model::Model& model, const data::Dataset& probes,
                         std::optional<double> G_est = std::nullopt);

struct BoundReport {
  std::string theorem;  // "theorem1" or "theorem2"
  double epsilon = 0.0;
  double tau0_raw = 0.0;  // unclamped optimizer
  double tau0 = 0.0;      // clamped to [1, TK]
  bool clamped = false;
  double muL = 0.0;
  model::AssumptionConstants constants;
  std::size_t m = 0;
  std::size_t n = 0;       // theorem1
  double kappa = 0.0;      // theorem2
  std::size_t S = 0;
  std::size_t T = 0;
  std::size_t K = 0;
  std::optional<double> empirical_gap;
};

// FedAvg with n of m clients active. When tau0 stays inside [1, TK] the
// closed form is returned; otherwise the two-term bound is evaluated at the
// clamped tau0.
BoundReport bound_theorem1(const model::AssumptionConstants& c, std::size_t m, std::size_t n,
                           std::size_t S, std::size_t T, std::size_t K);

// D-FedAvg on a topology with coefficient kappa.
BoundReport bound_theorem2(const model::AssumptionConstants& c, std::size_t m, double kappa,
                           std::size_t S, std::size_t T, std::size_t K);

// m^{(1 + muL) / (1 + 2 muL)}.
double optimal_participation(std::size_t m, double muL);

double collapse_threshold(std::size_t m);

struct CollapseCheck {
  double kappa = 0.0;
  double threshold = 0.0;
  bool passes = false;  // kappa <= sqrt(m)
};

CollapseCheck collapse_check(double kappa, std::size_t m);

// Linear-interpolation quantile of unsorted values, q in [0, 1].
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);
double mean(const std::vector<double>& values);

// Per-trace outcome of one coupled run, labelled with its experimental cell.
struct TraceSummary {
  std::string group;
  double final_delta_over_m = 0.0;
  double loss_gap = 0.0;
  double lipschitz_proxy = 0.0;
};

struct CurvePoint {
  std::string group;
  std::string metric;  // final_delta_over_m, loss_gap or lipschitz_proxy
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  // Percentile bootstrap 95% interval of the mean.
  double boot_lo = 0.0;
  double boot_hi = 0.0;
};

struct CurveOptions {
  std::size_t min_traces = 10;
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t seed = 0;
};

// Groups appear in first-seen order, metrics in the order listed above.
// Throws ValidationError if any group has fewer than min_traces traces.
std::vector<CurvePoint> stability_curve(const std::vector<TraceSummary>& traces,
                                        const CurveOptions& options = {});

enum class Trend { increasing, decreasing, mixed, undefined };

std::string_view to_string(Trend trend);
// Strict monotonicity of a sequence; fewer than two values is undefined.
Trend trend(const std::vector<double>& values);

}  // namespace fedstab::stability
