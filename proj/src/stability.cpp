#include "fedstab/stability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fedstab/kernels.hpp"
#include "fedstab/rng.hpp"
#include "fedstab/topology.hpp"

namespace fedstab::stability {

GenGap empirical_gen_gap(std::span<const double> w, std::span<const double> w_tilde,
                         const model::Model& model, const data::Dataset& probes,
                         std::optional<double> G_est) {
  if (probes.size() == 0) throw ValidationError("probe set is empty");
  if (w.size() != w_tilde.size()) throw ValidationError("final models have different sizes");
  GenGap out;
  for (std::size_t j = 0; j < probes.size(); ++j) {
    const double a = model.loss(w, probes.features(j), probes.label(j));
    const double b = model.loss(w_tilde, probes.features(j), probes.label(j));
    out.loss_gap = std::max(out.loss_gap, std::abs(a - b));
  }
  out.param_distance = std::sqrt(simd::squared_distance(w, w_tilde));
  if (G_est) out.lipschitz_proxy = *G_est * out.param_distance;
  return out;
}

namespace {

void check_inputs(const model::AssumptionConstants& c, std::size_t S, std::size_t T,
                  std::size_t K) {
  for (auto [name, v] : {std::pair{"L", c.L}, {"sigma_l", c.sigma_l}, {"G", c.G}, {"U", c.U},
                         {"mu", c.mu}}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError(fmt::format("{} must be positive and finite, got {}", name, v));
    }
  }
  if (c.mu * c.L > 1.0 + 1e-12) {
    throw ValidationError(fmt::format("mu * L must be <= 1, got {}", c.mu * c.L));
  }
  if (S < 1 || T < 1 || K < 1) throw ValidationError("S, T and K must be >= 1");
}

// Bound of the form A * (TK / tau0)^a + B * tau0 with the balancing choice
// tau0 = (A' / B)^{1/(1+a)} (TK)^{a/(1+a)}, where A = A' (TK)^a.
void settle(BoundReport& r, double a_coeff, double b_coeff, double closed_form) {
  const double a = r.muL;
  const double tk = static_cast<double>(r.T * r.K);
  r.tau0_raw = std::pow(a_coeff / b_coeff, 1.0 / (1.0 + a)) * std::pow(tk, a / (1.0 + a));
  r.tau0 = std::clamp(r.tau0_raw, 1.0, tk);
  r.clamped = r.tau0 != r.tau0_raw;
  r.epsilon = r.clamped ? a_coeff * std::pow(tk / r.tau0, a) + b_coeff * r.tau0 : closed_form;
}

}  // namespace

BoundReport bound_theorem1(const model::AssumptionConstants& c, std::size_t m, std::size_t n,
                           std::size_t S, std::size_t T, std::size_t K) {
  check_inputs(c, S, T, K);
  if (n < 1 || n > m) throw ValidationError(fmt::format("n must lie in [1, {}], got {}", m, n));
  BoundReport r;
  r.theorem = "theorem1";
  r.muL = std::min(c.mu * c.L, 1.0);
  r.constants = c;
  r.m = m;
  r.n = n;
  r.S = S;
  r.T = T;
  r.K = K;
  const double a = r.muL, md = static_cast<double>(m), nd = static_cast<double>(n),
               sd = static_cast<double>(S), tk = static_cast<double>(T * K);
  const double closed = 4.0 / sd * std::pow(c.sigma_l * c.G / c.L, 1.0 / (1.0 + a)) *
                        std::pow(nd, a / (1.0 + a)) / md *
                        std::pow(c.U * tk, a / (1.0 + a));
  settle(r, 2.0 * c.sigma_l * c.G / (md * sd * c.L), nd * c.U / (md * sd), closed);
  return r;
}

BoundReport bound_theorem2(const model::AssumptionConstants& c, std::size_t m, double kappa,
                           std::size_t S, std::size_t T, std::size_t K) {
  check_inputs(c, S, T, K);
  if (m < 1) throw ValidationError("m must be >= 1");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw ValidationError(fmt::format("kappa must be finite and >= 0, got {}", kappa));
  }
  BoundReport r;
  r.theorem = "theorem2";
  r.muL = std::min(c.mu * c.L, 1.0);
  r.constants = c;
  r.m = m;
  r.n = m;
  r.kappa = kappa;
  r.S = S;
  r.T = T;
  r.K = K;
  const double a = r.muL, md = static_cast<double>(m), sd = static_cast<double>(S),
               tk = static_cast<double>(T * K);
  const double ratio = (1.0 + 6.0 * std::sqrt(md) * kappa) / md;
  const double closed = 4.0 / sd * std::pow(c.sigma_l * c.G / c.L, 1.0 / (1.0 + a)) *
                        std::pow(ratio, 1.0 / (1.0 + a)) * std::pow(c.U * tk, a / (1.0 + a));
  settle(r, 2.0 * c.sigma_l * c.G / (sd * c.L) * ratio, c.U / sd, closed);
  return r;
}

double optimal_participation(std::size_t m, double muL) {
  const double e = (1.0 + muL) / (1.0 + 2.0 * muL);
  return std::pow(static_cast<double>(m), e);
}

double collapse_threshold(std::size_t m) { return topology::collapse_threshold(m); }

CollapseCheck collapse_check(double kappa, std::size_t m) {
  CollapseCheck out;
  out.kappa = kappa;
  out.threshold = collapse_threshold(m);
  out.passes = kappa <= out.threshold;
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double mean(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("mean of an empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

namespace {

CurvePoint summarize(const std::string& group, const std::string& metric,
                     const std::vector<double>& values, const CurveOptions& options,
                     std::uint32_t stream_id) {
  CurvePoint p;
  p.group = group;
  p.metric = metric;
  p.count = values.size();
  p.mean = mean(values);
  p.median = median(values);
  p.q05 = quantile(values, 0.05);
  p.q95 = quantile(values, 0.95);
  CounterStream stream(options.seed, Purpose::bootstrap, stream_id);
  std::vector<double> means(options.bootstrap_resamples);
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) sum += values[stream.uniform_index(values.size())];
    m = sum / static_cast<double>(values.size());
  }
  if (means.empty()) {
    p.boot_lo = p.boot_hi = p.mean;
  } else {
    p.boot_lo = quantile(means, 0.025);
    p.boot_hi = quantile(means, 0.975);
  }
  return p;
}

}  // namespace

std::vector<CurvePoint> stability_curve(const std::vector<TraceSummary>& traces,
                                        const CurveOptions& options) {
  std::vector<std::string> order;
  for (const auto& t : traces) {
    if (std::find(order.begin(), order.end(), t.group) == order.end()) order.push_back(t.group);
  }
  if (order.empty()) {
    throw ValidationError(fmt::format("need at least {} traces, got 0", options.min_traces));
  }
  std::vector<CurvePoint> out;
  std::uint32_t stream_id = 0;
  for (const auto& g : order) {
    std::vector<double> delta, gap, proxy;
    for (const auto& t : traces) {
      if (t.group != g) continue;
      delta.push_back(t.final_delta_over_m);
      gap.push_back(t.loss_gap);
      proxy.push_back(t.lipschitz_proxy);
    }
    if (delta.size() < options.min_traces) {
      throw ValidationError(fmt::format("group '{}' has {} traces, need at least {}", g,
                                        delta.size(), options.min_traces));
    }
    out.push_back(summarize(g, "final_delta_over_m", delta, options, stream_id++));
    out.push_back(summarize(g, "loss_gap", gap, options, stream_id++));
    out.push_back(summarize(g, "lipschitz_proxy", proxy, options, stream_id++));
  }
  return out;
}

std::string_view to_string(Trend trend) {
  switch (trend) {
    case Trend::increasing: return "increasing";
    case Trend::decreasing: return "decreasing";
    case Trend::mixed: return "mixed";
    case Trend::undefined: return "undefined";
  }
  return "undefined";
}

Trend trend(const std::vector<double>& values) {
  if (values.size() < 2) return Trend::undefined;
  bool up = true, down = true;
  for (std::size_t i = 1; i < values.size(); ++i) {
    up = up && values[i] > values[i - 1];
    down = down && values[i] < values[i - 1];
  }
  return up ? Trend::increasing : down ? Trend::decreasing : Trend::mixed;
}

}  // namespace fedstab::stability
