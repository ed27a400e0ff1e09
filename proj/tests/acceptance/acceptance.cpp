// Acceptance checks. Each criterion prints its evidence indented, then one
// "criterion N: PASS|FAIL" line, and exits nonzero on FAIL.
//
//   acceptance --criterion 3
//   acceptance --criterion all

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <fmt/format.h>

#include "fedstab/config.hpp"
#include "fedstab/data.hpp"
#include "fedstab/engine.hpp"
#include "fedstab/model.hpp"
#include "fedstab/rng.hpp"
#include "fedstab/runner.hpp"
#include "fedstab/stability.hpp"
#include "fedstab/topology.hpp"

namespace {

using namespace fedstab;
using topology::Kind;

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

bool valid_size(Kind kind, std::size_t m) {
  if (m < topology::minimum_clients(kind)) return false;
  if (kind == Kind::grid) {
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
    return s * s == m;
  }
  if (kind == Kind::exp) return std::has_single_bit(m);
  return true;
}

// ---------------------------------------------------------------- 1

bool topology_suite() {
  std::size_t matrices = 0, failures = 0;
  double worst_sum = 0.0, worst_margin = -1.0;
  for (Kind kind : {Kind::ring, Kind::grid, Kind::star, Kind::exp, Kind::full}) {
    for (std::size_t m = 2; m <= 256; ++m) {
      if (!valid_size(kind, m)) continue;
      ++matrices;
      const auto a = topology::build(kind, m);
      const auto& w = a.weights();
      bool ok = (w.array() == w.transpose().array()).all();
      const double row = (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
      const double col = (w.colwise().sum().array() - 1.0).abs().maxCoeff();
      worst_sum = std::max({worst_sum, row, col});
      ok = ok && row <= 1e-12 && col <= 1e-12;
      const auto ev = topology::eigenvalues(a);
      ok = ok && ev.minCoeff() > -1.0 && ev.maxCoeff() <= 1.0 + 1e-12;
      const auto report = m <= 32 ? topology::contraction_check_direct(a, 50)
                                  : topology::contraction_check(a, 50);
      for (const auto& s : report.steps) {
        worst_margin = std::max(worst_margin, s.deviation_norm - s.lambda_power);
      }
      ok = ok && report.all_hold();
      if (!ok) {
        ++failures;
        fmt::print("  violation: {} m={}\n", topology::to_string(kind), m);
      }
    }
  }
  fmt::print("  {} matrices, worst |sum - 1| = {:.3e}, worst ||A^t - P|| - lambda^t = {:.3e}\n",
             matrices, worst_sum, worst_margin);
  return failures == 0;
}

// ---------------------------------------------------------------- 2

bool kappa_dominance() {
  std::size_t checks = 0, violations = 0;
  double tightest = 0.0;
  for (int li = 1; li <= 9; ++li) {
    for (int ai = 1; ai <= 9; ++ai) {
      const double l = li / 10.0, a = ai / 10.0, kappa = topology::kappa_lambda(l, a);
      for (int t = 1; t <= 200; ++t) {
        double sum = 0.0;
        for (int s = 0; s < t; ++s) sum += std::pow(l, t - s - 1) / std::pow(s + 1, a);
        const double rhs = kappa / std::pow(t, a);
        tightest = std::max(tightest, sum / rhs);
        ++checks;
        violations += sum > rhs;
      }
    }
  }
  fmt::print("  {} (lambda, alpha, t) points, {} violations, largest lhs/rhs = {:.4f}\n", checks,
             violations, tightest);
  return violations == 0;
}

// ---------------------------------------------------------------- shared setups

struct Task {
  data::LabeledPool pool;
  data::Federation fed;
  std::shared_ptr<const model::Model> model;
};

Task make_task(model::Family family, std::size_t d, std::size_t C, std::size_t m, std::size_t S,
               double beta, std::uint64_t seed, double wd) {
  Task t;
  t.pool = data::generate_synthetic(d, C, m * S, seed);
  t.fed = data::dirichlet_partition(t.pool, m, beta, seed);
  t.model = model::make_model({family, d, C, family == model::Family::mlp ? 8u : 0u, wd, 0.1});
  return t;
}

engine::TrainConfig train(std::size_t T, std::size_t K, std::size_t n, double mu, std::uint64_t seed) {
  engine::TrainConfig c;
  c.T = T;
  c.K = K;
  c.n = n;
  c.mu = mu;
  c.master_seed = seed;
  return c;
}

// ---------------------------------------------------------------- 3

bool coupled_exactness() {
  const std::size_t m = 8;
  const auto task = make_task(model::Family::logistic, 6, 4, m, 32, 0.3, 5, 1e-3);
  const auto ring = topology::build(Kind::ring, m);
  const auto full = topology::build(Kind::full, m);
  std::size_t zero_runs = 0, zero_failures = 0, equivalence_runs = 0, equivalence_failures = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto same = data::make_neighbor(task.fed, seed % m, (7 * seed) % 32, seed, true);
    for (auto algo : {engine::Algorithm::cfl, engine::Algorithm::dfl}) {
      for (std::size_t n : {3u, 8u}) {
        if (algo == engine::Algorithm::dfl && n != 8) continue;
        const auto r = engine::run_coupled(task.fed, same, *task.model, train(10, 4, n, 0.8, seed),
                                           {algo, &ring, false});
        ++zero_runs;
        const bool ok = std::all_of(r.coupled.delta.begin(), r.coupled.delta.end(),
                                    [](const auto& d) { return std::bit_cast<std::uint64_t>(d.delta) == 0; }) &&
                        same_bits(r.coupled.final_C, r.coupled.final_Ctilde);
        zero_failures += !ok;
      }
    }
    const auto cfg = train(10, 4, m, 0.8, seed);
    const auto cfl = engine::run_cfl(task.fed, *task.model, cfg);
    const auto dfl = engine::run_dfl(task.fed, *task.model, full, cfg);
    ++equivalence_runs;
    equivalence_failures += !same_bits(cfl.final_model, dfl.final_model);
  }
  fmt::print("  zero perturbation: {}/{} runs with Delta == +0.0 everywhere\n", zero_runs - zero_failures,
             zero_runs);
  fmt::print("  CFL n=m vs DFL full: {}/{} final models bitwise equal\n",
             equivalence_runs - equivalence_failures, equivalence_runs);
  return zero_failures == 0 && equivalence_failures == 0;
}

// ---------------------------------------------------------------- 4

bool lemma_checks() {
  const std::size_t m = 8, S = 32;
  const auto task = make_task(model::Family::quadratic, 5, 3, m, S, 0.3, 3, 1e-3);
  const auto constants =
      model::estimate_constants(*task.model, task.fed, std::vector<double>(task.model->num_params(), 0.0), {});
  fmt::print("  quadratic tier: L = {:.6g} (exact per-sample), mu = 1/L\n", constants.L);
  struct Arm {
    std::string name;
    engine::Algorithm algo;
    const topology::MixingMatrix* mixing;
  };
  const auto ring = topology::build(Kind::ring, m);
  const auto exp = topology::build(Kind::exp, m);
  const std::vector<Arm> arms{{"cfl n=m", engine::Algorithm::cfl, nullptr},
                              {"dfl ring", engine::Algorithm::dfl, &ring},
                              {"dfl exp", engine::Algorithm::dfl, &exp}};
  bool pass = true;
  for (const auto& arm : arms) {
    engine::LemmaReport total;
    std::size_t failing_seeds = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CounterStream pos(seed, Purpose::positions);
      const auto nb = data::make_neighbor(task.fed, pos.uniform_index(m), pos.uniform_index(S), seed);
      const auto r = engine::run_coupled(task.fed, nb, *task.model, train(20, 5, m, constants.mu, seed),
                                         {arm.algo, arm.mixing, true});
      const auto rep = engine::check_lemmas(r.coupled, constants.L, m, 1e-10);
      total.same_sample_steps += rep.same_sample_steps;
      total.same_sample_violations += rep.same_sample_violations;
      total.differing_steps += rep.differing_steps;
      total.differing_violations += rep.differing_violations;
      total.round_boundaries += rep.round_boundaries;
      total.aggregation_violations += rep.aggregation_violations;
      total.zero_before_tau_hat_violations += rep.zero_before_tau_hat_violations;
      failing_seeds += !rep.all_hold();
    }
    fmt::print(
        "  {}: same-sample {}/{} ok, differing {}/{} ok, aggregation {}/{} ok, zero-before-first-touch "
        "violations {}, failing seeds {}\n",
        arm.name, total.same_sample_steps - total.same_sample_violations, total.same_sample_steps,
        total.differing_steps - total.differing_violations, total.differing_steps,
        total.round_boundaries - total.aggregation_violations, total.round_boundaries,
        total.zero_before_tau_hat_violations, failing_seeds);
    pass = pass && failing_seeds == 0 && total.differing_steps > 0;
  }
  return pass;
}

// ---------------------------------------------------------------- 5

bool sampling_probability() {
  const std::size_t m = 8, S = 32, seeds = 500;
  bool pass = true;
  struct Cell {
    engine::Algorithm algo;
    std::size_t n;
  };
  for (const Cell cell : {Cell{engine::Algorithm::cfl, 2}, Cell{engine::Algorithm::cfl, 8},
                          Cell{engine::Algorithm::dfl, 8}}) {
    for (std::size_t tau0 : {10u, 50u}) {
      // One local step per round, so iteration tau is round tau.
      std::size_t hits = 0;
      for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        CounterStream pos(seed, Purpose::positions);
        data::Perturbation p;
        p.client = pos.uniform_index(m);
        p.sample = pos.uniform_index(S);
        const auto tau_hat = engine::first_touch(train(tau0, 1, cell.n, 1.0, seed), m, S, cell.algo, p);
        hits += tau_hat.has_value();
      }
      const double freq = static_cast<double>(hits) / seeds;
      const double q = (cell.algo == engine::Algorithm::cfl ? static_cast<double>(cell.n) / m : 1.0) / S;
      const double target = static_cast<double>(tau0) * q;
      const double exact = 1.0 - std::pow(1.0 - q, static_cast<double>(tau0));
      const double se = std::sqrt(std::max(freq * (1.0 - freq), 1e-12) / seeds);
      const bool ok = std::abs(freq - target) <= 3.0 * se;
      pass = pass && ok;
      fmt::print("  {} n={} tau0={}: frequency {:.4f} (se {:.4f}), target {:.4f}, exact {:.4f} -> {}\n",
                 engine::to_string(cell.algo), cell.n, tau0, freq, se, target, exact, ok ? "ok" : "off");
    }
  }
  return pass;
}

// ---------------------------------------------------------------- 6

config::ExperimentConfig quadratic_config(std::size_t m, std::size_t S) {
  config::ExperimentConfig c;
  c.data.d = 5;
  c.data.C = 3;
  c.data.clients = m;
  c.data.total = m * S;
  c.data.beta = 0.3;
  c.data.seed = 3;
  c.model.family = model::Family::quadratic;
  c.model.weight_decay = 1e-3;
  c.model.init_scale = 0.1;
  c.train.T = 20;
  c.train.K = 5;
  c.stability.seeds = 20;
  c.stability.probe_size = 200;
  return c;
}

bool bound_soundness() {
  const std::size_t m = 8;
  bool pass = true;
  auto check = [&](const std::string& label, const config::ExperimentConfig& c) {
    const auto cell = runner::run_cell(c, {1, false});
    if (!cell.bound) {
      fmt::print("  {} S={}: bound unavailable\n", label, cell.S);
      pass = false;
      return;
    }
    const double proxy = *cell.bound->empirical_gap;
    const bool ok = cell.bound->epsilon >= proxy;
    pass = pass && ok;
    fmt::print("  {} S={}: bound {:.4e} vs mean G*||w - w~|| {:.4e}{} -> {}\n", label, cell.S,
               cell.bound->epsilon, proxy, cell.bound->clamped ? " (tau0 clamped)" : "", ok ? "ok" : "VIOLATED");
  };
  for (std::size_t S : {16u, 32u, 64u}) {
    for (std::size_t n : {1u, 4u, 8u}) {
      auto c = quadratic_config(m, S);
      c.train.n = n;
      check(fmt::format("theorem1 n={}", n), c);
    }
    for (Kind k : {Kind::full, Kind::exp, Kind::ring}) {
      auto c = quadratic_config(m, S);
      c.train.topology = k;
      check(fmt::format("theorem2 {}", topology::to_string(k)), c);
    }
  }
  return pass;
}

// ---------------------------------------------------------------- 7

config::ExperimentConfig logistic_config(std::size_t m, std::size_t seeds) {
  config::ExperimentConfig c;
  c.data.d = 10;
  c.data.C = 5;
  c.data.beta = 0.1;
  c.data.seed = 1;
  c.data.clients = m;
  c.data.total = m * 64;
  c.model.family = model::Family::logistic;
  c.model.weight_decay = 1e-3;
  c.train.T = 40;
  c.train.K = 5;
  c.stability.seeds = seeds;
  c.stability.probe_size = 200;
  return c;
}

double median_gap(const config::ExperimentConfig& c) {
  return stability::median(runner::run_cell(c, {1, false}).loss_gaps());
}

// Medians within 1% of each other count as tied.
bool tied(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i] - v[i - 1]) <= 0.01 * std::max(v[i], v[i - 1])) return true;
  }
  return false;
}

using Series = std::function<std::vector<double>(std::size_t seeds)>;

bool ordered(const std::string& label, const Series& series, stability::Trend want,
             const std::string& names) {
  auto values = series(20);
  std::size_t seeds = 20;
  if (tied(values)) {
    seeds = 40;
    values = series(40);
  }
  // Non-strict for the topology ordering, strict for the trends.
  bool ok;
  if (want == stability::Trend::undefined) {
    ok = std::is_sorted(values.begin(), values.end());
  } else {
    ok = stability::trend(values) == want;
  }
  std::string shown;
  for (double v : values) shown += fmt::format(" {:.4e}", v);
  fmt::print("  {} [{}] over {} seeds:{} -> {}\n", label, names, seeds, shown, ok ? "ok" : "FAIL");
  return ok;
}

bool trend_reproduction() {
  using stability::Trend;
  const std::size_t m = 16;
  const auto n_mid = static_cast<std::size_t>(std::ceil(std::pow(16.0, 2.0 / 3.0)));
  const bool a = ordered(
      "(a) FedAvg gap vs n", [&](std::size_t seeds) {
        std::vector<double> v;
        for (std::size_t n : {std::size_t{1}, n_mid, m}) {
          auto c = logistic_config(m, seeds);
          c.train.n = n;
          v.push_back(median_gap(c));
        }
        return v;
      },
      Trend::increasing, fmt::format("n = 1, {}, 16", n_mid));
  const bool b = ordered(
      "(b) D-FedAvg gap by topology", [&](std::size_t seeds) {
        std::vector<double> v;
        for (Kind k : {Kind::full, Kind::exp, Kind::grid, Kind::ring}) {
          auto c = logistic_config(m, seeds);
          c.train.topology = k;
          v.push_back(median_gap(c));
        }
        return v;
      },
      Trend::undefined, "full <= exp <= grid <= ring");
  auto over_m = [&](Kind k, std::vector<std::size_t> ms) {
    return [=](std::size_t seeds) {
      std::vector<double> v;
      for (std::size_t mm : ms) {
        auto c = logistic_config(mm, seeds);
        c.train.topology = k;
        v.push_back(median_gap(c));
      }
      return v;
    };
  };
  const bool c_full = ordered("(c) full, S=64", over_m(Kind::full, {9, 16, 25}), Trend::decreasing, "m = 9, 16, 25");
  // exp needs a power of two.
  const bool c_exp = ordered("(c) exp, S=64", over_m(Kind::exp, {8, 16, 32}), Trend::decreasing, "m = 8, 16, 32");
  const bool c_ring = ordered("(c) ring, S=64", over_m(Kind::ring, {9, 16, 25}), Trend::increasing, "m = 9, 16, 25");
  return a && b && c_full && c_exp && c_ring;
}

// ---------------------------------------------------------------- 8

bool gradient_correctness() {
  bool pass = true;
  for (model::Family f : {model::Family::quadratic, model::Family::logistic, model::Family::mlp}) {
    const auto m = model::make_model({f, 6, 4, f == model::Family::mlp ? 8u : 0u, 1e-3, 0.1});
    const std::size_t p = m->num_params();
    double worst = 0.0;
    for (std::uint32_t probe = 0; probe < 100; ++probe) {
      CounterStream s(8, Purpose::probes, static_cast<std::uint32_t>(f), probe);
      std::vector<double> w(p), x(6), g(p);
      for (auto& v : w) v = 0.5 * s.normal();
      for (auto& v : x) v = s.normal();
      const int y = static_cast<int>(s.uniform_index(4));
      m->grad(w, x, y, g);
      constexpr double h = 1e-5;
      double err = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        const double keep = w[i];
        w[i] = keep + h;
        const double up = m->loss(w, x, y);
        w[i] = keep - h;
        const double down = m->loss(w, x, y);
        w[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        err += (fd - g[i]) * (fd - g[i]);
        norm += g[i] * g[i];
      }
      worst = std::max(worst, std::sqrt(err) / std::max(std::sqrt(norm), 1e-12));
    }
    const bool ok = worst <= 1e-5;
    pass = pass && ok;
    fmt::print("  {}: 100 probes, worst relative error {:.3e} -> {}\n", model::to_string(f), worst,
               ok ? "ok" : "FAIL");
  }
  return pass;
}

struct Criterion {
  const char* title;
  bool (*run)();
};

const Criterion kCriteria[] = {
    {"topology invariants", topology_suite},
    {"kappa dominance", kappa_dominance},
    {"coupled-run exactness", coupled_exactness},
    {"lemma-level step checks", lemma_checks},
    {"sampling probability", sampling_probability},
    {"bound soundness", bound_soundness},
    {"trend reproduction", trend_reproduction},
    {"gradient correctness", gradient_correctness},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedstab acceptance criteria"};
  std::string which = "all";
  app.add_option("--criterion", which, "1-8 or all");
  CLI11_PARSE(app, argc, argv);

  std::vector<int> ids;
  if (which == "all") {
    for (int i = 1; i <= 8; ++i) ids.push_back(i);
  } else {
    const int id = std::stoi(which);
    if (id < 1 || id > 8) {
      fmt::print(stderr, "criterion must be 1-8 or all\n");
      return 2;
    }
    ids.push_back(id);
  }
  bool all = true;
  for (int id : ids) {
    const auto& c = kCriteria[id - 1];
    fmt::print("criterion {} ({})\n", id, c.title);
    const auto start = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = c.run();
    } catch (const std::exception& e) {
      fmt::print("  error: {}\n", e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fmt::print("criterion {}: {} ({:.1f} s)\n", id, ok ? "PASS" : "FAIL", secs);
    all = all && ok;
  }
  return all ? 0 : 1;
}
