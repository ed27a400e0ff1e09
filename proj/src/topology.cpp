#include "fedstab/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace fedstab::topology {
namespace {

bool is_power_of_two(std::size_t m) { return m != 0 && (m & (m - 1)) == 0; }

std::size_t exact_sqrt(std::size_t m) {
  auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
  return root * root == m ? root : 0;
}

using Adjacency = std::vector<std::set<std::size_t>>;

void link(Adjacency& adj, std::size_t i, std::size_t j) {
  if (i == j) return;
  adj[i].insert(j);
  adj[j].insert(i);
}

Eigen::MatrixXd metropolis_hastings(const Adjacency& adj) {
  const auto m = static_cast<Eigen::Index>(adj.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto di = adj[static_cast<std::size_t>(i)].size();
    for (std::size_t j : adj[static_cast<std::size_t>(i)]) {
      const auto dj = adj[j].size();
      w(i, static_cast<Eigen::Index>(j)) =
          1.0 / (1.0 + static_cast<double>(std::max(di, dj)));
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    double off = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) off += w(i, j);
    }
    w(i, i) = 1.0 - off;
  }
  return w;
}

bool is_uniform_average(const Eigen::MatrixXd& w) {
  const double entry = 1.0 / static_cast<double>(w.rows());
  return (w.array() == entry).all();
}

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::ring: return "ring";
    case Kind::grid: return "grid";
    case Kind::star: return "star";
    case Kind::exp: return "exp";
    case Kind::full: return "full";
    case Kind::custom: return "custom";
  }
  return "custom";
}

Kind parse_kind(std::string_view name) {
  for (Kind k : {Kind::ring, Kind::grid, Kind::star, Kind::exp, Kind::full, Kind::custom}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError(fmt::format("unknown topology kind '{}'", name));
}

MixingMatrix::MixingMatrix(Kind kind, Eigen::MatrixXd weights)
    : kind_(kind), weights_(std::move(weights)) {
  const Eigen::Index m = weights_.rows();
  if (m < 1 || weights_.cols() != m) {
    throw ValidationError("mixing matrix must be square and non-empty");
  }
  if (!weights_.allFinite()) throw ValidationError("mixing matrix has non-finite entries");
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (weights_(i, j) < 0.0) {
        throw ValidationError(fmt::format("negative weight at ({}, {})", i, j));
      }
      if (weights_(i, j) != weights_(j, i)) {
        throw ValidationError(fmt::format("asymmetric weight at ({}, {})", i, j));
      }
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const double row = weights_.row(i).sum();
    const double col = weights_.col(i).sum();
    if (std::abs(row - 1.0) > 1e-12 || std::abs(col - 1.0) > 1e-12) {
      throw ValidationError(fmt::format(
          "row/column {} sums to {:.17g}/{:.17g}, not 1", i, row, col));
    }
  }
  neighbors_.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (weights_(i, j) > 0.0) neighbors_[static_cast<std::size_t>(i)].push_back(static_cast<std::size_t>(j));
    }
  }
}

std::size_t minimum_clients(Kind kind) {
  switch (kind) {
    case Kind::ring:
    case Kind::star: return 3;
    case Kind::grid: return 4;
    default: return 2;
  }
}

MixingMatrix build(Kind kind, std::size_t m) {
  if (m < minimum_clients(kind)) {
    throw ValidationError(fmt::format("{} topology needs m >= {}, got {}",
                                      to_string(kind), minimum_clients(kind), m));
  }
  Adjacency adj(m);
  switch (kind) {
    case Kind::full: {
      const auto n = static_cast<Eigen::Index>(m);
      return MixingMatrix(kind, Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(m)));
    }
    case Kind::ring:
      for (std::size_t i = 0; i < m; ++i) link(adj, i, (i + 1) % m);
      break;
    case Kind::star:
      for (std::size_t i = 1; i < m; ++i) link(adj, 0, i);
      break;
    case Kind::grid: {
      const std::size_t side = exact_sqrt(m);
      if (side == 0) {
        throw ValidationError(fmt::format("grid topology needs a perfect square m, got {}", m));
      }
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const std::size_t node = r * side + c;
          link(adj, node, ((r + 1) % side) * side + c);
          link(adj, node, r * side + (c + 1) % side);
        }
      }
      break;
    }
    case Kind::exp:
      if (!is_power_of_two(m)) {
        throw ValidationError(fmt::format("exp topology needs m a power of two, got {}", m));
      }
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t hop = 1; hop < m; hop <<= 1) link(adj, i, (i + hop) % m);
      }
      break;
    case Kind::custom:
      throw ValidationError("custom topologies are built with from_edges");
  }
  return MixingMatrix(kind, metropolis_hastings(adj));
}

MixingMatrix from_edges(std::size_t m,
                        const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        Kind kind) {
  if (m < 2) throw ValidationError("a topology needs at least 2 clients");
  Adjacency adj(m);
  for (auto [i, j] : edges) {
    if (i >= m || j >= m) {
      throw ValidationError(fmt::format("edge ({}, {}) out of range for m = {}", i, j, m));
    }
    link(adj, i, j);
  }
  return MixingMatrix(kind, metropolis_hastings(adj));
}

Eigen::VectorXd eigenvalues(const MixingMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a.weights(), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolve did not converge");
  return solver.eigenvalues();
}

double spectral_lambda(const MixingMatrix& a) {
  // A == P has the exact spectrum {1, 0, ..., 0}.
  if (is_uniform_average(a.weights())) return 0.0;
  const Eigen::VectorXd ev = eigenvalues(a);
  const Eigen::Index m = ev.size();
  const double top = ev(m - 1);
  if (std::abs(top - 1.0) > 1e-8) {
    throw NumericalError(fmt::format("top eigenvalue {:.17g} deviates from 1", top));
  }
  if (m == 1) return 0.0;
  return std::max(std::abs(ev(m - 2)), std::abs(ev(0)));
}

double kappa_lambda(double lambda, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError(fmt::format("alpha must lie in (0, 1), got {}", alpha));
  }
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw ValidationError(fmt::format("lambda must lie in [0, 1), got {}", lambda));
  }
  if (lambda == 0.0) return 0.0;
  const double e = std::numbers::e;
  const double log_inv = std::log(1.0 / lambda);
  const double two_alpha = std::pow(2.0, alpha);
  return std::pow(alpha / e, alpha) / (lambda * std::pow(log_inv, alpha)) +
         two_alpha / ((1.0 - alpha) * e * lambda * log_inv) +
         two_alpha / (lambda * log_inv);
}

SpectralProfile profile(const MixingMatrix& a, double alpha) {
  SpectralProfile p;
  p.alpha = alpha;
  p.lambda = spectral_lambda(a);
  p.kappa_lambda = kappa_lambda(p.lambda, alpha);
  return p;
}

bool ContractionReport::all_hold() const {
  return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return s.holds; });
}

namespace {

Eigen::MatrixXd deflated(const MixingMatrix& a) {
  const auto m = static_cast<Eigen::Index>(a.size());
  return a.weights() - Eigen::MatrixXd::Constant(m, m, 1.0 / static_cast<double>(m));
}

double symmetric_norm(const Eigen::MatrixXd& m) {
  if ((m.array() == 0.0).all()) return 0.0;
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolve did not converge");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

ContractionReport contraction_check_direct(const MixingMatrix& a, std::size_t t_max,
                                           double tolerance) {
  ContractionReport report;
  report.lambda = spectral_lambda(a);
  const Eigen::MatrixXd d = deflated(a);
  Eigen::MatrixXd power = d;
  for (std::size_t t = 1; t <= t_max; ++t) {
    ContractionStep step;
    step.t = t;
    step.deviation_norm = symmetric_norm(power);
    step.lambda_power = std::pow(report.lambda, static_cast<double>(t));
    step.holds = step.deviation_norm <= step.lambda_power + tolerance;
    report.steps.push_back(step);
    if (t < t_max) power = (power * d).eval();
  }
  return report;
}

ContractionReport contraction_check(const MixingMatrix& a, std::size_t t_max,
                                    double tolerance) {
  ContractionReport report;
  report.lambda = spectral_lambda(a);
  const double base = symmetric_norm(deflated(a));
  for (std::size_t t = 1; t <= t_max; ++t) {
    ContractionStep step;
    step.t = t;
    step.deviation_norm = std::pow(base, static_cast<double>(t));
    step.lambda_power = std::pow(report.lambda, static_cast<double>(t));
    step.holds = step.deviation_norm <= step.lambda_power + tolerance;
    report.steps.push_back(step);
  }
  return report;
}

double collapse_threshold(std::size_t m) { return std::sqrt(static_cast<double>(m)); }

std::string to_csv(const MixingMatrix& a) {
  std::ostringstream out;
  const auto m = static_cast<Eigen::Index>(a.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j > 0) out << ',';
      out << fmt::format("{:.17g}", a.weights()(i, j));
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace fedstab::topology
