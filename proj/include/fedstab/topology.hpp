#pragma once

// Gossip topologies for decentralized training: builders for the classical
// graphs, Metropolis-Hastings mixing weights, and the spectral quantities
// that govern how fast gossip averaging contracts.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fedstab/errors.hpp"

namespace fedstab::topology {

enum class Kind { ring, grid, star, exp, full, custom };

std::string_view to_string(Kind kind);
// Throws ValidationError for unknown names.
Kind parse_kind(std::string_view name);

// Symmetric doubly stochastic m x m gossip matrix.
class MixingMatrix {
 public:
  // Validates every invariant (symmetry, non-negativity, row/column sums
  // within 1e-12); throws ValidationError on violation.
  MixingMatrix(Kind kind, Eigen::MatrixXd weights);

  Kind kind() const { return kind_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.rows()); }
  const Eigen::MatrixXd& weights() const { return weights_; }
  double operator()(std::size_t i, std::size_t j) const {
    return weights_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  // Column indices j with a_ij > 0, ascending. This is the reduction order
  // every gossip step uses.
  const std::vector<std::size_t>& neighbors(std::size_t i) const {
    return neighbors_[i];
  }

 private:
  Kind kind_;
  Eigen::MatrixXd weights_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

struct SpectralProfile {
  double lambda = 0.0;
  double kappa_lambda = 0.0;
  double alpha = 0.5;
};

// Smallest m accepted by the builder for `kind`.
std::size_t minimum_clients(Kind kind);

// Builds the named graph with Metropolis-Hastings weights
// a_ij = 1 / (1 + max(d_i, d_j)). grid is a 2-D torus (m a perfect square),
// exp links i to i +/- 2^j (m a power of two), star uses node 0 as the hub.
MixingMatrix build(Kind kind, std::size_t m);

// Metropolis-Hastings weights for an arbitrary undirected edge list.
MixingMatrix from_edges(std::size_t m,
                        const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        Kind kind = Kind::custom);

// All eigenvalues in ascending order (dense symmetric solver).
Eigen::VectorXd eigenvalues(const MixingMatrix& a);

// max(|lambda_2|, |lambda_m|). Throws NumericalError when the top eigenvalue
// is not within 1e-8 of 1.
double spectral_lambda(const MixingMatrix& a);

// Topology coefficient bounding sum_{s<t} lambda^(t-s-1) / (s+1)^alpha by
// kappa / t^alpha. Zero at lambda == 0, where the sum is a single term.
double kappa_lambda(double lambda, double alpha);

SpectralProfile profile(const MixingMatrix& a, double alpha);

struct ContractionStep {
  std::size_t t = 0;
  double deviation_norm = 0.0;  // ||A^t - P||_op
  double lambda_power = 0.0;    // lambda^t
  bool holds = false;           // deviation_norm <= lambda_power + tolerance
};

struct ContractionReport {
  double lambda = 0.0;
  std::vector<ContractionStep> steps;
  bool all_hold() const;
};

// Forms A^t - P by repeated multiplication and takes its spectral norm with a
// dense symmetric eigensolve for every t <= t_max. Cost O(t_max m^3).
ContractionReport contraction_check_direct(const MixingMatrix& a,
                                           std::size_t t_max,
                                           double tolerance = 1e-10);

// Same report, using ||(A - P)^t||_op = ||A - P||_op^t for the symmetric
// deflated matrix A - P, whose norm comes from its own eigensolve (separate
// from the solve behind lambda). Cost O(m^3), suitable for large m.
ContractionReport contraction_check(const MixingMatrix& a, std::size_t t_max,
                                    double tolerance = 1e-10);

// Threshold sqrt(m) on kappa_lambda beyond which adding clients worsens the
// decentralized stability bound (hidden constant taken as 1).
double collapse_threshold(std::size_t m);

// Writes the matrix row-major, one row per line, 17 significant digits.
std::string to_csv(const MixingMatrix& a);

}  // namespace fedstab::topology
