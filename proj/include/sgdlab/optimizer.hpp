#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sgdlab/noise.hpp"
#include "sgdlab/objective.hpp"

namespace sgdlab {

// Compact constraint set G centered at the origin; projection is idempotent
// and non-expansive.
struct ProjectionSet {
  enum class Kind { Box, Ball };
  Kind kind = Kind::Box;
  double radius = 1.0;

  Eigen::VectorXd project(const Eigen::VectorXd& x) const;
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  // K0 = sup over G of ||theta||_2.
  double norm_bound(int dimension) const;
  double diameter(int dimension) const { return 2.0 * norm_bound(dimension); }
};

ProjectionSet default_projection(const Eigen::VectorXd& theta_star);

double step_size(long k, double c0);

struct RunConfig {
  ObjectiveSpec objective;
  NoiseModel noise;
  ProjectionSet projection;
  double c0 = 1.0;
  long n_max = 1;
  Eigen::VectorXd theta0;
  std::uint64_t seed = 0;
  int replications = 1;

  // Throws std::invalid_argument naming the violated model assumption.
  void validate() const;
};

// Full iterate path with the noise states retained for the perturbed
// Lyapunov diagnostics.  Columns index steps: iterates.col(k) = theta_k for
// k in [0, n_max]; noise.col(k) is the value fed to the gradient at step k.
struct Trajectory {
  Eigen::MatrixXd iterates;           // p x (n_max + 1)
  Eigen::MatrixXd noise;              // p x n_max
  Eigen::VectorXd theta_star;
  std::vector<long> projection_steps; // k where the projection moved the point
  std::uint64_t seed = 0;
  int replication = 0;

  long n_max() const { return iterates.cols() - 1; }
  int dimension() const { return static_cast<int>(iterates.rows()); }
  Eigen::VectorXd theta(long k) const { return iterates.col(k); }
  Eigen::VectorXd error(long k) const { return iterates.col(k) - theta_star; }
  double error_norm_sq(long k) const { return (iterates.col(k) - theta_star).squaredNorm(); }
  // Noise state observable before step k acts, i.e. the entry used at step k-1.
  Eigen::VectorXd noise_before(long k) const { return noise.col(k - 1); }
};

Trajectory run(const RunConfig& config);

// Replication i of an ensemble: identical to run() with the derived seed
// derive_seed(config.seed, "replication", i).
Trajectory run_replication(const RunConfig& config, int replication);

std::vector<Trajectory> run_ensemble(const RunConfig& config, int workers = 1);

void write_trajectory_csv(const std::string& path, const Trajectory& trajectory);

}  // namespace sgdlab
