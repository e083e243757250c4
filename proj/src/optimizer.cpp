#include "sgdlab/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sgdlab/csv.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/seeding.hpp"

namespace sgdlab {

Eigen::VectorXd ProjectionSet::project(const Eigen::VectorXd& x) const {
  switch (kind) {
    case Kind::Box:
      return x.cwiseMax(-radius).cwiseMin(radius);
    case Kind::Ball: {
      double n = x.norm();
      if (n <= radius) return x;
      return (radius / n) * x;
    }
  }
  throw std::logic_error("unreachable");
}

bool ProjectionSet::contains(const Eigen::VectorXd& x, double tol) const {
  switch (kind) {
    case Kind::Box:
      return x.cwiseAbs().maxCoeff() <= radius + tol;
    case Kind::Ball:
      return x.norm() <= radius + tol;
  }
  throw std::logic_error("unreachable");
}

double ProjectionSet::norm_bound(int dimension) const {
  switch (kind) {
    case Kind::Box:
      return radius * std::sqrt(static_cast<double>(dimension));
    case Kind::Ball:
      return radius;
  }
  throw std::logic_error("unreachable");
}

// Wide enough that the projection is almost never active in the finite
// sample regime; runs report any activation past kappa_plus.
ProjectionSet default_projection(const Eigen::VectorXd& theta_star) {
  return {ProjectionSet::Kind::Box, 10.0 * theta_star.norm() + 10.0};
}

double step_size(long k, double c0) {
  if (k < 0) throw std::invalid_argument("step index must be >= 0");
  return c0 / static_cast<double>(k + 1);
}

void RunConfig::validate() const {
  if (objective.dimension() != noise.dimension())
    throw std::invalid_argument("objective and noise dimensions differ");
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  if (replications < 1) throw std::invalid_argument("replications must be >= 1");
  if (c0 <= 0) throw std::invalid_argument("step scale c0 must be positive");
  if (projection.radius <= 0) throw std::invalid_argument("projection radius must be positive");
  if (c0 * objective.lambda_min() <= 1.0)
    throw std::invalid_argument(
        "A4 requires c0 * lambda_min(B) > 1 (lambda_min(B) > 1 when c0 = 1); got c0 = " +
        std::to_string(c0) + ", lambda_min(B) = " + std::to_string(objective.lambda_min()));
  // Strict interior: theta_star in G with positive margin.
  double margin;
  if (projection.kind == ProjectionSet::Kind::Box)
    margin = projection.radius - objective.theta_star().cwiseAbs().maxCoeff();
  else
    margin = projection.radius - objective.theta_star().norm();
  if (margin <= 0)
    throw std::invalid_argument("theta_star must lie in the interior of G");
  if (theta0.size() != objective.dimension())
    throw std::invalid_argument("theta0 dimension differs from objective");
  if (!projection.contains(theta0))
    throw std::invalid_argument("theta0 must lie in G");
  if (objective.perturbation()) {
    double a3 = objective.a3_margin(projection.diameter(objective.dimension()));
    if (a3 <= 0)
      throw std::invalid_argument(
          "A3 requires K_D * diam(G)^alpha < lambda_min(B); margin is " + std::to_string(a3));
  }
}

Trajectory run(const RunConfig& config) {
  config.validate();
  const int p = config.objective.dimension();
  const long n = config.n_max;

  Trajectory traj;
  traj.seed = config.seed;
  traj.theta_star = config.objective.theta_star();
  traj.iterates.resize(p, n + 1);
  traj.noise = config.noise.sample_path(config.seed, n).transpose();

  Eigen::VectorXd theta = config.theta0;
  traj.iterates.col(0) = theta;
  Eigen::VectorXd candidate(p);
  for (long k = 0; k < n; ++k) {
    double eps = step_size(k, config.c0);
    candidate = theta - eps * config.objective.noisy_grad(theta, traj.noise.col(k));
    theta = config.projection.project(candidate);
    if (theta != candidate) traj.projection_steps.push_back(k);
    traj.iterates.col(k + 1) = theta;
  }
  return traj;
}

Trajectory run_replication(const RunConfig& config, int replication) {
  RunConfig derived = config;
  // Replication 0 keeps the base seed so a one-replication ensemble
  // reproduces run() exactly; later replications use derived streams.
  if (replication != 0)
    derived.seed =
        derive_seed(config.seed, "replication", static_cast<std::uint64_t>(replication));
  Trajectory traj = run(derived);
  traj.replication = replication;
  return traj;
}

std::vector<Trajectory> run_ensemble(const RunConfig& config, int workers) {
  std::vector<Trajectory> out(static_cast<std::size_t>(config.replications));
  parallel_for(config.replications, workers, [&](long i) {
    out[static_cast<std::size_t>(i)] = run_replication(config, static_cast<int>(i));
  });
  return out;
}

void write_trajectory_csv(const std::string& path, const Trajectory& trajectory) {
  CsvWriter csv(path);
  std::vector<std::string> names{"k"};
  for (int i = 1; i <= trajectory.dimension(); ++i) names.push_back("theta_" + std::to_string(i));
  names.push_back("error_norm_sq");
  csv.header(names);
  for (long k = 0; k <= trajectory.n_max(); ++k) {
    csv.cell(k);
    for (int i = 0; i < trajectory.dimension(); ++i) csv.cell(trajectory.iterates(i, k));
    csv.cell(trajectory.error_norm_sq(k));
    csv.end_row();
  }
}

}  // namespace sgdlab
