#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "sgdlab/noise.hpp"
#include "sgdlab/objective.hpp"
#include "sgdlab/optimizer.hpp"

namespace sgdlab {

// Interpolated time scale t_1 = 0, t_{n+1} = t_n + 1/n: t_n is the
// (n-1)-th harmonic number.
double interpolation_time(long n);

// Neighborhood of theta_star used for the exit region G and the target
// sets N_mu, N_nu.
struct Region {
  enum class Kind { Box, Ball };
  Kind kind = Kind::Ball;
  double radius = 1.0;
  // err = theta - theta_star.
  bool contains(const Eigen::VectorXd& err) const;
};

struct EscapeConfig {
  ObjectiveSpec objective;
  NoiseModel noise;
  double mu = 0.25;          // N_mu(theta*), closure must sit inside G
  double nu = 0.0;           // start/end-state radius nu(mu); 0 means mu/2
  Region exit_region;        // G
  double horizon = 1.0;      // T on the interpolated scale
  std::vector<long> scales;  // start indices n
  long replications = 1;
  std::uint64_t seed = 0;

  double nu_radius() const { return nu > 0 ? nu : 0.5 * mu; }
  void validate() const;
};

struct ExitSample {
  double tau = 0.0;            // exit time if exited, else horizon
  bool exited = false;         // left G at some t <= T
  bool end_state_event = false;  // theta^n(T) outside N_nu (censored runs only)
};

struct ScaleExits {
  long scale = 0;
  long exits = 0;             // exits from G
  long combined_events = 0;   // exits or end-state events
  std::vector<ExitSample> samples;
};

// Runs the unprojected recursion theta_{k+1} = theta_k - (1/k) noisy_grad
// from step index n until exit from G or interpolated time T.  The
// piecewise-constant interpolation makes grid-time exit detection exact.
std::vector<ScaleExits> simulate_exit(const EscapeConfig& config, int workers = 1);

struct ExitProbability {
  double p_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  long events = 0;
  long total = 0;
};

// Fraction of replications with an exit or end-state event by time T, with a
// binomial confidence interval; zero counts get the one-sided 3/R bound.
ExitProbability exit_probability(const std::vector<ExitSample>& samples, double horizon);

struct ExponentFit {
  double h0 = 0.0;
  double r2 = 0.0;
  bool defined = false;
  std::vector<long> starved;  // scales with zero events
};

// Least squares of log p_hat against n over the scales with positive
// estimates; refuses to fit (defined = false) below 3 positive points.
ExponentFit fit_exponent(const std::vector<long>& scales, const std::vector<double>& p_hats);

struct GrowthReport {
  std::vector<long> scales;
  std::vector<double> tau_lower_bounds;  // censoring-aware E tau lower bounds
  bool nondecreasing = false;
  double h1 = 0.0;
  bool h1_defined = false;
  bool informative = false;  // at least one scale observed an exit
};

GrowthReport mean_exit_growth(const std::vector<ScaleExits>& results, double horizon);

// Q = f0(theta*) Rbar f0(theta*)' for the scalar-gain objectives used here.
Eigen::MatrixXd rate_q(const ObjectiveSpec& spec, const NoiseModel& model);

// Integral of the quadratic form alpha' Q alpha over [0, T] for a piecewise
// constant alpha on a uniform grid (rows of alpha_path); exact quadrature.
double h_integral(const Eigen::MatrixXd& q, const Eigen::MatrixXd& alpha_path, double horizon);

// L(beta, psi, s) = sup_alpha [alpha' (beta - drift) - e^s alpha' Q alpha]
//                 = e^{-s} (beta - drift)' Q^{-1} (beta - drift) / 4.
double legendre(const Eigen::MatrixXd& q, const Eigen::VectorXd& beta,
                const Eigen::VectorXd& drift, double s);

// Independent route: coordinate-ascent maximization of the concave
// objective, for cross-checking the closed form.
double legendre_numeric(const Eigen::MatrixXd& q, const Eigen::VectorXd& beta,
                        const Eigen::VectorXd& drift, double s);

enum class FlowDriftMode {
  NegativeGradient,  // drift = -grad C(theta* + psi)
  LiteralCost,       // drift = C(theta* + psi), 1-D only
};

Eigen::VectorXd flow_drift(const ObjectiveSpec& spec, const Eigen::VectorXd& psi,
                           FlowDriftMode mode = FlowDriftMode::NegativeGradient);

// Action of a piecewise-linear path psi (rows psi_0..psi_m on a uniform grid
// over [0, T]): midpoint quadrature of L(psi_dot, psi, u) with exact segment
// slopes.  Nonnegative, and zero exactly on mean-flow paths built by
// mean_flow_path.
double action(const Eigen::MatrixXd& psi_path, double horizon, const Eigen::MatrixXd& q,
              const ObjectiveSpec& spec, FlowDriftMode mode = FlowDriftMode::NegativeGradient);

// Implicit-midpoint integration of psi_dot = drift(psi): segment slopes equal
// the drift at segment midpoints, so the action of the result vanishes.
Eigen::MatrixXd mean_flow_path(const ObjectiveSpec& spec, const Eigen::VectorXd& psi0,
                               double horizon, long segments,
                               FlowDriftMode mode = FlowDriftMode::NegativeGradient);

}  // namespace sgdlab
