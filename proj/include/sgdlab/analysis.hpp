#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sgdlab/fit.hpp"
#include "sgdlab/noise.hpp"
#include "sgdlab/objective.hpp"
#include "sgdlab/optimizer.hpp"

namespace sgdlab {

// The explicit constants of the finite sample regime.  kappa_plus is the
// step index beyond which the 1/n mean-square-error bound applies.
struct ConstantsReport {
  double k0 = 0.0;       // radius bound of G
  double gamma = 0.25;
  double kd = 0.0;
  double alpha = 1.0;
  double lambda = 0.0;   // smallest eigenvalue of B
  double lambda0 = 0.0;  // chosen in (0, lambda - 1)
  double k2 = 0.0;       // (lambda0 / kd)^(1/alpha)
  double lambda1 = 0.0;  // lambda - lambda0, must exceed 1
  long kappa1 = 1;
  long kappa2 = 1;
  long kappa_plus = 1;
};

// kappa1 = ceil((2 K0 / K2)^(1/gamma)); kappa2 = first n >= 1 with both
// mixing tails at most 1; kappa_plus = max of the two.  A perturbation-free
// objective (kd = 0) makes kappa1 = 1.
ConstantsReport kappa_plus(double k0, double gamma, double kd, double alpha,
                           double lambda, double lambda0,
                           const MixingBound& psi, const MixingBound& psi_bar);

struct CurvePoint {
  long n = 0;
  double value = 0.0;
  double se = 0.0;
};

struct CurveReport {
  std::vector<CurvePoint> points;
};

struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double envelope = 0.0;  // max over checkpoints of n * value
  bool defined = false;
};

struct LogLawFit {
  double a = 0.0;
  double b = 0.0;  // estimated K * L
  double r2 = 0.0;
  bool defined = false;
};

// Mean and Monte Carlo standard error across replications; samples is
// replications x checkpoints.
CurveReport curve_from_samples(const Eigen::MatrixXd& samples, const std::vector<long>& checkpoints);

CurveReport mse_curve(const std::vector<Trajectory>& ensemble, const std::vector<long>& checkpoints);

// Per-replication cumulative cost gaps sum_{k=from}^n [C(theta_k) - C(theta*)],
// averaged across replications at each checkpoint.
CurveReport regret_curve(const std::vector<Trajectory>& ensemble, const ObjectiveSpec& spec,
                         long from, const std::vector<long>& checkpoints);

// log(value) against log(n); throws on non-positive values.  Fewer than 3
// checkpoints leave the fit undefined (reported, not an error).
PowerLawFit fit_power_law(const CurveReport& curve);

// value against a + b log(n).
LogLawFit fit_log_law(const CurveReport& curve);

// Exact second-moment recursion for the 1-D unprojected linear case with
// iid noise: m_{k+1} = (1 - eps_k b)^2 m_k + eps_k^2 sigma^2, m_0 = theta0_err^2.
// Exact because the iid zero-mean cross term vanishes.
double exact_mse_oracle(double b, double sigma, double theta0_err, double c0, long n);

struct RateStatistic {
  std::vector<long> checkpoints;
  std::vector<double> values;       // n^gamma * ||error_n||
  std::vector<double> running_max;  // running maximum over the window
};

RateStatistic as_rate_statistic(const Trajectory& trajectory, double gamma,
                                const std::vector<long>& window);

// Geometric grid ceil(lo * 2^(j/2)) intersected with [lo, hi]; hi is always
// included so fits cover the full range.
std::vector<long> geometric_checkpoints(long lo, long hi);

void write_curve_csv(const std::string& path, const CurveReport& mse, const CurveReport& regret);

}  // namespace sgdlab
