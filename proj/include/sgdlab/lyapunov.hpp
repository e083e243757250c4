#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sgdlab/noise.hpp"
#include "sgdlab/objective.hpp"
#include "sgdlab/optimizer.hpp"

namespace sgdlab {

// V(theta_err) = theta_err' theta_err / 2.
inline double lyapunov_v(const Eigen::VectorXd& err) { return 0.5 * err.squaredNorm(); }

struct V1Result {
  double value = 0.0;
  double truncation_bound = 0.0;  // certified remainder of the truncated tail
};

// Tail-sum matrix T(n) = sum_{k >= n} A^{k-n+1} / k of the conditional-mean
// structure; V1(err, n) = -g(theta) err' T(n) x_{n-1}.  Zero for iid noise.
Eigen::MatrixXd v1_tail_matrix(const NoiseModel& model, long n, double tol = 1e-14);

// Precomputed T(n) over a contiguous index range, shared across trajectory
// scans (the matrices depend on the model only, not on the path).
class V1Table {
 public:
  V1Table(const NoiseModel& model, long n_lo, long n_hi, double tol = 1e-14);
  const Eigen::MatrixXd& at(long n) const;
  long lo() const { return lo_; }
  long hi() const { return lo_ + static_cast<long>(mats_.size()) - 1; }

 private:
  long lo_ = 1;
  std::vector<Eigen::MatrixXd> mats_;
};

// The perturbation as an infinite conditional-expectation sum, truncated at
// tail_tol with the remainder reported.  Supports iid (exactly zero) and
// var1; ma-q has no closed-form tail here and is rejected.
V1Result v1(const ObjectiveSpec& spec, const NoiseModel& model,
            const Eigen::VectorXd& theta, const Eigen::VectorXd& x_last, long n,
            double tail_tol = 1e-12);

// Certified constant S with |V1(err, n)| <= (V(err) + 1) * S / n pathwise:
// S = g_max * X_max * sum_{m>=1} ||A^m||_2, where X_max is the model's
// certified noise-norm bound.  Exact (zero) for iid noise.
double certified_v1_constant(const ObjectiveSpec& spec, const NoiseModel& model);

struct Property1Report {
  long from_n = 1;
  long checked = 0;
  long violations = 0;
  double worst_ratio = 0.0;  // max |V1| / bound over the checked range
  double s_constant = 0.0;
  long pre_regime_checked = 0;
  long pre_regime_violations = 0;
  double pre_regime_worst_ratio = 0.0;
};

// Tests |V1(err_n, n)| <= (V(err_n) + 1) * s_constant / n for every
// n >= kappa2 along the trajectory; indices below kappa2 are out of regime
// and reported separately when requested.
Property1Report check_property1(const Trajectory& trajectory, const ObjectiveSpec& spec,
                                const NoiseModel& model, long kappa2, double s_constant,
                                bool include_pre_regime = false);
Property1Report check_property1(const Trajectory& trajectory, const ObjectiveSpec& spec,
                                const NoiseModel& model, const V1Table& table, long kappa2,
                                double s_constant, bool include_pre_regime = false);

enum class DriftMode {
  ExactConditional,  // E_n W(err_{n+1}, n+1) in closed form (var1/iid, constant gain)
  Sampled,           // realized W(err_{n+1}, n+1) from the stored path
};

// Single-replication drift statistic
//   D = E_n W(err_{n+1}, n+1) - W(err_n, n) + (lambda1 / n) W(err_n, n),
// negative up to O(1/n^2) when the perturbed drift inequality holds.
double drift_sample(const Trajectory& trajectory, const ObjectiveSpec& spec,
                    const NoiseModel& model, long n, double lambda1, double c0,
                    DriftMode mode = DriftMode::ExactConditional, double tail_tol = 1e-12);

struct DriftEstimate {
  long n = 0;
  double estimate = 0.0;
  double se = 0.0;
  double kbar = 0.0;  // n^2 * estimate when positive, else 0
  long replications = 0;
};

DriftEstimate estimate_drift(const std::vector<Trajectory>& ensemble, const ObjectiveSpec& spec,
                             const NoiseModel& model, long n, double lambda1, double c0,
                             DriftMode mode = DriftMode::ExactConditional,
                             double tail_tol = 1e-12);

struct LemmaCheck {
  double c = 0.0;        // constant actually certified (see below)
  double paper_c = 0.0;  // max(x1, b / (a - 1))
  bool holds = false;
  long first_violation = -1;
};

// Iterates x_{n+1} = (1 - a/n) x_n + b/n^2 with equality from x_1 and checks
// x_n <= c/n for all n <= n_iters.  For a > 1.5 the constant
// max(x1, b/(a-1)) alone does not cover the indices n < a where (1 - a/n)
// is negative, so c additionally covers max_{n <= ceil(a)+1} n x_n; the two
// constants coincide whenever the smaller one suffices.
LemmaCheck lemma_bound(double a, double b, double x1, long n_iters);

struct DecompositionTerms {
  double t1a = 0.0;
  double t1b = 0.0;
  double t2 = 0.0;
  double cross_term = 0.0;  // (1/n) E_n err' [grad C - noisy grad](theta_n, xi_n)
};

// The three terms of the one-step perturbation decomposition
//   E_n V1(err_{n+1}, n+1) - V1(err_n, n) = T1a + T1b + T2,
// evaluated via closed-form conditional sums (var1/iid).  T2 must cancel the
// cross term exactly; T1a and T1b are O(1/n^2).  State-dependent gains are
// integrated with tensor Gauss-Hermite quadrature (dimension <= 3).
DecompositionTerms decomposition_terms(const ObjectiveSpec& spec, const NoiseModel& model,
                                       const Eigen::VectorXd& theta_n,
                                       const Eigen::VectorXd& x_prev, long n, double c0,
                                       double tail_tol = 1e-12);
DecompositionTerms decomposition_terms(const Trajectory& trajectory, const ObjectiveSpec& spec,
                                       const NoiseModel& model, long n, double c0,
                                       double tail_tol = 1e-12);

struct DecompositionCertificate {
  double c_a = 0.0;  // n^2 |T1a| <= c_a
  double c_b = 0.0;  // n^2 |T1b| <= c_b
};

DecompositionCertificate decomposition_certificate(const ObjectiveSpec& spec,
                                                   const NoiseModel& model, double k0,
                                                   double c0);

}  // namespace sgdlab
