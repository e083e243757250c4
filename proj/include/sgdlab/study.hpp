#pragma once

#include <optional>
#include <vector>

#include "sgdlab/analysis.hpp"
#include "sgdlab/lyapunov.hpp"
#include "sgdlab/optimizer.hpp"

namespace sgdlab {

// One pass over a replicated run of the projected recursion, collecting the
// finite-sample diagnostics per replication and reducing them in replication
// order (so results are independent of the worker count).  Trajectories are
// analyzed as they are produced and then discarded, which keeps memory flat
// for large ensembles.
struct StudyOptions {
  std::vector<long> checkpoints;      // empty: geometric grid on [max(kappa+,100), n_max]
  double gamma = 0.25;
  std::optional<double> lambda0;      // default (lambda - 1) / 2
  bool collect_mse = true;
  bool collect_regret = true;
  bool collect_lyapunov = true;
  bool collect_rate = true;
  long rate_lo = 1000;                // almost-sure rate window [lo, n_max], split at mid
  std::optional<long> rate_mid;       // default: decade below n_max
  double tail_tol = 1e-12;
  int workers = 1;
  DriftMode drift_mode = DriftMode::ExactConditional;
};

struct DecompositionAggregate {
  long n = 0;
  double mean_abs_t1a = 0.0;
  double mean_abs_t1b = 0.0;
  double mean_t2 = 0.0;
  double max_cancellation_error = 0.0;  // max |T2 + cross term|
  double n_sq_t1ab = 0.0;               // n^2 * (mean |T1a| + mean |T1b|)
};

struct LyapunovAggregate {
  long n = 0;
  double mean_v = 0.0;
  double mean_v1 = 0.0;
  double mean_w = 0.0;
  double mean_bound_rhs = 0.0;  // (V + 1) * S / n averaged over replications
};

// The constants pipeline as resolved by the study for this configuration.
ConstantsReport study_constants(const RunConfig& config, const StudyOptions& options);

struct StudyResult {
  ConstantsReport constants;
  std::vector<long> checkpoints;

  CurveReport mse;
  PowerLawFit mse_fit;

  CurveReport regret;           // summed from kappa_plus
  CurveReport regret_full;      // summed from k = 1, reported as an extension
  LogLawFit regret_fit;

  Property1Report property1;    // aggregated over all replications
  std::vector<DriftEstimate> drifts;
  std::vector<DecompositionAggregate> decomposition;
  std::vector<LyapunovAggregate> lyapunov;
  double decomposition_ratio = 0.0;  // max/min of n_sq_t1ab over checkpoints

  long rate_no_new_max = 0;     // replications whose running max did not grow
  long rate_total = 0;          // past rate_mid
  double rate_worst_final = 0.0;

  long projection_steps_total = 0;
  long projection_steps_after_kappa = 0;
};

StudyResult run_theorem1_study(const RunConfig& config, const StudyOptions& options);

// Monte Carlo error moments against the exact 1-D oracle.
struct OracleCheckPoint {
  long n = 0;
  double mc = 0.0;
  double se = 0.0;
  double oracle = 0.0;
  double z = 0.0;
};

struct OracleCheckResult {
  std::vector<OracleCheckPoint> points;
  bool all_within_3se = false;
  long projection_steps = 0;
};

OracleCheckResult run_oracle_check(const RunConfig& config, const std::vector<long>& checkpoints,
                                   int workers);

}  // namespace sgdlab
