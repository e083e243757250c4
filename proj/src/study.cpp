#include "sgdlab/study.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sgdlab/parallel.hpp"

namespace sgdlab {

namespace {

struct ReplicationRecord {
  std::vector<double> err_sq;        // at checkpoints
  std::vector<double> regret;        // from kappa_plus
  std::vector<double> regret_full;   // from k = 1
  std::vector<double> drift;         // at checkpoints
  std::vector<double> t1a, t1b, t2, cancel;
  std::vector<double> v, v1, w, bound;
  long p1_violations = 0;
  long p1_checked = 0;
  double p1_worst = 0.0;
  bool rate_no_new_max = false;
  double rate_final = 0.0;
  long projection_total = 0;
  long projection_after_kappa = 0;
};

}  // namespace

ConstantsReport study_constants(const RunConfig& config, const StudyOptions& options) {
  const ObjectiveSpec& spec = config.objective;
  const double lambda = spec.lambda_min();
  const double lambda0 = options.lambda0 ? *options.lambda0 : 0.5 * (lambda - 1.0);
  const double kd = spec.perturbation() ? spec.perturbation()->kd : 0.0;
  const double alpha = spec.perturbation() ? spec.perturbation()->alpha : 1.0;
  const double k0 = config.projection.norm_bound(spec.dimension());
  MixingBound psi = config.noise.mixing();
  // Hessian-difference mixing: identically zero for constant gains, since
  // the noisy gradient is linear in theta there.
  MixingBound psi_bar = spec.gain().is_constant() ? MixingBound{0.0, 0.0, -1} : psi;
  return kappa_plus(k0, options.gamma, kd, alpha, lambda, lambda0, psi, psi_bar);
}

StudyResult run_theorem1_study(const RunConfig& config, const StudyOptions& options) {
  config.validate();
  StudyResult out;

  const ObjectiveSpec& spec = config.objective;
  out.constants = study_constants(config, options);

  out.checkpoints = options.checkpoints;
  if (out.checkpoints.empty())
    out.checkpoints =
        geometric_checkpoints(std::max<long>(out.constants.kappa_plus, 100), config.n_max - 1);
  for (long n : out.checkpoints)
    if (n < 1 || n + 1 > config.n_max)
      throw std::invalid_argument("study checkpoints must satisfy 1 <= n < n_max");

  const long rate_mid = options.rate_mid ? *options.rate_mid : config.n_max / 10;
  const double s_constant = options.collect_lyapunov
                                ? certified_v1_constant(spec, config.noise)
                                : 0.0;
  std::optional<V1Table> table;
  if (options.collect_lyapunov) table.emplace(config.noise, 1, config.n_max, 1e-14);

  const double cost_star = spec.cost(spec.theta_star());
  const long kappa_plus_idx = out.constants.kappa_plus;
  const long kappa2 = out.constants.kappa2;
  const double lambda1 = out.constants.lambda1;

  std::vector<ReplicationRecord> records(static_cast<std::size_t>(config.replications));
  parallel_for(config.replications, options.workers, [&](long rep) {
    Trajectory traj = run_replication(config, static_cast<int>(rep));
    ReplicationRecord& rec = records[static_cast<std::size_t>(rep)];
    const std::size_t m = out.checkpoints.size();

    if (options.collect_mse) {
      rec.err_sq.resize(m);
      for (std::size_t j = 0; j < m; ++j)
        rec.err_sq[j] = traj.error_norm_sq(out.checkpoints[j]);
    }

    if (options.collect_regret) {
      rec.regret.assign(m, 0.0);
      rec.regret_full.assign(m, 0.0);
      double acc = 0.0, acc_full = 0.0;
      std::size_t j = 0;
      for (long k = 1; k <= traj.n_max() && j < m; ++k) {
        double gap = spec.cost(traj.theta(k)) - cost_star;
        acc_full += gap;
        if (k >= kappa_plus_idx) acc += gap;
        while (j < m && out.checkpoints[j] == k) {
          rec.regret[j] = acc;
          rec.regret_full[j] = acc_full;
          ++j;
        }
      }
    }

    if (options.collect_lyapunov) {
      Property1Report p1 =
          check_property1(traj, spec, config.noise, *table, kappa2, s_constant);
      rec.p1_violations = p1.violations;
      rec.p1_checked = p1.checked;
      rec.p1_worst = p1.worst_ratio;
      rec.drift.resize(out.checkpoints.size());
      rec.t1a.resize(out.checkpoints.size());
      rec.t1b.resize(out.checkpoints.size());
      rec.t2.resize(out.checkpoints.size());
      rec.cancel.resize(out.checkpoints.size());
      rec.v.resize(out.checkpoints.size());
      rec.v1.resize(out.checkpoints.size());
      rec.w.resize(out.checkpoints.size());
      rec.bound.resize(out.checkpoints.size());
      for (std::size_t j = 0; j < out.checkpoints.size(); ++j) {
        long n = out.checkpoints[j];
        rec.drift[j] = drift_sample(traj, spec, config.noise, n, lambda1, config.c0,
                                    options.drift_mode, options.tail_tol);
        DecompositionTerms terms =
            decomposition_terms(traj, spec, config.noise, n, config.c0, options.tail_tol);
        rec.t1a[j] = std::abs(terms.t1a);
        rec.t1b[j] = std::abs(terms.t1b);
        rec.t2[j] = terms.t2;
        rec.cancel[j] = std::abs(terms.t2 + terms.cross_term);
        Eigen::VectorXd err = traj.error(n);
        rec.v[j] = lyapunov_v(err);
        rec.v1[j] = -spec.gain_value(traj.theta(n)) *
                    err.dot(table->at(n) * traj.noise_before(n));
        rec.w[j] = rec.v[j] + rec.v1[j];
        rec.bound[j] = (rec.v[j] + 1.0) * s_constant / static_cast<double>(n);
      }
    }

    if (options.collect_rate) {
      double run_max_mid = 0.0, run_max_final = 0.0;
      const double two_gamma = 2.0 * options.gamma;
      for (long n = options.rate_lo; n <= traj.n_max(); ++n) {
        double stat_sq =
            std::pow(static_cast<double>(n), two_gamma) * traj.error_norm_sq(n);
        if (n <= rate_mid) run_max_mid = std::max(run_max_mid, stat_sq);
        run_max_final = std::max(run_max_final, stat_sq);
      }
      rec.rate_no_new_max = run_max_final <= run_max_mid;
      rec.rate_final = std::sqrt(run_max_final);
    }

    rec.projection_total = static_cast<long>(traj.projection_steps.size());
    for (long k : traj.projection_steps)
      if (k >= kappa_plus_idx) ++rec.projection_after_kappa;
  });

  // Fixed-order reduction across replications.
  const long r = config.replications;
  const std::size_t m = out.checkpoints.size();
  if (options.collect_mse) {
    Eigen::MatrixXd samples(r, static_cast<long>(m));
    for (long i = 0; i < r; ++i)
      for (std::size_t j = 0; j < m; ++j)
        samples(i, static_cast<long>(j)) = records[static_cast<std::size_t>(i)].err_sq[j];
    out.mse = curve_from_samples(samples, out.checkpoints);
    out.mse_fit = fit_power_law(out.mse);
  }
  if (options.collect_regret) {
    Eigen::MatrixXd samples(r, static_cast<long>(m));
    Eigen::MatrixXd samples_full(r, static_cast<long>(m));
    for (long i = 0; i < r; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        samples(i, static_cast<long>(j)) = records[static_cast<std::size_t>(i)].regret[j];
        samples_full(i, static_cast<long>(j)) =
            records[static_cast<std::size_t>(i)].regret_full[j];
      }
    out.regret = curve_from_samples(samples, out.checkpoints);
    out.regret_full = curve_from_samples(samples_full, out.checkpoints);
    out.regret_fit = fit_log_law(out.regret);
  }
  if (options.collect_lyapunov) {
    out.property1.from_n = kappa2;
    out.property1.s_constant = s_constant;
    for (const auto& rec : records) {
      out.property1.checked += rec.p1_checked;
      out.property1.violations += rec.p1_violations;
      out.property1.worst_ratio = std::max(out.property1.worst_ratio, rec.p1_worst);
    }
    for (std::size_t j = 0; j < m; ++j) {
      DriftEstimate d;
      d.n = out.checkpoints[j];
      d.replications = r;
      double mean = 0.0;
      for (const auto& rec : records) mean += rec.drift[j];
      mean /= static_cast<double>(r);
      double ss = 0.0;
      for (const auto& rec : records) ss += (rec.drift[j] - mean) * (rec.drift[j] - mean);
      d.estimate = mean;
      if (r > 1) d.se = std::sqrt(ss / static_cast<double>(r - 1) / static_cast<double>(r));
      d.kbar = mean > 0 ? static_cast<double>(d.n) * static_cast<double>(d.n) * mean : 0.0;
      out.drifts.push_back(d);

      DecompositionAggregate agg;
      agg.n = out.checkpoints[j];
      LyapunovAggregate lya;
      lya.n = agg.n;
      for (const auto& rec : records) {
        agg.mean_abs_t1a += rec.t1a[j];
        agg.mean_abs_t1b += rec.t1b[j];
        agg.mean_t2 += rec.t2[j];
        agg.max_cancellation_error = std::max(agg.max_cancellation_error, rec.cancel[j]);
        lya.mean_v += rec.v[j];
        lya.mean_v1 += rec.v1[j];
        lya.mean_w += rec.w[j];
        lya.mean_bound_rhs += rec.bound[j];
      }
      agg.mean_abs_t1a /= static_cast<double>(r);
      agg.mean_abs_t1b /= static_cast<double>(r);
      agg.mean_t2 /= static_cast<double>(r);
      agg.n_sq_t1ab = static_cast<double>(agg.n) * static_cast<double>(agg.n) *
                      (agg.mean_abs_t1a + agg.mean_abs_t1b);
      out.decomposition.push_back(agg);
      lya.mean_v /= static_cast<double>(r);
      lya.mean_v1 /= static_cast<double>(r);
      lya.mean_w /= static_cast<double>(r);
      lya.mean_bound_rhs /= static_cast<double>(r);
      out.lyapunov.push_back(lya);
    }
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& agg : out.decomposition) {
      lo = std::min(lo, agg.n_sq_t1ab);
      hi = std::max(hi, agg.n_sq_t1ab);
    }
    out.decomposition_ratio = lo > 0 ? hi / lo : (hi == 0 ? 1.0 : std::numeric_limits<double>::infinity());
  }
  if (options.collect_rate) {
    for (const auto& rec : records) {
      ++out.rate_total;
      if (rec.rate_no_new_max) ++out.rate_no_new_max;
      out.rate_worst_final = std::max(out.rate_worst_final, rec.rate_final);
    }
  }
  for (const auto& rec : records) {
    out.projection_steps_total += rec.projection_total;
    out.projection_steps_after_kappa += rec.projection_after_kappa;
  }
  return out;
}

OracleCheckResult run_oracle_check(const RunConfig& config, const std::vector<long>& checkpoints,
                                   int workers) {
  config.validate();
  if (config.objective.dimension() != 1)
    throw std::invalid_argument("the exact oracle covers the one-dimensional case");
  if (config.noise.kind() != NoiseKind::IidGaussian)
    throw std::invalid_argument("the exact oracle assumes iid noise");
  if (config.objective.perturbation())
    throw std::invalid_argument("the exact oracle assumes a purely quadratic objective");
  if (!config.objective.gain().is_constant())
    throw std::invalid_argument("the exact oracle assumes a constant gain");

  const double b = config.objective.b()(0, 0);
  const double sigma =
      config.objective.gain().sigma * std::sqrt(config.noise.stationary_covariance()(0, 0));
  const double theta0_err = (config.theta0 - config.objective.theta_star()).norm();

  Eigen::MatrixXd samples(config.replications, static_cast<long>(checkpoints.size()));
  std::vector<long> projections(static_cast<std::size_t>(config.replications), 0);
  parallel_for(config.replications, workers, [&](long rep) {
    Trajectory traj = run_replication(config, static_cast<int>(rep));
    for (std::size_t j = 0; j < checkpoints.size(); ++j)
      samples(rep, static_cast<long>(j)) = traj.error_norm_sq(checkpoints[j]);
    projections[static_cast<std::size_t>(rep)] =
        static_cast<long>(traj.projection_steps.size());
  });

  OracleCheckResult out;
  CurveReport curve = curve_from_samples(samples, checkpoints);
  out.all_within_3se = true;
  for (std::size_t j = 0; j < checkpoints.size(); ++j) {
    OracleCheckPoint pt;
    pt.n = checkpoints[j];
    pt.mc = curve.points[j].value;
    pt.se = curve.points[j].se;
    pt.oracle = exact_mse_oracle(b, sigma, theta0_err, config.c0, pt.n);
    pt.z = pt.se > 0 ? (pt.mc - pt.oracle) / pt.se : (pt.mc == pt.oracle ? 0.0 : 1e300);
    if (std::abs(pt.z) > 3.0) out.all_within_3se = false;
    out.points.push_back(pt);
  }
  for (long p : projections) out.projection_steps += p;
  // An active projection would invalidate the unconstrained oracle.
  if (out.projection_steps > 0) out.all_within_3se = false;
  return out;
}

}  // namespace sgdlab
