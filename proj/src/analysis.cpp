#include "sgdlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sgdlab/csv.hpp"

namespace sgdlab {

ConstantsReport kappa_plus(double k0, double gamma, double kd, double alpha,
                           double lambda, double lambda0,
                           const MixingBound& psi, const MixingBound& psi_bar) {
  if (k0 <= 0) throw std::invalid_argument("K0 must be positive");
  if (gamma <= 0 || gamma >= 0.5) throw std::invalid_argument("gamma must lie in (0, 1/2)");
  if (kd < 0) throw std::invalid_argument("K_D must be nonnegative");
  if (alpha <= 0) throw std::invalid_argument("alpha must be positive");
  if (lambda0 <= 0 || lambda <= 1.0 + lambda0)
    throw std::invalid_argument("lambda0 must lie in (0, lambda - 1); got lambda = " +
                                std::to_string(lambda) + ", lambda0 = " + std::to_string(lambda0));
  if (!psi.summable() || !psi_bar.summable())
    throw std::invalid_argument("mixing bounds must be summable");

  ConstantsReport r;
  r.k0 = k0;
  r.gamma = gamma;
  r.kd = kd;
  r.alpha = alpha;
  r.lambda = lambda;
  r.lambda0 = lambda0;
  r.lambda1 = lambda - lambda0;

  if (kd > 0) {
    r.k2 = std::pow(lambda0 / kd, 1.0 / alpha);
    double raw = std::pow(2.0 * k0 / r.k2, 1.0 / gamma);
    if (raw > 1e15) throw std::invalid_argument("kappa1 overflows a practical horizon");
    r.kappa1 = std::max<long>(1, static_cast<long>(std::ceil(raw)));
  } else {
    // No perturbation: the A4 remainder is identically zero.
    r.k2 = std::numeric_limits<double>::infinity();
    r.kappa1 = 1;
  }

  long n = 1;
  while (psi.tail_sum(n) > 1.0 || psi_bar.tail_sum(n) > 1.0) {
    ++n;
    if (n > 100000000L) throw std::invalid_argument("kappa2 exceeds practical horizon");
  }
  r.kappa2 = n;
  r.kappa_plus = std::max(r.kappa1, r.kappa2);
  return r;
}

CurveReport curve_from_samples(const Eigen::MatrixXd& samples,
                               const std::vector<long>& checkpoints) {
  if (samples.cols() != static_cast<long>(checkpoints.size()))
    throw std::invalid_argument("sample columns must match checkpoints");
  const long r = samples.rows();
  if (r < 1) throw std::invalid_argument("need at least one replication");
  CurveReport out;
  out.points.reserve(checkpoints.size());
  for (long j = 0; j < samples.cols(); ++j) {
    CurvePoint pt;
    pt.n = checkpoints[static_cast<std::size_t>(j)];
    pt.value = samples.col(j).mean();
    if (r > 1) {
      double ss = (samples.col(j).array() - pt.value).square().sum();
      pt.se = std::sqrt(ss / static_cast<double>(r - 1) / static_cast<double>(r));
    }
    out.points.push_back(pt);
  }
  return out;
}

CurveReport mse_curve(const std::vector<Trajectory>& ensemble,
                      const std::vector<long>& checkpoints) {
  if (ensemble.size() < 2) throw std::invalid_argument("ensemble must have >= 2 replications");
  Eigen::MatrixXd samples(static_cast<long>(ensemble.size()),
                          static_cast<long>(checkpoints.size()));
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    for (std::size_t j = 0; j < checkpoints.size(); ++j) {
      long n = checkpoints[j];
      if (n < 0 || n > ensemble[i].n_max())
        throw std::invalid_argument("checkpoint beyond trajectory horizon");
      samples(static_cast<long>(i), static_cast<long>(j)) = ensemble[i].error_norm_sq(n);
    }
  }
  return curve_from_samples(samples, checkpoints);
}

CurveReport regret_curve(const std::vector<Trajectory>& ensemble, const ObjectiveSpec& spec,
                         long from, const std::vector<long>& checkpoints) {
  if (ensemble.empty()) throw std::invalid_argument("empty ensemble");
  if (from < 0) throw std::invalid_argument("regret start index must be >= 0");
  const double cost_star = spec.cost(spec.theta_star());
  Eigen::MatrixXd samples(static_cast<long>(ensemble.size()),
                          static_cast<long>(checkpoints.size()));
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const Trajectory& t = ensemble[i];
    double acc = 0.0;
    std::size_t j = 0;
    while (j < checkpoints.size() && checkpoints[j] < from) {
      samples(static_cast<long>(i), static_cast<long>(j)) = 0.0;
      ++j;
    }
    for (long k = from; k <= t.n_max() && j < checkpoints.size(); ++k) {
      acc += spec.cost(t.theta(k)) - cost_star;
      while (j < checkpoints.size() && checkpoints[j] == k) {
        samples(static_cast<long>(i), static_cast<long>(j)) = acc;
        ++j;
      }
    }
    if (j < checkpoints.size()) throw std::invalid_argument("checkpoint beyond trajectory horizon");
  }
  return curve_from_samples(samples, checkpoints);
}

PowerLawFit fit_power_law(const CurveReport& curve) {
  PowerLawFit out;
  std::vector<double> lx, ly;
  for (const auto& pt : curve.points) {
    if (pt.value <= 0)
      throw std::invalid_argument("power law fit needs positive values at every checkpoint");
    lx.push_back(std::log(static_cast<double>(pt.n)));
    ly.push_back(std::log(pt.value));
    out.envelope = std::max(out.envelope, static_cast<double>(pt.n) * pt.value);
  }
  if (curve.points.size() < 3) return out;  // fit undefined, reported as such
  LinearFit fit = least_squares(lx, ly);
  out.slope = fit.slope;
  out.intercept = fit.intercept;
  out.r2 = fit.r2;
  out.defined = fit.defined;
  return out;
}

LogLawFit fit_log_law(const CurveReport& curve) {
  LogLawFit out;
  if (curve.points.size() < 3) return out;
  std::vector<double> lx, y;
  for (const auto& pt : curve.points) {
    lx.push_back(std::log(static_cast<double>(pt.n)));
    y.push_back(pt.value);
  }
  LinearFit fit = least_squares(lx, y);
  out.a = fit.intercept;
  out.b = fit.slope;
  out.r2 = fit.r2;
  out.defined = fit.defined;
  return out;
}

double exact_mse_oracle(double b, double sigma, double theta0_err, double c0, long n) {
  if (n < 0) throw std::invalid_argument("n must be >= 0");
  double m = theta0_err * theta0_err;
  for (long k = 0; k < n; ++k) {
    double eps = step_size(k, c0);
    double contraction = 1.0 - eps * b;
    m = contraction * contraction * m + eps * eps * sigma * sigma;
  }
  return m;
}

RateStatistic as_rate_statistic(const Trajectory& trajectory, double gamma,
                                const std::vector<long>& window) {
  if (gamma < 0 || gamma >= 0.5) throw std::invalid_argument("gamma must lie in [0, 1/2)");
  RateStatistic out;
  out.checkpoints = window;
  double running = 0.0;
  for (long n : window) {
    if (n < 0 || n > trajectory.n_max())
      throw std::invalid_argument("window checkpoint beyond trajectory horizon");
    double v = std::pow(static_cast<double>(n), gamma) *
               std::sqrt(trajectory.error_norm_sq(n));
    running = std::max(running, v);
    out.values.push_back(v);
    out.running_max.push_back(running);
  }
  return out;
}

std::vector<long> geometric_checkpoints(long lo, long hi) {
  if (lo < 1 || hi < lo) throw std::invalid_argument("need 1 <= lo <= hi");
  std::vector<long> out;
  for (int j = 0;; ++j) {
    double v = static_cast<double>(lo) * std::pow(2.0, 0.5 * j);
    long n = static_cast<long>(std::ceil(v));
    if (n > hi) break;
    if (out.empty() || out.back() != n) out.push_back(n);
  }
  if (out.empty() || out.back() != hi) out.push_back(hi);
  return out;
}

void write_curve_csv(const std::string& path, const CurveReport& mse, const CurveReport& regret) {
  if (mse.points.size() != regret.points.size())
    throw std::invalid_argument("mse and regret curves must share checkpoints");
  CsvWriter csv(path);
  csv.header({"n", "mse", "mse_se", "regret", "regret_se"});
  for (std::size_t i = 0; i < mse.points.size(); ++i) {
    if (mse.points[i].n != regret.points[i].n)
      throw std::invalid_argument("mse and regret curves must share checkpoints");
    csv.cell(mse.points[i].n);
    csv.cell(mse.points[i].value);
    csv.cell(mse.points[i].se);
    csv.cell(regret.points[i].value);
    csv.cell(regret.points[i].se);
    csv.end_row();
  }
}

}  // namespace sgdlab
