#include "sgdlab/escape.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "sgdlab/fit.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/seeding.hpp"

namespace sgdlab {

double interpolation_time(long n) {
  if (n < 1) throw std::invalid_argument("interpolated time index must be >= 1");
  double t = 0.0;
  for (long k = 1; k < n; ++k) t += 1.0 / static_cast<double>(k);
  return t;
}

bool Region::contains(const Eigen::VectorXd& err) const {
  switch (kind) {
    case Kind::Box:
      return err.cwiseAbs().maxCoeff() <= radius;
    case Kind::Ball:
      return err.norm() <= radius;
  }
  throw std::logic_error("unreachable");
}

void EscapeConfig::validate() const {
  if (objective.dimension() != noise.dimension())
    throw std::invalid_argument("objective and noise dimensions differ");
  if (horizon <= 0) throw std::invalid_argument("horizon must be positive");
  if (replications < 1) throw std::invalid_argument("replications must be >= 1");
  if (scales.empty()) throw std::invalid_argument("need at least one scale");
  for (long n : scales)
    if (n < 1) throw std::invalid_argument("scales must be >= 1");
  if (exit_region.radius <= 0) throw std::invalid_argument("exit region radius must be positive");
  if (mu <= 0) throw std::invalid_argument("mu must be positive");
  // closure of N_mu must sit strictly inside G
  double g_inner = exit_region.radius;  // ball inradius equals radius; box inradius too
  if (mu >= g_inner)
    throw std::invalid_argument("closure of N_mu(theta*) must be contained in G: mu < G radius");
  if (nu_radius() > mu) throw std::invalid_argument("nu(mu) must not exceed mu");
}

namespace {

// Uniform draw from the ball of the given radius around the origin.
Eigen::VectorXd uniform_ball(std::mt19937_64& rng, int p, double radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd z(p);
  for (int i = 0; i < p; ++i) z[i] = normal(rng);
  double norm = z.norm();
  if (norm == 0) return Eigen::VectorXd::Zero(p);
  double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(p));
  return (r / norm) * z;
}

long steps_until_horizon(long scale, double horizon) {
  double t = 0.0;
  long k = scale;
  long steps = 0;
  while (t + 1.0 / static_cast<double>(k) <= horizon + 1e-15) {
    t += 1.0 / static_cast<double>(k);
    ++k;
    ++steps;
    if (steps > 500000000L) throw std::invalid_argument("horizon too long for this scale");
  }
  return steps;
}

}  // namespace

std::vector<ScaleExits> simulate_exit(const EscapeConfig& config, int workers) {
  config.validate();
  const int p = config.objective.dimension();
  const double nu = config.nu_radius();
  std::vector<ScaleExits> results(config.scales.size());

  for (std::size_t s = 0; s < config.scales.size(); ++s) {
    const long scale = config.scales[s];
    ScaleExits& res = results[s];
    res.scale = scale;
    res.samples.assign(static_cast<std::size_t>(config.replications), ExitSample{});
    const long max_steps = steps_until_horizon(scale, config.horizon) + 1;

    parallel_for(config.replications, workers, [&](long rep) {
      std::uint64_t seed = derive_seed(config.seed, "escape", static_cast<std::uint64_t>(s),
                                       static_cast<std::uint64_t>(rep));
      std::mt19937_64 start_rng(splitmix64(seed));
      Eigen::VectorXd err = uniform_ball(start_rng, p, nu);
      Eigen::VectorXd theta = config.objective.theta_star() + err;
      Eigen::MatrixXd path = config.noise.sample_path(seed, max_steps).transpose();

      ExitSample sample;
      sample.tau = config.horizon;
      double t = 0.0;
      long k = scale;
      long j = 0;
      while (true) {
        if (!config.exit_region.contains(theta - config.objective.theta_star())) {
          sample.exited = true;
          sample.tau = t;
          break;
        }
        double dt = 1.0 / static_cast<double>(k);
        if (t + dt > config.horizon + 1e-15) {
          // theta^n(T) is the current value; test the end-state event.
          sample.end_state_event =
              (theta - config.objective.theta_star()).norm() > nu;
          break;
        }
        theta -= dt * config.objective.noisy_grad(theta, path.col(j));
        t += dt;
        ++k;
        ++j;
      }
      res.samples[static_cast<std::size_t>(rep)] = sample;
    });

    for (const auto& sample : res.samples) {
      if (sample.exited) ++res.exits;
      if (sample.exited || sample.end_state_event) ++res.combined_events;
    }
  }
  return results;
}

ExitProbability exit_probability(const std::vector<ExitSample>& samples, double horizon) {
  if (samples.empty()) throw std::invalid_argument("need at least one sample");
  ExitProbability out;
  out.total = static_cast<long>(samples.size());
  for (const auto& s : samples) {
    bool event = (s.exited && s.tau <= horizon + 1e-15) || s.end_state_event;
    if (event) ++out.events;
  }
  const double r = static_cast<double>(out.total);
  out.p_hat = static_cast<double>(out.events) / r;
  if (out.events == 0) {
    out.ci_lo = 0.0;
    out.ci_hi = std::min(1.0, 3.0 / r);  // rule of three
  } else if (out.events == out.total) {
    out.ci_lo = std::max(0.0, 1.0 - 3.0 / r);
    out.ci_hi = 1.0;
  } else {
    double se = std::sqrt(out.p_hat * (1.0 - out.p_hat) / r);
    out.ci_lo = std::max(0.0, out.p_hat - 1.96 * se);
    out.ci_hi = std::min(1.0, out.p_hat + 1.96 * se);
  }
  return out;
}

ExponentFit fit_exponent(const std::vector<long>& scales, const std::vector<double>& p_hats) {
  if (scales.size() != p_hats.size())
    throw std::invalid_argument("scales and estimates must align");
  ExponentFit out;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (p_hats[i] > 0) {
      x.push_back(static_cast<double>(scales[i]));
      y.push_back(std::log(p_hats[i]));
    } else {
      out.starved.push_back(scales[i]);
    }
  }
  if (x.size() < 3) return out;  // starvation is a report state, not a failure
  LinearFit fit = least_squares(x, y);
  out.h0 = -fit.slope;
  out.r2 = fit.r2;
  out.defined = fit.defined;
  return out;
}

GrowthReport mean_exit_growth(const std::vector<ScaleExits>& results, double horizon) {
  GrowthReport out;
  for (const auto& res : results) {
    if (res.samples.empty()) throw std::invalid_argument("scale without samples");
    double acc = 0.0;
    for (const auto& s : res.samples) acc += s.exited ? s.tau : horizon;
    out.scales.push_back(res.scale);
    out.tau_lower_bounds.push_back(acc / static_cast<double>(res.samples.size()));
    if (res.exits > 0) out.informative = true;
  }
  out.nondecreasing = true;
  for (std::size_t i = 1; i < out.tau_lower_bounds.size(); ++i)
    if (out.tau_lower_bounds[i] + 1e-12 < out.tau_lower_bounds[i - 1]) out.nondecreasing = false;
  if (out.scales.size() >= 3 && out.informative) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < out.scales.size(); ++i) {
      if (out.tau_lower_bounds[i] > 0) {
        x.push_back(static_cast<double>(out.scales[i]));
        y.push_back(std::log(out.tau_lower_bounds[i]));
      }
    }
    if (x.size() >= 3) {
      LinearFit fit = least_squares(x, y);
      out.h1 = fit.slope;
      out.h1_defined = fit.defined;
    }
  }
  return out;
}

Eigen::MatrixXd rate_q(const ObjectiveSpec& spec, const NoiseModel& model) {
  double g = spec.gain_value(spec.theta_star());
  return g * g * model.long_run_covariance();
}

double h_integral(const Eigen::MatrixXd& q, const Eigen::MatrixXd& alpha_path, double horizon) {
  if (horizon <= 0) throw std::invalid_argument("horizon must be positive");
  if (alpha_path.rows() < 1) throw std::invalid_argument("alpha path must be nonempty");
  if (alpha_path.cols() != q.rows() || q.rows() != q.cols())
    throw std::invalid_argument("alpha path and Q dimensions differ");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, q.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("Q must be positive semidefinite");
  const double dt = horizon / static_cast<double>(alpha_path.rows());
  double acc = 0.0;
  for (long i = 0; i < alpha_path.rows(); ++i) {
    Eigen::VectorXd a = alpha_path.row(i).transpose();
    acc += a.dot(q * a) * dt;
  }
  return acc;
}

double legendre(const Eigen::MatrixXd& q, const Eigen::VectorXd& beta,
                const Eigen::VectorXd& drift, double s) {
  if (q.rows() != q.cols() || q.rows() != beta.size() || beta.size() != drift.size())
    throw std::invalid_argument("Q, beta, drift dimensions differ");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  double scale = std::max(1.0, q.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() <= 1e-12 * scale) {
    std::string dirs;
    for (long i = 0; i < es.eigenvalues().size(); ++i) {
      if (es.eigenvalues()(i) <= 1e-12 * scale) {
        if (!dirs.empty()) dirs += ", ";
        Eigen::VectorXd v = es.eigenvectors().col(i);
        dirs += "[";
        for (long j = 0; j < v.size(); ++j) {
          if (j) dirs += " ";
          dirs += std::to_string(v(j));
        }
        dirs += "]";
      }
    }
    throw std::invalid_argument("Q is singular along " + dirs +
                                "; the Legendre transform is unbounded there");
  }
  Eigen::VectorXd gap = beta - drift;
  // sup over alpha of a concave function that is 0 at alpha = 0, so never negative.
  return std::max(0.0, std::exp(-s) * gap.dot(q.ldlt().solve(gap)) / 4.0);
}

namespace {

// Golden-section maximization of a concave 1-D slice.
template <typename F>
double golden_max(F&& f, double lo, double hi, double tol) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

double legendre_numeric(const Eigen::MatrixXd& q, const Eigen::VectorXd& beta,
                        const Eigen::VectorXd& drift, double s) {
  const long p = beta.size();
  const Eigen::VectorXd gap = beta - drift;
  const double es = std::exp(s);
  auto objective = [&](const Eigen::VectorXd& alpha) {
    return alpha.dot(gap) - es * alpha.dot(q * alpha);
  };
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p);
  // Cyclic coordinate ascent; each slice is concave quadratic, and the
  // bracket is expanded until the maximizer is interior.
  double prev = objective(alpha);
  for (int sweep = 0; sweep < 400; ++sweep) {
    for (long d = 0; d < p; ++d) {
      double radius = 1.0;
      double center = alpha[d];
      auto slice = [&](double v) {
        Eigen::VectorXd a2 = alpha;
        a2[d] = v;
        return objective(a2);
      };
      while (radius < 1e8) {
        double best = golden_max(slice, center - radius, center + radius, 1e-12 * radius + 1e-14);
        if (std::abs(best - center) < 0.95 * radius) {
          alpha[d] = best;
          break;
        }
        radius *= 4.0;
      }
    }
    double cur = objective(alpha);
    if (std::abs(cur - prev) <= 1e-14 * (1.0 + std::abs(cur))) break;
    prev = cur;
  }
  return objective(alpha);
}

Eigen::VectorXd flow_drift(const ObjectiveSpec& spec, const Eigen::VectorXd& psi,
                           FlowDriftMode mode) {
  Eigen::VectorXd theta = spec.theta_star() + psi;
  switch (mode) {
    case FlowDriftMode::NegativeGradient:
      return -spec.grad(theta);
    case FlowDriftMode::LiteralCost: {
      if (spec.dimension() != 1)
        throw std::invalid_argument("literal-cost drift is only interpretable in one dimension");
      Eigen::VectorXd d(1);
      d[0] = spec.cost(theta);
      return d;
    }
  }
  throw std::logic_error("unreachable");
}

double action(const Eigen::MatrixXd& psi_path, double horizon, const Eigen::MatrixXd& q,
              const ObjectiveSpec& spec, FlowDriftMode mode) {
  if (psi_path.rows() < 2) throw std::invalid_argument("path needs at least two grid points");
  if (horizon <= 0) throw std::invalid_argument("horizon must be positive");
  const long m = psi_path.rows() - 1;
  const double dt = horizon / static_cast<double>(m);
  double acc = 0.0;
  for (long i = 0; i < m; ++i) {
    Eigen::VectorXd slope = (psi_path.row(i + 1) - psi_path.row(i)).transpose() / dt;
    Eigen::VectorXd mid = 0.5 * (psi_path.row(i + 1) + psi_path.row(i)).transpose();
    double u = (static_cast<double>(i) + 0.5) * dt;
    acc += legendre(q, slope, flow_drift(spec, mid, mode), u) * dt;
  }
  return acc;
}

Eigen::MatrixXd mean_flow_path(const ObjectiveSpec& spec, const Eigen::VectorXd& psi0,
                               double horizon, long segments, FlowDriftMode mode) {
  if (segments < 1) throw std::invalid_argument("need at least one segment");
  const double dt = horizon / static_cast<double>(segments);
  Eigen::MatrixXd path(segments + 1, psi0.size());
  path.row(0) = psi0.transpose();
  Eigen::VectorXd cur = psi0;
  for (long i = 0; i < segments; ++i) {
    // Fixed-point iteration for psi_{i+1} = psi_i + dt * drift((psi_i + psi_{i+1})/2).
    Eigen::VectorXd next = cur + dt * flow_drift(spec, cur, mode);
    for (int it = 0; it < 200; ++it) {
      Eigen::VectorXd mid = 0.5 * (cur + next);
      Eigen::VectorXd candidate = cur + dt * flow_drift(spec, mid, mode);
      if ((candidate - next).norm() <= 1e-15 * (1.0 + next.norm())) {
        next = candidate;
        break;
      }
      next = candidate;
    }
    path.row(i + 1) = next.transpose();
    cur = next;
  }
  return path;
}

}  // namespace sgdlab
