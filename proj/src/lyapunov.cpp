#include "sgdlab/lyapunov.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sgdlab {

namespace {

double matrix_2norm(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

void require_var1_or_iid(const NoiseModel& model, const char* what) {
  if (model.kind() == NoiseKind::MaQ)
    throw std::invalid_argument(std::string(what) + " needs a closed-form conditional tail; "
                                "ma models are not supported");
}

// Powers A^1..A^m until ||A^m|| decays below tol (relative to the running
// sum scale), capped.  Returns the cached powers; tail_ratio receives a
// decay factor certified by the last observed ratios.
std::vector<Eigen::MatrixXd> power_cache(const Eigen::MatrixXd& a, double tol,
                                         double* tail_ratio) {
  const long cap = 5000;
  std::vector<Eigen::MatrixXd> powers;
  powers.push_back(a);
  double rho = std::min(0.999, std::max(a.eigenvalues().cwiseAbs().maxCoeff(), 1e-3));
  double prev = matrix_2norm(a);
  double ratio = rho;
  while (static_cast<long>(powers.size()) < cap) {
    Eigen::MatrixXd next = powers.back() * a;
    double cur = matrix_2norm(next);
    if (prev > 0) ratio = std::min(0.999, std::max(rho, cur / prev));
    powers.push_back(std::move(next));
    if (cur < tol && powers.size() >= 20) break;
    prev = cur;
  }
  if (tail_ratio) *tail_ratio = ratio;
  return powers;
}

// Shared state for the conditional tail sums of one model.
struct TailContext {
  bool zero = false;  // iid
  Eigen::MatrixXd a;
  std::vector<Eigen::MatrixXd> powers;  // powers[m-1] = A^m
  double tail_ratio = 0.0;

  explicit TailContext(const NoiseModel& model, double tol) {
    if (model.kind() == NoiseKind::IidGaussian || model.dimension() == 0) {
      zero = true;
      return;
    }
    a = model.ar_matrix();
    if (a.cwiseAbs().maxCoeff() == 0.0) {
      zero = true;
      return;
    }
    powers = power_cache(a, tol, &tail_ratio);
  }

  // T(n) = sum_{m >= 1} A^m / (n + m - 1), remainder certified by the
  // geometric tail of the cached power norms.
  Eigen::MatrixXd tail_matrix(long n, double* remainder) const {
    const int p = static_cast<int>(a.rows());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(p, p);
    if (zero) {
      if (remainder) *remainder = 0.0;
      return t;
    }
    for (std::size_t i = 0; i < powers.size(); ++i) {
      t += powers[i] / static_cast<double>(n + static_cast<long>(i));
    }
    if (remainder) {
      double last = matrix_2norm(powers.back());
      double f = tail_ratio;
      *remainder = last * f / (1.0 - f) /
                   static_cast<double>(n + static_cast<long>(powers.size()) - 1);
    }
    return t;
  }
};

}  // namespace

Eigen::MatrixXd v1_tail_matrix(const NoiseModel& model, long n, double tol) {
  if (n < 1) throw std::invalid_argument("tail index must be >= 1");
  require_var1_or_iid(model, "v1 tail");
  if (model.kind() == NoiseKind::IidGaussian)
    return Eigen::MatrixXd::Zero(model.dimension(), model.dimension());
  TailContext ctx(model, tol);
  return ctx.tail_matrix(n, nullptr);
}

V1Table::V1Table(const NoiseModel& model, long n_lo, long n_hi, double tol) : lo_(n_lo) {
  if (n_lo < 1 || n_hi < n_lo) throw std::invalid_argument("need 1 <= n_lo <= n_hi");
  require_var1_or_iid(model, "v1 table");
  TailContext ctx(model, tol);
  const int p = model.dimension();
  mats_.reserve(static_cast<std::size_t>(n_hi - n_lo + 1));
  if (ctx.zero) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(p, p);
    for (long n = n_lo; n <= n_hi; ++n) mats_.push_back(z);
    return;
  }
  for (long n = n_lo; n <= n_hi; ++n) mats_.push_back(ctx.tail_matrix(n, nullptr));
}

const Eigen::MatrixXd& V1Table::at(long n) const {
  if (n < lo_ || n > hi()) throw std::out_of_range("v1 table index out of range");
  return mats_[static_cast<std::size_t>(n - lo_)];
}

V1Result v1(const ObjectiveSpec& spec, const NoiseModel& model, const Eigen::VectorXd& theta,
            const Eigen::VectorXd& x_last, long n, double tail_tol) {
  if (n < 1) throw std::invalid_argument("v1 index must be >= 1");
  if (tail_tol <= 0) throw std::invalid_argument("tail_tol must be positive");
  require_var1_or_iid(model, "v1");
  Eigen::VectorXd err = theta - spec.theta_star();
  V1Result out;
  if (model.kind() == NoiseKind::IidGaussian) return out;  // conditional means vanish

  const Eigen::MatrixXd& a = model.ar_matrix();
  double g = spec.gain_value(theta);
  double rho = std::min(0.999, model.spectral_radius());
  // sum_{k >= n} (1/k) err' A^{k-n+1} x, accumulated until the term and its
  // certified geometric tail drop below tail_tol.
  Eigen::VectorXd ax = a * x_last;
  double sum = 0.0;
  double term_scale = 0.0;
  long m = 1;
  const long cap = 100000;
  double prev_norm = ax.norm();
  double ratio = rho;
  while (true) {
    double coeff = 1.0 / static_cast<double>(n + m - 1);
    sum += coeff * err.dot(ax);
    term_scale = g * err.norm() * prev_norm * coeff;
    if ((m >= 20 && term_scale < tail_tol) || m >= cap) break;
    ax = a * ax;
    double cur = ax.norm();
    if (prev_norm > 0) ratio = std::min(0.999, std::max(rho, cur / prev_norm));
    prev_norm = cur;
    ++m;
  }
  out.value = -g * sum;
  out.truncation_bound = term_scale * ratio / (1.0 - ratio);
  return out;
}

double certified_v1_constant(const ObjectiveSpec& spec, const NoiseModel& model) {
  require_var1_or_iid(model, "certified v1 constant");
  if (model.kind() == NoiseKind::IidGaussian) return 0.0;
  TailContext ctx(model, 1e-16);
  if (ctx.zero) return 0.0;
  double s = 0.0;
  double last = 0.0;
  for (const auto& pm : ctx.powers) {
    last = matrix_2norm(pm);
    s += last;
  }
  s += last * ctx.tail_ratio / (1.0 - ctx.tail_ratio);
  return spec.gain().max_value() * model.noise_norm_bound() * s;
}

namespace {

Property1Report scan_property1(const Trajectory& trajectory, const ObjectiveSpec& spec,
                               const NoiseModel& model, const V1Table& table, long kappa2,
                               double s_constant, bool include_pre_regime) {
  if (kappa2 < 1) throw std::invalid_argument("kappa2 must be >= 1");
  Property1Report rep;
  rep.from_n = kappa2;
  rep.s_constant = s_constant;
  const long lo = include_pre_regime ? 1 : kappa2;
  const long hi = trajectory.n_max();
  for (long n = lo; n <= hi; ++n) {
    Eigen::VectorXd err = trajectory.error(n);
    double g = spec.gain_value(trajectory.theta(n));
    double value = std::abs(-g * err.dot(table.at(n) * trajectory.noise_before(n)));
    double bound = (lyapunov_v(err) + 1.0) * s_constant / static_cast<double>(n);
    double ratio;
    if (bound > 0.0)
      ratio = value / bound;
    else
      ratio = value == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    if (n >= kappa2) {
      ++rep.checked;
      rep.worst_ratio = std::max(rep.worst_ratio, ratio);
      if (ratio > 1.0 + 1e-12) ++rep.violations;
    } else {
      ++rep.pre_regime_checked;
      rep.pre_regime_worst_ratio = std::max(rep.pre_regime_worst_ratio, ratio);
      if (ratio > 1.0 + 1e-12) ++rep.pre_regime_violations;
    }
  }
  return rep;
}

}  // namespace

Property1Report check_property1(const Trajectory& trajectory, const ObjectiveSpec& spec,
                                const NoiseModel& model, long kappa2, double s_constant,
                                bool include_pre_regime) {
  V1Table table(model, 1, std::max<long>(1, trajectory.n_max()));
  return scan_property1(trajectory, spec, model, table, kappa2, s_constant, include_pre_regime);
}

Property1Report check_property1(const Trajectory& trajectory, const ObjectiveSpec& spec,
                                const NoiseModel& model, const V1Table& table, long kappa2,
                                double s_constant, bool include_pre_regime) {
  return scan_property1(trajectory, spec, model, table, kappa2, s_constant, include_pre_regime);
}

namespace {

double v1_from_table(const ObjectiveSpec& spec, const Eigen::MatrixXd& tail,
                     const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_star,
                     const Eigen::VectorXd& x_state) {
  return -spec.gain_value(theta) * (theta - theta_star).dot(tail * x_state);
}

}  // namespace

double drift_sample(const Trajectory& trajectory, const ObjectiveSpec& spec,
                    const NoiseModel& model, long n, double lambda1, double c0, DriftMode mode,
                    double tail_tol) {
  if (n < 1 || n + 1 > trajectory.n_max())
    throw std::invalid_argument("drift sample needs 1 <= n < n_max");
  require_var1_or_iid(model, "drift sample");

  TailContext ctx(model, tail_tol * 1e-2);
  Eigen::MatrixXd tail_n = ctx.tail_matrix(n, nullptr);
  Eigen::MatrixXd tail_next = ctx.tail_matrix(n + 1, nullptr);

  const Eigen::VectorXd theta_n = trajectory.theta(n);
  const Eigen::VectorXd err_n = trajectory.error(n);
  const Eigen::VectorXd x_prev = trajectory.noise_before(n);
  const double w_n = lyapunov_v(err_n) +
                     v1_from_table(spec, tail_n, theta_n, trajectory.theta_star, x_prev);

  double w_next;
  if (mode == DriftMode::Sampled) {
    Eigen::VectorXd theta_next = trajectory.theta(n + 1);
    w_next = lyapunov_v(trajectory.error(n + 1)) +
             v1_from_table(spec, tail_next, theta_next, trajectory.theta_star,
                           trajectory.noise_before(n + 1));
  } else {
    if (!spec.gain().is_constant())
      throw std::invalid_argument(
          "exact conditional drift is closed form only for constant gains; use Sampled");
    const double g = spec.gain().sigma;
    const double eps = step_size(n, c0);
    const int p = spec.dimension();
    Eigen::MatrixXd sigma_w = model.kind() == NoiseKind::IidGaussian
                                  ? model.stationary_covariance()
                                  : model.innovation_covariance();
    Eigen::VectorXd mean_x = model.kind() == NoiseKind::Var1
                                 ? (model.ar_matrix() * x_prev).eval()
                                 : Eigen::VectorXd::Zero(p).eval();
    // E_n err_{n+1} and the conditional second-moment corrections.
    Eigen::VectorXd mu = err_n - eps * (spec.grad(theta_n) + g * mean_x);
    double e_v = 0.5 * mu.squaredNorm() + 0.5 * eps * eps * g * g * sigma_w.trace();
    // E_n V1(err_{n+1}, n+1) with err_{n+1} = mu - eps g w and X_n = mean_x + w.
    double e_v1 = -g * (mu.dot(tail_next * mean_x) -
                        eps * g * (tail_next * sigma_w).trace());
    w_next = e_v + e_v1;
  }
  return w_next - w_n + (lambda1 / static_cast<double>(n)) * w_n;
}

DriftEstimate estimate_drift(const std::vector<Trajectory>& ensemble, const ObjectiveSpec& spec,
                             const NoiseModel& model, long n, double lambda1, double c0,
                             DriftMode mode, double tail_tol) {
  if (ensemble.empty()) throw std::invalid_argument("empty ensemble");
  DriftEstimate out;
  out.n = n;
  out.replications = static_cast<long>(ensemble.size());
  std::vector<double> samples;
  samples.reserve(ensemble.size());
  for (const auto& traj : ensemble)
    samples.push_back(drift_sample(traj, spec, model, n, lambda1, c0, mode, tail_tol));
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  out.estimate = mean;
  if (samples.size() > 1)
    out.se = std::sqrt(ss / static_cast<double>(samples.size() - 1) /
                       static_cast<double>(samples.size()));
  out.kbar = mean > 0 ? static_cast<double>(n) * static_cast<double>(n) * mean : 0.0;
  return out;
}

LemmaCheck lemma_bound(double a, double b, double x1, long n_iters) {
  if (a <= 1.0) throw std::invalid_argument("scalar recursion needs a > 1");
  if (b <= 0.0) throw std::invalid_argument("scalar recursion needs b > 0");
  if (x1 < 0.0) throw std::invalid_argument("scalar recursion needs x1 >= 0");
  if (n_iters < 1) throw std::invalid_argument("need at least one iteration");

  LemmaCheck out;
  out.paper_c = std::max(x1, b / (a - 1.0));

  // Cover the pre-contraction indices n < a, where the induction step that
  // justifies max(x1, b/(a-1)) does not apply.
  const long n0 = std::min<long>(n_iters, static_cast<long>(std::ceil(a)) + 1);
  double c = out.paper_c;
  {
    double x = x1;
    for (long n = 1; n < n0; ++n) {
      x = (1.0 - a / static_cast<double>(n)) * x + b / (static_cast<double>(n) * n);
      c = std::max(c, static_cast<double>(n + 1) * x);
    }
  }
  out.c = c;

  double x = x1;
  out.holds = x1 <= c + 1e-12 * c;
  if (!out.holds) {
    out.first_violation = 1;
    return out;
  }
  for (long n = 1; n < n_iters; ++n) {
    x = (1.0 - a / static_cast<double>(n)) * x + b / (static_cast<double>(n) * n);
    if (x > c / static_cast<double>(n + 1) * (1.0 + 1e-12)) {
      out.holds = false;
      out.first_violation = n + 1;
      return out;
    }
  }
  out.holds = true;
  return out;
}

namespace {

// Probabilists' Gauss-Hermite rule for N(0, 1): nodes and weights from the
// Jacobi matrix (Golub-Welsch); weights sum to 1.
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    double off = std::sqrt(static_cast<double>(i));
    j(i, i - 1) = off;
    j(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  nodes.resize(static_cast<std::size_t>(n));
  weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nodes[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    double v0 = es.eigenvectors()(0, i);
    weights[static_cast<std::size_t>(i)] = v0 * v0;
  }
}

Eigen::MatrixXd psd_factor_local(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

DecompositionTerms decomposition_terms(const ObjectiveSpec& spec, const NoiseModel& model,
                                       const Eigen::VectorXd& theta_n,
                                       const Eigen::VectorXd& x_prev, long n, double c0,
                                       double tail_tol) {
  if (n < 1) throw std::invalid_argument("decomposition index must be >= 1");
  require_var1_or_iid(model, "decomposition");
  DecompositionTerms out;
  const int p = spec.dimension();
  const Eigen::VectorXd err = theta_n - spec.theta_star();
  const double g_n = spec.gain_value(theta_n);

  if (model.kind() == NoiseKind::IidGaussian) return out;  // all terms vanish

  TailContext ctx(model, tail_tol * 1e-2);
  const Eigen::MatrixXd& a = model.ar_matrix();
  const Eigen::MatrixXd& sigma_w = model.innovation_covariance();
  const Eigen::MatrixXd tail_n = ctx.tail_matrix(n, nullptr);
  const Eigen::MatrixXd tail_next = ctx.tail_matrix(n + 1, nullptr);

  // cross term of the V drift: (1/n) E_n err' [grad C - noisy grad] = -(1/n) g err' A x.
  out.cross_term = -(g_n / static_cast<double>(n)) * err.dot(a * x_prev);

  // T2 from the two tail sums; telescopes to the negative of the cross term.
  out.t2 = -g_n * err.dot((tail_next * a - tail_n) * x_prev);

  const double eps = step_size(n, c0);
  const Eigen::VectorXd grad_n = spec.grad(theta_n);
  const Eigen::VectorXd mu1 = a * x_prev;  // E_n X_n

  if (spec.gain().is_constant()) {
    const double g = g_n;
    // T1a = eps g sum_{k>n} (1/k) [grad' A^{k-n+1} x + g (mu1' A^{k-n} mu1 + tr(A^{k-n} Sw))].
    // Term m = k - n >= 1; grad' A^{m+1} x_prev = grad' A^m mu1.
    double sum = 0.0;
    Eigen::MatrixXd am = a;  // A^m
    for (std::size_t m = 1;; ++m) {
      double coeff = 1.0 / static_cast<double>(n + static_cast<long>(m));
      double term = grad_n.dot(am * mu1) +
                    g * (mu1.dot(am * mu1) + (am * sigma_w).trace());
      sum += coeff * term;
      double scale = am.cwiseAbs().maxCoeff();
      if ((m >= 20 && scale * coeff < tail_tol) || m >= 5000) break;
      am = am * a;
    }
    out.t1a = eps * g * sum;
    out.t1b = 0.0;  // grad C - noisy grad does not depend on theta for constant gain
    return out;
  }

  // State-dependent gain: integrate over the innovation with tensor
  // Gauss-Hermite; exact conditional tails given X_n.
  if (p > 3)
    throw std::invalid_argument("state-dependent gain decomposition is supported for p <= 3");
  std::vector<double> nodes, weights;
  gauss_hermite(20, nodes, weights);
  Eigen::MatrixXd lw = psd_factor_local(sigma_w);
  std::vector<int> idx(static_cast<std::size_t>(p), 0);
  double t1a = 0.0, t1b = 0.0;
  while (true) {
    double weight = 1.0;
    Eigen::VectorXd z(p);
    for (int d = 0; d < p; ++d) {
      z[d] = nodes[static_cast<std::size_t>(idx[static_cast<std::size_t>(d)])];
      weight *= weights[static_cast<std::size_t>(idx[static_cast<std::size_t>(d)])];
    }
    Eigen::VectorXd x_n = mu1 + lw * z;
    Eigen::VectorXd theta_next = theta_n - eps * (grad_n + g_n * x_n);
    double g_next = spec.gain_value(theta_next);
    Eigen::VectorXd tail_vec = tail_next * x_n;  // sum_{k>n} (1/k) E[X_k | X_n]
    Eigen::VectorXd delta = theta_next - theta_n;
    t1a += weight * (-g_next) * delta.dot(tail_vec);
    t1b += weight * (g_n - g_next) * err.dot(tail_vec);
    int d = 0;
    while (d < p) {
      if (++idx[static_cast<std::size_t>(d)] < static_cast<int>(nodes.size())) break;
      idx[static_cast<std::size_t>(d)] = 0;
      ++d;
    }
    if (d == p) break;
  }
  out.t1a = t1a;
  out.t1b = t1b;
  return out;
}

DecompositionTerms decomposition_terms(const Trajectory& trajectory, const ObjectiveSpec& spec,
                                       const NoiseModel& model, long n, double c0,
                                       double tail_tol) {
  if (trajectory.noise.cols() == 0)
    throw std::invalid_argument("decomposition needs stored noise states");
  if (n < 1 || n > trajectory.n_max())
    throw std::invalid_argument("decomposition index out of range");
  return decomposition_terms(spec, model, trajectory.theta(n), trajectory.noise_before(n), n,
                             c0, tail_tol);
}

DecompositionCertificate decomposition_certificate(const ObjectiveSpec& spec,
                                                   const NoiseModel& model, double k0,
                                                   double c0) {
  require_var1_or_iid(model, "decomposition certificate");
  DecompositionCertificate out;
  if (model.kind() == NoiseKind::IidGaussian) return out;
  TailContext ctx(model, 1e-16);
  if (ctx.zero) return out;

  double s1 = 0.0;  // sum_{m>=1} ||A^m||
  double s2 = 0.0;  // sum_{m>=2} ||A^m||
  double last = 0.0;
  for (std::size_t i = 0; i < ctx.powers.size(); ++i) {
    last = matrix_2norm(ctx.powers[i]);
    s1 += last;
    if (i >= 1) s2 += last;
  }
  double geo = last * ctx.tail_ratio / (1.0 - ctx.tail_ratio);
  s1 += geo;
  s2 += geo;

  const double g_max = spec.gain().max_value();
  const double x_max = model.noise_norm_bound();
  const double a_norm = matrix_2norm(model.ar_matrix());
  double grad_bound = 2.0 * k0 * spec.b_norm();
  if (spec.perturbation())
    grad_bound += spec.perturbation()->kd *
                  std::pow(2.0 * k0, 1.0 + spec.perturbation()->alpha);
  const double noisy_grad_bound = grad_bound + g_max * x_max;
  const double tr_sw = model.innovation_covariance().trace();

  out.c_a = c0 * c0 * g_max *
            (grad_bound * x_max * s2 +
             g_max * (a_norm * a_norm * x_max * x_max + tr_sw) * s1);
  // State-dependent gains are 1-Lipschitz in ||theta||, so |g(theta_{n+1}) -
  // g(theta_n)| <= eps * noisy-grad bound.
  out.c_b = spec.gain().is_constant()
                ? 0.0
                : 2.0 * k0 * c0 * c0 * noisy_grad_bound * x_max * s1;
  return out;
}

}  // namespace sgdlab
