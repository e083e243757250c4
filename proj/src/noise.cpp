#include "sgdlab/noise.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace sgdlab {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kPsdTol = -1e-10;

void require_square(const Eigen::MatrixXd& m, const char* name) {
  if (m.rows() == 0 || m.rows() != m.cols())
    throw std::invalid_argument(std::string(name) + " must be a nonempty square matrix");
}

void require_symmetric_psd(const Eigen::MatrixXd& m, const char* name) {
  require_square(m, name);
  double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale)
    throw std::invalid_argument(std::string(name) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() < kPsdTol * scale)
    throw std::invalid_argument(std::string(name) + " must be positive semidefinite");
}

// L with L L' = sigma, valid for any symmetric PSD sigma (including
// singular and zero matrices).
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

double spectral_radius_of(const Eigen::MatrixXd& a) {
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

// Solves R = A R A' + Q by vectorization; fine for the small dimensions
// used here.
Eigen::MatrixXd discrete_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q) {
  const long p = a.rows();
  const long pp = p * p;
  Eigen::MatrixXd kron(pp, pp);
  for (long i = 0; i < p; ++i)
    for (long j = 0; j < p; ++j)
      kron.block(i * p, j * p, p, p) = a(i, j) * a;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(pp, pp) - kron;
  Eigen::VectorXd vec_q(pp);
  for (long j = 0; j < p; ++j) vec_q.segment(j * p, p) = q.col(j);
  Eigen::VectorXd vec_r = lhs.partialPivLu().solve(vec_q);
  Eigen::MatrixXd r(p, p);
  for (long j = 0; j < p; ++j) r.col(j) = vec_r.segment(j * p, p);
  // Symmetrize away round-off.
  return 0.5 * (r + r.transpose());
}

}  // namespace

double MixingBound::at(long k) const {
  if (k < 0) throw std::invalid_argument("mixing bound index must be >= 0");
  if (cutoff >= 0 && k > cutoff) return 0.0;
  if (rho == 0.0) return k == 0 ? c : 0.0;
  return c * std::pow(rho, static_cast<double>(k));
}

double MixingBound::tail_sum(long n) const {
  if (n < 0) throw std::invalid_argument("tail index must be >= 0");
  if (cutoff >= 0) {
    double s = 0.0;
    for (long j = n; j <= cutoff; ++j) s += at(j);
    return s;
  }
  if (!summable()) throw std::invalid_argument("mixing bounds are not summable");
  if (rho == 0.0) return n == 0 ? c : 0.0;
  return c * std::pow(rho, static_cast<double>(n)) / (1.0 - rho);
}

NoiseModel NoiseModel::iid_gaussian(Eigen::MatrixXd covariance,
                                    std::optional<double> truncation) {
  require_symmetric_psd(covariance, "innovation covariance");
  if (truncation && *truncation <= 0)
    throw std::invalid_argument("truncation bound must be positive");
  NoiseModel m;
  m.kind_ = NoiseKind::IidGaussian;
  m.p_ = static_cast<int>(covariance.rows());
  m.r0_ = std::move(covariance);
  m.sigma_w_ = m.r0_;
  m.r0_factor_ = psd_factor(m.r0_);
  m.innovation_factor_ = m.r0_factor_;
  m.spectral_radius_ = 0.0;
  m.truncation_ = truncation;
  return m;
}

NoiseModel NoiseModel::var1(Eigen::MatrixXd a, Eigen::MatrixXd innovation_covariance,
                            std::optional<double> truncation) {
  require_square(a, "coefficient matrix A");
  require_symmetric_psd(innovation_covariance, "innovation covariance");
  if (a.rows() != innovation_covariance.rows())
    throw std::invalid_argument("A and innovation covariance dimensions differ");
  if (truncation && *truncation <= 0)
    throw std::invalid_argument("truncation bound must be positive");
  double sr = spectral_radius_of(a);
  if (sr >= 1.0)
    throw std::invalid_argument("A2 requires spectral radius of A strictly below 1, got " +
                                std::to_string(sr));
  NoiseModel m;
  m.kind_ = NoiseKind::Var1;
  m.p_ = static_cast<int>(a.rows());
  m.a_ = std::move(a);
  m.sigma_w_ = std::move(innovation_covariance);
  m.r0_ = discrete_lyapunov(m.a_, m.sigma_w_);
  m.r0_factor_ = psd_factor(m.r0_);
  m.innovation_factor_ = psd_factor(m.sigma_w_);
  m.spectral_radius_ = sr;
  m.truncation_ = truncation;
  return m;
}

NoiseModel NoiseModel::ma(std::vector<Eigen::MatrixXd> coefficients,
                          Eigen::MatrixXd innovation_covariance,
                          std::optional<double> truncation) {
  if (coefficients.empty())
    throw std::invalid_argument("ma model needs at least one coefficient matrix");
  require_symmetric_psd(innovation_covariance, "innovation covariance");
  const long p = innovation_covariance.rows();
  for (const auto& th : coefficients)
    if (th.rows() != p || th.cols() != p)
      throw std::invalid_argument("ma coefficient dimensions differ from innovation covariance");
  if (truncation && *truncation <= 0)
    throw std::invalid_argument("truncation bound must be positive");
  NoiseModel m;
  m.kind_ = NoiseKind::MaQ;
  m.p_ = static_cast<int>(p);
  m.theta_ = std::move(coefficients);
  m.sigma_w_ = std::move(innovation_covariance);
  Eigen::MatrixXd r0 = Eigen::MatrixXd::Zero(p, p);
  for (const auto& th : m.theta_) r0 += th * m.sigma_w_ * th.transpose();
  m.r0_ = 0.5 * (r0 + r0.transpose());
  m.r0_factor_ = psd_factor(m.r0_);
  m.innovation_factor_ = psd_factor(m.sigma_w_);
  m.spectral_radius_ = 0.0;
  m.truncation_ = truncation;
  return m;
}

Eigen::MatrixXd NoiseModel::autocovariance(long j) const {
  if (j < 0) throw std::invalid_argument("autocovariance lag must be >= 0");
  switch (kind_) {
    case NoiseKind::IidGaussian:
      return j == 0 ? r0_ : Eigen::MatrixXd::Zero(p_, p_).eval();
    case NoiseKind::Var1: {
      Eigen::MatrixXd r = r0_;
      for (long i = 0; i < j; ++i) r = a_ * r;
      return r;
    }
    case NoiseKind::MaQ: {
      const long q = static_cast<long>(theta_.size()) - 1;
      if (j > q) return Eigen::MatrixXd::Zero(p_, p_);
      Eigen::MatrixXd r = Eigen::MatrixXd::Zero(p_, p_);
      for (long i = 0; i + j <= q; ++i)
        r += theta_[static_cast<std::size_t>(i + j)] * sigma_w_ *
             theta_[static_cast<std::size_t>(i)].transpose();
      return r;
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::MatrixXd NoiseModel::long_run_covariance() const {
  switch (kind_) {
    case NoiseKind::IidGaussian:
      return r0_;
    case NoiseKind::Var1: {
      Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(p_, p_);
      Eigen::MatrixXd cross = a_ * (eye - a_).partialPivLu().solve(r0_);
      return r0_ + cross + cross.transpose();
    }
    case NoiseKind::MaQ: {
      const long q = static_cast<long>(theta_.size()) - 1;
      Eigen::MatrixXd r = r0_;
      for (long j = 1; j <= q; ++j) {
        Eigen::MatrixXd rj = autocovariance(j);
        r += rj + rj.transpose();
      }
      return r;
    }
  }
  throw std::logic_error("unreachable");
}

MixingBound NoiseModel::mixing() const {
  double c = 2.0 * std::sqrt(r0_.trace());
  switch (kind_) {
    case NoiseKind::IidGaussian:
      return {c, 0.0, -1};
    case NoiseKind::Var1:
      return {c, spectral_radius_, -1};
    case NoiseKind::MaQ:
      return {c, 1.0, static_cast<long>(theta_.size()) - 1};
  }
  throw std::logic_error("unreachable");
}

double NoiseModel::mixing_bound(long k) const { return mixing().at(k); }

Eigen::MatrixXd NoiseModel::conditional_mean_matrix(long lag) const {
  if (lag < 1) throw std::invalid_argument("conditional mean lag must be >= 1");
  switch (kind_) {
    case NoiseKind::IidGaussian:
      return Eigen::MatrixXd::Zero(p_, p_);
    case NoiseKind::Var1: {
      Eigen::MatrixXd m = a_;
      for (long i = 1; i < lag; ++i) m = a_ * m;
      return m;
    }
    case NoiseKind::MaQ: {
      const long q = static_cast<long>(theta_.size()) - 1;
      if (lag > q) return Eigen::MatrixXd::Zero(p_, p_);
      Eigen::LDLT<Eigen::MatrixXd> r0_solver(r0_);
      if (r0_solver.info() != Eigen::Success || !r0_solver.isPositive())
        throw std::invalid_argument("ma conditional mean needs invertible R_0");
      return autocovariance(lag) * r0_solver.solve(Eigen::MatrixXd::Identity(p_, p_));
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd NoiseModel::conditional_mean(const Eigen::VectorXd& x_last, long lag) const {
  if (x_last.size() != p_) throw std::invalid_argument("state dimension mismatch");
  if (kind_ == NoiseKind::IidGaussian) return Eigen::VectorXd::Zero(p_);
  return conditional_mean_matrix(lag) * x_last;
}

double NoiseModel::noise_norm_bound() const {
  if (truncation_) return *truncation_ * std::sqrt(static_cast<double>(p_));
  return mixing().c;
}

Eigen::MatrixXd NoiseModel::sample_path(std::uint64_t seed, long n) const {
  if (n < 1) throw std::invalid_argument("path length must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::VectorXd& z) {
    for (int i = 0; i < p_; ++i) z[i] = normal(rng);
  };
  Eigen::MatrixXd path(n, p_);
  Eigen::VectorXd z(p_);
  auto emit = [&](long row, const Eigen::VectorXd& x) {
    if (truncation_) {
      double m = *truncation_;
      path.row(row) = x.cwiseMax(-m).cwiseMin(m).transpose();
    } else {
      path.row(row) = x.transpose();
    }
  };
  switch (kind_) {
    case NoiseKind::IidGaussian: {
      for (long k = 0; k < n; ++k) {
        draw(z);
        emit(k, r0_factor_ * z);
      }
      break;
    }
    case NoiseKind::Var1: {
      // Exact stationary start: X_0 ~ N(0, R_0), then the state recursion.
      draw(z);
      Eigen::VectorXd x = r0_factor_ * z;
      emit(0, x);
      for (long k = 1; k < n; ++k) {
        draw(z);
        x = a_ * x + innovation_factor_ * z;
        emit(k, x);
      }
      break;
    }
    case NoiseKind::MaQ: {
      const long q = static_cast<long>(theta_.size()) - 1;
      std::vector<Eigen::VectorXd> w(static_cast<std::size_t>(q + 1));
      // Presample q innovations so the output is stationary from row 0.
      for (long i = 0; i < q; ++i) {
        draw(z);
        w[static_cast<std::size_t>(i)] = innovation_factor_ * z;
      }
      for (long k = 0; k < n; ++k) {
        draw(z);
        w[static_cast<std::size_t>(q)] = innovation_factor_ * z;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(p_);
        // w holds innovations w_{k-q}..w_k in order; X_k = sum theta_i w_{k-i}.
        for (long i = 0; i <= q; ++i)
          x += theta_[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(q - i)];
        emit(k, x);
        for (long i = 0; i < q; ++i)
          w[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i + 1)];
      }
      break;
    }
  }
  return path;
}

const Eigen::MatrixXd& NoiseModel::ar_matrix() const {
  if (kind_ != NoiseKind::Var1)
    throw std::logic_error("ar_matrix is only defined for var1 models");
  return a_;
}

const Eigen::MatrixXd& NoiseModel::innovation_covariance() const {
  if (kind_ == NoiseKind::IidGaussian)
    throw std::logic_error("iid models have no innovation covariance");
  return sigma_w_;
}

}  // namespace sgdlab
