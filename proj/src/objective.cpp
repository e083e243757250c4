#include "sgdlab/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sgdlab {

double NoiseGain::value(const Eigen::VectorXd& theta) const {
  if (kind == Kind::Constant) return sigma;
  return 1.0 + std::min(theta.norm(), mg);
}

double NoiseGain::max_value() const {
  return kind == Kind::Constant ? sigma : 1.0 + mg;
}

ObjectiveSpec::ObjectiveSpec(Eigen::MatrixXd b, Eigen::VectorXd theta_star,
                             std::optional<PowerPerturbation> perturbation,
                             NoiseGain gain)
    : b_(std::move(b)),
      theta_star_(std::move(theta_star)),
      perturbation_(perturbation),
      gain_(gain) {
  if (b_.rows() == 0 || b_.rows() != b_.cols())
    throw std::invalid_argument("B must be a nonempty square matrix");
  if (theta_star_.size() != b_.rows())
    throw std::invalid_argument("theta_star dimension differs from B");
  double scale = std::max(1.0, b_.cwiseAbs().maxCoeff());
  if ((b_ - b_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("A4 requires a symmetric B");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b_);
  lambda_min_ = es.eigenvalues().minCoeff();
  if (lambda_min_ <= 0)
    throw std::invalid_argument("A4 requires a positive definite B; smallest eigenvalue is " +
                                std::to_string(lambda_min_));
  b_norm_ = es.eigenvalues().cwiseAbs().maxCoeff();
  if (perturbation_) {
    if (perturbation_->kd <= 0) throw std::invalid_argument("A4 requires K_D > 0");
    if (perturbation_->alpha <= 0) throw std::invalid_argument("A4 requires alpha > 0");
  }
  if (gain_.kind == NoiseGain::Kind::Constant) {
    if (gain_.sigma < 0) throw std::invalid_argument("constant gain must be nonnegative");
  } else if (gain_.mg <= 0) {
    throw std::invalid_argument("state-dependent gain cap must be positive");
  }
  p_ = static_cast<int>(b_.rows());
}

double ObjectiveSpec::cost(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd err = theta - theta_star_;
  double quad = 0.5 * err.dot(b_ * err);
  if (!perturbation_) return quad;
  double r2 = err.squaredNorm();
  double pow_term;
  if (perturbation_->alpha == 1.0) {
    pow_term = r2 * std::sqrt(r2);  // ||err||^3 without pow()
  } else {
    pow_term = std::pow(r2, 0.5 * (2.0 + perturbation_->alpha));
  }
  return quad + perturbation_->kd / (2.0 + perturbation_->alpha) * pow_term;
}

Eigen::VectorXd ObjectiveSpec::grad(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd err = theta - theta_star_;
  Eigen::VectorXd g = b_ * err;
  if (perturbation_) {
    double r2 = err.squaredNorm();
    double scale;
    if (perturbation_->alpha == 1.0) {
      scale = std::sqrt(r2);
    } else {
      scale = r2 > 0 ? std::pow(r2, 0.5 * perturbation_->alpha) : 0.0;
    }
    g += perturbation_->kd * scale * err;
  }
  return g;
}

Eigen::VectorXd ObjectiveSpec::noisy_grad(const Eigen::VectorXd& theta,
                                          const Eigen::VectorXd& x) const {
  return grad(theta) + gain_.value(theta) * x;
}

double ObjectiveSpec::a3_margin(double diameter) const {
  if (!perturbation_) return lambda_min_;
  return lambda_min_ - perturbation_->kd * std::pow(diameter, perturbation_->alpha);
}

}  // namespace sgdlab
