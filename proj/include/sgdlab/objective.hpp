#pragma once

#include <Eigen/Dense>
#include <optional>

namespace sgdlab {

// Higher-order perturbation D(theta) = kd/(2+alpha) * ||theta - theta*||^(2+alpha),
// whose gradient norm equals kd * ||theta - theta*||^(1+alpha) exactly, so the
// A4 bound is attained with equality rather than slack.
struct PowerPerturbation {
  double kd = 0.0;
  double alpha = 1.0;
};

// Scalar noise gain f0(theta) = g(theta) * I: either a constant sigma or the
// bounded state-dependent form g(theta) = 1 + min(||theta||, mg).
struct NoiseGain {
  enum class Kind { Constant, BoundedState };
  Kind kind = Kind::Constant;
  double sigma = 1.0;
  double mg = 1.0;

  double value(const Eigen::VectorXd& theta) const;
  double max_value() const;
  bool is_constant() const { return kind == Kind::Constant; }
};

// Locally quadratic objective C(theta) = 1/2 (theta - theta*)' B (theta - theta*)
// + D(theta) with exact gradients and a noisy-gradient oracle
// grad(theta) + f0(theta) x.
class ObjectiveSpec {
 public:
  ObjectiveSpec(Eigen::MatrixXd b, Eigen::VectorXd theta_star,
                std::optional<PowerPerturbation> perturbation = {},
                NoiseGain gain = {});

  int dimension() const { return p_; }
  const Eigen::MatrixXd& b() const { return b_; }
  const Eigen::VectorXd& theta_star() const { return theta_star_; }
  double lambda_min() const { return lambda_min_; }
  double b_norm() const { return b_norm_; }
  const std::optional<PowerPerturbation>& perturbation() const { return perturbation_; }
  const NoiseGain& gain() const { return gain_; }

  double cost(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd grad(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd noisy_grad(const Eigen::VectorXd& theta, const Eigen::VectorXd& x) const;
  double gain_value(const Eigen::VectorXd& theta) const { return gain_.value(theta); }

  // lambda_min(B) - kd * diam^alpha; positive margin certifies the A3
  // positivity condition on a set of the given diameter.
  double a3_margin(double diameter) const;

 private:
  int p_ = 0;
  Eigen::MatrixXd b_;
  Eigen::VectorXd theta_star_;
  std::optional<PowerPerturbation> perturbation_;
  NoiseGain gain_;
  double lambda_min_ = 0.0;
  double b_norm_ = 0.0;
};

}  // namespace sgdlab
