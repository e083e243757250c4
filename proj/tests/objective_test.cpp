#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "sgdlab/noise.hpp"
#include "sgdlab/objective.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using sgdlab::NoiseGain;
using sgdlab::ObjectiveSpec;
using sgdlab::PowerPerturbation;

namespace {

MatrixXd scalar(double v) {
  MatrixXd m(1, 1);
  m(0, 0) = v;
  return m;
}

VectorXd vec1(double v) {
  VectorXd x(1);
  x[0] = v;
  return x;
}

ObjectiveSpec quadratic_1d(double b) { return ObjectiveSpec(scalar(b), vec1(0.0)); }

ObjectiveSpec perturbed_1d(double b, double kd, double alpha) {
  return ObjectiveSpec(scalar(b), vec1(0.0), PowerPerturbation{kd, alpha});
}

ObjectiveSpec example_2d() {
  MatrixXd b(2, 2);
  b << 2.0, 0.3, 0.3, 3.0;
  VectorXd star(2);
  star << 0.4, -0.2;
  return ObjectiveSpec(b, star, PowerPerturbation{0.2, 1.0});
}

double fd_grad(const ObjectiveSpec& spec, const VectorXd& theta, int i, double h) {
  VectorXd lo = theta, hi = theta;
  lo[i] -= h;
  hi[i] += h;
  return (spec.cost(hi) - spec.cost(lo)) / (2.0 * h);
}

}  // namespace

TEST_CASE("cost closed forms") {
  ObjectiveSpec plain = quadratic_1d(2.0);
  CHECK(plain.cost(vec1(0.0)) == 0.0);
  CHECK(plain.cost(vec1(3.0)) == doctest::Approx(9.0));

  ObjectiveSpec pert = perturbed_1d(2.0, 1.0, 1.0);
  CHECK(pert.cost(vec1(1.0)) == doctest::Approx(1.0 + 1.0 / 3.0));
  CHECK(pert.cost(vec1(0.0)) == 0.0);

  ObjectiveSpec spec = example_2d();
  CHECK(spec.cost(spec.theta_star()) == 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    VectorXd theta(2);
    theta << normal(rng), normal(rng);
    CHECK(spec.cost(theta) >= 0.0);
  }
}

TEST_CASE("gradient closed forms and finite differences") {
  ObjectiveSpec pert = perturbed_1d(2.0, 1.0, 1.0);
  CHECK(pert.grad(vec1(0.0))(0) == 0.0);
  CHECK(pert.grad(vec1(2.0))(0) == doctest::Approx(8.0));  // 2*2 + 1*2*2

  ObjectiveSpec spec = example_2d();
  CHECK(spec.grad(spec.theta_star()).norm() == 0.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    VectorXd theta(2);
    theta << unif(rng), unif(rng);
    VectorXd g = spec.grad(theta);
    for (int i = 0; i < 2; ++i) {
      double fd = fd_grad(spec, theta, i, 1e-5);
      CHECK(std::abs(g[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("fractional-exponent perturbation matches finite differences") {
  ObjectiveSpec spec(scalar(2.0), vec1(0.5), PowerPerturbation{0.7, 0.5});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    VectorXd theta = vec1(unif(rng));
    if (std::abs(theta[0] - 0.5) < 1e-2) continue;  // fd step must stay away from the kink
    double fd = fd_grad(spec, theta, 0, 1e-5);
    CHECK(std::abs(spec.grad(theta)(0) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("noisy gradient oracle") {
  ObjectiveSpec spec = quadratic_1d(2.0);
  CHECK(spec.noisy_grad(vec1(1.5), vec1(0.0))(0) == spec.grad(vec1(1.5))(0));
  CHECK(spec.noisy_grad(vec1(0.0), vec1(2.0))(0) == doctest::Approx(2.0));

  // Stationary Monte Carlo mean reproduces the exact gradient within 3
  // standard errors (the long-run variance accounts for correlation).
  sgdlab::NoiseModel noise = sgdlab::NoiseModel::var1(scalar(0.5), scalar(0.75));
  const long n = 100000;
  MatrixXd path = noise.sample_path(17, n);
  VectorXd theta = vec1(0.7);
  double mean = 0.0;
  for (long k = 0; k < n; ++k) mean += spec.noisy_grad(theta, path.row(k).transpose())(0);
  mean /= static_cast<double>(n);
  double se = std::sqrt(noise.long_run_covariance()(0, 0) / static_cast<double>(n));
  CHECK(std::abs(mean - spec.grad(theta)(0)) <= 3.0 * se);
}

TEST_CASE("state-dependent gain is bounded and continuous") {
  NoiseGain gain{NoiseGain::Kind::BoundedState, 1.0, 2.5};
  ObjectiveSpec spec(scalar(2.0), vec1(0.0), {}, gain);
  CHECK(spec.gain_value(vec1(0.0)) == doctest::Approx(1.0));
  CHECK(spec.gain_value(vec1(1.5)) == doctest::Approx(2.5));
  CHECK(spec.gain_value(vec1(100.0)) == doctest::Approx(3.5));  // capped at 1 + mg
  CHECK(spec.gain().max_value() == doctest::Approx(3.5));
  CHECK(spec.gain_value(spec.theta_star()) != 0.0);
}

TEST_CASE("validation rejects assumption violations") {
  MatrixXd nonsym(2, 2);
  nonsym << 2.0, 1.0, 0.0, 2.0;
  VectorXd star = VectorXd::Zero(2);
  CHECK_THROWS_AS(ObjectiveSpec(nonsym, star), std::invalid_argument);
  CHECK_THROWS_AS(ObjectiveSpec(scalar(-1.0), vec1(0.0)), std::invalid_argument);
  CHECK_THROWS_AS(ObjectiveSpec(scalar(2.0), vec1(0.0), PowerPerturbation{-1.0, 1.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(ObjectiveSpec(scalar(2.0), vec1(0.0), PowerPerturbation{1.0, 0.0}),
                  std::invalid_argument);
}

TEST_CASE("a3 positivity over the feasible set") {
  ObjectiveSpec spec = example_2d();
  const double diam = 4.0 * std::sqrt(2.0);  // box of half-width 2
  REQUIRE(spec.a3_margin(diam) > 0.0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    VectorXd theta(2);
    theta << unif(rng), unif(rng);
    VectorXd err = theta - spec.theta_star();
    if (err.norm() < 1e-9) continue;
    ++checked;
    CHECK(err.dot(spec.grad(theta)) > 0.0);
  }
  CHECK(checked > 9000);
}

TEST_CASE("convexity along random segments") {
  ObjectiveSpec spec = example_2d();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    VectorXd a(2), b(2);
    a << unif(rng), unif(rng);
    b << unif(rng), unif(rng);
    double mid = spec.cost(0.5 * (a + b));
    CHECK(mid <= 0.5 * (spec.cost(a) + spec.cost(b)) + 1e-12);
  }
}

TEST_CASE("noisy gradient is Lipschitz in theta with a noise-dependent constant") {
  NoiseGain gain{NoiseGain::Kind::BoundedState, 1.0, 2.0};
  ObjectiveSpec spec(scalar(2.0), vec1(0.0), PowerPerturbation{0.5, 1.0}, gain);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd origin = vec1(0.0);
  for (int i = 0; i < 2000; ++i) {
    VectorXd theta = vec1(unif(rng));
    VectorXd x = vec1(normal(rng));
    double lbar = spec.b_norm() + 0.5 * std::pow(2.0 * theta.norm(), 1.0) + x.norm();
    double lhs = (spec.noisy_grad(theta, x) - spec.noisy_grad(origin, x)).norm();
    CHECK(lhs <= lbar * theta.norm() * (1.0 + 1e-12));
  }
}
