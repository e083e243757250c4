#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "sgdlab/noise.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using sgdlab::NoiseModel;

namespace {

MatrixXd scalar(double v) {
  MatrixXd m(1, 1);
  m(0, 0) = v;
  return m;
}

NoiseModel var1_scalar(double rho, double sigma_w_sq,
                       std::optional<double> truncation = {}) {
  return NoiseModel::var1(scalar(rho), scalar(sigma_w_sq), truncation);
}

// Block-based standard error of the empirical lag-j autocovariance.
double lag_autocov_se(const Eigen::VectorXd& x, long lag, long blocks) {
  const long n = x.size() - lag;
  const long len = n / blocks;
  std::vector<double> vals;
  for (long b = 0; b < blocks; ++b) {
    double acc = 0.0;
    for (long i = b * len; i < (b + 1) * len; ++i) acc += x[i + lag] * x[i];
    vals.push_back(acc / static_cast<double>(len));
  }
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(blocks);
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(blocks - 1) / static_cast<double>(blocks));
}

}  // namespace

TEST_CASE("var1 stationary covariance solves the Lyapunov equation") {
  NoiseModel m = var1_scalar(0.5, 0.75);
  CHECK(m.stationary_covariance()(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  MatrixXd a(2, 2);
  a << 0.5, 0.2, 0.0, 0.3;
  MatrixXd sw(2, 2);
  sw << 1.0, 0.1, 0.1, 0.5;
  NoiseModel m2 = NoiseModel::var1(a, sw);
  MatrixXd r0 = m2.stationary_covariance();
  CHECK((r0 - (a * r0 * a.transpose() + sw)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("iid model has uncorrelated lags") {
  NoiseModel m = NoiseModel::iid_gaussian(scalar(1.0));
  CHECK(m.autocovariance(0)(0, 0) == doctest::Approx(1.0));
  CHECK(m.autocovariance(1)(0, 0) == 0.0);
  CHECK(m.autocovariance(7)(0, 0) == 0.0);
}

TEST_CASE("model validation rejects bad parameters") {
  CHECK_THROWS_AS(var1_scalar(1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(var1_scalar(1.3, 1.0), std::invalid_argument);
  MatrixXd nonsym(2, 2);
  nonsym << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(NoiseModel::iid_gaussian(nonsym), std::invalid_argument);
  MatrixXd indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(NoiseModel::iid_gaussian(indef), std::invalid_argument);
  CHECK_THROWS_AS(NoiseModel::var1(scalar(0.5), indef), std::invalid_argument);
  CHECK_THROWS_AS(var1_scalar(0.5, 1.0, -1.0), std::invalid_argument);
}

TEST_CASE("degenerate covariance gives the zero path") {
  NoiseModel m = NoiseModel::iid_gaussian(scalar(0.0));
  MatrixXd path = m.sample_path(42, 1000);
  CHECK(path.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("equal seeds give identical path prefixes") {
  NoiseModel m = var1_scalar(0.5, 0.75);
  MatrixXd short_path = m.sample_path(99, 100);
  MatrixXd long_path = m.sample_path(99, 1000);
  CHECK((long_path.topRows(100) - short_path).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("empirical lag-1 autocovariance matches the analytic value") {
  NoiseModel m = var1_scalar(0.5, 0.75);  // stationary variance 1, R_1 = 0.5
  const long n = 1000000;
  VectorXd x = m.sample_path(7, n).col(0);
  double acc = 0.0;
  for (long i = 0; i + 1 < n; ++i) acc += x[i + 1] * x[i];
  double lag1 = acc / static_cast<double>(n - 1);
  CHECK(std::abs(lag1 - 0.5) < 0.02 * 0.5);
}

TEST_CASE("autocovariance closed forms") {
  NoiseModel m = var1_scalar(0.5, 0.75);
  CHECK(m.autocovariance(0)(0, 0) == doctest::Approx(1.0));
  CHECK(m.autocovariance(2)(0, 0) == doctest::Approx(0.25));
  NoiseModel ma = NoiseModel::ma({scalar(1.0), scalar(0.5)}, scalar(2.0));
  CHECK(ma.autocovariance(0)(0, 0) == doctest::Approx(2.0 * 1.25));
  CHECK(ma.autocovariance(1)(0, 0) == doctest::Approx(2.0 * 0.5));
  CHECK(ma.autocovariance(2)(0, 0) == 0.0);
}

TEST_CASE("long-run covariance closed form and partial sums") {
  CHECK(NoiseModel::iid_gaussian(scalar(1.0)).long_run_covariance()(0, 0) ==
        doctest::Approx(1.0));

  NoiseModel m = var1_scalar(0.5, 0.75);
  double rbar = m.long_run_covariance()(0, 0);
  CHECK(rbar == doctest::Approx(3.0).epsilon(1e-12));  // sigma^2 (1+rho)/(1-rho)

  double partial = m.autocovariance(0)(0, 0);
  for (long j = 1; j <= 60; ++j) partial += 2.0 * m.autocovariance(j)(0, 0);
  CHECK(std::abs(partial - rbar) < 1e-8);

  NoiseModel m0 = var1_scalar(0.0, 1.0);
  CHECK(m0.long_run_covariance()(0, 0) ==
        doctest::Approx(m0.stationary_covariance()(0, 0)));

  NoiseModel ma = NoiseModel::ma({scalar(1.0), scalar(0.5)}, scalar(2.0));
  CHECK(ma.long_run_covariance()(0, 0) == doctest::Approx(2.0 * 1.25 + 2.0 * 1.0));
}

TEST_CASE("mixing bounds are geometric with summable tails") {
  NoiseModel iid = NoiseModel::iid_gaussian(scalar(1.0));
  CHECK(iid.mixing_bound(1) == 0.0);
  CHECK(iid.mixing_bound(5) == 0.0);
  CHECK(iid.mixing().tail_sum(1) == 0.0);

  NoiseModel m = var1_scalar(0.9, 0.19);  // stationary variance 1, c = 2
  CHECK(m.mixing_bound(0) == doctest::Approx(2.0));
  CHECK(m.mixing_bound(3) == doctest::Approx(2.0 * 0.9 * 0.9 * 0.9));
  CHECK(m.mixing().tail_sum(1) == doctest::Approx(2.0 * 0.9 / 0.1));
  double direct = 0.0;
  for (long k = 1; k < 2000; ++k) direct += m.mixing_bound(k);
  CHECK(direct == doctest::Approx(m.mixing().tail_sum(1)).epsilon(1e-9));
}

TEST_CASE("conditional means") {
  NoiseModel iid = NoiseModel::iid_gaussian(scalar(1.0));
  VectorXd x(1);
  x[0] = 3.0;
  CHECK(iid.conditional_mean(x, 1)(0) == 0.0);

  NoiseModel m = var1_scalar(0.5, 0.75);
  x[0] = 4.0;
  CHECK(m.conditional_mean(x, 3)(0) == doctest::Approx(0.5));

  // Geometric decay tracks the mixing bound: |E[X_m | x]| = psi_m |x| / c.
  double c = m.mixing().c;
  for (long lag : {1L, 5L, 20L, 60L}) {
    double norm = m.conditional_mean(x, lag).norm();
    CHECK(norm <= m.mixing_bound(lag) * x.norm() / c * (1.0 + 1e-12));
    CHECK(norm == doctest::Approx(std::pow(0.5, lag) * 4.0));
  }
}

TEST_CASE("mixing bound dominates conditional means over random unit states") {
  MatrixXd a(2, 2);
  a << 0.5, 0.1, -0.1, 0.4;
  MatrixXd sw(2, 2);
  sw << 0.75, 0.0, 0.0, 0.6;
  NoiseModel m = NoiseModel::var1(a, sw);
  REQUIRE(m.mixing().c >= 1.0);  // needed for the bound to dominate ||A^m x||
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    VectorXd x(2);
    x << normal(rng), normal(rng);
    x.normalize();
    for (long lag : {1L, 2L, 5L, 10L}) {
      CHECK(m.conditional_mean(x, lag).norm() <= m.mixing_bound(lag) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("stationarity of long sample paths") {
  NoiseModel m = var1_scalar(0.5, 0.75);
  const long n = 1000000;
  VectorXd x = m.sample_path(11, n).col(0);
  double rbar = m.long_run_covariance()(0, 0);
  CHECK(std::abs(x.mean()) <= 4.0 * std::sqrt(rbar / static_cast<double>(n)));

  // Empirical lagged autocovariances within 3 block standard errors.
  for (long j = 0; j <= 5; ++j) {
    double acc = 0.0;
    for (long i = 0; i + j < n; ++i) acc += x[i + j] * x[i];
    double emp = acc / static_cast<double>(n - j);
    double se = lag_autocov_se(x, j, 100);
    CHECK(std::abs(emp - m.autocovariance(j)(0, 0)) <= 3.0 * se);
  }
}

TEST_CASE("ma path is stationary from the first row") {
  NoiseModel ma = NoiseModel::ma({scalar(1.0), scalar(0.5)}, scalar(2.0));
  const long n = 400000;
  VectorXd x = ma.sample_path(3, n).col(0);
  double acc0 = 0.0, acc1 = 0.0;
  for (long i = 0; i + 1 < n; ++i) {
    acc0 += x[i] * x[i];
    acc1 += x[i + 1] * x[i];
  }
  CHECK(std::abs(acc0 / static_cast<double>(n - 1) - 2.5) < 0.05);
  CHECK(std::abs(acc1 / static_cast<double>(n - 1) - 1.0) < 0.05);
}

TEST_CASE("truncation clamps components and vanishes for wide bounds") {
  NoiseModel clamped = var1_scalar(0.5, 0.75, 1.0);
  MatrixXd path = clamped.sample_path(21, 20000);
  CHECK(path.cwiseAbs().maxCoeff() <= 1.0);

  NoiseModel wide = var1_scalar(0.5, 0.75, 100.0);
  NoiseModel free = var1_scalar(0.5, 0.75);
  MatrixXd wide_path = wide.sample_path(21, 20000);
  MatrixXd free_path = free.sample_path(21, 20000);
  CHECK((wide_path - free_path).cwiseAbs().maxCoeff() == 0.0);

  CHECK(clamped.noise_norm_bound() == doctest::Approx(1.0));
  CHECK(free.noise_norm_bound() == doctest::Approx(2.0));  // mixing constant fallback
}
