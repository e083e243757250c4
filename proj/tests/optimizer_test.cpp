#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "sgdlab/analysis.hpp"
#include "sgdlab/optimizer.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace sgdlab;

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

RunConfig linear_1d_config(double noise_var, double box_radius, long n_max,
                           std::uint64_t seed, int replications = 1) {
  return RunConfig{ObjectiveSpec(scalar(2.0), vec1(0.0)),
                   NoiseModel::iid_gaussian(scalar(noise_var)),
                   ProjectionSet{ProjectionSet::Kind::Box, box_radius},
                   1.0,
                   n_max,
                   vec1(1.0),
                   seed,
                   replications};
}

}  // namespace

TEST_CASE("step size schedule") {
  CHECK(step_size(0, 1.0) == doctest::Approx(1.0));
  CHECK(step_size(9, 1.0) == doctest::Approx(0.1));
  CHECK(step_size(1, 2.0) == doctest::Approx(1.0));
}

TEST_CASE("projection closed forms") {
  ProjectionSet box{ProjectionSet::Kind::Box, 1.0};
  VectorXd x(2);
  x << 2.0, 0.5;
  VectorXd px = box.project(x);
  CHECK(px(0) == doctest::Approx(1.0));
  CHECK(px(1) == doctest::Approx(0.5));

  ProjectionSet ball{ProjectionSet::Kind::Ball, 1.0};
  VectorXd y(2);
  y << 3.0, 4.0;
  VectorXd py = ball.project(y);
  CHECK(py(0) == doctest::Approx(0.6));
  CHECK(py(1) == doctest::Approx(0.8));
}

TEST_CASE("projection is idempotent and non-expansive") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (auto kind : {ProjectionSet::Kind::Box, ProjectionSet::Kind::Ball}) {
    ProjectionSet set{kind, 1.5};
    for (int i = 0; i < 10000; ++i) {
      VectorXd x(3), y(3);
      for (int d = 0; d < 3; ++d) {
        x[d] = normal(rng);
        y[d] = normal(rng);
      }
      VectorXd px = set.project(x);
      // Idempotent up to one rescaling ulp on the ball boundary.
      CHECK((set.project(px) - px).norm() <= 1e-15 * (1.0 + px.norm()));
      CHECK(set.contains(px, 1e-12));
      CHECK((set.project(x) - set.project(y)).norm() <= (x - y).norm() + 1e-12);
    }
  }
}

TEST_CASE("zero-noise recursion follows the hand iteration") {
  RunConfig cfg = linear_1d_config(0.0, 2.0, 3, 1);
  Trajectory traj = run(cfg);
  CHECK(traj.theta(0)(0) == doctest::Approx(1.0));
  CHECK(traj.theta(1)(0) == doctest::Approx(-1.0));  // 1 - 1 * 2 * 1
  CHECK(traj.theta(2)(0) == doctest::Approx(0.0));   // -1 - (1/2) * (-2)
  CHECK(traj.theta(3)(0) == doctest::Approx(0.0));
  CHECK(traj.projection_steps.empty());

  // A steeper objective overshoots a tight box; the clip is recorded.
  RunConfig clipped{ObjectiveSpec(scalar(3.0), vec1(0.0)),
                    NoiseModel::iid_gaussian(scalar(0.0)),
                    ProjectionSet{ProjectionSet::Kind::Box, 0.8},
                    1.0,
                    2,
                    vec1(0.5),
                    1,
                    1};
  Trajectory tc = run(clipped);
  CHECK(tc.theta(1)(0) == doctest::Approx(-0.8));  // clamp of 0.5 - 3 * 0.5
  CHECK(tc.theta(2)(0) == doctest::Approx(0.4));   // -0.8 - 0.5 * 3 * (-0.8)
  REQUIRE(tc.projection_steps.size() == 1);
  CHECK(tc.projection_steps[0] == 0);
}

TEST_CASE("the minimizer is a fixed point without noise") {
  RunConfig cfg = linear_1d_config(0.0, 2.0, 50, 1);
  cfg.theta0 = vec1(0.0);
  Trajectory traj = run(cfg);
  for (long k = 0; k <= 50; ++k) CHECK(traj.theta(k)(0) == 0.0);
}

TEST_CASE("zero noise matches deterministic gradient descent to machine precision") {
  MatrixXd b(2, 2);
  b << 2.0, 0.4, 0.4, 3.0;
  VectorXd star(2);
  star << 0.3, -0.1;
  ObjectiveSpec spec(b, star, PowerPerturbation{0.05, 1.0});
  MatrixXd zero_cov = MatrixXd::Zero(2, 2);
  RunConfig cfg{spec,
                NoiseModel::iid_gaussian(zero_cov),
                ProjectionSet{ProjectionSet::Kind::Box, 10.0},
                1.0,
                200,
                VectorXd::Ones(2),
                5,
                1};
  Trajectory traj = run(cfg);
  VectorXd theta = cfg.theta0;
  for (long k = 0; k < 200; ++k) {
    theta -= step_size(k, 1.0) * spec.grad(theta);
    theta = cfg.projection.project(theta);
  }
  CHECK((traj.theta(200) - theta).norm() == 0.0);
  CHECK(traj.error_norm_sq(200) < 1e-12);
}

TEST_CASE("iterates stay feasible under noise") {
  RunConfig cfg = linear_1d_config(1.0, 0.5, 5000, 3);
  cfg.theta0 = vec1(0.4);
  Trajectory traj = run(cfg);
  for (long k = 0; k <= traj.n_max(); ++k)
    CHECK(std::abs(traj.theta(k)(0)) <= 0.5 + 1e-12);
  CHECK_FALSE(traj.projection_steps.empty());
}

TEST_CASE("runs are reproducible and ensembles are deterministic") {
  RunConfig cfg = linear_1d_config(1.0, 10.0, 300, 42, 8);
  Trajectory a = run(cfg);
  Trajectory b = run(cfg);
  CHECK((a.iterates - b.iterates).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.noise - b.noise).cwiseAbs().maxCoeff() == 0.0);

  auto e1 = run_ensemble(cfg, 1);
  auto e2 = run_ensemble(cfg, 4);
  REQUIRE(e1.size() == 8);
  REQUIRE(e2.size() == 8);
  for (std::size_t i = 0; i < e1.size(); ++i)
    CHECK((e1[i].iterates - e2[i].iterates).cwiseAbs().maxCoeff() == 0.0);

  // One-replication ensembles reproduce run() exactly.
  RunConfig single = cfg;
  single.replications = 1;
  auto e3 = run_ensemble(single, 1);
  CHECK((e3[0].iterates - a.iterates).cwiseAbs().maxCoeff() == 0.0);

  // Distinct replications use distinct noise streams.
  CHECK((e1[0].noise - e1[1].noise).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("monte carlo second moments match the exact oracle") {
  RunConfig cfg = linear_1d_config(1.0, 10.0, 100, 9, 4000);
  auto ensemble = run_ensemble(cfg, 2);
  std::vector<long> checkpoints{10, 100};
  CurveReport curve = mse_curve(ensemble, checkpoints);
  for (std::size_t j = 0; j < checkpoints.size(); ++j) {
    double oracle = exact_mse_oracle(2.0, 1.0, 1.0, 1.0, checkpoints[j]);
    CHECK(std::abs(curve.points[j].value - oracle) <= 3.0 * curve.points[j].se);
  }
}

TEST_CASE("trajectory csv export") {
  RunConfig cfg = linear_1d_config(0.0, 2.0, 2, 1);
  Trajectory traj = run(cfg);
  std::string path = "trajectory_test.csv";
  write_trajectory_csv(path, traj);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,theta_1,error_norm_sq");
  std::getline(in, line);
  CHECK(line == "0,1,1");
  std::getline(in, line);
  CHECK(line == "1,-1,1");
  std::getline(in, line);
  CHECK(line == "2,0,0");
  in.close();
  std::remove(path.c_str());
}
