#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

namespace sgdlab {

enum class NoiseKind { IidGaussian, Var1, MaQ };

// Mixing-rate bounds psi_k = c * rho^k, optionally cut off after `cutoff`
// lags (m-dependent processes).  Tail sums are closed form.
struct MixingBound {
  double c = 0.0;
  double rho = 0.0;
  long cutoff = -1;  // -1 means no cutoff

  double at(long k) const;
  double tail_sum(long n) const;  // sum_{j >= n} psi_j
  bool summable() const { return cutoff >= 0 || rho < 1.0; }
};

// Stationary zero-mean Gaussian noise with analytically known lagged
// autocovariances R_j, long-run covariance, mixing-rate bounds, and
// conditional means.  Models are immutable after construction; path
// generation is a pure function of (model, n, seed), so concurrent
// generation of distinct replications is race free.
//
// The optional truncation bound M clamps every emitted component to
// [-M, M].  The clamp is applied to the output only; the internal state
// recursion stays exactly Gaussian, and all analytic moments refer to the
// untruncated law.
class NoiseModel {
 public:
  static NoiseModel iid_gaussian(Eigen::MatrixXd covariance,
                                 std::optional<double> truncation = {});
  static NoiseModel var1(Eigen::MatrixXd a, Eigen::MatrixXd innovation_covariance,
                         std::optional<double> truncation = {});
  static NoiseModel ma(std::vector<Eigen::MatrixXd> coefficients,
                       Eigen::MatrixXd innovation_covariance,
                       std::optional<double> truncation = {});

  NoiseKind kind() const { return kind_; }
  int dimension() const { return p_; }
  std::optional<double> truncation_bound() const { return truncation_; }

  // Lag-j autocovariance R_j = E X_j X_0'.
  Eigen::MatrixXd autocovariance(long j) const;

  // R_0 + sum_{j>=1} (R_j + R_j'), closed form per model kind.
  Eigen::MatrixXd long_run_covariance() const;

  // psi_k bounding ||E_n X_{n-1+k}|| over admissible states; nonincreasing
  // and summable.
  double mixing_bound(long k) const;
  MixingBound mixing() const;

  // Matrix P_m with E[X_{m} | X_0 = x] = P_m x.  Exact for var1 (Markov,
  // P_m = A^m); for ma-q the single-lag Gaussian regression R_m R_0^{-1};
  // zero for iid.
  Eigen::MatrixXd conditional_mean_matrix(long lag) const;
  Eigen::VectorXd conditional_mean(const Eigen::VectorXd& x_last, long lag) const;

  // Certified bound on ||X||_2 along emitted paths: M * sqrt(p) when
  // truncated, otherwise the (loose) mixing constant c.
  double noise_norm_bound() const;

  // n rows of the path, row k = X_k.  Equal seeds give identical prefixes
  // for any n.
  Eigen::MatrixXd sample_path(std::uint64_t seed, long n) const;

  const Eigen::MatrixXd& stationary_covariance() const { return r0_; }
  const Eigen::MatrixXd& ar_matrix() const;
  const Eigen::MatrixXd& innovation_covariance() const;
  double spectral_radius() const { return spectral_radius_; }

 private:
  NoiseModel() = default;

  NoiseKind kind_ = NoiseKind::IidGaussian;
  int p_ = 0;
  Eigen::MatrixXd a_;                        // var1 only
  Eigen::MatrixXd sigma_w_;                  // innovation covariance (var1, ma)
  std::vector<Eigen::MatrixXd> theta_;       // ma coefficients
  Eigen::MatrixXd r0_;                       // stationary covariance
  Eigen::MatrixXd r0_factor_;                // L with L L' = R_0
  Eigen::MatrixXd innovation_factor_;        // L_w with L_w L_w' = sigma_w
  double spectral_radius_ = 0.0;
  std::optional<double> truncation_;
};

}  // namespace sgdlab
