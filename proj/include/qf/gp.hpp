#pragma once

// Kriging with a degree-one polynomial trend:
//   Y(x) = beta_0 + sum_j beta_j x_j + Z(x),  Cov(Z(x), Z(u)) = sigma^2 K_theta(x - u).
// beta and sigma^2 have closed-form maximum-likelihood estimates for a given theta;
// theta minimises the concentrated criterion log det(R_theta) + n log sigma^2(theta).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qf/input.hpp"

namespace qf {

enum class Kernel { Matern52, SquaredExponential };

std::string kernel_name(Kernel kernel);
Kernel parse_kernel(const std::string& name);

/// Anisotropic stationary correlation with length scales `theta`.
double correlation(Kernel kernel, std::span<const double> a, std::span<const double> b,
                   std::span<const double> theta);

struct GpConfig {
  Kernel kernel = Kernel::Matern52;
  double theta_min = 1e-2;
  double theta_max = 10.0;
  std::size_t starts = 10;
  std::size_t max_evals_per_start = 300;
  double simplex_tol = 1e-3;  // size of the simplex in log(theta) at convergence
  double nugget = 1e-8;       // relative to sigma^2
  double nugget_max = 1e-4;   // escalation ceiling (x10 per failed factorization)
  std::uint64_t seed = 0;     // start points
};

struct GaussianPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Concentrated likelihood terms at a fixed theta.
struct LikelihoodTerms {
  double value = 0.0;  // log det R + n log sigma2
  double log_det = 0.0;
  double sigma2 = 0.0;
  Eigen::VectorXd beta;
  double nugget = 0.0;  // after escalation
};

/// Evaluates the criterion minimised by `GpModel::fit`. Throws IllConditionedError
/// when the correlation matrix cannot be factorized even at `nugget_max`.
LikelihoodTerms likelihood_terms(std::span<const InputPoint> design, std::span<const double> observations,
                                 std::span<const double> theta, Kernel kernel = Kernel::Matern52,
                                 double nugget = 1e-8, double nugget_max = 1e-4);

double neg_log_likelihood(std::span<const InputPoint> design, std::span<const double> observations,
                          std::span<const double> theta, Kernel kernel = Kernel::Matern52, double nugget = 1e-8);

class GpModel {
 public:
  /// Maximum-likelihood fit (multi-start Nelder-Mead on log theta).
  static GpModel fit(std::span<const InputPoint> design, std::span<const double> observations,
                     const GpConfig& config = {});

  /// Model at a fixed theta with the closed-form beta and sigma^2.
  static GpModel with_theta(std::span<const InputPoint> design, std::span<const double> observations,
                            std::span<const double> theta, Kernel kernel = Kernel::Matern52,
                            double nugget = 1e-8);

  /// Model with every parameter given; only the factorization is recomputed.
  static GpModel from_parameters(std::span<const InputPoint> design, std::span<const double> observations,
                                 Kernel kernel, std::vector<double> theta, double nugget, std::vector<double> beta,
                                 double sigma2);

  GaussianPrediction predict(const InputPoint& x) const;
  /// Kriging variance before clamping at zero.
  double raw_variance(const InputPoint& x) const;
  /// Trend h(x) = beta_0 + sum_j beta_j x_j.
  double trend(const InputPoint& x) const;

  std::size_t size() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(x_.cols()); }
  Kernel kernel() const noexcept { return kernel_; }
  const std::vector<double>& theta() const noexcept { return theta_; }
  const std::vector<double>& beta() const noexcept { return beta_; }
  double sigma2() const noexcept { return sigma2_; }
  double nugget() const noexcept { return nugget_; }
  /// Value of the concentrated criterion at the fitted theta.
  double criterion() const noexcept { return criterion_; }
  std::vector<InputPoint> design() const;
  std::vector<double> observations() const { return {y_.data(), y_.data() + y_.size()}; }

  /// `<stem>.json` (parameters) and `<stem>.csv` (design and observations).
  void save(const std::filesystem::path& dir, const std::string& stem) const;
  static GpModel load(const std::filesystem::path& dir, const std::string& stem);

 private:
  GpModel() = default;
  void factorize();
  Eigen::VectorXd correlations(const InputPoint& x) const;

  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Kernel kernel_ = Kernel::Matern52;
  std::vector<double> theta_;
  std::vector<double> beta_;
  double sigma2_ = 0.0;
  double nugget_ = 0.0;
  double criterion_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;  // R^{-1} (y - H beta)
};

}  // namespace qf
