#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// Everything here is dense, explicit and slow on purpose.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "qf/input.hpp"

namespace oracle {

using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

inline long double matern52(long double r) {
  const long double s5 = std::sqrt(5.0L);
  return (1 + s5 * r + 5.0L / 3.0L * r * r) * std::exp(-s5 * r);
}

inline long double squared_exp(long double r) { return std::exp(-0.5L * r * r); }

inline long double corr(const qf::InputPoint& a, const qf::InputPoint& b, std::span<const double> theta, bool se) {
  long double r2 = 0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const long double z = (static_cast<long double>(a[k]) - b[k]) / theta[k];
    r2 += z * z;
  }
  return se ? squared_exp(std::sqrt(r2)) : matern52(std::sqrt(r2));
}

// Universal kriging with a linear trend at a fixed theta, computed with an explicit inverse.
struct DenseGp {
  std::vector<qf::InputPoint> x;
  std::vector<double> theta;
  bool se = false;
  long double nugget = 1e-8L;
  Mat r, rinv, h;
  Vec y, beta, resid;
  long double sigma2 = 0, log_det = 0, nll = 0;

  DenseGp(std::vector<qf::InputPoint> design, std::span<const double> obs, std::vector<double> th, bool squared_exp,
          long double tau)
      : x(std::move(design)), theta(std::move(th)), se(squared_exp), nugget(tau) {
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto d = static_cast<Eigen::Index>(x.front().dim());
    r.resize(n, n);
    h.resize(n, d + 1);
    y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) r(i, j) = corr(x[i], x[j], theta, se) + (i == j ? nugget : 0.0L);
      h(i, 0) = 1;
      for (Eigen::Index k = 0; k < d; ++k) h(i, k + 1) = x[i][static_cast<std::size_t>(k)];
      y(i) = obs[static_cast<std::size_t>(i)];
    }
    rinv = r.fullPivLu().inverse();
    const Mat a = h.transpose() * rinv * h;
    beta = a.fullPivLu().inverse() * (h.transpose() * rinv * y);
    resid = y - h * beta;
    long double mean = y.mean(), var = 0;
    for (Eigen::Index i = 0; i < n; ++i) var += (y(i) - mean) * (y(i) - mean) / n;
    sigma2 = std::max<long double>((resid.transpose() * rinv * resid)(0, 0) / (n - (d + 1)), nugget * var);
    log_det = std::log(r.fullPivLu().determinant());
    nll = log_det + n * std::log(sigma2);
  }

  Vec corr_vec(const qf::InputPoint& p) const {
    Vec c(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) c(static_cast<Eigen::Index>(i)) = corr(p, x[i], theta, se);
    return c;
  }

  long double mean(const qf::InputPoint& p) const {
    long double t = beta(0);
    for (std::size_t k = 0; k < p.dim(); ++k) t += beta(static_cast<Eigen::Index>(k + 1)) * p[k];
    return t + (corr_vec(p).transpose() * rinv * resid)(0, 0);
  }

  long double variance(const qf::InputPoint& p) const {
    const Vec c = corr_vec(p);
    return sigma2 * (1 - (c.transpose() * rinv * c)(0, 0));
  }
};

inline std::vector<qf::InputPoint> random_design(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<qf::InputPoint> out(n);
  for (auto& p : out) {
    p.coords.resize(d);
    for (double& c : p.coords) c = u(rng);
  }
  return out;
}

struct McEstimate {
  double mean;
  double std_error;
};

// E[(Z - best)^+] for Z ~ N(mean, variance) by plain Monte Carlo.
inline McEstimate ei_monte_carlo(double mean, double variance, double best, std::size_t draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(mean, std::sqrt(variance));
  double s = 0, ss = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double v = std::max(z(rng) - best, 0.0);
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(draws);
  const double m = s / n;
  return {m, std::sqrt(std::max(ss / n - m * m, 0.0) / n)};
}

}  // namespace oracle
