#include "qf/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include "json.hpp"

#include "qf/error.hpp"
#include "qf/format.hpp"
#include "qf/log.hpp"
#include "qf/rng.hpp"

namespace qf {

std::string kernel_name(Kernel kernel) {
  return kernel == Kernel::Matern52 ? "matern52" : "squared_exponential";
}

Kernel parse_kernel(const std::string& name) {
  if (name == "matern52") return Kernel::Matern52;
  if (name == "squared_exponential" || name == "gaussian") return Kernel::SquaredExponential;
  throw ConfigError("unknown kernel '" + name + "' (expected matern52 or squared_exponential)");
}

namespace {

constexpr double kSqrt5 = 2.23606797749978969640917366873128;

double correlation_from_r2(Kernel kernel, double r2) {
  if (kernel == Kernel::SquaredExponential) return std::exp(-0.5 * r2);
  const double r = std::sqrt(r2);
  return (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
}

// Design data with per-dimension squared differences cached for repeated
// likelihood evaluations.
struct Problem {
  Eigen::MatrixXd x;  // n x d
  Eigen::VectorXd y;
  Eigen::MatrixXd h;  // n x (d+1) trend regressors
  std::vector<Eigen::MatrixXd> sqdiff;
  double sigma2_floor = 0.0;
  double nugget_base = 1e-8;
};

Eigen::MatrixXd trend_matrix(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd h(x.rows(), x.cols() + 1);
  h.col(0).setOnes();
  h.rightCols(x.cols()) = x;
  return h;
}

Problem make_problem(std::span<const InputPoint> design, std::span<const double> observations, double nugget) {
  const std::size_t n = design.size();
  if (observations.size() != n) {
    throw DomainError("design has " + std::to_string(n) + " points but " + std::to_string(observations.size()) +
                      " observations");
  }
  if (n == 0) throw DomainError("empty design");
  const std::size_t d = design.front().dim();
  if (d == 0) throw DomainError("inputs must have at least one coordinate");
  if (n <= d + 1) {
    throw DomainError("kriging with a linear trend needs n > d + 1 points (n = " + std::to_string(n) +
                      ", d = " + std::to_string(d) + ")");
  }
  Problem p;
  p.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  p.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (design[i].dim() != d) throw DomainError("design points have mixed dimensions");
    for (std::size_t k = 0; k < d; ++k) {
      if (!std::isfinite(design[i][k])) throw DomainError("non-finite design coordinate");
      p.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = design[i][k];
    }
    if (!std::isfinite(observations[i])) throw DomainError("non-finite observation");
    p.y(static_cast<Eigen::Index>(i)) = observations[i];
  }
  p.h = trend_matrix(p.x);
  const auto ni = static_cast<Eigen::Index>(n);
  p.sqdiff.assign(d, Eigen::MatrixXd::Zero(ni, ni));
  for (Eigen::Index i = 0; i < ni; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = p.x(i, static_cast<Eigen::Index>(k)) - p.x(j, static_cast<Eigen::Index>(k));
        p.sqdiff[k](i, j) = diff * diff;
        p.sqdiff[k](j, i) = diff * diff;
        dist2 += diff * diff;
      }
      if (dist2 <= 1e-24) {
        throw DuplicateInputError("design points " + std::to_string(j) + " and " + std::to_string(i) +
                                  " coincide at " + to_string(design[static_cast<std::size_t>(i)]));
      }
    }
  }
  const double mean = p.y.mean();
  const double var = (p.y.array() - mean).square().sum() / static_cast<double>(n);
  p.nugget_base = nugget;
  p.sigma2_floor = std::max(nugget * var, std::numeric_limits<double>::min());
  return p;
}

// R_theta with unit diagonal and no nugget.
Eigen::MatrixXd correlation_matrix(const Problem& p, std::span<const double> theta, Kernel kernel) {
  const Eigen::Index n = p.x.rows();
  Eigen::ArrayXXd r2 = Eigen::ArrayXXd::Zero(n, n);
  for (std::size_t k = 0; k < theta.size(); ++k) r2 += p.sqdiff[k].array() * (1.0 / (theta[k] * theta[k]));
  if (kernel == Kernel::SquaredExponential) return (-0.5 * r2).exp().matrix();
  const Eigen::ArrayXXd r = r2.sqrt();
  return ((1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * (-kSqrt5 * r).exp()).matrix();
}

struct Factorized {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double nugget = 0.0;
};

Factorized factorize_with_nugget(const Eigen::MatrixXd& lower, double nugget, double nugget_max) {
  Factorized f;
  double tau = nugget;
  while (true) {
    Eigen::MatrixXd a = lower;
    a.diagonal().array() += tau;
    f.llt.compute(a.selfadjointView<Eigen::Lower>());
    if (f.llt.info() == Eigen::Success) {
      const auto diag = f.llt.matrixLLT().diagonal();
      if ((diag.array() > 0.0).all() && diag.allFinite()) break;
    }
    if (tau >= nugget_max) {
      throw IllConditionedError("correlation matrix is not positive definite even with nugget " +
                                format_double(tau));
    }
    tau = std::min(tau * 10.0, nugget_max);
  }
  if (tau > nugget) log::debug("nugget escalated to " + format_double(tau));
  f.nugget = tau;
  return f;
}

struct Gls {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  Eigen::VectorXd alpha;  // R^{-1}(y - H beta)
};

Gls generalized_least_squares(const Problem& p, const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto lower = llt.matrixL();
  const Eigen::MatrixXd wh = lower.solve(p.h);
  const Eigen::VectorXd wy = lower.solve(p.y);
  Gls g;
  g.beta = wh.colPivHouseholderQr().solve(wy);
  const Eigen::VectorXd resid = p.y - p.h * g.beta;
  const Eigen::VectorXd wr = lower.solve(resid);
  const double dof = static_cast<double>(p.x.rows() - p.h.cols());
  g.sigma2 = std::max(wr.squaredNorm() / dof, p.sigma2_floor);
  g.alpha = llt.solve(resid);
  return g;
}

LikelihoodTerms evaluate(const Problem& p, std::span<const double> theta, Kernel kernel, double nugget_max) {
  for (double t : theta) {
    if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("correlation lengths must be positive");
  }
  if (theta.size() != static_cast<std::size_t>(p.x.cols())) {
    throw DomainError("theta has " + std::to_string(theta.size()) + " entries for " +
                      std::to_string(p.x.cols()) + " input dimensions");
  }
  const auto f = factorize_with_nugget(correlation_matrix(p, theta, kernel), p.nugget_base, nugget_max);
  const auto g = generalized_least_squares(p, f.llt);
  LikelihoodTerms t;
  t.log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
  t.sigma2 = g.sigma2;
  t.beta = g.beta;
  t.nugget = f.nugget;
  t.value = t.log_det + static_cast<double>(p.x.rows()) * std::log(g.sigma2);
  return t;
}

// ---------------------------------------------------------------------------
// Nelder-Mead on log(theta) through GSL; out-of-box points are clamped and penalised.

struct SearchContext {
  const Problem* problem;
  Kernel kernel;
  double lo, hi, nugget_max;
  std::size_t evals = 0;
};

double clamp_penalty(const gsl_vector* v, double lo, double hi, std::vector<double>& theta) {
  double penalty = 0.0;
  for (std::size_t k = 0; k < v->size; ++k) {
    const double u = gsl_vector_get(v, k);
    const double c = std::clamp(u, lo, hi);
    penalty += (u - c) * (u - c);
    theta[k] = std::exp(c);
  }
  return penalty;
}

double search_objective(const gsl_vector* v, void* params) {
  auto* ctx = static_cast<SearchContext*>(params);
  ++ctx->evals;
  std::vector<double> theta(v->size);
  const double penalty = clamp_penalty(v, ctx->lo, ctx->hi, theta);
  try {
    const double value = evaluate(*ctx->problem, theta, ctx->kernel, ctx->nugget_max).value;
    if (!std::isfinite(value)) return GSL_POSINF;
    return value + 1e3 * penalty;
  } catch (const IllConditionedError&) {
    return GSL_POSINF;
  }
}

void silence_gsl() {
  static std::once_flag once;
  std::call_once(once, [] { gsl_set_error_handler_off(); });
}

struct StartResult {
  std::vector<double> log_theta;
  double value = std::numeric_limits<double>::infinity();
};

StartResult local_search(SearchContext& ctx, const std::vector<double>& start, std::size_t max_evals,
                         double tol) {
  const std::size_t d = start.size();
  gsl_multimin_function fn{&search_objective, d, &ctx};
  gsl_vector* x = gsl_vector_alloc(d);
  gsl_vector* step = gsl_vector_alloc(d);
  for (std::size_t k = 0; k < d; ++k) {
    gsl_vector_set(x, k, start[k]);
    gsl_vector_set(step, k, 0.25 * (ctx.hi - ctx.lo));
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, d);
  StartResult out;
  if (gsl_multimin_fminimizer_set(s, &fn, x, step) == GSL_SUCCESS) {
    const std::size_t first = ctx.evals;
    while (ctx.evals - first < max_evals) {
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), tol) == GSL_SUCCESS) break;
    }
    out.value = gsl_multimin_fminimizer_minimum(s);
    out.log_theta.resize(d);
    const gsl_vector* best = gsl_multimin_fminimizer_x(s);
    for (std::size_t k = 0; k < d; ++k) out.log_theta[k] = std::clamp(gsl_vector_get(best, k), ctx.lo, ctx.hi);
  }
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return out;
}

// Latin hypercube in log(theta); the first start is the centre of the box.
std::vector<std::vector<double>> start_points(std::size_t count, std::size_t d, double lo, double hi,
                                              std::uint64_t seed) {
  std::vector<std::vector<double>> starts(count, std::vector<double>(d));
  if (count == 0) return starts;
  RandomStream rng(combine_seed(seed, 0x7468657461ULL));
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<std::size_t> perm(count);
    for (std::size_t i = 0; i < count; ++i) perm[i] = i;
    for (std::size_t i = count; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
    for (std::size_t i = 0; i < count; ++i) {
      const double u = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(count);
      starts[i][k] = lo + u * (hi - lo);
    }
  }
  for (std::size_t k = 0; k < d; ++k) starts[0][k] = 0.5 * (lo + hi);
  return starts;
}

}  // namespace

double correlation(Kernel kernel, std::span<const double> a, std::span<const double> b,
                   std::span<const double> theta) {
  double r2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double z = (a[k] - b[k]) / theta[k];
    r2 += z * z;
  }
  return correlation_from_r2(kernel, r2);
}

LikelihoodTerms likelihood_terms(std::span<const InputPoint> design, std::span<const double> observations,
                                 std::span<const double> theta, Kernel kernel, double nugget, double nugget_max) {
  const auto p = make_problem(design, observations, nugget);
  return evaluate(p, theta, kernel, std::max(nugget, nugget_max));
}

double neg_log_likelihood(std::span<const InputPoint> design, std::span<const double> observations,
                          std::span<const double> theta, Kernel kernel, double nugget) {
  return likelihood_terms(design, observations, theta, kernel, nugget).value;
}

GpModel GpModel::fit(std::span<const InputPoint> design, std::span<const double> observations,
                     const GpConfig& config) {
  if (!(config.theta_min > 0.0 && config.theta_max >= config.theta_min)) {
    throw ConfigError("invalid correlation-length bounds");
  }
  silence_gsl();
  const auto problem = make_problem(design, observations, config.nugget);
  const std::size_t d = static_cast<std::size_t>(problem.x.cols());
  SearchContext ctx{&problem, config.kernel, std::log(config.theta_min), std::log(config.theta_max),
                    std::max(config.nugget, config.nugget_max)};

  StartResult best;
  if (ctx.hi > ctx.lo) {
    for (const auto& start : start_points(std::max<std::size_t>(config.starts, 1), d, ctx.lo, ctx.hi, config.seed)) {
      auto r = local_search(ctx, start, config.max_evals_per_start, config.simplex_tol);
      if (!r.log_theta.empty() && r.value < best.value) best = std::move(r);
    }
  } else {
    best.log_theta.assign(d, ctx.lo);
    best.value = 0.0;
  }
  if (best.log_theta.empty() || !std::isfinite(best.value)) {
    throw FitError("likelihood optimization failed from all " + std::to_string(config.starts) + " starts (" +
                   std::to_string(ctx.evals) + " evaluations, n = " + std::to_string(design.size()) + ")");
  }
  std::vector<double> theta(d);
  for (std::size_t k = 0; k < d; ++k) theta[k] = std::exp(best.log_theta[k]);
  log::debug("likelihood search: " + std::to_string(ctx.evals) + " evaluations, criterion " +
             format_double(best.value));

  GpModel m;
  m.x_ = problem.x;
  m.y_ = problem.y;
  m.kernel_ = config.kernel;
  m.theta_ = theta;
  const auto terms = evaluate(problem, theta, config.kernel, ctx.nugget_max);
  m.beta_.assign(terms.beta.data(), terms.beta.data() + terms.beta.size());
  m.sigma2_ = terms.sigma2;
  m.nugget_ = terms.nugget;
  m.criterion_ = terms.value;
  m.factorize();
  return m;
}

GpModel GpModel::with_theta(std::span<const InputPoint> design, std::span<const double> observations,
                            std::span<const double> theta, Kernel kernel, double nugget) {
  const auto problem = make_problem(design, observations, nugget);
  const auto terms = evaluate(problem, theta, kernel, std::max(nugget, 1e-4));
  GpModel m;
  m.x_ = problem.x;
  m.y_ = problem.y;
  m.kernel_ = kernel;
  m.theta_.assign(theta.begin(), theta.end());
  m.beta_.assign(terms.beta.data(), terms.beta.data() + terms.beta.size());
  m.sigma2_ = terms.sigma2;
  m.nugget_ = terms.nugget;
  m.criterion_ = terms.value;
  m.factorize();
  return m;
}

GpModel GpModel::from_parameters(std::span<const InputPoint> design, std::span<const double> observations,
                                 Kernel kernel, std::vector<double> theta, double nugget, std::vector<double> beta,
                                 double sigma2) {
  const auto problem = make_problem(design, observations, nugget);
  if (beta.size() != static_cast<std::size_t>(problem.h.cols())) throw DomainError("beta has the wrong length");
  if (!(sigma2 > 0.0)) throw DomainError("sigma2 must be positive");
  GpModel m;
  m.x_ = problem.x;
  m.y_ = problem.y;
  m.kernel_ = kernel;
  m.theta_ = std::move(theta);
  m.beta_ = std::move(beta);
  m.sigma2_ = sigma2;
  m.nugget_ = nugget;
  m.factorize();
  m.criterion_ = 2.0 * m.llt_.matrixLLT().diagonal().array().log().sum() +
                 static_cast<double>(m.size()) * std::log(sigma2);
  return m;
}

void GpModel::factorize() {
  if (theta_.size() != dim()) throw DomainError("theta does not match the input dimension");
  const Eigen::Index n = x_.rows();
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    r(j, j) = 1.0 + nugget_;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < x_.cols(); ++k) {
        const double z = (x_(i, k) - x_(j, k)) / theta_[static_cast<std::size_t>(k)];
        r2 += z * z;
      }
      r(i, j) = correlation_from_r2(kernel_, r2);
    }
  }
  llt_.compute(r.selfadjointView<Eigen::Lower>());
  if (llt_.info() != Eigen::Success) {
    throw IllConditionedError("correlation matrix is not positive definite with nugget " + format_double(nugget_));
  }
  const Eigen::Map<const Eigen::VectorXd> beta(beta_.data(), static_cast<Eigen::Index>(beta_.size()));
  alpha_ = llt_.solve(y_ - trend_matrix(x_) * beta);
}

Eigen::VectorXd GpModel::correlations(const InputPoint& x) const {
  if (x.dim() != dim()) {
    throw DomainError("input " + to_string(x) + " has dimension " + std::to_string(x.dim()) + ", model expects " +
                      std::to_string(dim()));
  }
  const Eigen::Index n = x_.rows();
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (Eigen::Index k = 0; k < x_.cols(); ++k) {
      const double z = (x_(i, k) - x[static_cast<std::size_t>(k)]) / theta_[static_cast<std::size_t>(k)];
      r2 += z * z;
    }
    r(i) = correlation_from_r2(kernel_, r2);
  }
  return r;
}

double GpModel::trend(const InputPoint& x) const {
  double h = beta_[0];
  for (std::size_t k = 0; k < dim(); ++k) h += beta_[k + 1] * x[k];
  return h;
}

double GpModel::raw_variance(const InputPoint& x) const {
  const Eigen::VectorXd r = correlations(x);
  const Eigen::VectorXd w = llt_.matrixL().solve(r);
  return sigma2_ * (1.0 - w.squaredNorm());
}

GaussianPrediction GpModel::predict(const InputPoint& x) const {
  const Eigen::VectorXd r = correlations(x);
  GaussianPrediction out;
  out.mean = trend(x) + r.dot(alpha_);
  const Eigen::VectorXd w = llt_.matrixL().solve(r);
  out.variance = std::max(0.0, sigma2_ * (1.0 - w.squaredNorm()));
  return out;
}

std::vector<InputPoint> GpModel::design() const {
  std::vector<InputPoint> out(size());
  for (std::size_t i = 0; i < size(); ++i) {
    out[i].coords.resize(dim());
    for (std::size_t k = 0; k < dim(); ++k) {
      out[i].coords[k] = x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
  }
  return out;
}

void GpModel::save(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["kernel"] = kernel_name(kernel_);
  j["beta"] = beta_;
  j["sigma2"] = sigma2_;
  j["theta"] = theta_;
  j["nugget"] = nugget_;
  j["n"] = size();
  j["d"] = dim();
  j["criterion"] = criterion_;
  j["data"] = stem + ".csv";
  write_text(dir / (stem + ".json"), j.dump(2) + "\n");
  CsvTable t;
  for (std::size_t k = 0; k < dim(); ++k) t.header.push_back("x" + std::to_string(k + 1));
  t.header.push_back("y");
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < x_.cols(); ++k) row.push_back(x_(i, k));
    row.push_back(y_(i));
    t.rows.push_back(std::move(row));
  }
  write_csv(dir / (stem + ".csv"), t);
}

GpModel GpModel::load(const std::filesystem::path& dir, const std::string& stem) {
  const auto j = nlohmann::json::parse(read_text(dir / (stem + ".json")));
  const auto t = read_csv(dir / j.at("data").get<std::string>());
  const std::size_t d = j.at("d").get<std::size_t>();
  if (t.header.size() != d + 1) throw IoError("GP data file does not match the manifest dimension");
  std::vector<InputPoint> design;
  std::vector<double> y;
  for (const auto& row : t.rows) {
    design.push_back(InputPoint{std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d))});
    y.push_back(row[d]);
  }
  return from_parameters(design, y, parse_kernel(j.at("kernel").get<std::string>()),
                         j.at("theta").get<std::vector<double>>(), j.at("nugget").get<double>(),
                         j.at("beta").get<std::vector<double>>(), j.at("sigma2").get<double>());
}

}  // namespace qf
