#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <random>

#include "qf/error.hpp"
#include "qf/mmp.hpp"

using namespace qf;

namespace {

const GridPtr kGrid = ProbGrid::uniform_midpoint(101);

QuantileCurve from_fn(auto&& fn) {
  std::vector<double> v;
  for (double p : kGrid->levels()) v.push_back(fn(p));
  return {kGrid, v};
}

QuantileCurve combo(const std::vector<double>& c, const std::vector<QuantileCurve>& fs) {
  std::vector<double> v(kGrid->size(), 0.0);
  for (std::size_t j = 0; j < c.size(); ++j) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += c[j] * fs[j][i];
  }
  return {kGrid, v};
}

// Quantile-like random family: location, scale, skew and a tail term.
std::vector<QuantileCurve> random_family(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<QuantileCurve> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = u(rng), b = 0.2 + u(rng), c = u(rng) - 0.5, d = 0.3 * u(rng);
    out.push_back(from_fn([&](double p) {
      const double z = std::log(p / (1 - p));
      return a + b * z + c * z * z / 4 + d * std::exp(2 * p);
    }));
  }
  return out;
}

// Weighted L2 residual of `f` after least squares on `span`, by a dense QR solve.
double residual_norm(const QuantileCurve& f, const std::vector<const QuantileCurve*>& span) {
  const auto m = static_cast<Eigen::Index>(f.size());
  Eigen::VectorXd sw(m), y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    sw(i) = std::sqrt(kGrid->weights()[static_cast<std::size_t>(i)]);
    y(i) = sw(i) * f[static_cast<std::size_t>(i)];
  }
  if (span.empty()) return y.norm();
  Eigen::MatrixXd a(m, static_cast<Eigen::Index>(span.size()));
  for (std::size_t j = 0; j < span.size(); ++j) {
    for (Eigen::Index i = 0; i < m; ++i) a(i, static_cast<Eigen::Index>(j)) = sw(i) * (*span[j])[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(y);
  return (y - a * c).norm();
}

double pearson(const QuantileCurve& f, const QuantileCurve& g) {
  const auto n = static_cast<double>(f.size());
  double mf = 0, mg = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    mf += f[i] / n;
    mg += g[i] / n;
  }
  double c = 0, vf = 0, vg = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    c += (f[i] - mf) * (g[i] - mg);
    vf += (f[i] - mf) * (f[i] - mf);
    vg += (g[i] - mg) * (g[i] - mg);
  }
  return c / std::sqrt(vf * vg);
}

// Greedy selection recomputed from scratch at every step.
std::vector<std::size_t> oracle_select(const std::vector<QuantileCurve>& curves, std::size_t k) {
  std::vector<std::size_t> picks;
  double best = -1e300;
  std::size_t first = 0;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < curves.size(); ++j) {
      if (j != i) s += pearson(curves[i], curves[j]);
    }
    if (s > best) {
      best = s;
      first = i;
    }
  }
  picks.push_back(first);
  while (picks.size() < k) {
    std::vector<const QuantileCurve*> span;
    for (auto id : picks) span.push_back(&curves[id]);
    double far = -1.0;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < curves.size(); ++i) {
      const double r = residual_norm(curves[i], span);
      if (r > far) {
        far = r;
        pick = i;
      }
    }
    picks.push_back(pick);
  }
  return picks;
}

}  // namespace

TEST_CASE("identical curves give a one-element basis") {
  const auto c = from_fn([](double p) { return p * p - 0.2; });
  const std::vector<QuantileCurve> curves{c, c, c};
  const auto b = select_basis(curves, 1);
  REQUIRE(b.size() == 1);
  CHECK(b.source_ids()[0] == 0);
  CHECK(l2_distance(b[0], c) == 0.0);
  CHECK_THROWS_AS(select_basis(curves, 2), RankError);
}

TEST_CASE("orthogonal pair is fully selected") {
  const auto f = from_fn([](double p) { return p < 0.5 ? 1.0 : 0.0; });
  const auto g = from_fn([](double p) { return p < 0.5 ? 0.0 : 2.0; });
  REQUIRE(std::abs(l2_inner(f, g)) < 1e-15);
  const std::vector<QuantileCurve> curves{f, g};
  const auto b = select_basis(curves, 2);
  std::vector<std::size_t> ids = b.source_ids();
  std::sort(ids.begin(), ids.end());
  CHECK(ids == std::vector<std::size_t>{0, 1});
}

TEST_CASE("projection of members and combinations of the basis") {
  const auto curves = random_family(30, 3);
  const auto b = select_basis(curves, 4);
  const auto psi1 = project(b[0], b);
  CHECK(psi1[0] == doctest::Approx(1.0).epsilon(1e-10));
  for (std::size_t j = 1; j < 4; ++j) CHECK(std::abs(psi1[j]) < 1e-10);

  const auto q = combo({2.0, 3.0}, b.functions());
  const auto psi = project(q, b);
  CHECK(std::abs(psi[0] - 2.0) <= 1e-10);
  CHECK(std::abs(psi[1] - 3.0) <= 1e-10);
  CHECK(std::abs(psi[2]) <= 1e-10);
  CHECK(std::abs(psi[3]) <= 1e-10);
  CHECK(l2_distance(reconstruct(psi, b), q) <= 1e-10 * l2_norm(q));

  std::vector<QuantileCurve> in_span;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  for (int i = 0; i < 10; ++i) in_span.push_back(combo({z(rng), z(rng), z(rng), z(rng)}, b.functions()));
  CHECK(projection_error(in_span, b) <= 1e-10);
}

TEST_CASE("projection residual is orthogonal to the basis") {
  const auto curves = random_family(40, 8);
  const auto b = select_basis(curves, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(kGrid->size());
    for (double& x : v) x = z(rng);
    const QuantileCurve f(kGrid, v);
    const auto fit = reconstruct(project(f, b), b);
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[i] = f[i] - fit[i];
    const QuantileCurve res(kGrid, r);
    for (std::size_t j = 0; j < b.size(); ++j) {
      CHECK(std::abs(l2_inner(res, b[j])) <= 1e-8 * l2_norm(f) * l2_norm(b[j]));
    }
    // and the projection matches the dense least-squares residual
    std::vector<const QuantileCurve*> span;
    for (const auto& fn : b.functions()) span.push_back(&fn);
    CHECK(l2_norm(res) == doctest::Approx(residual_norm(f, span)).epsilon(1e-9));
  }
}

TEST_CASE("greedy selection matches a from-scratch oracle") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto curves = random_family(25, seed);
    const auto b = select_basis(curves, 4);
    CHECK(b.source_ids() == oracle_select(curves, 4));
  }
}

TEST_CASE("greedy residuals do not increase") {
  const auto curves = random_family(60, 21);
  const auto b = select_basis(curves, 4);
  double prev_max = 1e300, prev_err = 1e300;
  for (std::size_t k = 1; k <= 4; ++k) {
    const auto bk = b.truncated(k);
    std::vector<const QuantileCurve*> span;
    for (const auto& fn : bk.functions()) span.push_back(&fn);
    double mx = 0;
    for (const auto& c : curves) mx = std::max(mx, residual_norm(c, span));
    CHECK(mx <= prev_max * (1 + 1e-12));
    const double err = projection_error(curves, bk);
    CHECK(err <= prev_err * (1 + 1e-12));
    prev_max = mx;
    prev_err = err;
  }
}

TEST_CASE("rank deficiency is reported with the achievable size") {
  const auto f = from_fn([](double p) { return p; });
  const auto g = from_fn([](double p) { return 1 - p; });
  const std::vector<QuantileCurve> curves{f, g, combo({1, 1}, {f, g}), combo({2, -1}, {f, g})};
  CHECK(select_basis(curves, 2).size() == 2);
  try {
    select_basis(curves, 3);
    FAIL("expected RankError");
  } catch (const RankError& e) {
    CHECK(std::string(e.what()).find("achievable k = 2") != std::string::npos);
  }
  CHECK_THROWS_AS(Basis({f, f}, {0, 1}), RankError);
}

TEST_CASE("error cases") {
  const auto f = from_fn([](double p) { return p; });
  const Basis b({f}, {0});
  const std::vector<QuantileCurve> with_zero{f, from_fn([](double) { return 0.0; })};
  CHECK_THROWS_AS(projection_error(with_zero, b), DivisionByZeroError);
  const QuantileCurve other(ProbGrid::uniform_midpoint(11), std::vector<double>(11, 1.0));
  CHECK_THROWS_AS(project(other, b), GridMismatchError);
  CHECK_THROWS_AS(select_basis(std::vector<QuantileCurve>{}, 1), DomainError);
}

TEST_CASE("choose_k returns the smallest sufficient size") {
  const auto curves = random_family(40, 5);
  const auto k = choose_k(curves, 1e-3, 6);
  REQUIRE(k >= 1);
  const auto b = select_basis(curves, k);
  CHECK(projection_error(curves, b) <= 1e-3);
  if (k > 1) CHECK(projection_error(curves, b.truncated(k - 1)) > 1e-3);
}

TEST_CASE("basis directory round trip") {
  const auto curves = random_family(20, 4);
  const auto b = select_basis(curves, 3);
  const auto dir = std::filesystem::temp_directory_path() / "qf_test_basis";
  std::filesystem::remove_all(dir);
  save_basis(dir, b);
  const auto back = load_basis(dir);
  CHECK(back.source_ids() == b.source_ids());
  for (std::size_t j = 0; j < 3; ++j) CHECK(l2_distance(back[j], b[j]) == 0.0);
  for (const auto& c : curves) {
    const auto p1 = project(c, b), p2 = project(c, back);
    for (std::size_t j = 0; j < 3; ++j) CHECK(p1[j] == p2[j]);
  }
  std::filesystem::remove_all(dir);
}
