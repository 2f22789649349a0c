#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "qf/error.hpp"
#include "qf/log.hpp"
#include "qf/qmeta.hpp"

using namespace qf;

namespace {

const GridPtr kGrid = ProbGrid::uniform_midpoint(101);
const InputBox kBox{{0.0, 0.0}, {1.0, 1.0}};

double logit(double p) { return std::log(p / (1 - p)); }

// Location-scale family with a smooth dependence on x: an exact rank-2 structure.
QuantileCurve family(const InputPoint& x) {
  std::vector<double> v;
  for (double p : kGrid->levels()) v.push_back(std::sin(2 * x[0]) + x[1] + (0.5 + x[0] * x[1]) * logit(p));
  return {kGrid, v};
}

struct Learning {
  std::vector<InputPoint> x;
  std::vector<QuantileCurve> curves;
};

Learning learning_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Learning l;
  l.x = oracle::random_design(n, 2, rng);
  for (const auto& x : l.x) l.curves.push_back(family(x));
  return l;
}

MetamodelConfig config(std::size_t k) {
  MetamodelConfig c;
  c.k = k;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("objective spec evaluates one level") {
  const QuantileCurve q(std::make_shared<const ProbGrid>(std::vector<double>{0.25, 0.5, 0.75}), {1, 2, 3});
  CHECK(ObjectiveSpec(0.5)(q) == 2.0);
  CHECK(ObjectiveSpec(0.375)(q) == doctest::Approx(1.5));
  CHECK_THROWS_AS(ObjectiveSpec(1.0), DomainError);
}

TEST_CASE("transform names") {
  CHECK(parse_transform("identity") == CoeffTransform::Identity);
  CHECK(parse_transform(transform_name(CoeffTransform::LogShift)) == CoeffTransform::LogShift);
  CHECK_THROWS_AS(parse_transform("log"), ConfigError);
}

TEST_CASE("constant field is reproduced exactly") {
  std::mt19937_64 rng(1);
  const auto xs = oracle::random_design(12, 2, rng);
  const auto c = family(InputPoint{{0.3, 0.3}});
  const std::vector<QuantileCurve> curves(xs.size(), c);
  const auto meta = QuantileMetamodel::fit(xs, curves, kBox, config(1));
  REQUIRE(meta.k() == 1);
  for (const auto& psi : meta.coefficients()) CHECK(psi[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& x : oracle::random_design(20, 2, rng)) {
    CHECK(l2_distance(meta.predict_curve(x), c) <= 1e-10 * l2_norm(c));
    for (double p : {0.1, 0.4, 0.9}) CHECK(meta.predict_law(x, p).variance <= 1e-12);
  }
}

TEST_CASE("prediction at learning inputs reproduces the projection") {
  const auto l = learning_set(30, 2);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));
  for (std::size_t i = 0; i < l.x.size(); ++i) {
    const auto proj = reconstruct(project(l.curves[i], meta.basis()), meta.basis());
    CHECK(l2_distance(meta.predict_curve(l.x[i]), proj) <= 1e-4 * l2_norm(proj));
  }
  // the family has rank two
  CHECK_THROWS_AS(select_basis(l.curves, 3), RankError);
  CHECK(projection_error(l.curves, meta.basis()) <= 1e-10);
}

TEST_CASE("law at learning inputs has near-zero variance") {
  const auto l = learning_set(30, 3);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));
  for (const auto& x : l.x) {
    for (double p : {0.05, 0.4, 0.8}) {
      double bound = 0.0;
      for (std::size_t j = 0; j < meta.k(); ++j) {
        const double r = eval_at(meta.basis()[j], p);
        const auto& gp = meta.coeff_models()[j];
        bound += r * r * gp.nugget() * gp.sigma2();
      }
      CHECK(meta.predict_law(x, p).variance <= 2 * bound);
    }
  }
}

TEST_CASE("far from the learning set the law reverts to the prior") {
  const auto l = learning_set(25, 4);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));
  const InputPoint far{{90.0, -70.0}};
  for (double p : {0.2, 0.6}) {
    double prior = 0.0;
    for (std::size_t j = 0; j < meta.k(); ++j) {
      const double r = eval_at(meta.basis()[j], p);
      prior += r * r * meta.coeff_models()[j].sigma2();
    }
    CHECK(meta.predict_law(far, p).variance == doctest::Approx(prior).epsilon(1e-10));
  }
}

TEST_CASE("law is the explicit composition of the coefficient predictions") {
  const auto l = learning_set(40, 5);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (const auto& x : oracle::random_design(50, 2, rng)) {
    const double p = u(rng);
    const InputPoint z = meta.box().normalize(x);
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < meta.k(); ++j) {
      const auto g = meta.coeff_models()[j].predict(z);
      const double r = eval_at(meta.basis()[j], p);
      mean += g.mean * r;
      var += r * r * g.variance;
    }
    const auto law = meta.predict_law(x, p);
    CHECK(std::abs(law.mean - mean) <= 1e-12 * std::max(1.0, std::abs(mean)));
    CHECK(std::abs(law.variance - var) <= 1e-12 * std::max(1.0, var));
    CHECK(law.level == p);
    // and the curve prediction agrees with the law mean at the grid levels
    const auto curve = meta.predict_curve(x);
    CHECK(eval_at(curve, p) == doctest::Approx(law.mean).epsilon(1e-12));
  }
}

TEST_CASE("log-shift transform") {
  // Positive combinations of two positive curves keep every coefficient >= 0.
  const auto f = family(InputPoint{{0.1, 2.0}});
  const auto g = family(InputPoint{{0.9, 3.0}});
  const Basis basis({f, g}, {0, 1});
  std::mt19937_64 rng(8);
  const auto xs = oracle::random_design(20, 2, rng);
  std::vector<QuantileCurve> curves;
  for (const auto& x : xs) {
    std::vector<double> v(kGrid->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (0.5 + x[0]) * f[i] + x[1] * x[1] * g[i];
    curves.emplace_back(kGrid, v);
  }
  auto cfg = config(2);
  cfg.transform = CoeffTransform::LogShift;
  const auto meta = QuantileMetamodel::fit_with_basis(xs, curves, basis, kBox, cfg);
  for (const auto& x : oracle::random_design(10, 2, rng)) {
    const auto coeffs = meta.predict_coefficients(x);
    for (std::size_t j = 0; j < 2; ++j) {
      const auto phi = meta.coeff_models()[j].predict(meta.box().normalize(x));
      CHECK(coeffs[j].mean == doctest::Approx(std::expm1(phi.mean)).epsilon(1e-14));
      CHECK(coeffs[j].variance ==
            doctest::Approx(std::expm1(phi.variance) * std::exp(2 * phi.mean + phi.variance)).epsilon(1e-12));
      CHECK(coeffs[j].mean >= -1.0);
    }
  }

  // A coefficient of -0.5 is outside the transform's domain.
  curves[3] = QuantileCurve(kGrid, [&] {
    std::vector<double> v(kGrid->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f[i] - 0.5 * g[i];
    return v;
  }());
  try {
    QuantileMetamodel::fit_with_basis(xs, curves, basis, kBox, cfg);
    FAIL("expected FitError");
  } catch (const FitError& e) {
    const std::string msg = e.what();
    const auto at = msg.find("psi_2 = ");
    REQUIRE(at != std::string::npos);
    CHECK(std::stod(msg.substr(at + 8)) == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK(msg.find(to_string(xs[3])) != std::string::npos);
  }
}

TEST_CASE("fit warnings for negative coefficients") {
  const auto l = learning_set(20, 9);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));
  bool any_negative = false;
  for (const auto& c : meta.coefficients()) any_negative |= !c.nonnegative();
  bool warned = false;
  for (const auto& w : meta.warnings()) warned |= w.find("negative projection coefficients") != std::string::npos;
  CHECK(warned == any_negative);
}

TEST_CASE("validation errors") {
  const auto l = learning_set(30, 10);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));

  std::vector<LabeledCurve> projected;
  for (std::size_t i = 0; i < l.x.size(); ++i) {
    projected.push_back({l.x[i], reconstruct(project(l.curves[i], meta.basis()), meta.basis())});
  }
  CHECK(global_error(meta, projected) <= 1e-4);

  const InputPoint x{{0.37, 0.61}};
  const std::vector<LabeledCurve> single{{x, meta.predict_curve(x)}};
  CHECK(global_error(meta, single) == 0.0);

  // Two inputs; truth = prediction shifted by -0.1 and +0.1 at every level.
  const InputPoint a{{0.2, 0.2}}, b{{0.8, 0.7}};
  const double p = 0.5;
  const auto shifted = [&](const InputPoint& at, double delta) {
    const auto c = meta.predict_curve(at);
    std::vector<double> v(c.values().begin(), c.values().end());
    for (double& t : v) t += delta;
    return QuantileCurve(kGrid, v);
  };
  const std::vector<LabeledCurve> two{{a, shifted(a, -0.1)}, {b, shifted(b, 0.1)}};
  const double qa = eval_at(two[0].curve, p), qb = eval_at(two[1].curve, p);
  CHECK(objective_error(meta, two, p) == doctest::Approx(0.1 / std::abs(qa - qb)).epsilon(1e-12));
  const std::vector<LabeledCurve> perfect{{a, meta.predict_curve(a)}, {b, meta.predict_curve(b)}};
  CHECK(objective_error(meta, perfect, p) <= 1e-15);
  const std::vector<LabeledCurve> flat{{a, two[0].curve}, {b, two[0].curve}};
  CHECK_THROWS_AS(objective_error(meta, flat, p), DegenerateObjectiveError);
  CHECK_THROWS_AS(global_error(meta, std::vector<LabeledCurve>{}), DomainError);
}

TEST_CASE("monotonicity of predictions is reported") {
  const auto l = learning_set(25, 11);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, kBox, config(2));
  bool monotone = false;
  meta.predict_curve(InputPoint{{0.5, 0.5}}, &monotone);
  CHECK(monotone);
}

TEST_CASE("bundle round trip preserves predictions") {
  const auto l = learning_set(30, 12);
  const auto meta = QuantileMetamodel::fit(l.x, l.curves, InputBox{{-1.0, 0.0}, {1.0, 2.0}}, config(2));
  const auto dir = std::filesystem::temp_directory_path() / "qf_test_bundle";
  std::filesystem::remove_all(dir);
  meta.save(dir);
  const auto back = QuantileMetamodel::load(dir);
  CHECK(back.k() == meta.k());
  CHECK(back.box().lower == meta.box().lower);
  CHECK(back.design() == meta.design());
  std::mt19937_64 rng(13);
  for (const auto& x : oracle::random_design(20, 2, rng)) {
    const auto a = meta.predict_law(x, 0.4), b = back.predict_law(x, 0.4);
    CHECK(std::abs(a.mean - b.mean) <= 1e-12 * (1 + std::abs(a.mean)));
    CHECK(std::abs(a.variance - b.variance) <= 1e-12 * (1 + a.variance));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("mismatched inputs") {
  const auto l = learning_set(10, 14);
  std::vector<QuantileCurve> fewer(l.curves.begin(), l.curves.end() - 1);
  CHECK_THROWS_AS(QuantileMetamodel::fit(l.x, fewer, kBox, config(2)), DomainError);
  const std::vector<InputPoint> three(l.x.begin(), l.x.begin() + 3);
  const std::vector<QuantileCurve> three_c(l.curves.begin(), l.curves.begin() + 3);
  CHECK_THROWS_AS(QuantileMetamodel::fit(three, three_c, kBox, config(2)), DomainError);
}
