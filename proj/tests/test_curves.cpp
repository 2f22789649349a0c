#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "qf/curves.hpp"
#include "qf/error.hpp"

using namespace qf;

namespace {

QuantileCurve make(const GridPtr& g, auto&& fn) {
  std::vector<double> v;
  for (double p : g->levels()) v.push_back(fn(p));
  return {g, v};
}

}  // namespace

TEST_CASE("midpoint grid levels and weights") {
  const auto g = ProbGrid::uniform_midpoint(101);
  REQUIRE(g->size() == 101);
  CHECK((*g)[0] == doctest::Approx(0.5 / 101));
  CHECK((*g)[100] == doctest::Approx(100.5 / 101));
  for (double w : g->weights()) CHECK(w == 1.0 / 101);
}

TEST_CASE("irregular grid weights are cell widths summing to one") {
  ProbGrid g({0.1, 0.2, 0.6, 0.9});
  const auto w = g.weights();
  CHECK(w[0] == doctest::Approx(0.15));
  CHECK(w[1] == doctest::Approx(0.25));
  CHECK(w[2] == doctest::Approx(0.35));
  CHECK(w[3] == doctest::Approx(0.25));
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(ProbGrid({0.5, 0.4}), DomainError);
  CHECK_THROWS_AS(ProbGrid({0.0, 0.5}), DomainError);
  CHECK_THROWS_AS(ProbGrid({0.5, 1.0}), DomainError);
  CHECK_THROWS_AS(ProbGrid(std::vector<double>{}), DomainError);
}

TEST_CASE("curve construction checks size and finiteness") {
  const auto g = ProbGrid::uniform_midpoint(3);
  CHECK_THROWS_AS(QuantileCurve(g, {1.0, 2.0}), DomainError);
  CHECK_THROWS_AS(QuantileCurve(g, {1.0, NAN, 2.0}), DomainError);
}

TEST_CASE("l2 distance") {
  const auto g = ProbGrid::uniform_midpoint(101);
  const auto f = make(g, [](double p) { return std::sin(3 * p) + p * p; });
  CHECK(l2_distance(f, f) == 0.0);

  for (std::size_t m : {1u, 7u, 101u, 400u}) {
    const auto gm = ProbGrid::uniform_midpoint(m);
    CHECK(l2_distance(make(gm, [](double) { return 0.0; }), make(gm, [](double) { return 1.0; })) ==
          doctest::Approx(1.0).epsilon(1e-14));
  }

  const auto id = make(g, [](double p) { return p; });
  const auto zero = make(g, [](double) { return 0.0; });
  CHECK(std::abs(l2_distance(id, zero) - std::sqrt(1.0 / 3.0)) <= 1e-3);
}

TEST_CASE("l2 inner product is symmetric and bilinear") {
  const auto g = ProbGrid::uniform_midpoint(51);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(51), b(51), c(51), ab(51);
    for (std::size_t i = 0; i < 51; ++i) {
      a[i] = z(rng);
      b[i] = z(rng);
      c[i] = z(rng);
      ab[i] = 2.0 * a[i] - 0.5 * b[i];
    }
    const QuantileCurve A(g, a), B(g, b), C(g, c), AB(g, ab);
    CHECK(l2_inner(A, B) == doctest::Approx(l2_inner(B, A)).epsilon(1e-14));
    CHECK(l2_inner(AB, C) == doctest::Approx(2.0 * l2_inner(A, C) - 0.5 * l2_inner(B, C)).epsilon(1e-12));
    CHECK(l2_distance(A, C) <= l2_distance(A, B) + l2_distance(B, C) + 1e-12);
  }
}

TEST_CASE("mixed grids are rejected") {
  const QuantileCurve f(ProbGrid::uniform_midpoint(3), {1, 2, 3});
  const QuantileCurve g(ProbGrid::uniform_midpoint(4), {1, 2, 3, 4});
  CHECK_THROWS_AS(l2_distance(f, g), GridMismatchError);
  // equal grids held by different pointers are compatible
  const QuantileCurve h(ProbGrid::uniform_midpoint(3), {0, 0, 0});
  CHECK(l2_distance(f, h) > 0.0);
}

TEST_CASE("monotonicity check") {
  const auto g = ProbGrid::uniform_midpoint(3);
  CHECK(is_monotone(QuantileCurve(g, {2, 2, 2})));
  CHECK_FALSE(is_monotone(QuantileCurve(g, {0, 1, 0.5})));
  CHECK(is_monotone(QuantileCurve(g, {0, 1, 0.5}), 0.6));
}

TEST_CASE("evaluation between and beyond levels") {
  const auto g = std::make_shared<const ProbGrid>(std::vector<double>{0.25, 0.5, 0.75});
  const QuantileCurve f(g, {1, 2, 3});
  CHECK(eval_at(f, 0.5) == 2.0);
  CHECK(eval_at(f, 0.375) == doctest::Approx(1.5));
  CHECK(eval_at(f, 0.9) == 3.0);
  CHECK(eval_at(f, 0.1) == 1.0);
  CHECK_THROWS_AS(eval_at(f, 0.0), DomainError);
  CHECK_THROWS_AS(eval_at(f, 1.0), DomainError);
}

TEST_CASE("curve csv round trip is exact") {
  const auto g = ProbGrid::uniform_midpoint(101);
  const auto f = make(g, [](double p) { return std::log(p / (1 - p)) / 3.0; });
  const auto path = std::filesystem::temp_directory_path() / "qf_test_curve.csv";
  write_curve_csv(path, f);
  const auto back = read_curve_csv(path);
  CHECK(back.grid() == *g);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(back[i] == f[i]);
  CHECK(l2_distance(f, back) == 0.0);
  std::filesystem::remove(path);
}
