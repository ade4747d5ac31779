#include <doctest.h>

#include <cmath>
#include <random>

#include "dmc/error.hpp"
#include "dmc/numerics.hpp"
#include "oracles.hpp"

using namespace dmc;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected dmc::Error");
  return ErrorKind::NumericalFailure;
}

}  // namespace

TEST_CASE("l2_normalize examples") {
  const auto v = l2_normalize(std::vector<double>{3, 4});
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(l2_normalize(std::vector<double>{1, 0, 0}) == std::vector<double>{1, 0, 0});
  CHECK(kind_of([] { l2_normalize(std::vector<double>{0, 0}); }) == ErrorKind::ZeroVector);
  CHECK(kind_of([] { l2_normalize(std::vector<double>{1e-13, 0}); }) == ErrorKind::ZeroVector);
}

TEST_CASE("l2_normalize is idempotent") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(1 + t % 17);
    for (auto& x : v) x = n(rng);
    const auto once = l2_normalize(v);
    const auto twice = l2_normalize(once);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-12);
    CHECK(std::abs(l2_norm(once) - 1.0) <= 1e-12);
  }
}

TEST_CASE("cosine_similarity examples and errors") {
  CHECK(cosine_similarity(std::vector<double>{0.6, 0.8}, std::vector<double>{0.6, 0.8}) == doctest::Approx(1.0));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(std::abs(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}) - 0.70710678) < 1e-8);
  CHECK(kind_of([] { cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}); }) ==
        ErrorKind::DimensionMismatch);
  CHECK(kind_of([] { cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}); }) ==
        ErrorKind::ZeroVector);
}

TEST_CASE("cosine_similarity is symmetric, scale invariant and clamped") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> scale(0.01, 100);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> u(6), v(6);
    for (auto& x : u) x = n(rng);
    for (auto& x : v) x = n(rng);
    const double c = cosine_similarity(u, v);
    CHECK(c == cosine_similarity(v, u));
    auto su = u, sv = v;
    const double a = scale(rng), b = scale(rng);
    for (auto& x : su) x *= a;
    for (auto& x : sv) x *= b;
    CHECK(std::abs(cosine_similarity(su, sv) - c) <= 1e-9);
    CHECK(cosine_similarity(u, u) <= 1.0);
    CHECK(cosine_similarity(u, u) >= -1.0);

    // ||u - v||^2 = 2 - 2 cos for unit vectors
    const auto hu = l2_normalize(u), hv = l2_normalize(v);
    double d2 = 0;
    for (std::size_t i = 0; i < hu.size(); ++i) d2 += (hu[i] - hv[i]) * (hu[i] - hv[i]);
    CHECK(std::abs(d2 - (2.0 - 2.0 * cosine_similarity(hu, hv))) <= 1e-9);
  }
}

TEST_CASE("spearman examples") {
  CHECK(spearman_correlation(std::vector<double>{1, 2, 3}, std::vector<double>{10, 20, 30}) == doctest::Approx(1.0));
  CHECK(spearman_correlation(std::vector<double>{1, 2, 3}, std::vector<double>{30, 20, 10}) == doctest::Approx(-1.0));
  const std::vector<double> xs{1, 2, 3}, ys{3, 1, 2};
  CHECK(spearman_correlation(xs, ys) == doctest::Approx(oracle::spearman_rank_formula(xs, ys)).epsilon(1e-12));
  CHECK(spearman_correlation(xs, ys) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("spearman errors") {
  CHECK(kind_of([] { spearman_correlation(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}); }) ==
        ErrorKind::LengthMismatch);
  CHECK(kind_of([] { spearman_correlation(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }) ==
        ErrorKind::DegenerateInput);
  CHECK(kind_of([] { spearman_correlation(std::vector<double>{1}, std::vector<double>{1}); }) ==
        ErrorKind::DegenerateInput);
}

TEST_CASE("average ranks share ties") {
  const auto r = average_ranks(std::vector<double>{10, 20, 20, 5});
  CHECK(r == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("spearman matches the rank formula and ignores monotone transforms") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> xs(20), ys(20);
    for (auto& x : xs) x = n(rng);
    for (auto& y : ys) y = n(rng);
    const double rho = spearman_correlation(xs, ys);
    CHECK(std::abs(rho - oracle::spearman_rank_formula(xs, ys)) <= 1e-12);
    auto tx = xs;
    for (auto& x : tx) x = std::exp(3 * x) + 7;
    auto ty = ys;
    for (auto& y : ty) y = y * y * y;
    CHECK(std::abs(spearman_correlation(tx, ty) - rho) <= 1e-12);
    CHECK(rho >= -1.0);
    CHECK(rho <= 1.0);
  }
}

TEST_CASE("stack_rows and all_finite") {
  const auto m = stack_rows({{1, 2}, {3, 4}, {5, 6}});
  CHECK(m.rows == 3);
  CHECK(m.cols == 2);
  CHECK(m(2, 1) == 6);
  CHECK(stack_rows({}).rows == 0);
  CHECK(kind_of([] { stack_rows({{1, 2}, {3}}); }) == ErrorKind::DimensionMismatch);
  CHECK(all_finite(std::vector<double>{1, 2}));
  CHECK_FALSE(all_finite(std::vector<double>{1, std::nan("")}));
}
