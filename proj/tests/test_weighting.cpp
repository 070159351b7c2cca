#include <cmath>

#include "idguard/weighting.hpp"
#include "test_util.hpp"

using namespace idtest;

namespace {

// Exhaustive simplex grid search oracle at the given step.
double grid_search_min(const TaskGradients& tg, double step) {
  const int n = tg.tasks();
  double best = 1e300;
  const int m = static_cast<int>(std::round(1.0 / step));
  if (n == 2) {
    for (int i = 0; i <= m; ++i) {
      const double l0 = i * step;
      best = std::min(best, min_norm_objective(tg, {l0, 1.0 - l0}));
    }
  } else if (n == 3) {
    for (int i = 0; i <= m; ++i) {
      for (int j = 0; j <= m - i; ++j) {
        const double l0 = i * step, l1 = j * step;
        best = std::min(best, min_norm_objective(tg, {l0, l1, 1.0 - l0 - l1}));
      }
    }
  }
  return best;
}

// Random task gradients, normalized to unit L2 so the 0.02 grid oracle
// resolves the optimum well within the 1e-3 comparison tolerance.
TaskGradients random_instance(Rng& rng, int n, int p) {
  TaskGradients tg;
  for (int k = 0; k < n; ++k) {
    std::vector<Scalar> g(static_cast<size_t>(p));
    double ss = 0.0;
    for (auto& v : g) {
      v = rng.normal();
      ss += v * v;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& v : g) v *= inv;
    tg.g.push_back(std::move(g));
  }
  return tg;
}

double vec_norm(const std::vector<Scalar>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("pairwise_gamma closed form") {
  CHECK(pairwise_gamma({1, 0}, {0, 1}) == doctest::Approx(0.5));
  CHECK(pairwise_gamma({1, 0}, {2, 0}) == 1.0);  // clip(2/1) = 1, keep the shorter vertex
  CHECK(pairwise_gamma({0.3, -0.7}, {0.3, -0.7}) == 1.0);  // tie-break on equal points
}

TEST_CASE("min_norm_point simple geometry") {
  {
    TaskGradients tg;
    tg.g = {{1, 0}, {0, 1}};
    WeightSet w = min_norm_point(tg);
    CHECK(w.values[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(w.values[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(min_norm_objective(tg, w.values) == doctest::Approx(0.5).epsilon(1e-9));
  }
  {
    TaskGradients tg;
    tg.g = {{1, 0}, {2, 0}};
    WeightSet w = min_norm_point(tg);
    CHECK(w.values[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(w.values[1] == doctest::Approx(0.0).epsilon(1e-9));
  }
  {
    TaskGradients tg;
    tg.g = {{3, -1, 2}};
    WeightSet w = min_norm_point(tg);
    REQUIRE(w.values.size() == 1);
    CHECK(w.values[0] == 1.0);
  }
  {
    TaskGradients tg;
    tg.g = {{1.0, 0.0}, {std::nan(""), 1.0}};
    CHECK_THROWS_AS(min_norm_point(tg), std::domain_error);
  }
}

TEST_CASE("min_norm_point matches the grid-search oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = (trial % 2 == 0) ? 2 : 3;
    TaskGradients tg = random_instance(rng, n, 10);
    WeightSet w = min_norm_point(tg, 200, 1e-9);
    double sum = 0.0;
    for (double v : w.values) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));  // simplex invariant
    const double solver = min_norm_objective(tg, w.values);
    const double grid = grid_search_min(tg, 0.02);
    INFO("trial ", trial, " solver=", solver, " grid=", grid);
    CHECK(solver <= grid + 1e-3);
    CHECK(std::abs(solver - grid) <= 1e-3);
    // hull min-norm never exceeds any vertex norm
    for (const auto& g : tg.g) CHECK(std::sqrt(solver) <= vec_norm(g) + 1e-12);
  }
}

TEST_CASE("min_norm_point N=2 equals the closed-form pairwise solution") {
  Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    TaskGradients tg = random_instance(rng, 2, 10);
    WeightSet w = min_norm_point(tg, 100, 1e-12);
    const double gamma = pairwise_gamma(tg.g[0], tg.g[1]);
    CHECK(w.values[0] == doctest::Approx(gamma).epsilon(1e-9));
    CHECK(w.values[1] == doctest::Approx(1.0 - gamma).epsilon(1e-9));
  }
}

TEST_CASE("kpi_beta formula") {
  CHECK(kpi_beta(1.0) == 0.0);
  CHECK(kpi_beta(std::exp(-1.0)) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
  CHECK(kpi_beta(std::exp(-1.0)) == doctest::Approx(0.63212).epsilon(1e-4));
  CHECK(kpi_beta(0.001) == doctest::Approx(0.999 * std::log(1000.0)).epsilon(1e-12));
  CHECK(kpi_beta(0.001) == doctest::Approx(6.9009).epsilon(1e-4));
  CHECK_THROWS_AS(kpi_beta(0.0), std::domain_error);
  CHECK_THROWS_AS(kpi_beta(-0.3), std::domain_error);
  CHECK_THROWS_AS(kpi_beta(1.5), std::domain_error);
  // positive on (0,1), zero exactly at 1
  for (double k : {0.05, 0.2, 0.5, 0.9, 0.999}) CHECK(kpi_beta(k) > 0.0);
}

TEST_CASE("kpi_weights rule") {
  SUBCASE("t = 0 has beta = 1, so weights equal alpha exactly") {
    WeightSet w = kpi_weights({1.0, 10.0}, {});
    CHECK(w.values[0] == 1.0);
    CHECK(w.values[1] == 10.0);
  }
  SUBCASE("losses at 1 hit the beta floor") {
    WeightSet w = kpi_weights({2.0, 4.0}, {1.0, 1.0});
    CHECK(w.values[0] == doctest::Approx(2.0 * 1e-3).epsilon(1e-12));
    CHECK(w.values[1] == doctest::Approx(4.0 * 1e-3).epsilon(1e-12));
  }
  SUBCASE("harder models get larger weights") {
    WeightSet w = kpi_weights({1.0, 1.0}, {0.9, 0.1});
    CHECK(w.values[0] == doctest::Approx(0.01054).epsilon(1e-3));
    CHECK(w.values[1] == doctest::Approx(2.0723).epsilon(1e-3));
    CHECK(w.values[1] > w.values[0]);
  }
  SUBCASE("monotone on the decreasing branch [0.2, 1]") {
    double prev = kpi_beta(0.2);
    for (double k = 0.25; k <= 1.0001; k += 0.05) {
      const double b = kpi_beta(std::min(k, 1.0));
      CHECK(b <= prev + 1e-12);
      prev = b;
    }
  }
  SUBCASE("losses above 1 truncate to 1") {
    WeightSet w = kpi_weights({1.0}, {3.7});
    CHECK(w.values[0] == doctest::Approx(1e-3).epsilon(1e-12));  // beta floored after K=1
  }
}

TEST_CASE("equivalent weights") {
  CHECK(equivalent_weights(3).values == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(equivalent_weights(1).values == std::vector<double>{1.0});
  CHECK(equivalent_weights(5).values == std::vector<double>(5, 1.0));
}

TEST_CASE("alpha_from_distances powers of ten") {
  CHECK(alpha_from_distances({0.5, 0.5, 0.5}) == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(alpha_from_distances({0.5, 0.05, 0.005}) == std::vector<double>{1.0, 10.0, 100.0});
  CHECK(alpha_from_distances({0.3, 0.4}) == std::vector<double>{1.0, 1.0});
  CHECK(alpha_from_distances({0.5, 0.0}) == std::vector<double>{1.0, 1000.0});  // capped
}
