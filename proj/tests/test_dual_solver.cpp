#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "quatro/dual_solver.hpp"
#include "quatro/rng.hpp"

using namespace quatro;

namespace {

RewardGroup binary_group_8_4() {
  // N = 8 rollouts, 4 correct: the canonical group for these tests.
  RewardGroup g;
  g.query_id = "q";
  g.rewards = {1, 1, 1, 1, 0, 0, 0, 0};
  return g;
}

std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

RewardGroup random_group(Rng& rng, int n) {
  RewardGroup g;
  g.query_id = "rand";
  g.rewards.resize(n);
  for (double& r : g.rewards) r = rng.uniform();
  return g;
}

}  // namespace

TEST_CASE("dual objective of a constant group is lambda*delta + R") {
  RewardGroup g;
  g.query_id = "const";
  g.rewards = {0.37, 0.37, 0.37};
  for (double lambda : {0.5, 1.0, 7.0}) {
    for (double delta : {0.1, 0.01}) {
      REQUIRE(dual_objective(g, lambda, delta) ==
              Catch::Approx(lambda * delta + 0.37).margin(1e-12));
    }
  }
}

TEST_CASE("dual objective matches the direct-substitution golden value") {
  // lambda*(0.01 + log((4e + 4)/8)) evaluated at 1e-12 precision.
  auto g = binary_group_8_4();
  REQUIRE(dual_objective(g, 1.0, 0.01) ==
          Catch::Approx(0.63011450695827752).margin(1e-12));
}

TEST_CASE("dual objective approaches the second-order expansion for large lambda") {
  // mean 0.5, variance 0.25: f ~ lambda*delta + mean + var/(2 lambda)
  auto g = binary_group_8_4();
  const double delta = 0.01;
  auto series = [&](double lambda) {
    return lambda * delta + 0.5 + 0.25 / (2.0 * lambda);
  };
  REQUIRE(std::abs(dual_objective(g, 100.0, delta) - series(100.0)) < 1e-6);
  REQUIRE(std::abs(dual_objective(g, 1e4, delta) - series(1e4)) < 1e-9);
}

TEST_CASE("dual objective rejects bad inputs") {
  auto g = binary_group_8_4();
  REQUIRE_THROWS_AS(dual_objective(g, 0.0, 0.01), DomainError);
  REQUIRE_THROWS_AS(dual_objective(g, -1.0, 0.01), DomainError);
  RewardGroup bad = g;
  bad.rewards[0] = std::nan("");
  REQUIRE_THROWS_AS(dual_objective(bad, 1.0, 0.01), ValidationError);
  RewardGroup empty;
  empty.query_id = "e";
  REQUIRE_THROWS_AS(dual_objective(empty, 1.0, 0.01), ValidationError);
}

TEST_CASE("solve_dual matches the grid oracle on the canonical binary group") {
  auto g = binary_group_8_4();
  TrustRegionConfig tr;
  tr.delta = 0.01;
  DualSolution sol = solve_dual(g, tr);

  // Golden value frozen from the brute-force grid oracle run ahead of this
  // build; the in-test oracle reproduces it.
  REQUIRE(sol.lambda_star == Catch::Approx(3.5177919195743930).margin(1e-6));
  double grid = oracles::grid_argmin_lambda(g.rewards, uniform_weights(8), 0.01);
  REQUIRE(sol.lambda_star == Catch::Approx(grid).margin(1e-6));
  REQUIRE(sol.interior);
  REQUIRE_FALSE(sol.degenerate);
  REQUIRE(sol.f_value == Catch::Approx(0.57059257027349430).margin(1e-9));
  REQUIRE(sol.mu_star == Catch::Approx(-2.9823772684966427).margin(1e-8));
}

TEST_CASE("advantages match the tilted-weight oracle") {
  auto g = binary_group_8_4();
  TrustRegionConfig tr;
  tr.delta = 0.01;
  DualSolution sol = solve_dual(g, tr);

  // p_i = exp(R_i/lambda*) / (N g(lambda*)), A_i = log(N p_i)
  const int n = 8;
  double gbar = 0.0;
  for (double r : g.rewards) gbar += std::exp(r / sol.lambda_star) / n;
  for (int i = 0; i < n; ++i) {
    double p = std::exp(g.rewards[i] / sol.lambda_star) / (n * gbar);
    REQUIRE(sol.advantages[i] == Catch::Approx(std::log(n * p)).margin(1e-9));
  }
  REQUIRE(sol.advantages[0] == Catch::Approx(0.13206731937074277).margin(1e-8));
  REQUIRE(sol.advantages[7] == Catch::Approx(-0.15220191055033425).margin(1e-8));
}

TEST_CASE("equal rewards give a degenerate solution with zero advantages") {
  RewardGroup g;
  g.query_id = "flat";
  g.rewards = {0.5, 0.5, 0.5};
  TrustRegionConfig tr;
  tr.delta = 0.05;
  DualSolution sol = solve_dual(g, tr);
  REQUIRE(sol.degenerate);
  REQUIRE_FALSE(sol.interior);
  REQUIRE(sol.lambda_star == tr.lambda_min);
  REQUIRE(sol.mu_star == Catch::Approx(0.5 - sol.lambda_star).margin(1e-12));
  for (double a : sol.advantages) REQUIRE(a == 0.0);
}

TEST_CASE("collapsed bracket pins lambda at the floor, flagged non-interior") {
  RewardGroup g;
  g.query_id = "tiny-spread";
  g.rewards = {0.5, 0.5 + 1e-8};
  TrustRegionConfig tr;
  tr.delta = 1e4;
  tr.bracket_pad = 0.0;
  DualSolution sol = solve_dual(g, tr);
  REQUIRE_FALSE(sol.degenerate);
  REQUIRE_FALSE(sol.interior);
  REQUIRE(sol.lambda_star == tr.lambda_min);
}

TEST_CASE("lambda* matches the grid oracle on random groups and deltas") {
  Rng rng(42);
  for (int rep = 0; rep < 10; ++rep) {
    for (int n : {4, 8, 16}) {
      auto g = random_group(rng, n);
      for (double delta : {0.1, 0.01, 0.001}) {
        TrustRegionConfig tr;
        tr.delta = delta;
        DualSolution sol = solve_dual(g, tr);
        double hi = (1.0 - 0.0) / delta + 1.0;
        double grid = oracles::grid_argmin_lambda(
            g.rewards, uniform_weights(g.rewards.size()), delta, 1e-3, hi);
        REQUIRE(sol.lambda_star == Catch::Approx(grid).margin(1e-6));
      }
    }
  }
}

TEST_CASE("weighted (exact-expectation) mode agrees with its grid oracle") {
  RewardGroup g;
  g.query_id = "weighted";
  g.rewards = {1.0, 0.0, 0.5};
  g.weights = std::vector<double>{0.5, 0.25, 0.25};
  TrustRegionConfig tr;
  tr.delta = 0.01;
  DualSolution sol = solve_dual(g, tr);
  double grid =
      oracles::grid_argmin_lambda(g.rewards, *g.weights, tr.delta, 1e-3, 101.0);
  REQUIRE(sol.lambda_star == Catch::Approx(grid).margin(1e-6));
  double norm = 0.0;
  for (std::size_t i = 0; i < g.rewards.size(); ++i) {
    norm += (*g.weights)[i] * std::exp(sol.advantages[i]);
  }
  REQUIRE(norm == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("dual objective is convex along log-spaced lambda grids") {
  Rng rng(7);
  for (int rep = 0; rep < 25; ++rep) {
    auto g = random_group(rng, 8);
    std::vector<double> lambdas;
    for (double l = 1e-3; l <= 1e3; l *= 1.7) lambdas.push_back(l);
    for (std::size_t i = 0; i + 2 < lambdas.size(); ++i) {
      double f1 = dual_objective(g, lambdas[i], 0.01);
      double f2 = dual_objective(g, lambdas[i + 1], 0.01);
      double f3 = dual_objective(g, lambdas[i + 2], 0.01);
      double second_dd = (f3 - f2) / (lambdas[i + 2] - lambdas[i + 1]) -
                         (f2 - f1) / (lambdas[i + 1] - lambdas[i]);
      REQUIRE(second_dd >= -1e-9);
    }
  }
}

TEST_CASE("normalization identity holds at every lambda, not only lambda*") {
  Rng rng(8);
  for (int rep = 0; rep < 25; ++rep) {
    auto g = random_group(rng, 6);
    for (double lambda : {0.03, 0.2, 1.0, 12.0, 300.0}) {
      double mu = mu_of_lambda(g, lambda);
      double total = 0.0;
      for (std::size_t i = 0; i < g.rewards.size(); ++i) {
        total += g.weight(i) * std::exp((g.rewards[i] - mu) / lambda - 1.0);
      }
      REQUIRE(total == Catch::Approx(1.0).margin(1e-10));
    }
  }
}

TEST_CASE("interior solutions put the tilted measure exactly on the KL budget") {
  Rng rng(9);
  int interior_count = 0;
  for (int rep = 0; rep < 40; ++rep) {
    auto g = random_group(rng, 8);
    for (double delta : {0.1, 0.01, 0.001}) {
      TrustRegionConfig tr;
      tr.delta = delta;
      DualSolution sol = solve_dual(g, tr);
      if (!sol.interior) continue;
      ++interior_count;
      double kl = 0.0;
      for (std::size_t i = 0; i < g.rewards.size(); ++i) {
        double p = g.weight(i) * std::exp(sol.advantages[i]);
        kl += p * sol.advantages[i];
      }
      REQUIRE(kl == Catch::Approx(delta).margin(1e-6));
    }
  }
  REQUIRE(interior_count > 50);
}

TEST_CASE("lambda* is strictly monotone in delta on non-degenerate groups") {
  Rng rng(10);
  for (int rep = 0; rep < 20; ++rep) {
    auto g = random_group(rng, 8);
    TrustRegionConfig tr;
    tr.delta = 0.1;
    double l_coarse = solve_dual(g, tr).lambda_star;
    tr.delta = 0.01;
    double l_mid = solve_dual(g, tr).lambda_star;
    tr.delta = 0.001;
    double l_fine = solve_dual(g, tr).lambda_star;
    REQUIRE(l_coarse < l_mid);
    REQUIRE(l_mid < l_fine);
  }
}

TEST_CASE("advantages are invariant to a constant reward shift") {
  Rng rng(11);
  for (int rep = 0; rep < 15; ++rep) {
    auto g = random_group(rng, 8);
    RewardGroup shifted = g;
    const double c = 3.75;
    for (double& r : shifted.rewards) r += c;
    TrustRegionConfig tr;
    tr.delta = 0.01;
    DualSolution a = solve_dual(g, tr);
    DualSolution b = solve_dual(shifted, tr);
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      REQUIRE(a.advantages[i] == Catch::Approx(b.advantages[i]).margin(1e-8));
    }
    REQUIRE(b.mu_star - a.mu_star == Catch::Approx(c).margin(1e-6));
  }
}

TEST_CASE("advantages_of is idempotent and validates its input") {
  auto g = binary_group_8_4();
  TrustRegionConfig tr;
  tr.delta = 0.01;
  DualSolution sol = solve_dual(g, tr);
  auto again = advantages_of(sol, g);
  for (std::size_t i = 0; i < again.size(); ++i) {
    REQUIRE(again[i] == sol.advantages[i]);
  }
  RewardGroup wrong;
  wrong.query_id = "wrong";
  wrong.rewards = {1, 0};
  REQUIRE_THROWS_AS(advantages_of(sol, wrong), ValidationError);

  RewardGroup flat;
  flat.query_id = "flat";
  flat.rewards = {2, 2, 2};
  DualSolution dsol = solve_dual(flat, tr);
  for (double a : advantages_of(dsol, flat)) REQUIRE(a == 0.0);
}

TEST_CASE("group weight validation") {
  RewardGroup g;
  g.query_id = "w";
  g.rewards = {1, 0};
  g.weights = std::vector<double>{0.9, 0.2};  // sums to 1.1
  TrustRegionConfig tr;
  tr.delta = 0.01;
  REQUIRE_THROWS_AS(solve_dual(g, tr), ValidationError);
  g.weights = std::vector<double>{1.2, -0.2};
  REQUIRE_THROWS_AS(solve_dual(g, tr), ValidationError);
}
