#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "oracles.hpp"
#include "quatro/dual_solver.hpp"
#include "quatro/environments.hpp"
#include "quatro/policy.hpp"

using namespace quatro;

namespace {

TabularPolicy random_policy(int v, int t, Rng& rng, double scale = 1.0) {
  TabularPolicy p(v, t, "q");
  for (double& x : p.mutable_params()) x = scale * rng.normal();
  return p;
}

Trajectory traj_of(std::vector<int> tokens) {
  Trajectory t;
  t.query_id = "q";
  t.tokens = std::move(tokens);
  return t;
}

}  // namespace

TEST_CASE("log_prob of the uniform policy is -T log V") {
  TabularPolicy p(2, 3, "q");
  REQUIRE(log_prob(p, std::vector<int>{0, 1, 0}) ==
          Catch::Approx(std::log(1.0 / 8.0)).margin(1e-12));
}

TEST_CASE("log_prob of a near-deterministic policy is near zero") {
  TabularPolicy p(2, 3, "q");
  // +1000 logit along the 1,1,1 path
  std::int64_t node = 0;
  for (int t = 0; t < 3; ++t) {
    p.mutable_row(node)[1] = 1000.0;
    node = p.child(node, 1);
  }
  REQUIRE(log_prob(p, std::vector<int>{1, 1, 1}) ==
          Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("exp(log_prob) sums to one over the enumerated space") {
  Rng rng(101);
  for (int seed = 0; seed < 100; ++seed) {
    TabularPolicy p = random_policy(3, 2, rng, 2.0);
    double total = 0.0;
    std::vector<int> tokens(2);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        tokens = {a, b};
        total += std::exp(log_prob(p, tokens));
      }
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("log_prob validates tokens") {
  TabularPolicy p(2, 3, "q");
  REQUIRE_THROWS_AS(log_prob(p, std::vector<int>{0, 1}), ValidationError);
  REQUIRE_THROWS_AS(log_prob(p, std::vector<int>{0, 1, 2}), ValidationError);
}

TEST_CASE("enumerability cap is enforced") {
  REQUIRE_THROWS_AS(TabularPolicy(2, 13, "q"), SizeError);  // 8192 > 4096
  REQUIRE_NOTHROW(TabularPolicy(2, 12, "q"));
}

TEST_CASE("uniform sampling frequencies match 1/V^T") {
  TabularPolicy p(2, 2, "q");
  SamplingConfig cfg;
  Rng rng(2024);
  const int draws = 100000;
  std::map<std::vector<int>, int> counts;
  for (int i = 0; i < draws; ++i) {
    Trajectory t = sample(p, cfg, rng);
    ++counts[t.tokens];
    REQUIRE(t.logprob_old == Catch::Approx(std::log(0.25)).margin(1e-12));
  }
  const double expect = 0.25;
  const double se = std::sqrt(expect * (1 - expect) / draws);
  REQUIRE(counts.size() == 4);
  for (const auto& [tokens, count] : counts) {
    REQUIRE(std::abs(static_cast<double>(count) / draws - expect) <= 4 * se);
  }
}

TEST_CASE("temperature near zero collapses to the argmax path") {
  Rng init(7);
  TabularPolicy p = random_policy(3, 2, init, 1.0);
  // greedy path
  std::vector<int> greedy;
  std::int64_t node = 0;
  for (int t = 0; t < 2; ++t) {
    auto row = p.row(node);
    int best = 0;
    for (int v = 1; v < 3; ++v) {
      if (row[v] > row[best]) best = v;
    }
    greedy.push_back(best);
    node = p.child(node, best);
  }
  SamplingConfig cfg;
  cfg.temperature = 1e-3;
  Rng rng(99);
  int hits = 0;
  const int draws = 5000;
  for (int i = 0; i < draws; ++i) {
    if (sample(p, cfg, rng).tokens == greedy) ++hits;
  }
  REQUIRE(static_cast<double>(hits) / draws > 0.999);
}

TEST_CASE("top_p cuts the nucleus after the first token") {
  TabularPolicy p(3, 1, "q");
  auto row = p.mutable_row(0);
  row[0] = std::log(0.6);
  row[1] = std::log(0.3);
  row[2] = std::log(0.1);
  SamplingConfig cfg;
  cfg.top_p = 0.5;
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    Trajectory t = sample(p, cfg, rng);
    REQUIRE(t.tokens[0] == 0);
    // the truncated distribution is a point mass
    REQUIRE(t.logprob_old == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("logprob_old is recorded under the truncated distribution") {
  TabularPolicy p(3, 1, "q");
  auto row = p.mutable_row(0);
  row[0] = std::log(0.5);
  row[1] = std::log(0.3);
  row[2] = std::log(0.2);
  SamplingConfig cfg;
  cfg.top_p = 0.8;  // keeps {0, 1}, renormalized to (0.625, 0.375)
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    Trajectory t = sample(p, cfg, rng);
    REQUIRE(t.tokens[0] != 2);
    double expect = t.tokens[0] == 0 ? 0.5 / 0.8 : 0.3 / 0.8;
    REQUIRE(t.logprob_old == Catch::Approx(std::log(expect)).margin(1e-9));
  }
}

TEST_CASE("enumerate_distribution of the uniform policy is flat") {
  TabularPolicy p(2, 2, "q");
  auto dist = enumerate_distribution(p);
  REQUIRE(dist.size() == 4);
  for (const auto& [tokens, prob] : dist) {
    REQUIRE(prob == Catch::Approx(0.25).margin(1e-15));
  }
  REQUIRE(dist[0].first == std::vector<int>{0, 0});
  REQUIRE(dist[3].first == std::vector<int>{1, 1});
}

TEST_CASE("enumerate_distribution sums to one on random policies") {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    TabularPolicy p = random_policy(3, 3, rng, 2.5);
    auto dist = enumerate_distribution(p);
    double total = 0.0;
    for (const auto& [tokens, prob] : dist) total += prob;
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("total variation to a perturbed policy is a nonnegative metric") {
  Rng rng(12);
  TabularPolicy p = random_policy(2, 3, rng);
  TabularPolicy q = p;
  q.mutable_params()[3] += 0.25;
  auto dp = enumerate_distribution(p);
  auto dq = enumerate_distribution(q);
  REQUIRE(total_variation(dp, dp) == 0.0);
  REQUIRE(total_variation(dp, dq) > 0.0);
  REQUIRE(total_variation(dp, dq) <= 1.0);
}

TEST_CASE("ratios are exactly one when theta equals old") {
  Rng rng(13);
  TabularPolicy p = random_policy(3, 2, rng);
  Trajectory t = traj_of({2, 1});
  REQUIRE(sequence_ratio_gspo(p, p, t) == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(trajectory_ratio(p, p, t).value == Catch::Approx(1.0).margin(1e-14));
  for (double r : token_ratios(p, p, t)) {
    REQUIRE(r == Catch::Approx(1.0).margin(1e-14));
  }
}

TEST_CASE("doubling every token factor gives GSPO ratio two") {
  const int t_len = 3;
  TabularPolicy old_policy(4, t_len, "q");  // uniform: every factor 1/4
  TabularPolicy theta(4, t_len, "q");
  // token 0 gets probability 1/2 at every prefix: twice the uniform factor
  for (std::int64_t r = 0; r < theta.num_rows(); ++r) {
    auto row = theta.mutable_row(r);
    row[0] = std::log(3.0);  // softmax: 3/(3+3) = 1/2, others 1/6
  }
  Trajectory t = traj_of({0, 0, 0});
  REQUIRE(sequence_ratio_gspo(theta, old_policy, t) ==
          Catch::Approx(2.0).margin(1e-12));
  REQUIRE(trajectory_ratio(theta, old_policy, t).value ==
          Catch::Approx(std::pow(2.0, t_len)).margin(1e-10));
  for (double r : token_ratios(theta, old_policy, t)) {
    REQUIRE(r == Catch::Approx(2.0).margin(1e-12));
  }
}

TEST_CASE("single logit bump matches the closed-form softmax ratio") {
  const double b = 0.7;
  TabularPolicy old_policy(2, 2, "q");
  TabularPolicy theta = old_policy;
  theta.mutable_row(0)[0] += b;  // bump the taken token at the first step
  Trajectory t = traj_of({0, 1});
  // new first-step prob e^b/(e^b+1) over old 1/2; second step unchanged
  double expected = (std::exp(b) / (std::exp(b) + 1.0)) / 0.5;
  auto ratio = trajectory_ratio(theta, old_policy, t);
  REQUIRE(ratio.value == Catch::Approx(expected).margin(1e-12));
  REQUIRE(ratio.log_value == Catch::Approx(std::log(expected)).margin(1e-12));
}

TEST_CASE("trajectory ratio telescopes over token ratios") {
  Rng rng(14);
  for (int rep = 0; rep < 50; ++rep) {
    TabularPolicy theta = random_policy(3, 3, rng);
    TabularPolicy old_policy = random_policy(3, 3, rng);
    Trajectory t = traj_of({static_cast<int>(rng.next_u64() % 3),
                            static_cast<int>(rng.next_u64() % 3),
                            static_cast<int>(rng.next_u64() % 3)});
    auto ratio = trajectory_ratio(theta, old_policy, t);
    double product = 1.0;
    for (double r : token_ratios(theta, old_policy, t)) product *= r;
    REQUIRE(ratio.value == Catch::Approx(product).epsilon(1e-10));
    REQUIRE(sequence_ratio_gspo(theta, old_policy, t) ==
            Catch::Approx(std::pow(ratio.value, 1.0 / 3.0)).epsilon(1e-10));
    // log-space and linear values agree
    REQUIRE(std::exp(ratio.log_value) == Catch::Approx(ratio.value).epsilon(1e-12));
  }
}

namespace {

// Chain-rule KL oracle: sum over prefixes of reach_p(prefix) * KL of the
// next-token rows.
double kl_by_prefix_decomposition(const TabularPolicy& p,
                                  const TabularPolicy& r) {
  std::vector<double> reach(static_cast<std::size_t>(p.num_rows()), 0.0);
  reach[0] = 1.0;
  double kl = 0.0;
  for (std::int64_t node = 0; node < p.num_rows(); ++node) {
    if (reach[node] == 0.0) continue;
    auto lp = p.log_softmax_row(node);
    auto lr = r.log_softmax_row(node);
    double row_kl = 0.0;
    for (int v = 0; v < p.vocab_size(); ++v) {
      row_kl += std::exp(lp[v]) * (lp[v] - lr[v]);
    }
    kl += reach[node] * row_kl;
    std::int64_t first_child = node * p.vocab_size() + 1;
    if (first_child < p.num_rows()) {
      for (int v = 0; v < p.vocab_size(); ++v) {
        reach[first_child + v] += reach[node] * std::exp(lp[v]);
      }
    }
  }
  return kl;
}

}  // namespace

TEST_CASE("exact KL properties and the prefix-decomposition oracle") {
  Rng rng(15);
  TabularPolicy p = random_policy(3, 3, rng);
  REQUIRE(exact_kl(p, p) == Catch::Approx(0.0).margin(1e-12));
  for (int rep = 0; rep < 20; ++rep) {
    TabularPolicy a = random_policy(3, 3, rng);
    TabularPolicy b = random_policy(3, 3, rng);
    double kl = exact_kl(a, b);
    REQUIRE(kl >= 0.0);
    REQUIRE(kl == Catch::Approx(kl_by_prefix_decomposition(a, b)).margin(1e-10));
  }
}

TEST_CASE("token entropy fixtures") {
  TabularPolicy uniform(3, 2, "q");
  Trajectory t = traj_of({0, 2});
  for (double h : token_entropy(uniform, t)) {
    REQUIRE(h == Catch::Approx(std::log(3.0)).margin(1e-12));
  }

  TabularPolicy det(2, 2, "q");
  for (std::int64_t r = 0; r < det.num_rows(); ++r) {
    det.mutable_row(r)[0] = 60.0;
  }
  Trajectory t2 = traj_of({0, 0});
  for (double h : token_entropy(det, t2)) {
    REQUIRE(h == Catch::Approx(0.0).margin(1e-9));
  }

  TabularPolicy skew(3, 1, "q");
  auto row = skew.mutable_row(0);
  row[0] = std::log(0.5);
  row[1] = std::log(0.25);
  row[2] = std::log(0.25);
  // 1.5 bits in nats
  double expected = 1.5 * std::log(2.0);
  double direct = -(0.5 * std::log(0.5) + 0.25 * std::log(0.25) +
                    0.25 * std::log(0.25));
  Trajectory t3 = traj_of({1});
  REQUIRE(token_entropy(skew, t3)[0] == Catch::Approx(expected).margin(1e-12));
  REQUIRE(token_entropy(skew, t3)[0] == Catch::Approx(direct).margin(1e-12));
}

TEST_CASE("policy_from_distribution reproduces the distribution") {
  Rng rng(16);
  TabularPolicy p = random_policy(3, 2, rng, 1.5);
  auto dist = enumerate_distribution(p);
  TabularPolicy rebuilt = policy_from_distribution(dist, 3, 2, "q");
  auto dist2 = enumerate_distribution(rebuilt);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    REQUIRE(dist2[i].second == Catch::Approx(dist[i].second).epsilon(1e-12));
  }
}

TEST_CASE("closed-form tilted policy sits exactly on the KL budget") {
  // End-to-end KKT across modules: tilt pi_old by exp(A) from the
  // exact-expectation dual solve and check KL(pi*, pi_old) = delta.
  Rng rng(17);
  TabularPolicy old_policy = random_policy(3, 3, rng, 0.8);
  SyntheticEnv env;
  env.vocab_size = 3;
  env.horizon = 3;
  env.kind = EnvKind::graded;
  env.targets = {{0, 1, 2}};
  auto dist = enumerate_distribution(old_policy);
  RewardGroup group;
  group.query_id = "q";
  std::vector<double> weights;
  for (const auto& [tokens, prob] : dist) {
    group.rewards.push_back(reward(env, tokens).reward);
    weights.push_back(prob);
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  for (double& w : weights) w /= wsum;
  group.weights = weights;
  TrustRegionConfig tr;
  tr.delta = 0.01;
  DualSolution sol = solve_dual(group, tr);
  REQUIRE(sol.interior);
  TrajectoryDistribution tilted = dist;
  for (std::size_t i = 0; i < tilted.size(); ++i) {
    tilted[i].second = weights[i] * std::exp(sol.advantages[i]);
  }
  TabularPolicy star = policy_from_distribution(tilted, 3, 3, "q");
  REQUIRE(exact_kl(star, old_policy) == Catch::Approx(tr.delta).margin(1e-6));
}
