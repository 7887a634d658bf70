#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "quatro/dual_solver.hpp"
#include "quatro/objectives.hpp"
#include "quatro/policy.hpp"
#include "quatro/rng.hpp"
#include "quatro/trainer.hpp"

namespace quatro {

/// Test-harness mutations for checking that verification actually fails
/// when the math is broken.
enum class Fault { none, advantage_sign_flip };

inline Fault parse_fault(const std::string& s) {
  if (s.empty() || s == "none") return Fault::none;
  if (s == "advantage_sign_flip") return Fault::advantage_sign_flip;
  throw ValidationError("unknown fault: " + s);
}

struct VerifyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace verify_detail {

/// Advantage recomputation used by the checks below; the injected fault
/// flips its sign so a broken formula is caught by the invariants.
inline std::vector<double> advantages(const DualSolution& sol,
                                      const RewardGroup& group, Fault fault) {
  std::vector<double> adv = advantages_of(sol, group);
  if (fault == Fault::advantage_sign_flip) {
    for (double& a : adv) a = -a;
  }
  return adv;
}

inline RewardGroup random_group(Rng& rng, int n) {
  RewardGroup g;
  g.query_id = "verify";
  g.rewards.resize(n);
  for (double& r : g.rewards) r = rng.uniform();
  return g;
}

inline std::string fmt(double x) {
  std::ostringstream ss;
  ss.precision(3);
  ss << std::scientific << x;
  return ss.str();
}

}  // namespace verify_detail

/// Cross-module invariant suite behind `quatro verify`. Returns one result
/// per check; `filter` keeps checks whose name contains it.
inline std::vector<VerifyResult> run_verification(
    const std::string& filter = "", Fault fault = Fault::none) {
  std::vector<VerifyResult> results;
  auto check = [&](const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& fn) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    VerifyResult r;
    r.name = name;
    try {
      auto [ok, detail] = fn();
      r.pass = ok;
      r.detail = detail;
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    results.push_back(std::move(r));
  };

  check("dual/convexity", [&]() -> std::pair<bool, std::string> {
    Rng rng(11);
    double worst = 1e300;
    for (int rep = 0; rep < 20; ++rep) {
      auto g = verify_detail::random_group(rng, 8);
      std::vector<double> lambdas;
      for (double l = 1e-3; l < 1e3; l *= 1.5) lambdas.push_back(l);
      for (std::size_t i = 0; i + 2 < lambdas.size(); ++i) {
        double f1 = dual_objective(g, lambdas[i], 0.01);
        double f2 = dual_objective(g, lambdas[i + 1], 0.01);
        double f3 = dual_objective(g, lambdas[i + 2], 0.01);
        double d2 = (f3 - f2) / (lambdas[i + 2] - lambdas[i + 1]) -
                    (f2 - f1) / (lambdas[i + 1] - lambdas[i]);
        worst = std::min(worst, d2);
      }
    }
    return {worst >= -1e-9,
            "min second divided difference " + verify_detail::fmt(worst)};
  });

  check("dual/normalization", [&]() -> std::pair<bool, std::string> {
    Rng rng(12);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      auto g = verify_detail::random_group(rng, 6);
      TrustRegionConfig tr;
      tr.delta = 0.01;
      DualSolution sol = solve_dual(g, tr);
      for (double lambda : {0.05, 0.3, 2.0, 40.0}) {
        double mu = mu_of_lambda(g, lambda);
        DualSolution at_lambda = sol;
        at_lambda.lambda_star = lambda;
        at_lambda.mu_star = mu;
        at_lambda.degenerate = false;
        auto adv = verify_detail::advantages(at_lambda, g, fault);
        double total = 0.0;
        for (std::size_t i = 0; i < adv.size(); ++i) {
          total += g.weight(i) * std::exp(adv[i]);
        }
        worst = std::max(worst, std::abs(total - 1.0));
      }
    }
    return {worst <= 1e-10, "max |sum w exp(A) - 1| = " + verify_detail::fmt(worst)};
  });

  check("dual/kkt-activity", [&]() -> std::pair<bool, std::string> {
    Rng rng(13);
    double worst = 0.0;
    int used = 0;
    for (int rep = 0; rep < 30; ++rep) {
      auto g = verify_detail::random_group(rng, 8);
      TrustRegionConfig tr;
      tr.delta = 0.01;
      DualSolution sol = solve_dual(g, tr);
      if (!sol.interior) continue;
      ++used;
      auto adv = verify_detail::advantages(sol, g, fault);
      double kl = 0.0;
      for (std::size_t i = 0; i < adv.size(); ++i) {
        kl += g.weight(i) * std::exp(adv[i]) * adv[i];
      }
      worst = std::max(worst, std::abs(kl - tr.delta));
    }
    return {used > 0 && worst <= 1e-6,
            "max |sum p A - delta| = " + verify_detail::fmt(worst) + " over " +
                std::to_string(used) + " interior solves"};
  });

  check("dual/lambda-delta-monotonicity", [&]() -> std::pair<bool, std::string> {
    Rng rng(14);
    for (int rep = 0; rep < 20; ++rep) {
      auto g = verify_detail::random_group(rng, 8);
      double prev = -1.0;
      for (double delta : {0.1, 0.01, 0.001}) {
        TrustRegionConfig tr;
        tr.delta = delta;
        double lam = solve_dual(g, tr).lambda_star;
        if (lam <= prev) return {false, "lambda* not increasing as delta shrinks"};
        prev = lam;
      }
    }
    return {true, "lambda* strictly increases as delta decreases (20 groups)"};
  });

  check("dual/shift-equivariance", [&]() -> std::pair<bool, std::string> {
    Rng rng(15);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      auto g = verify_detail::random_group(rng, 8);
      RewardGroup shifted = g;
      for (double& r : shifted.rewards) r += 7.25;
      TrustRegionConfig tr;
      tr.delta = 0.01;
      auto a = solve_dual(g, tr).advantages;
      auto b = solve_dual(shifted, tr).advantages;
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
      }
    }
    return {worst <= 1e-8, "max advantage shift drift " + verify_detail::fmt(worst)};
  });

  check("policy/enumeration-normalization", [&]() -> std::pair<bool, std::string> {
    Rng rng(16);
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      TabularPolicy p(3, 3);
      for (double& x : p.mutable_params()) x = 2.0 * rng.normal();
      double total = 0.0;
      for (const auto& [tokens, prob] : enumerate_distribution(p)) {
        total += prob;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    return {worst <= 1e-12, "max |sum p - 1| = " + verify_detail::fmt(worst)};
  });

  check("policy/kkt-eq17", [&]() -> std::pair<bool, std::string> {
    // Closed-form tilted optimum of the exact-expectation dual solve must
    // sit exactly on the trust-region boundary.
    Rng rng(17);
    TabularPolicy old_policy(3, 3, "q");
    for (double& x : old_policy.mutable_params()) x = 0.7 * rng.normal();
    SyntheticEnv env;
    env.vocab_size = 3;
    env.horizon = 3;
    env.kind = EnvKind::graded;
    env.targets = {{0, 1, 2}};
    auto dist = enumerate_distribution(old_policy);
    RewardGroup group;
    group.query_id = "q";
    std::vector<double> weights;
    for (const auto& [tokens, p] : dist) {
      group.rewards.push_back(reward(env, tokens).reward);
      weights.push_back(p);
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    for (double& w : weights) w /= wsum;
    group.weights = weights;
    TrustRegionConfig tr;
    tr.delta = 0.01;
    DualSolution sol = solve_dual(group, tr);
    if (!sol.interior) return {false, "dual solve unexpectedly non-interior"};
    auto adv = verify_detail::advantages(sol, group, fault);
    TrajectoryDistribution tilted = dist;
    for (std::size_t i = 0; i < tilted.size(); ++i) {
      tilted[i].second = weights[i] * std::exp(adv[i]);
    }
    TabularPolicy star = policy_from_distribution(tilted, 3, 3, "q");
    double kl = exact_kl(star, old_policy);
    return {std::abs(kl - tr.delta) <= 1e-6,
            "|KL(pi*, pi_old) - delta| = " + verify_detail::fmt(std::abs(kl - tr.delta))};
  });

  check("objectives/gradient-fd", [&]() -> std::pair<bool, std::string> {
    Rng rng(18);
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      TabularPolicy theta(2, 3, "q");
      TabularPolicy old_policy(2, 3, "q");
      TabularPolicy pre(2, 3, "q");
      for (double& x : theta.mutable_params()) x = 0.5 * rng.normal();
      for (double& x : old_policy.mutable_params()) x = 0.5 * rng.normal();
      for (double& x : pre.mutable_params()) x = 0.5 * rng.normal();
      Batch batch;
      batch.query_id = "q";
      batch.old_policy = &old_policy;
      batch.pre_policy = &pre;
      SamplingConfig sc;
      Rng sample_rng(100 + rep);
      for (int i = 0; i < 6; ++i) {
        batch.trajectories.push_back(sample(old_policy, sc, sample_rng));
        batch.trajectories.back().reward = rng.uniform();
      }
      RewardGroup group;
      group.query_id = "q";
      for (const auto& t : batch.trajectories) group.rewards.push_back(t.reward);
      TrustRegionConfig tr;
      tr.delta = 0.01;
      batch.advantages = verify_detail::advantages(solve_dual(group, tr), group, fault);

      std::vector<double> detached(batch.trajectories.size());
      for (std::size_t i = 0; i < detached.size(); ++i) {
        detached[i] = log_prob(theta, batch.trajectories[i].tokens) -
                      log_prob(old_policy, batch.trajectories[i].tokens);
      }
      LossReport report = quatro_loss_detached(theta, batch, detached);
      const double h = 1e-5;
      for (std::size_t j = 0; j < theta.num_params(); ++j) {
        TabularPolicy plus = theta, minus = theta;
        plus.mutable_params()[j] += h;
        minus.mutable_params()[j] -= h;
        double fd = (quatro_loss_detached(plus, batch, detached).loss -
                     quatro_loss_detached(minus, batch, detached).loss) /
                    (2 * h);
        double denom = std::max({1e-6, std::abs(fd), std::abs(report.gradient[j])});
        worst = std::max(worst, std::abs(fd - report.gradient[j]) / denom);
      }
    }
    return {worst < 1e-4, "max relative gradient error " + verify_detail::fmt(worst)};
  });

  check("objectives/quatro-fixed-point", [&]() -> std::pair<bool, std::string> {
    // At pi_theta = pi* on a fully enumerated batch, the surrogate gradient
    // vanishes: the closed-form optimum is a stationary point.
    Rng rng(19);
    TabularPolicy old_policy(3, 2, "q");
    for (double& x : old_policy.mutable_params()) x = 0.6 * rng.normal();
    SyntheticEnv env;
    env.vocab_size = 3;
    env.horizon = 2;
    env.kind = EnvKind::graded;
    env.targets = {{1, 2}};
    auto dist = enumerate_distribution(old_policy);
    Batch batch;
    batch.query_id = "q";
    batch.old_policy = &old_policy;
    RewardGroup group;
    group.query_id = "q";
    std::vector<double> weights;
    for (const auto& [tokens, p] : dist) {
      Trajectory traj;
      traj.query_id = "q";
      traj.tokens = tokens;
      traj.logprob_old = std::log(p);
      traj.reward = reward(env, tokens).reward;
      batch.trajectories.push_back(std::move(traj));
      group.rewards.push_back(reward(env, tokens).reward);
      weights.push_back(p);
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    for (double& w : weights) w /= wsum;
    group.weights = weights;
    batch.weights = weights;
    TrustRegionConfig tr;
    tr.delta = 0.02;
    DualSolution sol = solve_dual(group, tr);
    batch.advantages = verify_detail::advantages(sol, group, fault);
    TrajectoryDistribution tilted = dist;
    for (std::size_t i = 0; i < tilted.size(); ++i) {
      tilted[i].second = weights[i] * std::exp(batch.advantages[i]);
    }
    TabularPolicy star = policy_from_distribution(tilted, 3, 2, "q");
    LossReport report = quatro_loss(star, batch, 0.0);
    double norm = 0.0;
    for (double g : report.gradient) norm += g * g;
    norm = std::sqrt(norm);
    return {norm < 1e-6, "|grad| at pi* = " + verify_detail::fmt(norm)};
  });

  check("trainer/thm33-geometric-interpolation", [&]() -> std::pair<bool, std::string> {
    EnvSpec spec;
    spec.kind = EnvKind::graded;
    spec.vocab_size = 2;
    spec.horizon = 2;
    spec.num_queries = 1;
    spec.num_targets = 1;
    spec.seed = 5;
    auto tasks = make_tasks(spec);
    TrainConfig cfg;
    cfg.algorithm = Algorithm::quatro;
    cfg.delta = 0.05;
    cfg.beta = 1.0;
    cfg.steps = 1;
    cfg.inner_updates = 2000;
    cfg.learning_rate = 0.05;
    cfg.optimizer = OptimizerKind::adam;
    cfg.exact_expectation = true;
    cfg.record_rollouts = false;
    cfg.seed = 5;
    auto result = run_training(tasks, cfg);

    TabularPolicy initial(spec.vocab_size, spec.horizon, tasks[0].query_id);
    auto dist = enumerate_distribution(initial);
    RewardGroup group;
    group.query_id = tasks[0].query_id;
    std::vector<double> weights;
    for (const auto& [tokens, p] : dist) {
      group.rewards.push_back(reward(tasks[0].env, tokens).reward);
      weights.push_back(p);
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    for (double& w : weights) w /= wsum;
    group.weights = weights;
    TrustRegionConfig tr;
    tr.delta = cfg.delta;
    DualSolution sol = solve_dual(group, tr);
    auto adv = verify_detail::advantages(sol, group, fault);
    // pi* ^ (1/2) * pi_pre ^ (1/2), renormalized (pre = initial uniform)
    TrajectoryDistribution target = dist;
    double z = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      double star = weights[i] * std::exp(adv[i]);
      target[i].second = std::sqrt(star * dist[i].second);
      z += target[i].second;
    }
    for (auto& [tokens, p] : target) p /= z;
    double tv =
        total_variation(enumerate_distribution(result.policies[0]), target);
    return {tv < 1e-3, "TV to geometric interpolation = " + verify_detail::fmt(tv)};
  });

  check("trainer/determinism", [&]() -> std::pair<bool, std::string> {
    EnvSpec spec;
    spec.kind = EnvKind::multi_mode;
    spec.vocab_size = 3;
    spec.horizon = 2;
    spec.num_queries = 2;
    spec.num_targets = 2;
    spec.seed = 3;
    auto tasks = make_tasks(spec);
    TrainConfig cfg;
    cfg.algorithm = Algorithm::quatro;
    cfg.steps = 5;
    cfg.seed = 123;
    auto a = run_training(tasks, cfg);
    auto b = run_training(tasks, cfg);
    if (a.record.rows.size() != b.record.rows.size()) {
      return {false, "row count mismatch"};
    }
    for (std::size_t i = 0; i < a.record.rows.size(); ++i) {
      const auto& ra = a.record.rows[i];
      const auto& rb = b.record.rows[i];
      if (ra.mean_reward != rb.mean_reward || ra.mean_entropy != rb.mean_entropy ||
          ra.mean_lambda != rb.mean_lambda || ra.kl_to_old != rb.kl_to_old) {
        return {false, "row " + std::to_string(i) + " differs"};
      }
    }
    return {true, "two runs bitwise identical"};
  });

  return results;
}

}  // namespace quatro
