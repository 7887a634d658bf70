#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "quatro/dual_solver.hpp"
#include "quatro/environments.hpp"
#include "quatro/objectives.hpp"
#include "quatro/optimizer.hpp"
#include "quatro/policy.hpp"

namespace quatro {

enum class Algorithm { quatro, grpo, gspo };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::quatro: return "quatro";
    case Algorithm::grpo: return "grpo";
    case Algorithm::gspo: return "gspo";
  }
  return "?";
}

struct TrainConfig {
  Algorithm algorithm = Algorithm::quatro;
  double delta = 0.01;     // QUATRO trust-region budget
  double epsilon = 0.2;    // baseline clipping
  int rollouts_per_query = 8;
  int inner_updates = 1;   // K gradient steps per frozen batch
  double learning_rate = 1e-2;
  double beta = 1e-3;      // KL-to-pretrained coefficient (QUATRO)
  int steps = 0;           // outer iterations
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool exact_expectation = false;  // enumerate instead of sampling
  SamplingConfig sampling;
  double lambda_min = 1e-3;
  double init_logit_scale = 0.0;  // 0 = uniform init, >0 = gaussian logits
  double divergence_threshold = 1e4;  // early stop when mean |logit| exceeds
  bool record_rollouts = true;

  void validate() const {
    require(rollouts_per_query >= 2,
            "TrainConfig: rollouts_per_query must be >= 2");
    require(inner_updates >= 1, "TrainConfig: inner_updates must be >= 1");
    require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
    require(steps >= 0, "TrainConfig: steps must be >= 0");
    require(beta >= 0.0, "TrainConfig: beta must be >= 0");
    if (algorithm == Algorithm::quatro) {
      require(delta > 0.0, "TrainConfig: delta must be > 0");
    }
    sampling.validate();
  }

  TrustRegionConfig trust_region() const {
    TrustRegionConfig tr;
    tr.delta = delta;
    tr.lambda_min = lambda_min;
    return tr;
  }

  OptimizerConfig optimizer_config() const {
    OptimizerConfig oc;
    oc.kind = optimizer;
    oc.learning_rate = learning_rate;
    oc.beta1 = adam_beta1;
    oc.beta2 = adam_beta2;
    oc.eps = adam_eps;
    return oc;
  }
};

struct DualSummary {
  std::string query_id;
  double lambda_star = 0.0;
  double mu_star = 0.0;
  bool interior = false;
  bool degenerate = false;
};

struct RunRow {
  int step = 0;
  double mean_reward = 0.0;   // exact expectation under the current policy
  double mean_entropy = 0.0;  // expected per-token entropy under the policy
  double mean_lambda = 0.0;   // QUATRO only; 0 for baselines
  double kl_to_old = 0.0;     // exact KL(pi_theta || pi_old) after K updates
  double clip_fraction = 0.0; // last inner update; 0 for QUATRO
  std::vector<double> inner_clip_fractions;  // one per inner update
  std::vector<DualSummary> dual_summaries;
  bool diverged = false;
  bool aborted_nan = false;
};

struct RolloutRecord {
  int step = 0;
  Trajectory trajectory;
  std::string algorithm;
};

struct RunRecord {
  std::vector<RunRow> rows;
  std::vector<RolloutRecord> rollouts;
  bool diverged = false;
  bool aborted = false;
};

struct TrainResult {
  RunRecord record;
  std::vector<TabularPolicy> policies;  // aligned with the task list
};

namespace detail {

inline int configured_threads() {
  if (const char* env = std::getenv("QUATRO_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots; the partition is deterministic.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  int spawn = std::min<int>(threads, static_cast<int>(n));
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

inline double expected_reward(const TabularPolicy& policy,
                              const SyntheticEnv& env) {
  auto dist = enumerate_distribution(policy);
  double r = 0.0;
  for (const auto& [tokens, p] : dist) r += p * reward(env, tokens).reward;
  return r;
}

/// Expected mean-over-steps token entropy under the policy's own
/// distribution, computed by prefix reach probabilities.
inline double expected_token_entropy(const TabularPolicy& policy) {
  const int v = policy.vocab_size();
  std::vector<double> reach(static_cast<std::size_t>(policy.num_rows()), 0.0);
  reach[0] = 1.0;
  double total = 0.0;
  for (std::int64_t node = 0; node < policy.num_rows(); ++node) {
    if (reach[node] == 0.0) continue;
    auto ls = policy.log_softmax_row(node);
    double h = 0.0;
    for (double l : ls) h -= std::exp(l) * l;
    total += reach[node] * h;
    std::int64_t first_child = node * v + 1;
    if (first_child < policy.num_rows()) {
      for (int j = 0; j < v; ++j) {
        reach[first_child + j] += reach[node] * std::exp(ls[j]);
      }
    }
  }
  return total / policy.horizon();
}

inline bool policy_diverged(const TabularPolicy& policy, double threshold) {
  double sum = 0.0;
  for (double x : policy.params()) sum += std::abs(x);
  return sum / static_cast<double>(policy.num_params()) > threshold;
}

}  // namespace detail

/// One outer iteration per step: snapshot pi_old, draw (or enumerate) the
/// rollout batch, score rewards, compute advantages once (QUATRO: exact
/// per-query dual solve; baselines: group normalization), then perform K
/// gradient updates of the selected loss on the same frozen batch and
/// frozen pi_old. Fully deterministic given the seed.
inline TrainResult run_training(const std::vector<QueryTask>& tasks,
                                const TrainConfig& config) {
  config.validate();
  require(!tasks.empty(), "run_training: no tasks");
  for (const auto& task : tasks) task.env.validate();

  TrainResult result;
  result.policies.reserve(tasks.size());
  for (const auto& task : tasks) {
    TabularPolicy policy(task.env.vocab_size, task.env.horizon, task.query_id);
    if (config.init_logit_scale > 0.0) {
      Rng rng(derive_seed(config.seed, task.query_id, 0xA11CE));
      for (double& x : policy.mutable_params()) {
        x = config.init_logit_scale * rng.normal();
      }
    }
    result.policies.push_back(std::move(policy));
  }

  const std::size_t n_queries = tasks.size();
  const int threads = detail::configured_threads();
  std::vector<OptimizerState> opt_states(n_queries);
  std::vector<TabularPolicy> pre_policies = result.policies;  // Thm 3.3 anchor

  for (int step = 0; step < config.steps; ++step) {
    std::vector<TabularPolicy> old_policies = result.policies;
    std::vector<Batch> batches(n_queries);
    std::vector<DualSummary> duals(n_queries);
    std::vector<double> lambdas(n_queries, 0.0);

    detail::parallel_for(n_queries, threads, [&](std::size_t q) {
      Batch batch;
      batch.query_id = tasks[q].query_id;
      batch.old_policy = &old_policies[q];
      batch.pre_policy = &pre_policies[q];
      if (config.exact_expectation) {
        auto dist = enumerate_distribution(old_policies[q]);
        batch.trajectories.reserve(dist.size());
        batch.weights.reserve(dist.size());
        for (auto& [tokens, p] : dist) {
          Trajectory traj;
          traj.query_id = tasks[q].query_id;
          traj.tokens = tokens;
          traj.logprob_old = std::log(p);
          auto out = reward(tasks[q].env, traj.tokens);
          traj.reward = out.reward;
          traj.correct = out.correct;
          batch.trajectories.push_back(std::move(traj));
          batch.weights.push_back(p);
        }
        // enumeration sums to 1 up to rounding; renormalize so the weights
        // satisfy the exact-measure contract of RewardGroup
        double wsum = 0.0;
        for (double w : batch.weights) wsum += w;
        for (double& w : batch.weights) w /= wsum;
      } else {
        Rng rng(derive_seed(config.seed, tasks[q].query_id,
                            static_cast<std::uint64_t>(step)));
        batch.trajectories.reserve(config.rollouts_per_query);
        for (int i = 0; i < config.rollouts_per_query; ++i) {
          Trajectory traj = sample(old_policies[q], config.sampling, rng);
          auto out = reward(tasks[q].env, traj.tokens);
          traj.reward = out.reward;
          traj.correct = out.correct;
          batch.trajectories.push_back(std::move(traj));
        }
      }

      std::vector<double> rewards;
      rewards.reserve(batch.trajectories.size());
      for (const auto& traj : batch.trajectories) {
        rewards.push_back(traj.reward);
      }
      if (config.algorithm == Algorithm::quatro) {
        RewardGroup group;
        group.query_id = tasks[q].query_id;
        group.rewards = rewards;
        if (!batch.weights.empty()) group.weights = batch.weights;
        DualSolution sol = solve_dual(group, config.trust_region());
        batch.advantages = sol.advantages;
        duals[q] = {tasks[q].query_id, sol.lambda_star, sol.mu_star,
                    sol.interior, sol.degenerate};
        lambdas[q] = sol.lambda_star;
      } else {
        batch.advantages = group_norm_advantage(rewards, batch.weights);
      }
      batches[q] = std::move(batch);
    });

    if (config.record_rollouts && !config.exact_expectation) {
      for (std::size_t q = 0; q < n_queries; ++q) {
        for (const auto& traj : batches[q].trajectories) {
          result.record.rollouts.push_back(
              {step, traj, to_string(config.algorithm)});
        }
      }
    }

    RunRow row;
    row.step = step;
    bool nan_abort = false;
    for (int k = 0; k < config.inner_updates && !nan_abort; ++k) {
      double clip_sum = 0.0;
      for (std::size_t q = 0; q < n_queries; ++q) {
        LossReport report;
        switch (config.algorithm) {
          case Algorithm::quatro:
            report = quatro_loss(result.policies[q], batches[q], config.beta);
            break;
          case Algorithm::grpo:
            report = grpo_loss(result.policies[q], batches[q],
                               ClipConfig{config.epsilon});
            break;
          case Algorithm::gspo:
            report = gspo_loss(result.policies[q], batches[q],
                               ClipConfig{config.epsilon});
            break;
        }
        if (!std::isfinite(report.loss) || !all_finite(report.gradient)) {
          nan_abort = true;
          break;
        }
        optimizer_step(result.policies[q].mutable_params(), report.gradient,
                       opt_states[q], config.optimizer_config());
        clip_sum += report.aux.clip_fraction;
      }
      if (!nan_abort) {
        row.inner_clip_fractions.push_back(clip_sum /
                                           static_cast<double>(n_queries));
      }
    }

    row.dual_summaries = duals;
    double lambda_sum = 0.0;
    for (double l : lambdas) lambda_sum += l;
    row.mean_lambda = config.algorithm == Algorithm::quatro
                          ? lambda_sum / static_cast<double>(n_queries)
                          : 0.0;
    row.clip_fraction = row.inner_clip_fractions.empty()
                            ? 0.0
                            : row.inner_clip_fractions.back();
    double reward_sum = 0.0, entropy_sum = 0.0, kl_sum = 0.0;
    for (std::size_t q = 0; q < n_queries; ++q) {
      reward_sum += detail::expected_reward(result.policies[q], tasks[q].env);
      entropy_sum += detail::expected_token_entropy(result.policies[q]);
      kl_sum += exact_kl(result.policies[q], old_policies[q]);
    }
    row.mean_reward = reward_sum / static_cast<double>(n_queries);
    row.mean_entropy = entropy_sum / static_cast<double>(n_queries);
    row.kl_to_old = kl_sum / static_cast<double>(n_queries);

    if (nan_abort) {
      row.aborted_nan = true;
      result.record.aborted = true;
      result.record.rows.push_back(std::move(row));
      break;
    }
    bool diverged = false;
    for (const auto& policy : result.policies) {
      diverged = diverged ||
                 detail::policy_diverged(policy, config.divergence_threshold);
    }
    if (diverged) {
      row.diverged = true;
      result.record.diverged = true;
      result.record.rows.push_back(std::move(row));
      break;
    }
    result.record.rows.push_back(std::move(row));
  }
  return result;
}

struct SweepEntry {
  Algorithm algorithm;
  int inner_updates;
  double learning_rate;
  RunRecord record;
};

/// Cartesian sweep over inner-update counts and learning rates for each
/// algorithm, all runs sharing the base config's seed so curves are
/// comparable point by point.
inline std::vector<SweepEntry> staleness_sweep(
    const std::vector<QueryTask>& tasks, const TrainConfig& base_config,
    std::span<const int> k_values, std::span<const double> lr_values) {
  std::vector<SweepEntry> out;
  for (Algorithm alg :
       {Algorithm::quatro, Algorithm::grpo, Algorithm::gspo}) {
    for (int k : k_values) {
      for (double lr : lr_values) {
        TrainConfig cfg = base_config;
        cfg.algorithm = alg;
        cfg.inner_updates = k;
        cfg.learning_rate = lr;
        out.push_back({alg, k, lr, run_training(tasks, cfg).record});
      }
    }
  }
  return out;
}

}  // namespace quatro
