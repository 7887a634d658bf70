#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "quatro/policy.hpp"
#include "quatro/rng.hpp"

namespace quatro {

enum class EnvKind { single_target, multi_mode, graded, noisy };

inline const char* to_string(EnvKind k) {
  switch (k) {
    case EnvKind::single_target: return "single_target";
    case EnvKind::multi_mode: return "multi_mode";
    case EnvKind::graded: return "graded";
    case EnvKind::noisy: return "noisy";
  }
  return "?";
}

struct RewardOutcome {
  double reward = 0.0;
  bool correct = false;
};

/// Synthetic sequence-reward task with an enumerable trajectory space.
/// Rewards are pure functions of (env, tokens): the noisy kind flips the
/// membership reward under a deterministic hash of (seed, tokens), not an
/// RNG draw at call time, so rollout reuse sees a stable reward.
struct SyntheticEnv {
  int vocab_size = 2;
  int horizon = 1;
  EnvKind kind = EnvKind::single_target;
  std::vector<std::vector<int>> targets;
  double noise_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(vocab_size >= 2, "SyntheticEnv: vocab_size must be >= 2");
    require(horizon >= 1, "SyntheticEnv: horizon must be >= 1");
    require(!targets.empty(), "SyntheticEnv: targets must be nonempty");
    for (const auto& t : targets) {
      require(static_cast<int>(t.size()) == horizon,
              "SyntheticEnv: target length must equal horizon");
      for (int tok : t) {
        require(tok >= 0 && tok < vocab_size,
                "SyntheticEnv: target token out of range");
      }
    }
    require(noise_prob >= 0.0 && noise_prob < 1.0,
            "SyntheticEnv: noise_prob must be in [0, 1)");
    std::int64_t leaves = 1;
    for (int t = 0; t < horizon; ++t) {
      leaves *= vocab_size;
      require(leaves <= TabularPolicy::kDefaultCap,
              "SyntheticEnv: V^T exceeds enumerability cap");
    }
  }
};

namespace detail {

inline double hash01(std::uint64_t seed, std::span<const int> tokens) {
  std::uint64_t h = splitmix64(seed ^ 0x517cc1b727220a95ULL);
  for (int t : tokens) {
    h = splitmix64(h ^ (static_cast<std::uint64_t>(t) + 0x9e3779b9ULL));
  }
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline int hamming(std::span<const int> a, std::span<const int> b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != b[i]) ? 1 : 0;
  return d;
}

}  // namespace detail

inline RewardOutcome reward(const SyntheticEnv& env,
                            std::span<const int> tokens) {
  require(static_cast<int>(tokens.size()) == env.horizon,
          "reward: tokens length must equal horizon");
  for (int tok : tokens) {
    require(tok >= 0 && tok < env.vocab_size, "reward: token out of range");
  }
  auto is_target = [&] {
    for (const auto& t : env.targets) {
      if (std::equal(t.begin(), t.end(), tokens.begin())) return true;
    }
    return false;
  };
  switch (env.kind) {
    case EnvKind::single_target:
    case EnvKind::multi_mode: {
      bool hit = is_target();
      return {hit ? 1.0 : 0.0, hit};
    }
    case EnvKind::graded: {
      int best = env.horizon;
      for (const auto& t : env.targets) {
        best = std::min(best, detail::hamming(t, tokens));
      }
      double r = 1.0 - static_cast<double>(best) / env.horizon;
      return {r, best == 0};
    }
    case EnvKind::noisy: {
      bool hit = is_target();
      if (detail::hash01(env.seed, tokens) < env.noise_prob) hit = !hit;
      return {hit ? 1.0 : 0.0, hit};
    }
  }
  throw ValidationError("reward: unknown env kind");
}

inline RewardOutcome reward(const SyntheticEnv& env, const Trajectory& traj) {
  return reward(env, traj.tokens);
}

/// One query of a run: its environment plus its own policy table.
struct QueryTask {
  std::string query_id;
  SyntheticEnv env;
};

/// Specification for a family of query tasks; targets are drawn
/// deterministically per query from the spec seed.
struct EnvSpec {
  EnvKind kind = EnvKind::multi_mode;
  int vocab_size = 3;
  int horizon = 3;
  int num_queries = 1;
  int num_targets = 2;  // used by multi_mode / noisy / graded
  double noise_prob = 0.0;
  std::uint64_t seed = 0;
};

inline std::vector<QueryTask> make_tasks(const EnvSpec& spec) {
  require(spec.num_queries >= 1, "EnvSpec: num_queries must be >= 1");
  require(spec.num_targets >= 1, "EnvSpec: num_targets must be >= 1");
  std::vector<QueryTask> tasks;
  tasks.reserve(spec.num_queries);
  for (int q = 0; q < spec.num_queries; ++q) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "q%03d", q);
    QueryTask task;
    task.query_id = buf;
    task.env.vocab_size = spec.vocab_size;
    task.env.horizon = spec.horizon;
    task.env.kind = spec.kind;
    task.env.noise_prob = spec.noise_prob;
    task.env.seed = derive_seed(spec.seed, task.query_id, 0);

    int want = spec.kind == EnvKind::single_target ? 1 : spec.num_targets;
    Rng rng(derive_seed(spec.seed, task.query_id, 1));
    std::set<std::vector<int>> seen;
    while (static_cast<int>(seen.size()) < want) {
      std::vector<int> t(spec.horizon);
      for (int& tok : t) {
        tok = static_cast<int>(rng.next_u64() %
                               static_cast<std::uint64_t>(spec.vocab_size));
      }
      seen.insert(std::move(t));
    }
    task.env.targets.assign(seen.begin(), seen.end());
    task.env.validate();
    tasks.push_back(std::move(task));
  }
  return tasks;
}

/// Draws n rollouts from the policy and counts correct ones.
inline int count_correct(const SyntheticEnv& env, const TabularPolicy& policy,
                         int n, const SamplingConfig& config, Rng& rng) {
  int c = 0;
  for (int i = 0; i < n; ++i) {
    Trajectory traj = sample(policy, config, rng);
    if (reward(env, traj).correct) ++c;
  }
  return c;
}

/// Per-query correct counts from n base-policy rollouts, the input to
/// flip-rate bucketing. Streams are derived per query, so the map does not
/// depend on iteration order.
inline std::map<std::string, int> base_solve_counts(
    const std::vector<QueryTask>& tasks,
    const std::vector<TabularPolicy>& policies, int n,
    const SamplingConfig& config, std::uint64_t master_seed) {
  require(tasks.size() == policies.size(),
          "base_solve_counts: tasks/policies mismatch");
  std::map<std::string, int> out;
  for (std::size_t q = 0; q < tasks.size(); ++q) {
    Rng rng(derive_seed(master_seed, tasks[q].query_id, 0));
    out[tasks[q].query_id] =
        count_correct(tasks[q].env, policies[q], n, config, rng);
  }
  return out;
}

}  // namespace quatro
