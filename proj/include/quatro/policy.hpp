#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quatro/numeric.hpp"
#include "quatro/rng.hpp"

namespace quatro {

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;

  void validate() const {
    require(temperature > 0.0, "SamplingConfig: temperature must be > 0");
    require(top_p > 0.0 && top_p <= 1.0,
            "SamplingConfig: top_p must be in (0, 1]");
  }
};

/// A sampled token sequence of length exactly T, with the log-probability
/// it was drawn at (under the truncated top-p distribution actually
/// sampled from) and the environment-assigned reward.
struct Trajectory {
  std::string query_id;
  std::vector<int> tokens;
  double logprob_old = 0.0;
  double reward = 0.0;
  bool correct = false;
};

using TrajectoryDistribution =
    std::vector<std::pair<std::vector<int>, double>>;

/// Enumerable autoregressive softmax policy over a fixed-horizon V-ary
/// token tree: one logit row per prefix of length < T. Row r's children
/// are rows r*V+1 .. r*V+V, so row indices are contiguous per depth and
/// the whole table is a flat (rows x V) array.
class TabularPolicy {
 public:
  static constexpr std::int64_t kDefaultCap = 4096;

  TabularPolicy(int vocab_size, int horizon, std::string query_id = {},
                std::int64_t cap = kDefaultCap)
      : vocab_(vocab_size), horizon_(horizon), query_id_(std::move(query_id)) {
    require(vocab_ >= 2, "TabularPolicy: vocab_size must be >= 2");
    require(horizon_ >= 1, "TabularPolicy: horizon must be >= 1");
    std::int64_t leaves = 1;
    std::int64_t rows = 0;
    for (int t = 0; t < horizon_; ++t) {
      rows += leaves;
      leaves *= vocab_;
      if (leaves > cap) {
        throw SizeError("TabularPolicy: V^T exceeds enumerability cap");
      }
    }
    rows_ = rows;
    num_sequences_ = leaves;
    logits_.assign(static_cast<std::size_t>(rows_) * vocab_, 0.0);
  }

  int vocab_size() const { return vocab_; }
  int horizon() const { return horizon_; }
  std::int64_t num_rows() const { return rows_; }
  std::int64_t num_sequences() const { return num_sequences_; }
  std::size_t num_params() const { return logits_.size(); }
  const std::string& query_id() const { return query_id_; }

  std::span<const double> row(std::int64_t r) const {
    return {logits_.data() + r * vocab_, static_cast<std::size_t>(vocab_)};
  }
  std::span<double> mutable_row(std::int64_t r) {
    return {logits_.data() + r * vocab_, static_cast<std::size_t>(vocab_)};
  }
  std::span<const double> params() const { return logits_; }
  std::span<double> mutable_params() { return logits_; }

  static std::int64_t child(std::int64_t node, int token, int vocab) {
    return node * vocab + token + 1;
  }
  std::int64_t child(std::int64_t node, int token) const {
    return child(node, token, vocab_);
  }

  void validate_tokens(std::span<const int> tokens) const {
    require(static_cast<int>(tokens.size()) == horizon_,
            "tokens length must equal horizon");
    for (int tok : tokens) {
      require(tok >= 0 && tok < vocab_, "token out of range");
    }
  }

  /// log softmax of one row, max-shifted.
  std::vector<double> log_softmax_row(std::int64_t r) const {
    auto l = row(r);
    std::vector<double> out(l.begin(), l.end());
    double lse = log_sum_exp(out);
    for (double& x : out) x -= lse;
    return out;
  }

  std::vector<double> softmax_row(std::int64_t r) const {
    auto out = log_softmax_row(r);
    for (double& x : out) x = std::exp(x);
    return out;
  }

 private:
  int vocab_;
  int horizon_;
  std::string query_id_;
  std::int64_t rows_ = 0;
  std::int64_t num_sequences_ = 0;
  std::vector<double> logits_;
};

/// Sum over steps of log softmax(logits[prefix_t])[token_t]; always <= 0.
inline double log_prob(const TabularPolicy& policy,
                       std::span<const int> tokens) {
  policy.validate_tokens(tokens);
  double lp = 0.0;
  std::int64_t node = 0;
  for (int t = 0; t < policy.horizon(); ++t) {
    lp += policy.log_softmax_row(node)[tokens[t]];
    node = policy.child(node, tokens[t]);
  }
  return lp;
}

/// Token-by-token ancestral sampling. Temperature divides the logits;
/// top-p keeps the smallest probability-sorted prefix reaching top_p mass
/// and renormalizes. logprob_old is recorded under the truncated
/// distribution actually sampled from.
inline Trajectory sample(const TabularPolicy& policy,
                         const SamplingConfig& config, Rng& rng) {
  config.validate();
  Trajectory traj;
  traj.query_id = policy.query_id();
  traj.tokens.reserve(policy.horizon());
  const int v = policy.vocab_size();
  std::int64_t node = 0;
  double lp = 0.0;
  for (int t = 0; t < policy.horizon(); ++t) {
    auto logits = policy.row(node);
    std::vector<double> scaled(v);
    for (int i = 0; i < v; ++i) scaled[i] = logits[i] / config.temperature;
    double lse = log_sum_exp(scaled);
    std::vector<double> probs(v);
    for (int i = 0; i < v; ++i) probs[i] = std::exp(scaled[i] - lse);

    std::vector<int> order(v);
    std::iota(order.begin(), order.end(), 0);
    if (config.top_p < 1.0) {
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return probs[a] > probs[b];
      });
      double cum = 0.0;
      std::size_t keep = order.size();
      for (std::size_t i = 0; i < order.size(); ++i) {
        cum += probs[order[i]];
        if (cum >= config.top_p - 1e-12) {
          keep = i + 1;
          break;
        }
      }
      order.resize(keep);
    }

    std::vector<double> kept(order.size());
    double mass = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      kept[i] = probs[order[i]];
      mass += kept[i];
    }
    int pick = rng.categorical(kept);
    int token = order[pick];
    lp += std::log(kept[pick] / mass);
    traj.tokens.push_back(token);
    node = policy.child(node, token);
  }
  traj.logprob_old = lp;
  return traj;
}

/// Exhaustive map trajectory -> probability in lexicographic token order;
/// values sum to 1 up to rounding.
inline TrajectoryDistribution enumerate_distribution(
    const TabularPolicy& policy) {
  const int v = policy.vocab_size();
  const int t_max = policy.horizon();
  std::vector<std::vector<double>> ls(
      static_cast<std::size_t>(policy.num_rows()));
  for (std::int64_t r = 0; r < policy.num_rows(); ++r) {
    ls[r] = policy.log_softmax_row(r);
  }
  TrajectoryDistribution out;
  out.reserve(static_cast<std::size_t>(policy.num_sequences()));
  std::vector<int> tokens(t_max);
  for (std::int64_t s = 0; s < policy.num_sequences(); ++s) {
    std::int64_t x = s;
    for (int t = t_max - 1; t >= 0; --t) {
      tokens[t] = static_cast<int>(x % v);
      x /= v;
    }
    double lp = 0.0;
    std::int64_t node = 0;
    for (int t = 0; t < t_max; ++t) {
      lp += ls[node][tokens[t]];
      node = policy.child(node, tokens[t]);
    }
    out.emplace_back(tokens, std::exp(lp));
  }
  return out;
}

struct RatioValue {
  double log_value = 0.0;
  double value = 1.0;
};

/// Unnormalized sequence importance ratio pi_theta(o)/pi_old(o), exposed
/// in log space alongside the linear value.
inline RatioValue trajectory_ratio(const TabularPolicy& theta,
                                   const TabularPolicy& old_policy,
                                   const Trajectory& traj) {
  RatioValue r;
  r.log_value = log_prob(theta, traj.tokens) - log_prob(old_policy, traj.tokens);
  r.value = std::exp(r.log_value);
  return r;
}

/// Length-normalized sequence ratio (pi_theta/pi_old)^(1/T).
inline double sequence_ratio_gspo(const TabularPolicy& theta,
                                  const TabularPolicy& old_policy,
                                  const Trajectory& traj) {
  double log_ratio =
      log_prob(theta, traj.tokens) - log_prob(old_policy, traj.tokens);
  return std::exp(log_ratio / static_cast<double>(theta.horizon()));
}

/// Per-position ratios pi_theta(o_t | prefix)/pi_old(o_t | prefix).
inline std::vector<double> token_ratios(const TabularPolicy& theta,
                                        const TabularPolicy& old_policy,
                                        const Trajectory& traj) {
  theta.validate_tokens(traj.tokens);
  std::vector<double> out(traj.tokens.size());
  std::int64_t node = 0;
  for (int t = 0; t < theta.horizon(); ++t) {
    int tok = traj.tokens[t];
    out[t] = std::exp(theta.log_softmax_row(node)[tok] -
                      old_policy.log_softmax_row(node)[tok]);
    node = theta.child(node, tok);
  }
  return out;
}

/// KL(p || r) = sum_o p(o) (log p(o) - log r(o)) over the enumerated
/// sequence space. Nonnegative; zero iff the distributions coincide.
inline double exact_kl(const TabularPolicy& p, const TabularPolicy& r) {
  require(p.vocab_size() == r.vocab_size() && p.horizon() == r.horizon(),
          "exact_kl: shape mismatch");
  auto dp = enumerate_distribution(p);
  auto dr = enumerate_distribution(r);
  double kl = 0.0;
  for (std::size_t i = 0; i < dp.size(); ++i) {
    double pi = dp[i].second;
    if (pi > 0.0) kl += pi * (std::log(pi) - std::log(dr[i].second));
  }
  return kl;
}

/// KL between two enumerated distributions over the same lexicographic
/// sequence ordering.
inline double kl_divergence(const TrajectoryDistribution& p,
                            const TrajectoryDistribution& q) {
  require(p.size() == q.size(), "kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].second > 0.0) {
      kl += p[i].second * (std::log(p[i].second) - std::log(q[i].second));
    }
  }
  return kl;
}

inline double total_variation(const TrajectoryDistribution& p,
                              const TrajectoryDistribution& q) {
  require(p.size() == q.size(), "total_variation: size mismatch");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    tv += std::abs(p[i].second - q[i].second);
  }
  return 0.5 * tv;
}

/// Shannon entropy of the next-token distribution at each step along the
/// trajectory's prefixes; each value lies in [0, log V].
inline std::vector<double> token_entropy(const TabularPolicy& policy,
                                         const Trajectory& traj) {
  policy.validate_tokens(traj.tokens);
  std::vector<double> out(traj.tokens.size());
  std::int64_t node = 0;
  for (int t = 0; t < policy.horizon(); ++t) {
    auto ls = policy.log_softmax_row(node);
    double h = 0.0;
    for (double l : ls) h -= std::exp(l) * l;
    out[t] = h;
    node = policy.child(node, traj.tokens[t]);
  }
  return out;
}

/// Rebuilds a policy table whose sequence distribution equals `dist`
/// (which must be strictly positive), by chain-rule subtree sums. Used to
/// turn the closed-form tilted optimum into a policy for exact-KL checks.
inline TabularPolicy policy_from_distribution(const TrajectoryDistribution& dist,
                                              int vocab_size, int horizon,
                                              std::string query_id = {}) {
  TabularPolicy policy(vocab_size, horizon, std::move(query_id));
  require(static_cast<std::int64_t>(dist.size()) == policy.num_sequences(),
          "policy_from_distribution: size mismatch");
  // Sequences arrive in lexicographic order, so the leaves below the
  // prefix at depth t starting at sequence index i span a contiguous block
  // of size V^(T-t).
  std::vector<std::int64_t> block(horizon + 1);
  block[horizon] = 1;
  for (int t = horizon - 1; t >= 0; --t) block[t] = block[t + 1] * vocab_size;

  // Recurse over prefixes: node row gets logits = log of child subtree
  // masses (normalization is softmax's job).
  struct Rec {
    TabularPolicy* pol;
    const TrajectoryDistribution* d;
    const std::vector<std::int64_t>* blk;
    int vocab, horizon;
    void fill(std::int64_t node, int depth, std::int64_t lo) {
      if (depth >= horizon) return;
      auto row = pol->mutable_row(node);
      for (int v = 0; v < vocab; ++v) {
        std::int64_t child_lo = lo + v * (*blk)[depth + 1];
        double mass = 0.0;
        for (std::int64_t i = 0; i < (*blk)[depth + 1]; ++i) {
          mass += (*d)[child_lo + i].second;
        }
        require(mass > 0.0,
                "policy_from_distribution: distribution must be positive");
        row[v] = std::log(mass);
        fill(pol->child(node, v), depth + 1, child_lo);
      }
    }
  };
  Rec rec{&policy, &dist, &block, vocab_size, horizon};
  rec.fill(0, 0, 0);
  return policy;
}

}  // namespace quatro
