#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "quatro/policy.hpp"

namespace quatro {

/// One query's frozen rollout batch. `weights` is the per-sample measure
/// the loss averages under: empty means uniform 1/N (the sampled case);
/// exact-expectation runs pass the enumerated probabilities under
/// old_policy.
struct Batch {
  std::string query_id;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;
  std::vector<double> weights;
  const TabularPolicy* old_policy = nullptr;
  const TabularPolicy* pre_policy = nullptr;

  void validate() const {
    require(old_policy != nullptr, "Batch: old_policy missing");
    require(!trajectories.empty(), "Batch: empty");
    require(advantages.size() == trajectories.size(),
            "Batch: advantages length mismatch");
    require(all_finite(advantages), "Batch: non-finite advantage");
    if (!weights.empty()) {
      require(weights.size() == trajectories.size(),
              "Batch: weights length mismatch");
    }
  }

  double weight(std::size_t i) const {
    return weights.empty() ? 1.0 / static_cast<double>(trajectories.size())
                           : weights[i];
  }
};

struct ClipConfig {
  double epsilon = 0.2;

  void validate() const {
    require(epsilon > 0.0, "ClipConfig: epsilon must be > 0");
  }
};

struct LossReport {
  double loss = 0.0;
  std::vector<double> gradient;
  struct Aux {
    double clip_fraction = 0.0;
    double mean_ratio = 1.0;
    double kl_penalty_value = 0.0;
  } aux;
};

/// (R_i - mean) / population std; all zeros when the spread vanishes.
/// The weighted overload generalizes the group statistics to an arbitrary
/// probability measure over the samples.
inline std::vector<double> group_norm_advantage(
    std::span<const double> rewards, std::span<const double> weights = {}) {
  require(!rewards.empty(), "group_norm_advantage: empty rewards");
  const std::size_t n = rewards.size();
  auto w = [&](std::size_t i) {
    return weights.empty() ? 1.0 / static_cast<double>(n) : weights[i];
  };
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += w(i) * rewards[i];
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    var += w(i) * (rewards[i] - mean) * (rewards[i] - mean);
  }
  double sd = std::sqrt(var);
  std::vector<double> adv(n, 0.0);
  if (sd < 1e-9) return adv;
  for (std::size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

namespace detail {

/// Accumulates coeff * d(log pi(tokens))/d(logits) into grad. The tabular
/// softmax score is d log pi(o_t|s)/d logit(s,v) = 1[v=o_t] - pi(v|s).
inline void add_log_prob_grad(const TabularPolicy& policy,
                              std::span<const int> tokens, double coeff,
                              std::span<double> grad) {
  if (coeff == 0.0) return;
  const int v = policy.vocab_size();
  std::int64_t node = 0;
  for (int t = 0; t < policy.horizon(); ++t) {
    auto probs = policy.softmax_row(node);
    double* g = grad.data() + node * v;
    for (int j = 0; j < v; ++j) g[j] -= coeff * probs[j];
    g[tokens[t]] += coeff;
    node = policy.child(node, tokens[t]);
  }
}

/// Score for a single row (one token conditional), used by the token-level
/// GRPO ratio gradient.
inline void add_token_log_prob_grad(const TabularPolicy& policy,
                                    std::int64_t node, int token, double coeff,
                                    std::span<double> grad) {
  if (coeff == 0.0) return;
  const int v = policy.vocab_size();
  auto probs = policy.softmax_row(node);
  double* g = grad.data() + node * v;
  for (int j = 0; j < v; ++j) g[j] -= coeff * probs[j];
  g[token] += coeff;
}

}  // namespace detail

/// QUATRO surrogate with the detached log-ratio pinned externally:
///   loss = -sum_i b_i * w_i * (A_i - detached_log_ratio_i)
/// with w_i = exp(log pi_theta(o_i) - log pi_old(o_i)). The detached term
/// is excluded from differentiation, which makes the hand-derived gradient
///   -sum_i b_i (A_i - detached_i) w_i d log pi_theta(o_i)/d theta
/// the exact derivative of this function of theta. The production entry
/// point below evaluates the detached values at the current theta.
inline LossReport quatro_loss_detached(
    const TabularPolicy& theta, const Batch& batch,
    std::span<const double> detached_log_ratios,
    std::optional<double> log_ratio_clamp = std::nullopt) {
  batch.validate();
  require(detached_log_ratios.size() == batch.trajectories.size(),
          "quatro_loss: detached log-ratio length mismatch");
  LossReport report;
  report.gradient.assign(theta.num_params(), 0.0);
  double mean_ratio = 0.0;
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const auto& traj = batch.trajectories[i];
    double log_w = log_prob(theta, traj.tokens) -
                   log_prob(*batch.old_policy, traj.tokens);
    bool clamped = false;
    if (log_ratio_clamp) {
      double c = *log_ratio_clamp;
      if (log_w > c || log_w < -c) {
        log_w = std::clamp(log_w, -c, c);
        clamped = true;
      }
    }
    double w = std::exp(log_w);
    double coef = batch.advantages[i] - detached_log_ratios[i];
    report.loss -= batch.weight(i) * w * coef;
    mean_ratio += batch.weight(i) * w;
    if (!clamped) {
      detail::add_log_prob_grad(theta, traj.tokens,
                                -batch.weight(i) * coef * w, report.gradient);
    }
  }
  report.aux.mean_ratio = mean_ratio;
  return report;
}

/// KL-to-pretrained penalty on the batch: importance-weighted k3,
///   value = sum_i b_i * r_i * k3(rho_i),   k3(x) = x - log x - 1 >= 0,
/// with rho_i = pi_pre(o_i)/pi_theta(o_i) and r_i = pi_theta(o_i)/pi_old(o_i).
/// On a batch that enumerates the space under pi_old this equals
/// KL(pi_theta || pi_pre) exactly, and its gradient is the exact KL
/// gradient; at sampling time (theta = old) it reduces to the plain
/// per-sample k3 average.
struct KlPenalty {
  double value = 0.0;
  std::vector<double> gradient;
};

inline KlPenalty kl_penalty(const TabularPolicy& theta,
                            const TabularPolicy& pre, const Batch& batch) {
  batch.validate();
  KlPenalty out;
  out.gradient.assign(theta.num_params(), 0.0);
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const auto& traj = batch.trajectories[i];
    double lp_theta = log_prob(theta, traj.tokens);
    double log_rho = log_prob(pre, traj.tokens) - lp_theta;
    double rho = std::exp(log_rho);
    double r = std::exp(lp_theta - log_prob(*batch.old_policy, traj.tokens));
    double k3 = rho - log_rho - 1.0;
    out.value += batch.weight(i) * r * k3;
    // d/dtheta [b r k3(rho)] = b r (k3 + 1 - rho) dlogpi = -b r log(rho) dlogpi
    detail::add_log_prob_grad(theta, traj.tokens,
                              -batch.weight(i) * r * log_rho, out.gradient);
  }
  return out;
}

/// QUATRO loss (surrogate + beta * KL-to-pretrained). Advantages must come
/// from the dual solver.
inline LossReport quatro_loss(
    const TabularPolicy& theta, const Batch& batch, double beta = 0.0,
    std::optional<double> log_ratio_clamp = std::nullopt) {
  batch.validate();
  require(beta >= 0.0, "quatro_loss: beta must be >= 0");
  std::vector<double> detached(batch.trajectories.size());
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    double log_w = log_prob(theta, batch.trajectories[i].tokens) -
                   log_prob(*batch.old_policy, batch.trajectories[i].tokens);
    if (log_ratio_clamp) {
      log_w = std::clamp(log_w, -*log_ratio_clamp, *log_ratio_clamp);
    }
    detached[i] = log_w;
  }
  LossReport report =
      quatro_loss_detached(theta, batch, detached, log_ratio_clamp);
  if (beta > 0.0) {
    require(batch.pre_policy != nullptr,
            "quatro_loss: beta > 0 requires pre_policy");
    KlPenalty penalty = kl_penalty(theta, *batch.pre_policy, batch);
    report.loss += beta * penalty.value;
    for (std::size_t j = 0; j < report.gradient.size(); ++j) {
      report.gradient[j] += beta * penalty.gradient[j];
    }
    report.aux.kl_penalty_value = penalty.value;
  }
  return report;
}

/// GRPO: token-level clipped surrogate, Eq.-(3)-style:
///   -mean over samples and tokens of min(r_t A, clip(r_t, 1-eps, 1+eps) A).
/// Gradient is masked (zero) at token positions where the clipped branch
/// is active and strictly better, i.e. where the min saturates.
inline LossReport grpo_loss(const TabularPolicy& theta, const Batch& batch,
                            const ClipConfig& clip) {
  batch.validate();
  clip.validate();
  LossReport report;
  report.gradient.assign(theta.num_params(), 0.0);
  const int t_max = theta.horizon();
  double clip_count = 0.0;
  double mean_ratio = 0.0;
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const auto& traj = batch.trajectories[i];
    theta.validate_tokens(traj.tokens);
    const double adv = batch.advantages[i];
    const double bw = batch.weight(i);
    std::int64_t node = 0;
    double ratio_sum = 0.0;
    for (int t = 0; t < t_max; ++t) {
      int tok = traj.tokens[t];
      double r = std::exp(theta.log_softmax_row(node)[tok] -
                          batch.old_policy->log_softmax_row(node)[tok]);
      double r_clip = std::clamp(r, 1.0 - clip.epsilon, 1.0 + clip.epsilon);
      double term = std::min(r * adv, r_clip * adv);
      report.loss -= bw * term / t_max;
      ratio_sum += r;
      if (r < 1.0 - clip.epsilon || r > 1.0 + clip.epsilon) {
        clip_count += bw / t_max;
      }
      if (r * adv <= r_clip * adv) {
        // unclipped branch attains the min: gradient flows through r
        detail::add_token_log_prob_grad(theta, node, tok,
                                        -bw * adv * r / t_max,
                                        report.gradient);
      }
      node = theta.child(node, tok);
    }
    mean_ratio += bw * ratio_sum / t_max;
  }
  report.aux.clip_fraction = clip_count;
  report.aux.mean_ratio = mean_ratio;
  return report;
}

/// GSPO: the same clipped-min structure with the length-normalized
/// sequence ratio, one term per sequence.
inline LossReport gspo_loss(const TabularPolicy& theta, const Batch& batch,
                            const ClipConfig& clip) {
  batch.validate();
  clip.validate();
  LossReport report;
  report.gradient.assign(theta.num_params(), 0.0);
  double clip_count = 0.0;
  double mean_ratio = 0.0;
  const double t_max = static_cast<double>(theta.horizon());
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const auto& traj = batch.trajectories[i];
    const double adv = batch.advantages[i];
    const double bw = batch.weight(i);
    double log_ratio = log_prob(theta, traj.tokens) -
                       log_prob(*batch.old_policy, traj.tokens);
    double s = std::exp(log_ratio / t_max);
    double s_clip = std::clamp(s, 1.0 - clip.epsilon, 1.0 + clip.epsilon);
    double term = std::min(s * adv, s_clip * adv);
    report.loss -= bw * term;
    mean_ratio += bw * s;
    if (s < 1.0 - clip.epsilon || s > 1.0 + clip.epsilon) clip_count += bw;
    if (s * adv <= s_clip * adv) {
      // ds/dtheta = (s/T) dlogpi_theta(o)/dtheta
      detail::add_log_prob_grad(theta, traj.tokens, -bw * adv * s / t_max,
                                report.gradient);
    }
  }
  report.aux.clip_fraction = clip_count;
  report.aux.mean_ratio = mean_ratio;
  return report;
}

}  // namespace quatro
