#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "quatro/numeric.hpp"

namespace quatro {

/// The scalar rollout rewards for one query, the input to the per-query
/// dual solve. `weights` is an optional probability vector over the
/// entries; when absent the empirical 1/N measure is used. Supplying the
/// exact enumerated trajectory probabilities turns the empirical solve
/// into an exact-expectation solve.
struct RewardGroup {
  std::string query_id;
  std::vector<double> rewards;
  std::optional<std::vector<double>> weights;

  void validate() const {
    require(!rewards.empty(), "RewardGroup: rewards empty");
    require(all_finite(rewards), "RewardGroup: non-finite reward");
    if (weights) {
      require(weights->size() == rewards.size(),
              "RewardGroup: weights length mismatch");
      double sum = 0.0;
      for (double w : *weights) {
        require(w >= 0.0, "RewardGroup: negative weight");
        sum += w;
      }
      require(std::abs(sum - 1.0) <= 1e-12,
              "RewardGroup: weights must sum to 1");
    }
  }

  /// Weight of entry i under the group's measure (1/N if unweighted).
  double weight(std::size_t i) const {
    return weights ? (*weights)[i] : 1.0 / static_cast<double>(rewards.size());
  }
};

struct TrustRegionConfig {
  double delta;                  // KL budget, nats
  double lambda_min = 1e-3;      // floor for lambda
  double bracket_pad = 1.0;      // additive pad on the upper bracket
  double tol = 1e-9;             // interval tolerance on lambda
  int max_iters = 200;
  double degenerate_eps = 1e-9;  // reward-spread threshold

  void validate() const {
    require(delta > 0.0, "TrustRegionConfig: delta must be > 0");
    require(lambda_min > 0.0, "TrustRegionConfig: lambda_min must be > 0");
    require(bracket_pad >= 0.0, "TrustRegionConfig: bracket_pad must be >= 0");
    require(tol > 0.0, "TrustRegionConfig: tol must be > 0");
    require(max_iters > 0, "TrustRegionConfig: max_iters must be > 0");
    require(degenerate_eps >= 0.0,
            "TrustRegionConfig: degenerate_eps must be >= 0");
  }
};

/// Exact trust-region calibration for one query: the optimal dual pair,
/// the dual value, and the advantages A_i = (R_i - mu*)/lambda* - 1.
struct DualSolution {
  double lambda_star = 0.0;
  double mu_star = 0.0;
  double f_value = 0.0;
  std::vector<double> advantages;
  bool degenerate = false;  // all rewards within degenerate_eps
  bool interior = false;    // lambda* strictly inside the bracket
};

namespace detail {

/// log sum_i w_i exp(R_i / lambda), shifted by R_max so exp never
/// overflows: = R_max/lambda + log sum_i w_i exp((R_i - R_max)/lambda).
inline double log_tilted_partition(const RewardGroup& group, double lambda) {
  double r_max = group.rewards[0];
  for (double r : group.rewards) r_max = std::max(r_max, r);
  double s = 0.0;
  for (std::size_t i = 0; i < group.rewards.size(); ++i) {
    s += group.weight(i) * std::exp((group.rewards[i] - r_max) / lambda);
  }
  return r_max / lambda + std::log(s);
}

}  // namespace detail

/// Empirical dual objective f(lambda) = lambda * (delta + log sum_i w_i
/// exp(R_i / lambda)). Convex in lambda on (0, inf): it is the perspective
/// of a log-sum-exp.
inline double dual_objective(const RewardGroup& group, double lambda,
                             double delta) {
  if (!(lambda > 0.0)) throw DomainError("dual_objective: lambda must be > 0");
  group.validate();
  return lambda * (delta + detail::log_tilted_partition(group, lambda));
}

/// mu(lambda) = lambda * (log sum_i w_i exp(R_i/lambda) - 1). This is the
/// normalizer that makes sum_i w_i exp((R_i - mu)/lambda - 1) = 1 for any
/// lambda > 0, not only at the optimum.
inline double mu_of_lambda(const RewardGroup& group, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("mu_of_lambda: lambda must be > 0");
  return lambda * (detail::log_tilted_partition(group, lambda) - 1.0);
}

/// Minimizes the convex dual objective by golden-section search over
/// [lambda_min, (R_max - R_min)/delta + bracket_pad] and recovers
/// (mu*, advantages). The upper bracket is valid because
/// f(lambda) >= lambda*delta + mean(R) exceeds f(0+) = R_max beyond it.
///
/// Degenerate groups (reward spread below degenerate_eps) short-circuit to
/// lambda* = lambda_min, mu* = mean(R) - lambda*, all advantages zero: a
/// flat reward profile gives a flat dual landscape and forces A_i = 0 at
/// every lambda.
inline DualSolution solve_dual(const RewardGroup& group,
                               const TrustRegionConfig& config) {
  group.validate();
  config.validate();

  const std::size_t n = group.rewards.size();
  double r_min = group.rewards[0];
  double r_max = group.rewards[0];
  double r_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r_min = std::min(r_min, group.rewards[i]);
    r_max = std::max(r_max, group.rewards[i]);
    r_mean += group.weight(i) * group.rewards[i];
  }

  DualSolution sol;
  if (r_max - r_min < config.degenerate_eps) {
    sol.degenerate = true;
    sol.interior = false;
    sol.lambda_star = config.lambda_min;
    sol.mu_star = r_mean - sol.lambda_star;
    sol.f_value = dual_objective(group, sol.lambda_star, config.delta);
    sol.advantages.assign(n, 0.0);
    return sol;
  }

  const double lo = config.lambda_min;
  const double hi = (r_max - r_min) / config.delta + config.bracket_pad;

  // Work on rewards centered by R_max. lambda* is invariant under a
  // constant reward shift, and centering makes the floating-point search
  // itself shift-invariant (an additive constant in f would otherwise
  // drown the comparisons near the flat minimum in rounding noise).
  std::vector<double> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = group.rewards[i] - r_max;
  auto log_partition = [&](double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += group.weight(i) * std::exp(centered[i] / lambda);
    }
    return std::log(s);
  };
  auto f_centered = [&](double lambda) {
    return lambda * (config.delta + log_partition(lambda));
  };
  // f'(lambda) = delta + log Z(lambda) - E_tilt[r_centered]/lambda;
  // monotone increasing because f is convex.
  auto f_prime = [&](double lambda) {
    double z = 0.0, m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = group.weight(i) * std::exp(centered[i] / lambda);
      z += e;
      m += e * centered[i];
    }
    return config.delta + std::log(z) - (m / z) / lambda;
  };

  double lambda_star;
  if (hi <= lo) {
    // Bracket collapsed below the floor: pin to the boundary.
    lambda_star = lo;
    sol.interior = false;
  } else {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f_centered(c);
    double fd = f_centered(d);
    for (int it = 0; it < config.max_iters && (b - a) > config.tol; ++it) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = f_centered(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = f_centered(d);
      }
    }
    lambda_star = 0.5 * (a + b);

    // Derivative polish. Value comparisons cannot place the minimum of a
    // flat valley better than ~sqrt(eps/f''), which is too coarse for the
    // 1e-8 shift-equivariance of the advantages. The derivative's zero
    // crossing is linear in lambda, so a sign bisection recovers full
    // double resolution.
    double a2 = lo, b2 = hi;
    double wl = std::max(lo, lambda_star - 0.01 * (1.0 + lambda_star));
    double wh = std::min(hi, lambda_star + 0.01 * (1.0 + lambda_star));
    if (f_prime(wl) < 0.0) a2 = wl;
    if (f_prime(wh) > 0.0) b2 = wh;
    if (f_prime(a2) >= 0.0) {
      lambda_star = lo;  // minimum pinned at the floor
      sol.interior = false;
    } else if (f_prime(b2) <= 0.0) {
      lambda_star = hi;  // minimum pinned at the upper bracket
      sol.interior = false;
    } else {
      for (int it = 0;
           it < config.max_iters && (b2 - a2) > 1e-13 * (1.0 + b2); ++it) {
        double mid = 0.5 * (a2 + b2);
        (f_prime(mid) < 0.0 ? a2 : b2) = mid;
      }
      lambda_star = 0.5 * (a2 + b2);
      sol.interior =
          (lambda_star - lo > config.tol) && (hi - lambda_star > config.tol);
    }
  }

  sol.lambda_star = lambda_star;
  const double log_z = log_partition(lambda_star);
  sol.mu_star = r_max + lambda_star * (log_z - 1.0);
  sol.f_value = f_centered(lambda_star) + r_max;
  sol.advantages.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sol.advantages[i] = centered[i] / lambda_star - log_z;
  }
  return sol;
}

/// Recomputes A_i = (R_i - mu*)/lambda* - 1 from a solution; identical to
/// the advantages field (idempotent). Evaluated through the same centered
/// arithmetic as solve_dual so the recomputation is bitwise equal.
inline std::vector<double> advantages_of(const DualSolution& solution,
                                         const RewardGroup& group) {
  group.validate();
  require(solution.advantages.size() == group.rewards.size(),
          "advantages_of: solution does not match group");
  const std::size_t n = group.rewards.size();
  if (solution.degenerate) {
    return std::vector<double>(n, 0.0);
  }
  double r_max = group.rewards[0];
  for (double r : group.rewards) r_max = std::max(r_max, r);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    z += group.weight(i) *
         std::exp((group.rewards[i] - r_max) / solution.lambda_star);
  }
  const double log_z = std::log(z);
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) {
    adv[i] = (group.rewards[i] - r_max) / solution.lambda_star - log_z;
  }
  return adv;
}

}  // namespace quatro
