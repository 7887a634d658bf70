// Independent oracle implementations for the test suites. Everything here
// recomputes results from first principles (direct sums, grids, brute
// force) without reusing the library's solver or gradient code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracles {

/// Dual objective evaluated directly (plain sum of exponentials). Valid
/// whenever R/lambda stays in double range, which holds for the rewards
/// and brackets the tests use.
inline double dual_value_direct(const std::vector<double>& rewards,
                                const std::vector<double>& weights,
                                double delta, double lambda) {
  double s = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    s += weights[i] * std::exp(rewards[i] / lambda);
  }
  return lambda * (delta + std::log(s));
}

/// Brute-force grid minimizer for the convex dual objective. A coarse
/// uniform grid locates the bracketing cell of the global minimum (valid
/// because the objective is convex), then the grid is re-laid inside that
/// cell. Three rounds of 10^4 points give an effective uniform resolution
/// of ~1e-10 over [lo, hi], far beyond the 1e-6 comparison tolerance.
inline double grid_argmin_lambda(const std::vector<double>& rewards,
                                 const std::vector<double>& weights,
                                 double delta, double lo = 1e-3,
                                 double hi = 100.0, int points = 10000,
                                 int rounds = 3) {
  double best = lo;
  for (int round = 0; round < rounds; ++round) {
    double step = (hi - lo) / (points - 1);
    double best_val = std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (int i = 0; i < points; ++i) {
      double lambda = lo + i * step;
      if (lambda <= 0.0) continue;
      double v = dual_value_direct(rewards, weights, delta, lambda);
      if (v < best_val) {
        best_val = v;
        best_idx = i;
      }
    }
    best = lo + best_idx * step;
    double new_lo = std::max(lo, best - step);
    double new_hi = std::min(hi, best + step);
    lo = new_lo;
    hi = new_hi;
  }
  return best;
}

/// Central finite differences of an arbitrary scalar function of a
/// parameter vector.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> params, double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    double saved = params[j];
    params[j] = saved + h;
    double fp = f(params);
    params[j] = saved - h;
    double fm = f(params);
    params[j] = saved;
    grad[j] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline double max_relative_error(const std::vector<double>& a,
                                 const std::vector<double>& b,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({floor, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Draws uniform k-subsets of {0..n-1} and reports the empirical mean of
/// `stat` over the drawn subsets (as index sets).
inline double monte_carlo_subset_mean(
    int n, int k, int trials, std::uint64_t seed,
    const std::function<double(const std::vector<int>&)>& stat) {
  std::mt19937_64 gen(seed);
  std::vector<int> pool(n);
  double total = 0.0;
  std::vector<int> subset(k);
  for (int t = 0; t < trials; ++t) {
    std::iota(pool.begin(), pool.end(), 0);
    for (int j = 0; j < k; ++j) {
      std::uint64_t r = gen() % static_cast<std::uint64_t>(n - j);
      std::swap(pool[j], pool[j + static_cast<int>(r)]);
      subset[j] = pool[j];
    }
    total += stat(subset);
  }
  return total / trials;
}

/// Quadratic brute-force single-linkage clustering via union-find over all
/// pairs at or above the threshold. Returns the partition as sorted groups
/// of the given ids.
inline std::vector<std::vector<int>> union_find_clusters(
    const std::vector<int>& ids,
    const std::function<double(int, int)>& similarity, double threshold) {
  std::vector<int> parent(ids.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      if (similarity(ids[i], ids[j]) >= threshold) {
        parent[find(static_cast<int>(i))] = find(static_cast<int>(j));
      }
    }
  }
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    groups[find(static_cast<int>(i))].push_back(ids[i]);
  }
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end());
    out.push_back(members);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Canonical form of a partition for order-independent comparison.
inline std::vector<std::vector<std::string>> canonical_partition(
    const std::vector<std::vector<int>>& clusters,
    const std::function<std::string(int)>& text_of) {
  std::vector<std::vector<std::string>> out;
  for (const auto& cluster : clusters) {
    std::vector<std::string> texts;
    for (int id : cluster) texts.push_back(text_of(id));
    std::sort(texts.begin(), texts.end());
    out.push_back(std::move(texts));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracles
