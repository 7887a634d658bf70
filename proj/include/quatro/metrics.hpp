#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "quatro/numeric.hpp"

namespace quatro {

/// P(at least one of a marked subset of size s lands in a uniformly drawn
/// k-subset of n) = 1 - C(n-s,k)/C(n,k), evaluated through the telescoping
/// product C(n-s,k)/C(n,k) = prod_{i=n-s+1..n} (1 - k/i). Long-double
/// accumulation keeps the small cases exact after the final rounding and
/// never overflows at n = 256.
inline double subset_hit_probability(int n, int s, int k) {
  if (k > n || k < 1) throw DomainError("hit probability: need 1 <= k <= n");
  if (s > n || s < 0) throw DomainError("hit probability: need 0 <= s <= n");
  if (s == 0) return 0.0;
  if (k > n - s) return 1.0;
  long double miss = 1.0L;
  for (int i = n - s + 1; i <= n; ++i) {
    miss *= 1.0L - static_cast<long double>(k) / i;
  }
  return static_cast<double>(1.0L - miss);
}

/// Unbiased Pass@k: probability that at least one of k samples drawn
/// uniformly without replacement from n is among the c correct ones.
inline double pass_at_k(int n, int c, int k) {
  if (c < 0 || c > n) throw DomainError("pass_at_k: need 0 <= c <= n");
  return subset_hit_probability(n, c, k);
}

/// UCC@k: expected number of distinct correct clusters represented in a
/// uniform k-subset, sum_j (1 - C(n-s_j,k)/C(n,k)). Range [0, m].
inline double ucc_at_k(int n, std::span<const int> cluster_sizes, int k) {
  long long total = 0;
  for (int s : cluster_sizes) {
    if (s < 1 || s > n) throw DomainError("ucc_at_k: cluster size out of range");
    total += s;
  }
  if (total > n) throw DomainError("ucc_at_k: cluster sizes exceed n");
  double ucc = 0.0;
  for (int s : cluster_sizes) ucc += subset_hit_probability(n, s, k);
  return ucc;
}

enum class SimilarityMetric { tfidf_cosine, jaccard, rouge_l, edit };

inline const char* to_string(SimilarityMetric m) {
  switch (m) {
    case SimilarityMetric::tfidf_cosine: return "tfidf_cosine";
    case SimilarityMetric::jaccard: return "jaccard";
    case SimilarityMetric::rouge_l: return "rouge_l";
    case SimilarityMetric::edit: return "edit";
  }
  return "?";
}

/// The n samples for one query, with per-item correctness and a text
/// rendering for the similarity metrics.
struct SampleSet {
  struct Item {
    std::string text;
    bool correct = false;
  };
  std::string query_id;
  std::vector<Item> items;

  int n() const { return static_cast<int>(items.size()); }
};

/// Space-joined token indices, so the text metrics treat toy trajectories
/// exactly like real corpora.
inline std::string render_tokens(std::span<const int> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

namespace detail {

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// TF-IDF cosine scorer with corpus-level smoothed IDF
/// (log((1+D)/(1+df)) + 1) and whitespace tokenization. Built once per
/// SampleSet so every pairwise score shares the same document frequencies.
class TfIdfModel {
 public:
  explicit TfIdfModel(const std::vector<std::string>& corpus) {
    num_docs_ = corpus.size();
    for (const auto& doc : corpus) {
      std::set<std::string> uniq;
      for (auto& tok : detail::tokenize(doc)) uniq.insert(std::move(tok));
      for (const auto& tok : uniq) ++df_[tok];
    }
  }

  double idf(const std::string& term) const {
    auto it = df_.find(term);
    std::size_t df = it == df_.end() ? 0 : it->second;
    return std::log((1.0 + static_cast<double>(num_docs_)) /
                    (1.0 + static_cast<double>(df))) +
           1.0;
  }

  std::unordered_map<std::string, double> vectorize(
      const std::string& text) const {
    std::unordered_map<std::string, double> tf;
    for (const auto& tok : detail::tokenize(text)) tf[tok] += 1.0;
    for (auto& [term, weight] : tf) weight *= idf(term);
    return tf;
  }

  double cosine(const std::string& a, const std::string& b) const {
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    auto va = vectorize(a);
    auto vb = vectorize(b);
    double num = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [term, weight] : va) {
      na += weight * weight;
      auto it = vb.find(term);
      if (it != vb.end()) num += weight * it->second;
    }
    for (const auto& [term, weight] : vb) nb += weight * weight;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (std::sqrt(na) * std::sqrt(nb));
  }

 private:
  std::size_t num_docs_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

/// Pairwise similarity in [0, 1]; symmetric, 1 on identical inputs. Two
/// empty strings compare as 1 by convention, one empty as 0. For
/// tfidf_cosine the IDF corpus is just {a, b}; cluster_correct uses
/// SampleSet-wide document frequencies instead.
inline double similarity(const std::string& a, const std::string& b,
                         SimilarityMetric metric) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  switch (metric) {
    case SimilarityMetric::tfidf_cosine: {
      TfIdfModel model({a, b});
      return model.cosine(a, b);
    }
    case SimilarityMetric::jaccard: {
      auto ta = detail::tokenize(a);
      auto tb = detail::tokenize(b);
      std::set<std::string> sa(ta.begin(), ta.end());
      std::set<std::string> sb(tb.begin(), tb.end());
      std::size_t inter = 0;
      for (const auto& tok : sa) inter += sb.count(tok);
      std::size_t uni = sa.size() + sb.size() - inter;
      return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    }
    case SimilarityMetric::rouge_l: {
      auto ta = detail::tokenize(a);
      auto tb = detail::tokenize(b);
      if (ta.empty() && tb.empty()) return 1.0;
      if (ta.empty() || tb.empty()) return 0.0;
      double lcs = static_cast<double>(detail::lcs_length(ta, tb));
      if (lcs == 0.0) return 0.0;
      double p = lcs / tb.size();
      double r = lcs / ta.size();
      return 2.0 * p * r / (p + r);
    }
    case SimilarityMetric::edit: {
      double d = static_cast<double>(detail::levenshtein(a, b));
      return 1.0 - d / static_cast<double>(std::max(a.size(), b.size()));
    }
  }
  throw ValidationError("similarity: unknown metric");
}

/// Single-linkage clusters over the correct items only: items i, j are
/// joined whenever similarity >= threshold, clusters are the connected
/// components. `clusters` holds indices into the original SampleSet.
struct ClusterAssignment {
  std::vector<std::vector<int>> clusters;
  SimilarityMetric metric = SimilarityMetric::tfidf_cosine;
  double threshold = 0.95;

  std::vector<int> sizes() const {
    std::vector<int> out;
    out.reserve(clusters.size());
    for (const auto& c : clusters) out.push_back(static_cast<int>(c.size()));
    return out;
  }
};

inline ClusterAssignment cluster_correct(const SampleSet& samples,
                                         SimilarityMetric metric,
                                         double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0,
          "cluster_correct: threshold must be in [0, 1]");
  ClusterAssignment out;
  out.metric = metric;
  out.threshold = threshold;
  std::vector<int> correct_idx;
  for (int i = 0; i < samples.n(); ++i) {
    if (samples.items[i].correct) correct_idx.push_back(i);
  }
  if (correct_idx.empty()) return out;

  // SampleSet-wide IDF so document frequencies do not depend on the split
  // into correct/incorrect.
  std::vector<std::string> corpus;
  corpus.reserve(samples.items.size());
  for (const auto& item : samples.items) corpus.push_back(item.text);
  TfIdfModel model(corpus);
  auto score = [&](int i, int j) {
    const std::string& a = samples.items[i].text;
    const std::string& b = samples.items[j].text;
    if (metric == SimilarityMetric::tfidf_cosine) {
      if (a.empty() && b.empty()) return 1.0;
      if (a.empty() || b.empty()) return 0.0;
      return model.cosine(a, b);
    }
    return similarity(a, b, metric);
  };

  // Connected components of the thresholded similarity graph via BFS.
  const std::size_t m = correct_idx.size();
  std::vector<int> component(m, -1);
  int next_component = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (component[i] >= 0) continue;
    std::vector<std::size_t> frontier{i};
    component[i] = next_component;
    while (!frontier.empty()) {
      std::size_t u = frontier.back();
      frontier.pop_back();
      for (std::size_t v = 0; v < m; ++v) {
        if (component[v] >= 0) continue;
        if (score(correct_idx[u], correct_idx[v]) >= threshold) {
          component[v] = next_component;
          frontier.push_back(v);
        }
      }
    }
    ++next_component;
  }
  out.clusters.assign(next_component, {});
  for (std::size_t i = 0; i < m; ++i) {
    out.clusters[component[i]].push_back(correct_idx[i]);
  }
  return out;
}

/// Fraction of distinct correct solutions among the n samples: cluster
/// count over n.
inline double unique_correct_ratio(const SampleSet& samples,
                                   SimilarityMetric metric, double threshold) {
  auto assignment = cluster_correct(samples, metric, threshold);
  return static_cast<double>(assignment.clusters.size()) /
         static_cast<double>(samples.n());
}

/// Buckets queries by their before-count using consecutive bin edges
/// ([e0,e1), ..., last bucket closed) and reports, per non-empty bucket,
/// the fraction of queries that flipped from zero correct before to a
/// positive count after. Empty buckets are absent from the result.
inline std::map<std::string, double> flip_rate(
    const std::map<std::string, int>& before,
    const std::map<std::string, int>& after, std::span<const int> bins) {
  require(bins.size() >= 2, "flip_rate: need at least two bin edges");
  for (std::size_t i = 1; i < bins.size(); ++i) {
    require(bins[i] > bins[i - 1], "flip_rate: bin edges must increase");
  }
  const std::size_t n_buckets = bins.size() - 1;
  auto label = [&](std::size_t b) {
    std::string s = "[" + std::to_string(bins[b]) + "," +
                    std::to_string(bins[b + 1]) +
                    (b + 1 == n_buckets ? "]" : ")");
    return s;
  };
  std::vector<int> total(n_buckets, 0), flipped(n_buckets, 0);
  for (const auto& [query, c_before] : before) {
    auto it = after.find(query);
    require(it != after.end(), "flip_rate: query missing from after counts");
    std::size_t b = n_buckets;  // sentinel: out of range
    for (std::size_t i = 0; i < n_buckets; ++i) {
      bool last = i + 1 == n_buckets;
      if (c_before >= bins[i] &&
          (last ? c_before <= bins[i + 1] : c_before < bins[i + 1])) {
        b = i;
        break;
      }
    }
    require(b < n_buckets, "flip_rate: before count outside bin range");
    ++total[b];
    if (c_before == 0 && it->second > 0) ++flipped[b];
  }
  std::map<std::string, double> out;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    if (total[b] > 0) {
      out[label(b)] = static_cast<double>(flipped[b]) / total[b];
    }
  }
  return out;
}

}  // namespace quatro
