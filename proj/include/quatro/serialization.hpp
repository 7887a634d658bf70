#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "quatro/environments.hpp"
#include "quatro/metrics.hpp"
#include "quatro/trainer.hpp"

namespace quatro {

/// 17 significant digits round-trip any double exactly, keeping every
/// emitted file byte-deterministic.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct MetricSpec {
  std::vector<int> k_values = {1, 2, 4, 8, 16, 32, 64, 128, 256};
  SimilarityMetric metric = SimilarityMetric::tfidf_cosine;
  double threshold = 0.95;
  std::vector<int> flip_bins = {0, 8, 32, 128, 256};
};

struct ExperimentConfig {
  EnvSpec env;
  TrainConfig train;
  MetricSpec metric;
  std::uint64_t seed = 0;
};

namespace detail {

inline EnvKind parse_env_kind(const std::string& s) {
  if (s == "single_target") return EnvKind::single_target;
  if (s == "multi_mode") return EnvKind::multi_mode;
  if (s == "graded") return EnvKind::graded;
  if (s == "noisy") return EnvKind::noisy;
  throw ValidationError("unknown env kind: " + s);
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "quatro") return Algorithm::quatro;
  if (s == "grpo") return Algorithm::grpo;
  if (s == "gspo") return Algorithm::gspo;
  throw ValidationError("unknown algorithm: " + s);
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer: " + s);
}

inline SimilarityMetric parse_similarity_metric(const std::string& s) {
  if (s == "tfidf_cosine") return SimilarityMetric::tfidf_cosine;
  if (s == "jaccard") return SimilarityMetric::jaccard;
  if (s == "rouge_l") return SimilarityMetric::rouge_l;
  if (s == "edit") return SimilarityMetric::edit;
  throw ValidationError("unknown similarity metric: " + s);
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("env")) {
    const auto& e = j.at("env");
    if (e.contains("kind")) {
      cfg.env.kind = detail::parse_env_kind(e.at("kind").get<std::string>());
    }
    detail::read_if(e, "vocab_size", cfg.env.vocab_size);
    detail::read_if(e, "horizon", cfg.env.horizon);
    detail::read_if(e, "num_queries", cfg.env.num_queries);
    detail::read_if(e, "num_targets", cfg.env.num_targets);
    detail::read_if(e, "noise_prob", cfg.env.noise_prob);
    detail::read_if(e, "seed", cfg.env.seed);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("algorithm")) {
      cfg.train.algorithm =
          detail::parse_algorithm(t.at("algorithm").get<std::string>());
    }
    detail::read_if(t, "delta", cfg.train.delta);
    detail::read_if(t, "epsilon", cfg.train.epsilon);
    detail::read_if(t, "rollouts_per_query", cfg.train.rollouts_per_query);
    detail::read_if(t, "inner_updates", cfg.train.inner_updates);
    detail::read_if(t, "learning_rate", cfg.train.learning_rate);
    detail::read_if(t, "beta", cfg.train.beta);
    detail::read_if(t, "steps", cfg.train.steps);
    if (t.contains("optimizer")) {
      cfg.train.optimizer =
          detail::parse_optimizer(t.at("optimizer").get<std::string>());
    }
    detail::read_if(t, "exact_expectation", cfg.train.exact_expectation);
    detail::read_if(t, "temperature", cfg.train.sampling.temperature);
    detail::read_if(t, "top_p", cfg.train.sampling.top_p);
    detail::read_if(t, "lambda_min", cfg.train.lambda_min);
    detail::read_if(t, "init_logit_scale", cfg.train.init_logit_scale);
  }
  if (j.contains("metric")) {
    const auto& m = j.at("metric");
    detail::read_if(m, "k", cfg.metric.k_values);
    if (m.contains("similarity")) {
      cfg.metric.metric = detail::parse_similarity_metric(
          m.at("similarity").get<std::string>());
    }
    detail::read_if(m, "threshold", cfg.metric.threshold);
    detail::read_if(m, "flip_bins", cfg.metric.flip_bins);
  }
  detail::read_if(j, "seed", cfg.seed);
  cfg.train.seed = cfg.seed;
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  return parse_experiment_config(j);
}

inline nlohmann::json resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["env"] = {{"kind", to_string(cfg.env.kind)},
              {"vocab_size", cfg.env.vocab_size},
              {"horizon", cfg.env.horizon},
              {"num_queries", cfg.env.num_queries},
              {"num_targets", cfg.env.num_targets},
              {"noise_prob", cfg.env.noise_prob},
              {"seed", cfg.env.seed}};
  j["train"] = {{"algorithm", to_string(cfg.train.algorithm)},
                {"delta", cfg.train.delta},
                {"epsilon", cfg.train.epsilon},
                {"rollouts_per_query", cfg.train.rollouts_per_query},
                {"inner_updates", cfg.train.inner_updates},
                {"learning_rate", cfg.train.learning_rate},
                {"beta", cfg.train.beta},
                {"steps", cfg.train.steps},
                {"optimizer",
                 cfg.train.optimizer == OptimizerKind::sgd ? "sgd" : "adam"},
                {"exact_expectation", cfg.train.exact_expectation},
                {"temperature", cfg.train.sampling.temperature},
                {"top_p", cfg.train.sampling.top_p},
                {"lambda_min", cfg.train.lambda_min},
                {"init_logit_scale", cfg.train.init_logit_scale}};
  nlohmann::json mk = nlohmann::json::array();
  for (int k : cfg.metric.k_values) mk.push_back(k);
  nlohmann::json fb = nlohmann::json::array();
  for (int b : cfg.metric.flip_bins) fb.push_back(b);
  j["metric"] = {{"k", mk},
                 {"similarity", to_string(cfg.metric.metric)},
                 {"threshold", cfg.metric.threshold},
                 {"flip_bins", fb}};
  j["seed"] = cfg.seed;
  return j;
}

inline const char* kRunCsvHeader =
    "step,mean_reward,mean_entropy,mean_lambda,kl_to_old,clip_fraction";

inline std::string run_csv(const RunRecord& record) {
  std::string out = kRunCsvHeader;
  out += '\n';
  for (const auto& row : record.rows) {
    out += std::to_string(row.step);
    out += ',';
    out += format_double(row.mean_reward);
    out += ',';
    out += format_double(row.mean_entropy);
    out += ',';
    out += format_double(row.mean_lambda);
    out += ',';
    out += format_double(row.kl_to_old);
    out += ',';
    out += format_double(row.clip_fraction);
    out += '\n';
  }
  return out;
}

/// One JSON object per line with a fixed key order, formatted by hand so
/// the bytes depend only on the record contents.
inline std::string rollout_jsonl_line(const RolloutRecord& rec) {
  std::string out = "{\"step\":" + std::to_string(rec.step);
  out += ",\"query_id\":\"" + rec.trajectory.query_id + "\"";
  out += ",\"tokens\":[";
  for (std::size_t i = 0; i < rec.trajectory.tokens.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(rec.trajectory.tokens[i]);
  }
  out += "],\"logprob_old\":" + format_double(rec.trajectory.logprob_old);
  out += ",\"reward\":" + format_double(rec.trajectory.reward);
  out += ",\"correct\":";
  out += rec.trajectory.correct ? "true" : "false";
  out += ",\"algorithm\":\"" + rec.algorithm + "\"}";
  return out;
}

struct RolloutLogLine {
  int step = 0;
  std::string query_id;
  std::vector<int> tokens;
  double logprob_old = 0.0;
  double reward = 0.0;
  bool correct = false;
  std::string algorithm;
};

inline std::vector<RolloutLogLine> read_rollouts_jsonl(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open rollouts file: " + path);
  std::vector<RolloutLogLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    RolloutLogLine rec;
    rec.step = j.at("step").get<int>();
    rec.query_id = j.at("query_id").get<std::string>();
    rec.tokens = j.at("tokens").get<std::vector<int>>();
    rec.logprob_old = j.at("logprob_old").get<double>();
    rec.reward = j.at("reward").get<double>();
    rec.correct = j.at("correct").get<bool>();
    rec.algorithm = j.at("algorithm").get<std::string>();
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw ValidationError("cannot write file: " + path.string());
  out << content;
}

}  // namespace quatro
