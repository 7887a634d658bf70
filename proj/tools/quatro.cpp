// Experiment front end: deterministic training runs, grid sweeps, metric
// evaluation over rollout logs, and the cross-module invariant suite.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "quatro/metrics.hpp"
#include "quatro/serialization.hpp"
#include "quatro/trainer.hpp"
#include "quatro/verify.hpp"

namespace fs = std::filesystem;
using namespace quatro;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitDiverged = 2;

void ensure_fresh(const fs::path& out_dir, const std::vector<std::string>& files) {
  fs::create_directories(out_dir);
  for (const auto& f : files) {
    if (fs::exists(out_dir / f)) {
      throw ValidationError("output collision: " + (out_dir / f).string() +
                            " already exists");
    }
  }
}

int run_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  ensure_fresh(out_dir, {"run.csv", "rollouts.jsonl", "config.resolved.json"});
  auto tasks = make_tasks(cfg.env);
  TrainResult result = run_training(tasks, cfg.train);

  write_text_file(out_dir / "run.csv", run_csv(result.record));
  std::string jsonl;
  for (const auto& rec : result.record.rollouts) {
    jsonl += rollout_jsonl_line(rec);
    jsonl += '\n';
  }
  write_text_file(out_dir / "rollouts.jsonl", jsonl);
  write_text_file(out_dir / "config.resolved.json",
                  resolved_config_json(cfg).dump(2) + "\n");
  if (result.record.aborted) {
    std::cerr << "train: aborted on non-finite loss/gradient\n";
    return kExitDiverged;
  }
  if (result.record.diverged) {
    std::cerr << "train: divergence flagged, stopped early\n";
    return kExitDiverged;
  }
  return kExitOk;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

struct Grid {
  std::vector<double> deltas;
  std::vector<int> ks;
  std::vector<double> lrs;
};

Grid parse_grid(const std::string& spec) {
  Grid grid;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ';')) {
    auto eq = part.find('=');
    require(eq != std::string::npos, "grid: expected key=v1,v2,...");
    std::string key = part.substr(0, eq);
    std::string values = part.substr(eq + 1);
    if (key == "delta") {
      grid.deltas = parse_double_list(values);
    } else if (key == "K") {
      grid.ks = parse_int_list(values);
    } else if (key == "lr") {
      grid.lrs = parse_double_list(values);
    } else {
      throw ValidationError("grid: unknown key " + key +
                            " (expected delta, K, lr)");
    }
  }
  return grid;
}

std::string trim_float(double x) {
  // compact value used in directory names and the summary key columns
  std::string s = format_double(x);
  return s;
}

int run_sweep(const ExperimentConfig& base, const std::string& grid_spec,
              const fs::path& out_dir) {
  Grid grid = parse_grid(grid_spec);
  if (grid.deltas.empty()) grid.deltas = {base.train.delta};
  if (grid.ks.empty()) grid.ks = {base.train.inner_updates};
  if (grid.lrs.empty()) grid.lrs = {base.train.learning_rate};

  ensure_fresh(out_dir, {"sweep_summary.csv"});
  std::string summary =
      "delta,K,lr,step,mean_reward,mean_entropy,mean_lambda,kl_to_old,"
      "clip_fraction\n";
  int worst = kExitOk;
  for (double delta : grid.deltas) {
    for (int k : grid.ks) {
      for (double lr : grid.lrs) {
        ExperimentConfig cfg = base;
        cfg.train.delta = delta;
        cfg.train.inner_updates = k;
        cfg.train.learning_rate = lr;
        std::string name = "delta=" + trim_float(delta) +
                           "_K=" + std::to_string(k) + "_lr=" + trim_float(lr);
        int rc = run_train(cfg, out_dir / name);
        worst = std::max(worst, rc);
        // join the final run.csv row into the summary
        std::ifstream in(out_dir / name / "run.csv");
        std::string line, last;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
          if (!line.empty()) last = line;
        }
        if (!last.empty()) {
          summary += trim_float(delta) + "," + std::to_string(k) + "," +
                     trim_float(lr) + "," + last + "\n";
        }
      }
    }
  }
  write_text_file(out_dir / "sweep_summary.csv", summary);
  return worst;
}

struct QueryRollouts {
  SampleSet samples;
  int correct = 0;
};

std::map<std::string, QueryRollouts> group_rollouts(
    const std::vector<RolloutLogLine>& lines, const std::string& step_sel) {
  std::vector<const RolloutLogLine*> kept;
  if (step_sel == "all") {
    for (const auto& l : lines) kept.push_back(&l);
  } else {
    int want;
    if (step_sel == "last") {
      want = 0;
      for (const auto& l : lines) want = std::max(want, l.step);
    } else {
      want = std::stoi(step_sel);
    }
    for (const auto& l : lines) {
      if (l.step == want) kept.push_back(&l);
    }
  }
  std::map<std::string, QueryRollouts> out;
  for (const auto* l : kept) {
    auto& q = out[l->query_id];
    q.samples.query_id = l->query_id;
    q.samples.items.push_back({render_tokens(l->tokens), l->correct});
    if (l->correct) ++q.correct;
  }
  return out;
}

int run_eval(const std::string& rollouts_path, const std::string& baseline_path,
             const MetricSpec& spec, const std::string& step_sel,
             const fs::path& out_dir) {
  auto lines = read_rollouts_jsonl(rollouts_path);
  if (lines.empty()) throw ValidationError("eval: rollouts file is empty");
  auto grouped = group_rollouts(lines, step_sel);

  int min_n = std::numeric_limits<int>::max();
  for (const auto& [query, q] : grouped) min_n = std::min(min_n, q.samples.n());
  std::vector<int> ks;
  for (int k : spec.k_values) {
    if (k >= 1 && k <= min_n) {
      ks.push_back(k);
    } else {
      std::cerr << "eval: dropping k=" << k << " (exceeds sample count "
                << min_n << ")\n";
    }
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  ensure_fresh(out_dir, baseline_path.empty()
                            ? std::vector<std::string>{"metrics.csv"}
                            : std::vector<std::string>{"metrics.csv",
                                                       "flip_rate.csv"});

  std::string csv = "query_id,n,c,num_clusters,ucr";
  for (int k : ks) csv += ",pass@" + std::to_string(k);
  for (int k : ks) csv += ",ucc@" + std::to_string(k);
  csv += '\n';
  for (const auto& [query, q] : grouped) {
    auto assignment = cluster_correct(q.samples, spec.metric, spec.threshold);
    auto sizes = assignment.sizes();
    csv += query + "," + std::to_string(q.samples.n()) + "," +
           std::to_string(q.correct) + "," +
           std::to_string(assignment.clusters.size()) + "," +
           format_double(static_cast<double>(assignment.clusters.size()) /
                         q.samples.n());
    for (int k : ks) {
      csv += "," + format_double(pass_at_k(q.samples.n(), q.correct, k));
    }
    for (int k : ks) {
      csv += "," + format_double(ucc_at_k(q.samples.n(), sizes, k));
    }
    csv += '\n';
  }
  write_text_file(out_dir / "metrics.csv", csv);

  if (!baseline_path.empty()) {
    auto base_lines = read_rollouts_jsonl(baseline_path);
    auto base_grouped = group_rollouts(base_lines, step_sel);
    std::map<std::string, int> before, after;
    for (const auto& [query, q] : base_grouped) before[query] = q.correct;
    for (const auto& [query, q] : grouped) after[query] = q.correct;
    auto rates = flip_rate(before, after, spec.flip_bins);
    std::string flip_csv = "bucket,flip_rate\n";
    for (const auto& [bucket, rate] : rates) {
      flip_csv += bucket + "," + format_double(rate) + "\n";
    }
    write_text_file(out_dir / "flip_rate.csv", flip_csv);
  }
  return kExitOk;
}

int run_verify(const std::string& filter, const std::string& fault_name) {
  auto results = run_verification(filter, parse_fault(fault_name));
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  bool all_pass = true;
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    std::cout << r.name << std::string(width + 2 - r.name.size(), ' ')
              << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << "\n";
  }
  if (results.empty()) {
    std::cout << "no checks matched filter\n";
    return kExitError;
  }
  return all_pass ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-adaptive trust-region policy optimization workbench"};
  app.require_subcommand(1);

  std::string config_path, out_path, grid_spec;
  std::string rollouts_path, baseline_path, step_sel = "last";
  std::string k_list, metric_name, filter, fault_name;
  double threshold = -1.0;
  std::string bins_list;
  std::int64_t seed_override = -1;

  auto* train = app.add_subcommand("train", "run one training configuration");
  train->add_option("--config", config_path, "experiment config JSON")
      ->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--seed", seed_override, "override the config seed");

  auto* sweep = app.add_subcommand("sweep", "grid sweep over delta/K/lr");
  sweep->add_option("--config", config_path, "experiment config JSON")
      ->required();
  sweep->add_option("--grid", grid_spec, "e.g. delta=0.1,0.01;K=1,2,5;lr=0.01")
      ->required();
  sweep->add_option("--out", out_path, "output directory")->required();
  sweep->add_option("--seed", seed_override, "override the config seed");

  auto* eval = app.add_subcommand("eval", "metrics over a rollouts log");
  eval->add_option("--rollouts", rollouts_path, "rollouts.jsonl path")
      ->required();
  eval->add_option("--out", out_path, "output directory")->required();
  eval->add_option("--k", k_list, "comma-separated k values");
  eval->add_option("--metric", metric_name,
                   "tfidf_cosine | jaccard | rouge_l | edit");
  eval->add_option("--threshold", threshold, "clustering threshold");
  eval->add_option("--baseline", baseline_path,
                   "baseline rollouts for flip rate");
  eval->add_option("--bins", bins_list, "flip-rate bin edges");
  eval->add_option("--step", step_sel, "step filter: last | all | <int>");

  auto* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--filter", filter, "only checks containing this string");
  verify->add_option("--inject-fault", fault_name,
                     "test-harness mutation (advantage_sign_flip)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed() || sweep->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_override);
        cfg.train.seed = cfg.seed;
      }
      cfg.train.validate();
      if (train->parsed()) return run_train(cfg, out_path);
      return run_sweep(cfg, grid_spec, out_path);
    }
    if (eval->parsed()) {
      MetricSpec spec;
      if (!k_list.empty()) spec.k_values = parse_int_list(k_list);
      if (!metric_name.empty()) {
        spec.metric = detail::parse_similarity_metric(metric_name);
      }
      if (threshold >= 0.0) spec.threshold = threshold;
      if (!bins_list.empty()) spec.flip_bins = parse_int_list(bins_list);
      return run_eval(rollouts_path, baseline_path, spec, step_sel, out_path);
    }
    if (verify->parsed()) return run_verify(filter, fault_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
