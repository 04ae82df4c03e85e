// Copyright 2026 The dtrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "cli.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dtrec/error.hpp"
#include "dtrec/evaluation.hpp"
#include "dtrec/inference.hpp"
#include "dtrec/ingest.hpp"
#include "dtrec/rng.hpp"
#include "dtrec/serialize.hpp"
#include "dtrec/training.hpp"
#include "dtrec/trajectory.hpp"

namespace dtrec::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kOutRootEnv[] = "DTREC_OUT_ROOT";

// ---------------------------------------------------------------------------
// Config document

struct EvaluateSection {
  TargetRewardRule rule = TargetRewardRule::kMaxConstant;
  double prompt_scale = 1.0;
  int max_items = 0;  // 0 selects the checkpoint's decoder budget
  bool allow_eos = true;
  bool feedback = false;
  int top_k = 10;
  double nrc_threshold = 0.5;
  int variance_splits = 0;  // 0 disables the split analysis
};

struct OodSection {
  double threshold = 4.0;  // steps below this reward form the removed part
};

struct BcSection {
  std::vector<double> proportions = {10.0, 25.0, 40.0, 100.0};
  double high_min = 6.0;  // rewards at or above this count as high
};

struct RunConfig {
  std::string data;        // dataset bundle directory
  std::string log;         // raw interaction log (ingest)
  std::string checkpoint;  // recommender model file (evaluate)
  std::string scorer;      // stored reward model; empty trains one
  std::string out;         // output directory
  std::uint64_t seed = 0;  // seed for command-level sampling (splits, subsets)
  int jobs = 1;
  SyntheticWorldConfig synth;
  IngestConfig ingest;
  LogFormat log_format;
  TrainConfig train;
  RewardTrainConfig reward_model;
  EvaluateSection evaluate;
  OodSection ood;
  BcSection bc;
};

const char* rule_name(TargetRewardRule rule) {
  return rule == TargetRewardRule::kMaxConstant ? "max_constant"
                                                : "decrementing_return_to_go";
}

TargetRewardRule rule_from_name(const std::string& name) {
  if (name == "max_constant") return TargetRewardRule::kMaxConstant;
  if (name == "decrementing_return_to_go")
    return TargetRewardRule::kDecrementingReturnToGo;
  fail(ErrorKind::kConfig, "unknown target reward rule: " + name);
}

void check_keys(const json& j, const std::string& what,
                const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(ErrorKind::kConfig, "unknown " + what + " key: " + key);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& into) {
  if (auto it = j.find(key); it != j.end()) into = it->get<T>();
}

json config_to_document(const RunConfig& c) {
  json synth{{"n_users", c.synth.n_users},
             {"n_items", c.synth.n_items},
             {"n_genres", c.synth.n_genres},
             {"n_intervals", c.synth.n_intervals},
             {"items_per_round", c.synth.items_per_round},
             {"preference_sharpness", c.synth.preference_sharpness},
             {"p_min", c.synth.link.p_min},
             {"p_max", c.synth.link.p_max},
             {"gamma", c.synth.link.gamma},
             {"seed", c.synth.seed}};
  json ingest{{"interval_seconds", c.ingest.interval_seconds},
              {"horizon", c.ingest.horizon},
              {"min_interactions", c.ingest.min_interactions},
              {"max_items_per_round", c.ingest.max_items_per_round},
              {"train_fraction", c.ingest.fractions.train},
              {"validation_fraction", c.ingest.fractions.validation},
              {"test_fraction", c.ingest.fractions.test},
              {"state_window", c.ingest.state_window},
              {"split_seed", c.ingest.split_seed},
              {"delimiter", std::string(1, c.log_format.delimiter)},
              {"user_col", c.log_format.user_col},
              {"item_col", c.log_format.item_col},
              {"time_col", c.log_format.time_col},
              {"has_header", c.log_format.has_header}};
  json evaluate{{"rule", rule_name(c.evaluate.rule)},
                {"prompt_scale", c.evaluate.prompt_scale},
                {"max_items", c.evaluate.max_items},
                {"allow_eos", c.evaluate.allow_eos},
                {"feedback", c.evaluate.feedback},
                {"top_k", c.evaluate.top_k},
                {"nrc_threshold", c.evaluate.nrc_threshold},
                {"variance_splits", c.evaluate.variance_splits}};
  return json{{"data", c.data},
              {"log", c.log},
              {"checkpoint", c.checkpoint},
              {"scorer", c.scorer},
              {"out", c.out},
              {"seed", c.seed},
              {"jobs", c.jobs},
              {"synth", synth},
              {"ingest", ingest},
              {"train", json::parse(train_config_to_json(c.train))},
              {"reward_model",
               json::parse(reward_config_to_json(c.reward_model))},
              {"evaluate", evaluate},
              {"ood", json{{"threshold", c.ood.threshold}}},
              {"bc", json{{"proportions", c.bc.proportions},
                          {"high_min", c.bc.high_min}}}};
}

RunConfig config_from_document(const json& j) {
  require(j.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  check_keys(j, "config",
             {"data", "log", "checkpoint", "scorer", "out", "seed", "jobs",
              "synth", "ingest", "train", "reward_model", "evaluate", "ood",
              "bc"});
  RunConfig c;
  try {
    read_field(j, "data", c.data);
    read_field(j, "log", c.log);
    read_field(j, "checkpoint", c.checkpoint);
    read_field(j, "scorer", c.scorer);
    read_field(j, "out", c.out);
    read_field(j, "seed", c.seed);
    read_field(j, "jobs", c.jobs);

    if (auto it = j.find("synth"); it != j.end()) {
      check_keys(*it, "synth",
                 {"n_users", "n_items", "n_genres", "n_intervals",
                  "items_per_round", "preference_sharpness", "p_min", "p_max",
                  "gamma", "seed"});
      read_field(*it, "n_users", c.synth.n_users);
      read_field(*it, "n_items", c.synth.n_items);
      read_field(*it, "n_genres", c.synth.n_genres);
      read_field(*it, "n_intervals", c.synth.n_intervals);
      read_field(*it, "items_per_round", c.synth.items_per_round);
      read_field(*it, "preference_sharpness", c.synth.preference_sharpness);
      read_field(*it, "p_min", c.synth.link.p_min);
      read_field(*it, "p_max", c.synth.link.p_max);
      read_field(*it, "gamma", c.synth.link.gamma);
      read_field(*it, "seed", c.synth.seed);
    }
    if (auto it = j.find("ingest"); it != j.end()) {
      check_keys(*it, "ingest",
                 {"interval_seconds", "horizon", "min_interactions",
                  "max_items_per_round", "train_fraction",
                  "validation_fraction", "test_fraction", "state_window",
                  "split_seed", "delimiter", "user_col", "item_col",
                  "time_col", "has_header"});
      read_field(*it, "interval_seconds", c.ingest.interval_seconds);
      read_field(*it, "horizon", c.ingest.horizon);
      read_field(*it, "min_interactions", c.ingest.min_interactions);
      read_field(*it, "max_items_per_round", c.ingest.max_items_per_round);
      read_field(*it, "train_fraction", c.ingest.fractions.train);
      read_field(*it, "validation_fraction", c.ingest.fractions.validation);
      read_field(*it, "test_fraction", c.ingest.fractions.test);
      read_field(*it, "state_window", c.ingest.state_window);
      read_field(*it, "split_seed", c.ingest.split_seed);
      if (auto d = it->find("delimiter"); d != it->end()) {
        const std::string text = d->get<std::string>();
        require(text.size() == 1, ErrorKind::kConfig,
                "delimiter must be a single character");
        c.log_format.delimiter = text[0];
      }
      read_field(*it, "user_col", c.log_format.user_col);
      read_field(*it, "item_col", c.log_format.item_col);
      read_field(*it, "time_col", c.log_format.time_col);
      read_field(*it, "has_header", c.log_format.has_header);
    }
    if (auto it = j.find("train"); it != j.end())
      c.train = train_config_from_json(it->dump());
    if (auto it = j.find("reward_model"); it != j.end())
      c.reward_model = reward_config_from_json(it->dump());
    if (auto it = j.find("evaluate"); it != j.end()) {
      check_keys(*it, "evaluate",
                 {"rule", "prompt_scale", "max_items", "allow_eos",
                  "feedback", "top_k", "nrc_threshold", "variance_splits"});
      if (auto r = it->find("rule"); r != it->end())
        c.evaluate.rule = rule_from_name(r->get<std::string>());
      read_field(*it, "prompt_scale", c.evaluate.prompt_scale);
      read_field(*it, "max_items", c.evaluate.max_items);
      read_field(*it, "allow_eos", c.evaluate.allow_eos);
      read_field(*it, "feedback", c.evaluate.feedback);
      read_field(*it, "top_k", c.evaluate.top_k);
      read_field(*it, "nrc_threshold", c.evaluate.nrc_threshold);
      read_field(*it, "variance_splits", c.evaluate.variance_splits);
    }
    if (auto it = j.find("ood"); it != j.end()) {
      check_keys(*it, "ood", {"threshold"});
      read_field(*it, "threshold", c.ood.threshold);
    }
    if (auto it = j.find("bc"); it != j.end()) {
      check_keys(*it, "bc", {"proportions", "high_min"});
      read_field(*it, "proportions", c.bc.proportions);
      read_field(*it, "high_min", c.bc.high_min);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
  require(c.jobs >= 1, ErrorKind::kConfig, "jobs must be at least 1");
  require(c.evaluate.variance_splits >= 0, ErrorKind::kConfig,
          "variance_splits must be non-negative");
  return c;
}

void deep_merge(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key)) {
      deep_merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

void apply_set(json& doc, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::kConfig,
          "--set expects path.key=value, got '" + spec + "'");
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings need no quoting
  }

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string part = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), ErrorKind::kConfig,
            "--set path has an empty segment: '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Shared plumbing

std::string shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  require(ec == std::errc(), ErrorKind::kNumeric, "cannot format value");
  return std::string(buf, end);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf);
}

// Content digest over everything a training run consumes (return-to-go is
// derived, so it is left out).
std::uint64_t dataset_hash(const std::vector<Trajectory>& data) {
  json rows = json::array();
  for (const Trajectory& t : data) {
    rows.push_back(json{{"user", t.user_id},
                        {"rewards", t.rewards},
                        {"states", t.states},
                        {"actions", t.actions}});
  }
  return fnv1a(rows.dump());
}

std::size_t count_steps(const std::vector<Trajectory>& data) {
  std::size_t steps = 0;
  for (const Trajectory& t : data) steps += t.rewards.size();
  return steps;
}

// Keeps the steps selected by the predicate, recomputes return-to-go and
// drops users left with nothing.
std::vector<Trajectory> rebuild_filtered(
    const std::vector<Trajectory>& data,
    const std::function<bool(std::size_t, std::size_t)>& keep) {
  std::vector<Trajectory> out;
  for (std::size_t u = 0; u < data.size(); ++u) {
    const Trajectory& t = data[u];
    Trajectory kept;
    kept.user_id = t.user_id;
    for (std::size_t s = 0; s < t.rewards.size(); ++s) {
      if (!keep(u, s)) continue;
      kept.rewards.push_back(t.rewards[s]);
      kept.states.push_back(t.states[s]);
      kept.actions.push_back(t.actions[s]);
    }
    if (kept.rewards.empty()) continue;
    kept.return_to_go = compute_return_to_go(kept.rewards);
    out.push_back(std::move(kept));
  }
  return out;
}

// Runs fn(0..n-1); with jobs > 1 tasks execute on a thread pool and the
// first failure in index order is rethrown after all tasks finish.
void parallel_run(int jobs, int n, const std::function<void(int)>& fn) {
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Resolved {
  RunConfig cfg;
  std::string echo;  // the resolved document, written as config.json
  fs::path out;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::string seed;
  std::string ablate;
  std::string variance;
  std::string jobs;
  std::string input;  // report only
};

std::uint64_t parse_u64(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const std::uint64_t value = std::stoull(text, &used);
    require(used == text.size(), ErrorKind::kConfig,
            std::string("invalid ") + what + ": " + text);
    return value;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, std::string("invalid ") + what + ": " + text);
  }
}

int parse_int(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const int value = std::stoi(text, &used);
    require(used == text.size(), ErrorKind::kConfig,
            std::string("invalid ") + what + ": " + text);
    return value;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, std::string("invalid ") + what + ": " + text);
  }
}

Resolved resolve(const CommonArgs& args, const std::string& command) {
  json doc = config_to_document(RunConfig{});
  if (!args.config_path.empty()) {
    json file;
    try {
      file = json::parse(read_text_file(args.config_path));
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig,
           args.config_path + " is not valid JSON: " + e.what());
    }
    deep_merge(doc, file);
  }
  for (const std::string& spec : args.sets) apply_set(doc, spec);

  if (!args.seed.empty()) {
    const std::uint64_t seed = parse_u64(args.seed, "--seed");
    doc["seed"] = seed;
    doc["synth"]["seed"] = seed;
    doc["ingest"]["split_seed"] = seed;
    doc["train"]["seed"] = seed;
    doc["reward_model"]["seed"] = seed;
  }
  if (!args.ablate.empty()) {
    static const std::vector<std::string> kNames = {
        "no_reward", "no_contrastive", "no_weight", "naive_prompt"};
    require(std::find(kNames.begin(), kNames.end(), args.ablate) !=
                kNames.end(),
            ErrorKind::kConfig, "unknown ablation: " + args.ablate);
    doc["train"]["ablate"][args.ablate] = true;
  }
  if (!args.variance.empty())
    doc["evaluate"]["variance_splits"] = parse_int(args.variance,
                                                   "--variance");
  if (!args.jobs.empty()) doc["jobs"] = parse_int(args.jobs, "--jobs");
  if (!args.out.empty()) doc["out"] = args.out;

  Resolved r;
  r.cfg = config_from_document(doc);
  if (r.cfg.out.empty()) {
    const char* root = std::getenv(kOutRootEnv);
    if (root != nullptr && *root != '\0') {
      r.cfg.out = (fs::path(root) / command).string();
    } else {
      fail(ErrorKind::kConfig,
           "no output directory: pass --out, set \"out\" in the config, or "
           "export " + std::string(kOutRootEnv));
    }
  }
  r.out = fs::path(r.cfg.out);
  r.echo = config_to_document(r.cfg).dump(2) + "\n";
  return r;
}

void prepare_out(const Resolved& r) {
  std::error_code ec;
  fs::create_directories(r.out, ec);
  require(!ec, ErrorKind::kIo, "cannot create " + r.out.string());
  write_text_file(r.out / "config.json", r.echo);
}

DatasetBundle load_bundle(const RunConfig& cfg) {
  require(!cfg.data.empty(), ErrorKind::kConfig,
          "no dataset: pass --set data=<bundle dir> or set \"data\"");
  return read_bundle(cfg.data);
}

void write_stats(const fs::path& path, const DatasetBundle& bundle,
                 const ParseReport* parse) {
  json j{{"version", 1},
         {"users", bundle.stats.n_users},
         {"items", bundle.stats.n_items},
         {"interactions", bundle.stats.n_interactions},
         {"mean_retention", bundle.stats.mean_retention},
         {"density", bundle.stats.density},
         {"splits", json{{"train", bundle.split.train.size()},
                         {"validation", bundle.split.validation.size()},
                         {"test", bundle.split.test.size()}}}};
  if (parse != nullptr) {
    j["parse"] = json{{"total_rows", parse->total_rows},
                      {"malformed_rows", parse->malformed_rows}};
  }
  write_text_file(path, j.dump(2) + "\n");
}

void print_stats(const DatasetBundle& bundle) {
  std::cout << "users " << bundle.stats.n_users << "  items "
            << bundle.stats.n_items << "  interactions "
            << bundle.stats.n_interactions << "  mean retention "
            << shortest(bundle.stats.mean_retention) << "\n"
            << "splits: train " << bundle.split.train.size()
            << "  validation " << bundle.split.validation.size() << "  test "
            << bundle.split.test.size() << "\n";
}

std::string history_table(const Checkpoint& ck) {
  std::string text = "epoch,total,ce,contrastive\n";
  for (const EpochRecord& r : ck.history) {
    text += std::to_string(r.epoch) + ',' + shortest(r.total) + ',' +
            shortest(r.ce) + ',' + shortest(r.contrastive) + '\n';
  }
  return text;
}

// Trains the retention scorer on the bundle's validation split, or loads a
// stored one when the config points at it.
RewardModel obtain_scorer(const DatasetBundle& bundle, const Resolved& r) {
  if (!r.cfg.scorer.empty()) return load_reward_model(r.cfg.scorer);
  RewardModel scorer = train_reward_model(
      bundle.split.validation, r.cfg.reward_model, bundle.vocab.hash(),
      bundle.vocab.total_size(), &bundle.split.train);
  save_reward_model(r.out / "scorer.bin", scorer);
  return scorer;
}

std::vector<RolloutRecord> run_policy(const Checkpoint& ck,
                                      const DatasetBundle& bundle,
                                      const RunConfig& cfg) {
  DecodeSettings decode;
  decode.max_items = cfg.evaluate.max_items;
  decode.allow_eos = cfg.evaluate.allow_eos;
  RecommendationPolicy policy =
      make_policy(ck, bundle.vocab.hash(), cfg.evaluate.rule, decode);
  policy.prompt_scale = cfg.evaluate.prompt_scale;
  RolloutOptions options;
  options.feedback = cfg.evaluate.feedback;
  return rollout(policy, bundle.split.test, options);
}

constexpr std::array<double MetricValues::*, 9> kMetricFields = {
    &MetricValues::bleu,   &MetricValues::rouge,   &MetricValues::hr,
    &MetricValues::ndcg,   &MetricValues::mb_urs,  &MetricValues::sb_urs,
    &MetricValues::asb_urs, &MetricValues::iur,    &MetricValues::nrc};

MetricValues field_variance(const std::vector<MetricValues>& rows) {
  MetricValues var;
  const double n = static_cast<double>(rows.size());
  for (const auto field : kMetricFields) {
    double mean = 0.0;
    for (const MetricValues& row : rows) mean += row.*field;
    mean /= n;
    double ss = 0.0;
    for (const MetricValues& row : rows)
      ss += (row.*field - mean) * (row.*field - mean);
    var.*field = ss / n;
  }
  return var;
}

MetricReport score_rollout(const std::vector<RolloutRecord>& rollouts,
                           const std::vector<Trajectory>& test_set,
                           const RewardModel& scorer,
                           std::uint64_t vocab_hash, const RunConfig& cfg,
                           const std::string& echo) {
  MetricInputs inputs;
  inputs.rollouts = &rollouts;
  inputs.test_set = &test_set;
  inputs.reward_model = &scorer;
  inputs.vocab_hash = vocab_hash;
  inputs.top_k = cfg.evaluate.top_k;
  inputs.nrc_threshold = cfg.evaluate.nrc_threshold;

  MetricReport report;
  report.overall = compute_metric_values(inputs);
  report.top_k = cfg.evaluate.top_k;
  report.nrc_threshold = cfg.evaluate.nrc_threshold;
  report.config_echo = echo;

  if (cfg.evaluate.variance_splits > 0) {
    const auto groups =
        partition_users(test_set, cfg.evaluate.variance_splits, cfg.seed);
    for (const auto& group : groups) {
      std::vector<Trajectory> subset;
      std::set<std::string> users;
      for (const std::size_t idx : group) {
        subset.push_back(test_set[idx]);
        users.insert(test_set[idx].user_id);
      }
      std::vector<RolloutRecord> slice;
      for (const RolloutRecord& rec : rollouts)
        if (users.count(rec.user_id)) slice.push_back(rec);
      MetricInputs split_inputs = inputs;
      split_inputs.rollouts = &slice;
      split_inputs.test_set = &subset;
      report.per_split.push_back(compute_metric_values(split_inputs));
    }
    report.split_variance = field_variance(report.per_split);
  }
  return report;
}

// One train-and-evaluate experiment inside the ood/bc sweeps.
struct ExperimentRun {
  std::string label;
  std::vector<Trajectory> train_data;
  MetricValues metrics;
};

void execute_runs(std::vector<ExperimentRun>& runs,
                  const DatasetBundle& bundle, const RewardModel& scorer,
                  const Resolved& r) {
  parallel_run(r.cfg.jobs, static_cast<int>(runs.size()), [&](int i) {
    ExperimentRun& run = runs[static_cast<std::size_t>(i)];
    const fs::path dir = r.out / run.label;
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::kIo, "cannot create " + dir.string());
    require(!run.train_data.empty(), ErrorKind::kDegenerate,
            "run " + run.label + " has no training data");

    Checkpoint ck = train(run.train_data, r.cfg.train, bundle.vocab.hash(),
                          bundle.vocab.total_size());
    save_checkpoint(dir / "model.bin", ck);
    write_text_file(dir / "history.csv", history_table(ck));

    const std::vector<RolloutRecord> rollouts =
        run_policy(ck, bundle, r.cfg);
    write_rollouts(dir / "rollouts.jsonl", rollouts);
    const MetricReport report = score_rollout(
        rollouts, bundle.split.test, scorer, bundle.vocab.hash(), r.cfg,
        r.echo);
    write_metric_report(dir / "report.json", report);
    write_metric_table(dir / "report.csv", report);
    run.metrics = report.overall;
  });
}

void append_metric_columns(std::string& row, const MetricValues& v) {
  for (const auto field : kMetricFields) {
    row += ',';
    row += shortest(v.*field);
  }
}

json metrics_to_json(const MetricValues& v) {
  return json{{"bleu", v.bleu},       {"rouge", v.rouge},
              {"hr", v.hr},           {"ndcg", v.ndcg},
              {"mb_urs", v.mb_urs},   {"sb_urs", v.sb_urs},
              {"asb_urs", v.asb_urs}, {"iur", v.iur},
              {"nrc", v.nrc}};
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const Resolved& r) {
  const SyntheticWorld world = synth_generate(r.cfg.synth);
  const DatasetBundle bundle = build_bundle(world.events, r.cfg.ingest);
  prepare_out(r);
  write_bundle(r.out, bundle);
  write_stats(r.out / "stats.json", bundle, nullptr);
  print_stats(bundle);
  std::cout << "wrote " << r.out.string() << "\n";
  return 0;
}

int cmd_ingest(const Resolved& r) {
  require(!r.cfg.log.empty(), ErrorKind::kConfig,
          "no interaction log: pass --set log=<file> or set \"log\"");
  ParseReport parse;
  const std::vector<InteractionEvent> events =
      parse_log(r.cfg.log, r.cfg.log_format, &parse);
  const DatasetBundle bundle = build_bundle(events, r.cfg.ingest);
  prepare_out(r);
  write_bundle(r.out, bundle);
  write_stats(r.out / "stats.json", bundle, &parse);
  std::cout << "rows " << parse.total_rows << "  malformed "
            << parse.malformed_rows << "\n";
  print_stats(bundle);
  std::cout << "wrote " << r.out.string() << "\n";
  return 0;
}

int cmd_train(const Resolved& r) {
  const DatasetBundle bundle = load_bundle(r.cfg);
  prepare_out(r);
  const EpochSink sink = [](const EpochRecord& rec, const Checkpoint&) {
    std::cout << "epoch " << rec.epoch << "  total " << shortest(rec.total)
              << "  ce " << shortest(rec.ce) << "  contrastive "
              << shortest(rec.contrastive) << "\n";
  };
  Checkpoint ck = train(bundle.split.train, r.cfg.train, bundle.vocab.hash(),
                        bundle.vocab.total_size(), sink);
  save_checkpoint(r.out / "model.bin", ck);
  write_text_file(r.out / "history.csv", history_table(ck));
  std::cout << "saved " << (r.out / "model.bin").string() << "\n";
  return 0;
}

int cmd_evaluate(const Resolved& r) {
  const DatasetBundle bundle = load_bundle(r.cfg);
  require(!r.cfg.checkpoint.empty(), ErrorKind::kConfig,
          "no checkpoint: pass --set checkpoint=<file> or set \"checkpoint\"");
  const Checkpoint ck = load_checkpoint(r.cfg.checkpoint);
  prepare_out(r);
  const std::vector<RolloutRecord> rollouts = run_policy(ck, bundle, r.cfg);
  write_rollouts(r.out / "rollouts.jsonl", rollouts);
  const RewardModel scorer = obtain_scorer(bundle, r);
  const MetricReport report = score_rollout(
      rollouts, bundle.split.test, scorer, bundle.vocab.hash(), r.cfg,
      r.echo);
  write_metric_report(r.out / "report.json", report);
  write_metric_table(r.out / "report.csv", report);
  std::cout << metric_table_to_string(report);
  std::cout << "wrote " << (r.out / "report.json").string() << "\n";
  return 0;
}

int cmd_ood(const Resolved& r) {
  const DatasetBundle bundle = load_bundle(r.cfg);
  prepare_out(r);
  const RewardModel scorer = obtain_scorer(bundle, r);

  const double threshold = r.cfg.ood.threshold;
  const std::vector<Trajectory>& original = bundle.split.train;
  std::vector<Trajectory> reduced = rebuild_filtered(
      original, [&](std::size_t u, std::size_t s) {
        return original[u].rewards[s] >= threshold;
      });

  std::vector<ExperimentRun> runs(2);
  runs[0].label = "original";
  runs[0].train_data = original;
  runs[1].label = "data_b";
  runs[1].train_data = std::move(reduced);
  execute_runs(runs, bundle, scorer, r);

  json report{{"version", 1},
              {"threshold", threshold},
              {"runs", json::array()},
              {"config_echo", r.echo}};
  std::string table =
      "label,train_users,train_steps,bleu,rouge,hr,ndcg,mb_urs,sb_urs,"
      "asb_urs,iur,nrc\n";
  for (const ExperimentRun& run : runs) {
    report["runs"].push_back(
        json{{"label", run.label},
             {"train_users", run.train_data.size()},
             {"train_steps", count_steps(run.train_data)},
             {"metrics", metrics_to_json(run.metrics)}});
    std::string row = run.label + ',' +
                      std::to_string(run.train_data.size()) + ',' +
                      std::to_string(count_steps(run.train_data));
    append_metric_columns(row, run.metrics);
    table += row + '\n';
  }
  write_text_file(r.out / "ood_report.json", report.dump(2) + "\n");
  write_text_file(r.out / "ood_report.csv", table);
  std::cout << table;
  std::cout << "wrote " << (r.out / "ood_report.json").string() << "\n";
  return 0;
}

std::string proportion_label(double p) {
  std::string text = shortest(p);
  std::replace(text.begin(), text.end(), '.', '_');
  return "p" + text;
}

int cmd_bc(const Resolved& r) {
  require(!r.cfg.bc.proportions.empty(), ErrorKind::kConfig,
          "bc needs at least one proportion");
  for (const double p : r.cfg.bc.proportions) {
    require(p > 0.0 && p <= 100.0, ErrorKind::kConfig,
            "proportions must lie in (0, 100], got " + shortest(p));
  }
  const DatasetBundle bundle = load_bundle(r.cfg);
  prepare_out(r);
  const RewardModel scorer = obtain_scorer(bundle, r);

  const std::vector<Trajectory>& original = bundle.split.train;
  // Every high-reward step, shuffled once; each proportion keeps a prefix,
  // so smaller shares are nested inside larger ones.
  std::vector<std::pair<std::size_t, std::size_t>> high;
  for (std::size_t u = 0; u < original.size(); ++u)
    for (std::size_t s = 0; s < original[u].rewards.size(); ++s)
      if (original[u].rewards[s] >= r.cfg.bc.high_min) high.push_back({u, s});
  auto rng = make_rng(r.cfg.seed, "bc-high-subset");
  std::shuffle(high.begin(), high.end(), rng);

  std::vector<ExperimentRun> runs(r.cfg.bc.proportions.size());
  std::vector<std::size_t> kept_counts(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double p = r.cfg.bc.proportions[i];
    const std::size_t n_keep = static_cast<std::size_t>(
        std::floor(static_cast<double>(high.size()) * p / 100.0 + 1e-9));
    std::set<std::pair<std::size_t, std::size_t>> chosen(
        high.begin(), high.begin() + static_cast<long>(n_keep));
    runs[i].label = proportion_label(p);
    runs[i].train_data = rebuild_filtered(
        original, [&](std::size_t u, std::size_t s) {
          return original[u].rewards[s] < r.cfg.bc.high_min ||
                 chosen.count({u, s}) > 0;
        });
    kept_counts[i] = n_keep;
  }
  execute_runs(runs, bundle, scorer, r);

  json report{{"version", 1},
              {"high_min", r.cfg.bc.high_min},
              {"n_high_total", high.size()},
              {"original_dataset_hash", hex64(dataset_hash(original))},
              {"runs", json::array()},
              {"config_echo", r.echo}};
  std::string table =
      "label,proportion,n_high_kept,train_users,train_steps,bleu,rouge,hr,"
      "ndcg,mb_urs,sb_urs,asb_urs,iur,nrc\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const ExperimentRun& run = runs[i];
    report["runs"].push_back(
        json{{"label", run.label},
             {"proportion", r.cfg.bc.proportions[i]},
             {"n_high_kept", kept_counts[i]},
             {"train_users", run.train_data.size()},
             {"train_steps", count_steps(run.train_data)},
             {"dataset_hash", hex64(dataset_hash(run.train_data))},
             {"metrics", metrics_to_json(run.metrics)}});
    std::string row = run.label + ',' + shortest(r.cfg.bc.proportions[i]) +
                      ',' + std::to_string(kept_counts[i]) + ',' +
                      std::to_string(run.train_data.size()) + ',' +
                      std::to_string(count_steps(run.train_data));
    append_metric_columns(row, run.metrics);
    table += row + '\n';
  }
  write_text_file(r.out / "bc_report.json", report.dump(2) + "\n");
  write_text_file(r.out / "bc_report.csv", table);
  std::cout << table;
  std::cout << "wrote " << (r.out / "bc_report.json").string() << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args) {
  require(!args.input.empty(), ErrorKind::kConfig,
          "report needs --input <report.json>");
  const MetricReport report =
      metric_report_from_json(read_text_file(args.input));
  std::cout << metric_table_to_string(report);
  if (!args.out.empty()) {
    std::error_code ec;
    fs::create_directories(args.out, ec);
    require(!ec, ErrorKind::kIo, "cannot create " + args.out);
    write_metric_table(fs::path(args.out) / "report.csv", report);
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"retention-conditioned sequence recommender"};
  app.require_subcommand(1);

  CommonArgs args;
  const auto add_common = [&args](CLI::App* sub) {
    sub->add_option("--config", args.config_path,
                    "JSON config document; missing fields keep defaults");
    sub->add_option("--set", args.sets,
                    "override one config field, as path.key=value")
        ->allow_extra_args(false);
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--seed", args.seed,
                    "pin every stage seed to this value");
    sub->add_option("--jobs", args.jobs, "parallel experiment runs");
  };

  CLI::App* synth = app.add_subcommand(
      "synth", "generate a synthetic interaction world and bundle it");
  add_common(synth);
  CLI::App* ingest =
      app.add_subcommand("ingest", "bundle a raw interaction log");
  add_common(ingest);
  CLI::App* train_cmd = app.add_subcommand(
      "train", "fit the recommender on a bundle's training split");
  add_common(train_cmd);
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "roll out a checkpoint and score it");
  add_common(evaluate);
  CLI::App* ood = app.add_subcommand(
      "ood", "compare training on full data against the high-reward subset");
  add_common(ood);
  CLI::App* bc = app.add_subcommand(
      "bc", "sweep the kept share of high-reward training samples");
  add_common(bc);
  CLI::App* report = app.add_subcommand(
      "report", "print a stored metric report as a flat table");
  report->add_option("--input", args.input, "report JSON file");
  report->add_option("--out", args.out, "also write report.csv here");

  for (CLI::App* sub : {train_cmd, ood, bc}) {
    sub->add_option("--ablate", args.ablate,
                    "train a variant: no_reward, no_contrastive, no_weight "
                    "or naive_prompt");
  }
  for (CLI::App* sub : {evaluate, ood, bc}) {
    sub->add_option("--variance", args.variance,
                    "split the test set N ways and report the variance");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "synth") return cmd_synth(resolve(args, name));
    if (name == "ingest") return cmd_ingest(resolve(args, name));
    if (name == "train") return cmd_train(resolve(args, name));
    if (name == "evaluate") return cmd_evaluate(resolve(args, name));
    if (name == "ood") return cmd_ood(resolve(args, name));
    if (name == "bc") return cmd_bc(resolve(args, name));
    if (name == "report") return cmd_report(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "unknown command '" << name << "'\n";
  return 2;
}

}  // namespace dtrec::cli
