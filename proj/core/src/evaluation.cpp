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
#include "dtrec/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <nlohmann/json.hpp>

#include "dtrec/action_decoder.hpp"
#include "dtrec/decision_block.hpp"
#include "dtrec/error.hpp"
#include "dtrec/rng.hpp"
#include "dtrec/serialize.hpp"

namespace dtrec {
namespace {

using nlohmann::json;

constexpr char kRewardModelMagic[] = "DTRECRWM";

std::unordered_map<int, int> count_items(const std::vector<int>& items) {
  std::unordered_map<int, int> counts;
  for (int item : items) ++counts[item];
  return counts;
}

double clipped_overlap(const std::vector<int>& pred,
                       const std::vector<int>& truth) {
  const auto truth_counts = count_items(truth);
  const auto pred_counts = count_items(pred);
  double matched = 0.0;
  for (const auto& [item, n_pred] : pred_counts) {
    if (auto it = truth_counts.find(item); it != truth_counts.end())
      matched += std::min(n_pred, it->second);
  }
  return matched;
}

int integer_reward_class(double reward) {
  const double rounded = std::llround(reward);
  require(std::abs(reward - rounded) <= 1e-9, ErrorKind::kDomain,
          "reward class must be an integer, got " + std::to_string(reward));
  return static_cast<int>(rounded);
}

std::string shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  require(ec == std::errc(), ErrorKind::kNumeric, "cannot format value");
  return std::string(buf, end);
}

}  // namespace

double bleu1(const std::vector<int>& pred, const std::vector<int>& truth) {
  require(!truth.empty(), ErrorKind::kDomain,
          "bleu1 needs a non-empty truth list");
  if (pred.empty()) return 0.0;
  return clipped_overlap(pred, truth) / static_cast<double>(pred.size());
}

double rouge1(const std::vector<int>& pred, const std::vector<int>& truth) {
  require(!truth.empty(), ErrorKind::kDomain,
          "rouge1 needs a non-empty truth list");
  return clipped_overlap(pred, truth) / static_cast<double>(truth.size());
}

double hr_at_k(const std::vector<int>& pred, const std::vector<int>& truth,
               int k) {
  require(k >= 1, ErrorKind::kDomain, "hr_at_k needs k >= 1");
  if (truth.empty()) return 0.0;
  const std::size_t cutoff =
      std::min(pred.size(), static_cast<std::size_t>(k));
  const std::unordered_set<int> top(pred.begin(),
                                    pred.begin() + static_cast<long>(cutoff));
  double hits = 0.0;
  for (int item : truth) hits += top.count(item) ? 1.0 : 0.0;
  return hits / static_cast<double>(truth.size());
}

double ndcg_at_k(const std::vector<int>& pred, const std::vector<int>& truth,
                 int k) {
  require(k >= 1, ErrorKind::kDomain, "ndcg_at_k needs k >= 1");
  if (truth.empty()) return 0.0;
  const std::unordered_set<int> truth_set(truth.begin(), truth.end());
  const std::size_t cutoff =
      std::min(pred.size(), static_cast<std::size_t>(k));
  double dcg = 0.0;
  for (std::size_t pos = 0; pos < cutoff; ++pos) {
    if (truth_set.count(pred[pos]))
      dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  }
  const std::size_t ideal_hits =
      std::min(truth.size(), static_cast<std::size_t>(k));
  double idcg = 0.0;
  for (std::size_t pos = 0; pos < ideal_hits; ++pos)
    idcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  return dcg / idcg;
}

namespace {

// Mean BLEU-1 and size per populated reward class.
std::unordered_map<int, std::pair<double, int>> class_similarities(
    const std::vector<RewardClassSample>& samples, int horizon) {
  require(horizon >= 1, ErrorKind::kConfig, "horizon must be positive");
  std::unordered_map<int, std::pair<double, int>> classes;
  for (const RewardClassSample& s : samples) {
    require(s.reward_class >= 0 && s.reward_class <= horizon,
            ErrorKind::kDomain,
            "reward class " + std::to_string(s.reward_class) +
                " outside [0, " + std::to_string(horizon) + "]");
    auto& [sum, count] = classes[s.reward_class];
    sum += bleu1(s.pred, s.truth);
    ++count;
  }
  return classes;
}

}  // namespace

double sb_urs(const std::vector<RewardClassSample>& samples, int horizon) {
  const auto classes = class_similarities(samples, horizon);
  double score = 0.0;
  for (const auto& [k, stat] : classes) {
    const double s_k = stat.first / static_cast<double>(stat.second);
    score += s_k * (static_cast<double>(k) - horizon / 2.0) * stat.second;
  }
  return score;
}

double asb_urs(const std::vector<RewardClassSample>& samples, int horizon) {
  if (samples.empty()) {
    std::cerr << "asb_urs: no samples, reporting 0\n";
    return 0.0;
  }
  const auto classes = class_similarities(samples, horizon);
  double score = 0.0;
  for (const auto& [k, stat] : classes) {
    const double s_k = stat.first / static_cast<double>(stat.second);
    score += s_k * (static_cast<double>(k) - horizon / 2.0);
  }
  return score;
}

RewardHead RewardHead::create(int dim, std::mt19937_64& rng) {
  require(dim > 0, ErrorKind::kConfig, "reward head needs a positive dim");
  RewardHead h;
  h.W1 = ad::Mat(dim, dim);
  init_uniform(h.W1, rng, dim);
  h.b1 = ad::Mat::Zero(1, dim);
  h.W2 = ad::Mat(dim, 1);
  init_uniform(h.W2, rng, dim);
  h.b2 = ad::Mat::Zero(1, 1);
  return h;
}

void RewardHead::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".W1", &W1});
  out.push_back({prefix + ".b1", &b1});
  out.push_back({prefix + ".W2", &W2});
  out.push_back({prefix + ".b2", &b2});
}

void RewardTrainConfig::validate() const {
  model.validate();
  require(learning_rate >= 0.0, ErrorKind::kConfig,
          "learning rate must be non-negative");
  require(weight_decay >= 0.0, ErrorKind::kConfig,
          "weight decay must be non-negative");
  require(clip_norm > 0.0, ErrorKind::kConfig, "clip norm must be positive");
  require(epochs >= 1, ErrorKind::kConfig, "epochs must be at least 1");
  require(batch_size >= 1, ErrorKind::kConfig,
          "batch size must be at least 1");
  if (!allow_any_trajectory_len) {
    const int t = model.max_trajectory_len;
    require(t == 10 || t == 20 || t == 30 || t == 40 || t == 50,
            ErrorKind::kConfig,
            "trajectory length must be one of {10, 20, 30, 40, 50}; set "
            "allow_any_trajectory_len to override");
  }
}

void RewardModel::collect_params(ParamList& out) {
  backbone.collect_params(out);
  head.collect("head", out);
}

ad::Var predict_rewards(ad::Tape& t, const RewardModel& m,
                        const std::vector<std::vector<int>>& states,
                        const std::vector<std::vector<int>>& actions,
                        const std::vector<double>& rewards,
                        std::mt19937_64* dropout_rng) {
  const int steps = static_cast<int>(states.size());
  require(steps > 0, ErrorKind::kShape, "reward prediction needs steps");
  require(static_cast<int>(actions.size()) == steps &&
              static_cast<int>(rewards.size()) == steps,
          ErrorKind::kShape, "state/action/reward lengths differ");
  for (double r : rewards) {
    require(r >= 0.0 && r <= static_cast<double>(m.config.model.horizon),
            ErrorKind::kDomain, "reward outside [0, horizon]");
  }

  Trajectory tmp;
  tmp.rewards = rewards;
  tmp.states = states;
  tmp.actions = actions;
  const StepEncodings enc = encode_steps(t, m.backbone, tmp);
  const std::vector<ad::Var> reward_embs =
      reward_tokens(t, m.backbone, rewards, AblationFlags{});

  const TokenizedTrajectory tok = interleave_state_action_reward(
      t, m.backbone.block, enc.states, enc.actions, reward_embs);
  ForwardOptions options;
  options.dropout_rng = dropout_rng;
  const ad::Var reconstructed = decision_forward_rows(
      t, m.backbone.block, tok, tok.action_positions, options);

  const ad::Var hidden = t.gelu(t.add_rowvec(
      t.matmul(reconstructed, t.param(m.head.W1)), t.param(m.head.b1)));
  return t.add_rowvec(t.matmul(hidden, t.param(m.head.W2)),
                      t.param(m.head.b2));
}

RewardModel train_reward_model(const std::vector<Trajectory>& validation,
                               const RewardTrainConfig& config,
                               std::uint64_t vocab_hash, int vocab_size,
                               const std::vector<Trajectory>* train_split) {
  config.validate();
  require(!validation.empty(), ErrorKind::kConfig,
          "reward model training needs a non-empty validation split");
  if (train_split != nullptr) {
    std::set<std::string> train_users;
    for (const Trajectory& traj : *train_split)
      train_users.insert(traj.user_id);
    for (const Trajectory& traj : validation) {
      require(!train_users.count(traj.user_id), ErrorKind::kConfig,
              "reward model must not see training-split user " +
                  traj.user_id);
    }
  }

  std::vector<Trajectory> capped;
  capped.reserve(validation.size());
  for (const Trajectory& traj : validation) {
    require(traj.length() > 0, ErrorKind::kDegenerate,
            "validation trajectory without steps: user " + traj.user_id);
    capped.push_back(cap_trajectory(traj, config.model.max_trajectory_len));
  }

  RewardModel rm;
  rm.config = config;
  rm.vocab_hash = vocab_hash;
  rm.vocab_size = vocab_size;
  rm.backbone = SequenceModel::create(config.model, vocab_size, config.seed);
  auto head_rng = make_rng(config.seed, "reward-head-init");
  rm.head = RewardHead::create(config.model.dim, head_rng);

  ParamList params;
  rm.collect_params(params);
  AdamW optimizer(params, {config.learning_rate, config.weight_decay,
                           config.clip_norm, 0.9, 0.999, 1e-8});
  GradientAccumulator acc(optimizer.params());

  auto shuffle_rng = make_rng(config.seed, "reward-shuffle");
  auto dropout_rng = make_rng(config.seed, "reward-dropout");

  std::vector<std::size_t> order(capped.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      acc.reset();
      for (std::size_t pos = start; pos < stop; ++pos) {
        const Trajectory& traj = capped[order[pos]];
        ad::Tape tape;
        const ad::Var pred = predict_rewards(
            tape, rm, traj.states, traj.actions, traj.rewards,
            config.model.dropout > 0.0 ? &dropout_rng : nullptr);
        ad::Mat target(traj.length(), 1);
        for (int i = 0; i < traj.length(); ++i)
          target(i, 0) = traj.rewards[static_cast<std::size_t>(i)];
        const ad::Var loss = tape.mse(pred, target);
        const double value = tape.val(loss)(0, 0);
        if (!std::isfinite(value)) {
          fail(ErrorKind::kNumeric,
               "non-finite reward-model loss at epoch " +
                   std::to_string(epoch));
        }
        tape.backward(loss);
        acc.add(tape);
        epoch_sum += value;
      }
      acc.scale(1.0 / static_cast<double>(stop - start));
      optimizer.apply(acc.grads());
    }
    for (const ParamRef& p : params) {
      require(p.mat->allFinite(), ErrorKind::kNumeric,
              "non-finite reward-model parameter " + p.name + " after epoch " +
                  std::to_string(epoch));
    }
    rm.history.push_back(epoch_sum / static_cast<double>(capped.size()));
    rm.epoch = epoch;
  }
  return rm;
}

std::string reward_config_to_json(const RewardTrainConfig& c) {
  json j{{"model", json::parse(model_config_to_json(c.model))},
         {"learning_rate", c.learning_rate},
         {"weight_decay", c.weight_decay},
         {"clip_norm", c.clip_norm},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"allow_any_trajectory_len", c.allow_any_trajectory_len}};
  return j.dump(2);
}

RewardTrainConfig reward_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("invalid config JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  static const std::vector<std::string> kKeys = {
      "model",      "learning_rate", "weight_decay",
      "clip_norm",  "epochs",        "batch_size",
      "seed",       "allow_any_trajectory_len"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const std::string& k : kKeys) known = known || k == key;
    require(known, ErrorKind::kConfig,
            "unknown reward config key: " + key);
  }
  RewardTrainConfig c;
  try {
    if (auto it = j.find("model"); it != j.end())
      c.model = model_config_from_json(it->dump());
    if (auto it = j.find("learning_rate"); it != j.end())
      c.learning_rate = it->get<double>();
    if (auto it = j.find("weight_decay"); it != j.end())
      c.weight_decay = it->get<double>();
    if (auto it = j.find("clip_norm"); it != j.end())
      c.clip_norm = it->get<double>();
    if (auto it = j.find("epochs"); it != j.end()) c.epochs = it->get<int>();
    if (auto it = j.find("batch_size"); it != j.end())
      c.batch_size = it->get<int>();
    if (auto it = j.find("seed"); it != j.end())
      c.seed = it->get<std::uint64_t>();
    if (auto it = j.find("allow_any_trajectory_len"); it != j.end())
      c.allow_any_trajectory_len = it->get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
  return c;
}

void save_reward_model(const std::filesystem::path& path, RewardModel& model) {
  ParamList params;
  model.collect_params(params);
  json header{{"config", json::parse(reward_config_to_json(model.config))},
              {"vocab_hash", model.vocab_hash},
              {"vocab_size", model.vocab_size},
              {"epoch", model.epoch},
              {"history", model.history}};
  write_params_file(path, kRewardModelMagic, header.dump(), params);
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  const LoadedParams loaded =
      read_params_file(path, kRewardModelMagic, "reward model");

  json header = json::parse(loaded.header_json);
  RewardModel rm;
  try {
    rm.config = reward_config_from_json(header.at("config").dump());
    rm.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
    rm.vocab_size = header.at("vocab_size").get<int>();
    rm.epoch = header.at("epoch").get<int>();
    rm.history = header.at("history").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat,
         std::string("bad reward-model header: ") + e.what());
  }

  rm.backbone = SequenceModel::create(rm.config.model, rm.vocab_size,
                                      rm.config.seed);
  auto head_rng = make_rng(rm.config.seed, "reward-head-init");
  rm.head = RewardHead::create(rm.config.model.dim, head_rng);
  ParamList params;
  rm.collect_params(params);
  assign_params(loaded, params, "reward model");
  return rm;
}

RetentionEstimate estimate_retention(const std::vector<RolloutRecord>& rollouts,
                                     const std::vector<Trajectory>& test_set,
                                     const RewardModel& model,
                                     std::uint64_t dataset_vocab_hash) {
  require(!rollouts.empty(), ErrorKind::kDegenerate,
          "retention estimation needs rollout records");
  require(model.vocab_hash == dataset_vocab_hash, ErrorKind::kCompatibility,
          "reward model was trained on a different vocabulary");

  std::unordered_map<std::string, const Trajectory*> by_user;
  for (const Trajectory& traj : test_set) {
    require(by_user.emplace(traj.user_id, &traj).second, ErrorKind::kFormat,
            "duplicate user in the test split: " + traj.user_id);
  }

  // Records arrive grouped per user with 1-based consecutive rounds.
  std::vector<std::pair<std::string, std::vector<const RolloutRecord*>>> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  for (const RolloutRecord& rec : rollouts) {
    auto [it, fresh] = group_of.emplace(rec.user_id, groups.size());
    if (fresh) groups.push_back({rec.user_id, {}});
    groups[it->second].second.push_back(&rec);
  }

  RetentionEstimate est;
  double predicted_sum = 0.0;
  double logged_sum = 0.0;
  std::size_t total_steps = 0;
  for (auto& [user, recs] : groups) {
    const auto found = by_user.find(user);
    require(found != by_user.end(), ErrorKind::kFormat,
            "rollout user missing from the test split: " + user);
    const int n = static_cast<int>(recs.size());
    Trajectory capped = cap_trajectory(*found->second, n);
    require(capped.length() == n, ErrorKind::kFormat,
            "rollout has more rounds than the log for user " + user);

    std::vector<std::vector<int>> actions;
    actions.reserve(recs.size());
    for (int i = 0; i < n; ++i) {
      const RolloutRecord& rec = *recs[static_cast<std::size_t>(i)];
      const std::size_t s = static_cast<std::size_t>(i);
      require(rec.round == i + 1 && rec.logged == capped.actions[s] &&
                  rec.logged_reward == capped.rewards[s],
              ErrorKind::kFormat,
              "rollout records do not align with the log for user " + user);
      actions.push_back(rec.generated);
    }

    // The scorer has its own length budget; keep the most recent steps.
    const int budget = model.config.model.max_trajectory_len;
    std::vector<std::vector<int>> states = capped.states;
    std::vector<double> rewards = capped.rewards;
    if (n > budget) {
      const std::size_t drop = static_cast<std::size_t>(n - budget);
      states.erase(states.begin(), states.begin() + static_cast<long>(drop));
      actions.erase(actions.begin(), actions.begin() + static_cast<long>(drop));
      rewards.erase(rewards.begin(), rewards.begin() + static_cast<long>(drop));
    }

    ad::Tape t;
    const ad::Var pred = predict_rewards(t, model, states, actions, rewards);
    const ad::Mat& values = t.val(pred);
    double user_sum = 0.0;
    for (long i = 0; i < values.rows(); ++i) user_sum += values(i, 0);
    for (double r : rewards) logged_sum += r;
    predicted_sum += user_sum;
    total_steps += static_cast<std::size_t>(values.rows());

    est.users.push_back(user);
    est.per_user_predicted.push_back(user_sum /
                                     static_cast<double>(values.rows()));
  }
  est.predicted_mean = predicted_sum / static_cast<double>(total_steps);
  est.logged_mean = logged_sum / static_cast<double>(total_steps);
  return est;
}

double mb_urs(const std::vector<RolloutRecord>& rollouts,
              const std::vector<Trajectory>& test_set, const RewardModel& model,
              std::uint64_t dataset_vocab_hash) {
  return estimate_retention(rollouts, test_set, model, dataset_vocab_hash)
      .predicted_mean;
}

double iur(double predicted_mean, double logged_mean) {
  require(logged_mean > 0.0, ErrorKind::kDomain,
          "relative improvement needs a positive logged retention");
  return 100.0 * (predicted_mean - logged_mean) / logged_mean;
}

double nrc(const std::vector<double>& per_user_predicted, double threshold) {
  require(threshold >= 0.0, ErrorKind::kDomain,
          "churn threshold must be non-negative");
  require(!per_user_predicted.empty(), ErrorKind::kDegenerate,
          "churn rate needs per-user predictions");
  double below = 0.0;
  for (double value : per_user_predicted)
    below += value < threshold ? 1.0 : 0.0;
  return 100.0 * below / static_cast<double>(per_user_predicted.size());
}

std::vector<std::vector<std::size_t>> partition_users(
    const std::vector<Trajectory>& test_set, int n_splits,
    std::uint64_t seed) {
  require(n_splits >= 1, ErrorKind::kConfig, "need at least one split");
  require(test_set.size() >= static_cast<std::size_t>(n_splits),
          ErrorKind::kConfig, "fewer users than splits");
  std::vector<std::size_t> order(test_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, "variance-split");
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> groups(
      static_cast<std::size_t>(n_splits));
  const std::size_t base = order.size() / static_cast<std::size_t>(n_splits);
  const std::size_t extra = order.size() % static_cast<std::size_t>(n_splits);
  std::size_t cursor = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) groups[g].push_back(order[cursor++]);
  }
  return groups;
}

VarianceReport variance_analysis(const MetricFn& metric,
                                 const std::vector<Trajectory>& test_set,
                                 int n_splits, std::uint64_t seed) {
  require(static_cast<bool>(metric), ErrorKind::kConfig,
          "variance analysis needs a metric");
  const auto groups = partition_users(test_set, n_splits, seed);

  VarianceReport report;
  for (const auto& group : groups) {
    std::vector<Trajectory> subset;
    subset.reserve(group.size());
    for (std::size_t idx : group) subset.push_back(test_set[idx]);
    report.per_split.push_back(metric(subset));
  }
  const double n = static_cast<double>(report.per_split.size());
  const double mean =
      std::accumulate(report.per_split.begin(), report.per_split.end(), 0.0) /
      n;
  double ss = 0.0;
  for (double v : report.per_split) ss += (v - mean) * (v - mean);
  report.variance = ss / n;
  return report;
}

MetricValues compute_metric_values(const MetricInputs& inputs) {
  require(inputs.rollouts != nullptr && inputs.test_set != nullptr &&
              inputs.reward_model != nullptr,
          ErrorKind::kConfig, "metric inputs are incomplete");
  const auto& rollouts = *inputs.rollouts;
  require(!rollouts.empty(), ErrorKind::kDegenerate,
          "metric computation needs rollout records");

  const int horizon = inputs.reward_model->config.model.horizon;
  MetricValues values;
  std::vector<RewardClassSample> samples;
  std::size_t scored = 0;
  for (const RolloutRecord& rec : rollouts) {
    if (rec.logged.empty()) continue;  // nothing to match this round
    values.bleu += bleu1(rec.generated, rec.logged);
    values.rouge += rouge1(rec.generated, rec.logged);
    values.hr += hr_at_k(rec.generated, rec.logged, inputs.top_k);
    values.ndcg += ndcg_at_k(rec.generated, rec.logged, inputs.top_k);
    samples.push_back(
        {rec.generated, rec.logged, integer_reward_class(rec.logged_reward)});
    ++scored;
  }
  require(scored > 0, ErrorKind::kDegenerate,
          "no rollout round carries logged items to score against");
  values.bleu /= static_cast<double>(scored);
  values.rouge /= static_cast<double>(scored);
  values.hr /= static_cast<double>(scored);
  values.ndcg /= static_cast<double>(scored);

  values.sb_urs = sb_urs(samples, horizon);
  values.asb_urs = asb_urs(samples, horizon);

  const RetentionEstimate est = estimate_retention(
      rollouts, *inputs.test_set, *inputs.reward_model, inputs.vocab_hash);
  values.mb_urs = est.predicted_mean;
  values.iur = iur(est.predicted_mean, est.logged_mean);
  values.nrc = nrc(est.per_user_predicted, inputs.nrc_threshold);
  return values;
}

namespace {

json values_to_json(const MetricValues& v) {
  const double all[] = {v.bleu,   v.rouge,  v.hr,  v.ndcg, v.mb_urs,
                        v.sb_urs, v.asb_urs, v.iur, v.nrc};
  for (double x : all) {
    require(std::isfinite(x), ErrorKind::kNumeric,
            "metric report holds a non-finite value");
  }
  return json{{"bleu", v.bleu},       {"rouge", v.rouge},
              {"hr", v.hr},           {"ndcg", v.ndcg},
              {"mb_urs", v.mb_urs},   {"sb_urs", v.sb_urs},
              {"asb_urs", v.asb_urs}, {"iur", v.iur},
              {"nrc", v.nrc}};
}

MetricValues values_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kFormat, "metric values must be objects");
  static const std::vector<std::string> kKeys = {
      "bleu", "rouge", "hr", "ndcg", "mb_urs",
      "sb_urs", "asb_urs", "iur", "nrc"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const std::string& k : kKeys) known = known || k == key;
    require(known, ErrorKind::kFormat, "unknown metric key: " + key);
  }
  MetricValues v;
  try {
    v.bleu = j.at("bleu").get<double>();
    v.rouge = j.at("rouge").get<double>();
    v.hr = j.at("hr").get<double>();
    v.ndcg = j.at("ndcg").get<double>();
    v.mb_urs = j.at("mb_urs").get<double>();
    v.sb_urs = j.at("sb_urs").get<double>();
    v.asb_urs = j.at("asb_urs").get<double>();
    v.iur = j.at("iur").get<double>();
    v.nrc = j.at("nrc").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad metric values: ") + e.what());
  }
  return v;
}

void append_table_row(std::string& out, const std::string& scope,
                      const MetricValues& v) {
  out += scope;
  for (double x : {v.bleu, v.rouge, v.hr, v.ndcg, v.mb_urs, v.sb_urs,
                   v.asb_urs, v.iur, v.nrc}) {
    out += ',';
    out += shortest(x);
  }
  out += '\n';
}

}  // namespace

std::string metric_report_to_json(const MetricReport& report) {
  json j{{"version", 1},
         {"overall", values_to_json(report.overall)},
         {"top_k", report.top_k},
         {"nrc_threshold", report.nrc_threshold},
         {"config_echo", report.config_echo}};
  if (report.has_variance()) {
    json splits = json::array();
    for (const MetricValues& v : report.per_split)
      splits.push_back(values_to_json(v));
    j["splits"] = splits;
    j["variance"] = values_to_json(report.split_variance);
  }
  return j.dump(2) + "\n";
}

MetricReport metric_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("invalid report JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kFormat, "report must be a JSON object");
  static const std::vector<std::string> kKeys = {
      "version", "overall", "top_k", "nrc_threshold", "config_echo",
      "splits",  "variance"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const std::string& k : kKeys) known = known || k == key;
    require(known, ErrorKind::kFormat, "unknown report key: " + key);
  }
  require(j.contains("splits") == j.contains("variance"), ErrorKind::kFormat,
          "report must hold splits and variance together");
  MetricReport report;
  try {
    require(j.at("version").get<int>() == 1, ErrorKind::kFormat,
            "unsupported report version");
    report.overall = values_from_json(j.at("overall"));
    report.top_k = j.at("top_k").get<int>();
    report.nrc_threshold = j.at("nrc_threshold").get<double>();
    report.config_echo = j.at("config_echo").get<std::string>();
    if (auto it = j.find("splits"); it != j.end()) {
      for (const json& s : *it) report.per_split.push_back(values_from_json(s));
      report.split_variance = values_from_json(j.at("variance"));
      require(!report.per_split.empty(), ErrorKind::kFormat,
              "split table must not be empty");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad report: ") + e.what());
  }
  return report;
}

void write_metric_report(const std::filesystem::path& path,
                         const MetricReport& report) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << metric_report_to_json(report);
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

std::string metric_table_to_string(const MetricReport& report) {
  std::string text =
      "scope,bleu,rouge,hr,ndcg,mb_urs,sb_urs,asb_urs,iur,nrc\n";
  append_table_row(text, "overall", report.overall);
  for (std::size_t i = 0; i < report.per_split.size(); ++i)
    append_table_row(text, "split" + std::to_string(i + 1),
                     report.per_split[i]);
  if (report.has_variance())
    append_table_row(text, "variance", report.split_variance);
  return text;
}

void write_metric_table(const std::filesystem::path& path,
                        const MetricReport& report) {
  const std::string text = metric_table_to_string(report);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace dtrec
