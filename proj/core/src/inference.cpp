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
#include "dtrec/inference.hpp"

#include <fstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "dtrec/action_decoder.hpp"
#include "dtrec/decision_block.hpp"
#include "dtrec/encoders.hpp"
#include "dtrec/error.hpp"
#include "dtrec/model.hpp"
#include "dtrec/tape.hpp"

namespace dtrec {
namespace {

using nlohmann::json;

void validate_decode(const DecodeSettings& decode, const ModelConfig& config) {
  require(decode.max_items >= 0 &&
              decode.max_items <= config.action_limit,
          ErrorKind::kConfig,
          "decode length must lie in [0, action_limit]");
}

int decode_length(const RecommendationPolicy& policy) {
  const int limit = policy.checkpoint->config.model.action_limit;
  return policy.decode.max_items == 0 ? limit : policy.decode.max_items;
}

}  // namespace

RecommendationPolicy make_policy(const Checkpoint& checkpoint,
                                 std::uint64_t dataset_vocab_hash,
                                 TargetRewardRule rule,
                                 DecodeSettings decode) {
  require(checkpoint.vocab_hash == dataset_vocab_hash,
          ErrorKind::kCompatibility,
          "checkpoint was trained on a different vocabulary");
  validate_decode(decode, checkpoint.config.model);
  RecommendationPolicy policy;
  policy.checkpoint = &checkpoint;
  policy.rule = rule;
  policy.decode = decode;
  return policy;
}

std::vector<double> prompt_schedule(
    TargetRewardRule rule, int horizon, int max_trajectory_len,
    const std::vector<double>& observed_rewards) {
  require(horizon >= 1, ErrorKind::kConfig, "horizon must be positive");
  require(max_trajectory_len >= 1, ErrorKind::kConfig,
          "trajectory length cap must be positive");
  const int n_observed = static_cast<int>(observed_rewards.size());
  require(n_observed < max_trajectory_len, ErrorKind::kShape,
          "history already fills the trajectory length cap");
  for (double r : observed_rewards) {
    require(r >= 0.0 && r <= static_cast<double>(horizon),
            ErrorKind::kDomain, "observed reward outside [0, horizon]");
  }
  std::vector<double> schedule(static_cast<std::size_t>(n_observed) + 1);
  if (rule == TargetRewardRule::kMaxConstant) {
    for (int i = 0; i <= n_observed; ++i) {
      schedule[static_cast<std::size_t>(i)] =
          static_cast<double>(horizon) * (max_trajectory_len - i);
    }
  } else {
    double budget = static_cast<double>(horizon) * max_trajectory_len;
    schedule[0] = budget;
    for (int i = 1; i <= n_observed; ++i) {
      budget -= observed_rewards[static_cast<std::size_t>(i - 1)];
      schedule[static_cast<std::size_t>(i)] = budget;
    }
  }
  return schedule;
}

std::vector<int> recommend(const RecommendationPolicy& policy,
                           const std::vector<HistoryStep>& history,
                           const std::vector<int>& current_state) {
  require(policy.checkpoint != nullptr, ErrorKind::kConfig,
          "policy has no checkpoint");
  const Checkpoint& ck = *policy.checkpoint;
  const SequenceModel& m = ck.model;
  const ModelConfig& mc = m.config;
  validate_decode(policy.decode, mc);

  require(policy.prompt_scale >= 0.0, ErrorKind::kConfig,
          "prompt scale must be non-negative");

  std::vector<double> observed;
  observed.reserve(history.size());
  for (const HistoryStep& step : history) observed.push_back(step.reward);
  std::vector<double> schedule = prompt_schedule(
      policy.rule, mc.horizon, mc.max_trajectory_len, observed);
  for (double& value : schedule) value *= policy.prompt_scale;

  ad::Tape t;
  const std::vector<ad::Var> rewards =
      reward_tokens(t, m, schedule, ck.config.ablate);
  std::vector<ad::Var> states;
  std::vector<ad::Var> actions;
  states.reserve(history.size() + 1);
  actions.reserve(history.size());
  for (const HistoryStep& step : history) {
    states.push_back(encode_sequence(t, m.state_gru, m.state_items, step.state,
                                     mc.state_window, mc.last_valid_state));
    actions.push_back(encode_sequence(t, m.action_gru, m.action_table(),
                                      step.action, mc.action_limit,
                                      mc.last_valid_state));
  }
  states.push_back(encode_sequence(t, m.state_gru, m.state_items,
                                   current_state, mc.state_window,
                                   mc.last_valid_state));

  const TokenizedTrajectory tok =
      interleave(t, m.block, rewards, states, actions);
  const ad::Var predicted = decision_forward(t, m.block, tok);
  const ad::Mat& all_steps = t.val(predicted);
  const ad::Mat a_tilde = all_steps.row(all_steps.rows() - 1);
  return decode_autoregressive(m.decoder, m.action_table(), a_tilde,
                               decode_length(policy), policy.decode.allow_eos);
}

std::vector<RolloutRecord> rollout(const RecommendationPolicy& policy,
                                   const std::vector<Trajectory>& test_set,
                                   const RolloutOptions& options) {
  require(policy.checkpoint != nullptr, ErrorKind::kConfig,
          "policy has no checkpoint");
  const ModelConfig& mc = policy.checkpoint->config.model;
  std::vector<RolloutRecord> records;
  for (const Trajectory& full : test_set) {
    require(full.length() > 0, ErrorKind::kDegenerate,
            "empty trajectory in the test set");
    const Trajectory traj = cap_trajectory(full, mc.max_trajectory_len);
    std::vector<HistoryStep> history;
    history.reserve(static_cast<std::size_t>(traj.length()));
    std::vector<int> state = traj.states[0];
    for (int step = 0; step < traj.length(); ++step) {
      const std::size_t s = static_cast<std::size_t>(step);
      const std::vector<int>& current =
          options.feedback ? state : traj.states[s];
      RolloutRecord rec;
      rec.user_id = traj.user_id;
      rec.round = step + 1;
      rec.generated = recommend(policy, history, current);
      rec.logged = traj.actions[s];
      rec.logged_reward = traj.rewards[s];
      history.push_back({traj.rewards[s], current,
                         options.feedback ? rec.generated : traj.actions[s]});
      if (options.feedback) {
        state = update_state(state, rec.generated, mc.state_window);
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void write_rollouts(const std::filesystem::path& path,
                    const std::vector<RolloutRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo,
          "cannot write rollouts to " + path.string());
  for (const RolloutRecord& rec : records) {
    json line;
    line["user"] = rec.user_id;
    line["round"] = rec.round;
    line["generated"] = rec.generated;
    line["logged"] = rec.logged;
    line["logged_reward"] = rec.logged_reward;
    out << line.dump() << "\n";
  }
  require(out.good(), ErrorKind::kIo,
          "write failed for " + path.string());
}

std::vector<RolloutRecord> read_rollouts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo,
          "cannot read rollouts from " + path.string());
  std::vector<RolloutRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json parsed;
    try {
      parsed = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, "rollout line " + std::to_string(line_no) +
                                   ": " + e.what());
    }
    static const std::vector<std::string> kKeys = {
        "generated", "logged", "logged_reward", "round", "user"};
    for (const auto& [key, value] : parsed.items()) {
      (void)value;
      bool known = false;
      for (const std::string& k : kKeys) known = known || k == key;
      require(known, ErrorKind::kFormat,
              "rollout line " + std::to_string(line_no) +
                  ": unknown field " + key);
    }
    for (const std::string& k : kKeys) {
      require(parsed.contains(k), ErrorKind::kFormat,
              "rollout line " + std::to_string(line_no) +
                  ": missing field " + k);
    }
    try {
      RolloutRecord rec;
      rec.user_id = parsed.at("user").get<std::string>();
      rec.round = parsed.at("round").get<int>();
      rec.generated = parsed.at("generated").get<std::vector<int>>();
      rec.logged = parsed.at("logged").get<std::vector<int>>();
      rec.logged_reward = parsed.at("logged_reward").get<double>();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, "rollout line " + std::to_string(line_no) +
                                   ": " + e.what());
    }
  }
  return records;
}

}  // namespace dtrec
