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
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtrec/trajectory.hpp"
#include "dtrec/training.hpp"

namespace dtrec {

// How the reward tokens of an inference prefix are chosen. kMaxConstant
// prompts every step with the largest return still reachable from it;
// kDecrementingReturnToGo starts from that budget and subtracts each
// observed reward.
enum class TargetRewardRule { kMaxConstant, kDecrementingReturnToGo };

struct DecodeSettings {
  int max_items = 0;     // 0 selects the checkpoint's action limit
  bool allow_eos = true;  // off forces fixed-length decodes
};

// A frozen checkpoint plus the inference-time prompt and decode choices.
// The checkpoint must outlive the policy. prompt_scale multiplies every
// reward-token value of the schedule; 0 probes the policy with the return
// conditioning removed (the comparison point for reward sensitivity).
struct RecommendationPolicy {
  const Checkpoint* checkpoint = nullptr;
  TargetRewardRule rule = TargetRewardRule::kMaxConstant;
  DecodeSettings decode;
  double prompt_scale = 1.0;
};

// Binds a checkpoint to a dataset. The dataset's vocabulary hash must match
// the one recorded at training time.
RecommendationPolicy make_policy(
    const Checkpoint& checkpoint, std::uint64_t dataset_vocab_hash,
    TargetRewardRule rule = TargetRewardRule::kMaxConstant,
    DecodeSettings decode = {});

// One completed round of context: the retention observed after it, the
// state window it was served from and the items it contained.
struct HistoryStep {
  double reward = 0.0;
  std::vector<int> state;
  std::vector<int> action;
};

// Reward-token values for an inference prefix covering the completed rounds
// plus the current one (size observed_rewards.size() + 1). Step i of a
// length-T budget can still earn at most horizon * (T - i), which is the
// kMaxConstant value; kDecrementingReturnToGo instead lowers the initial
// horizon * T by every reward already observed.
std::vector<double> prompt_schedule(
    TargetRewardRule rule, int horizon, int max_trajectory_len,
    const std::vector<double>& observed_rewards);

// Recommends items for the current round given the completed rounds so
// far. Builds the prefix [r_1, s_1, a_1, ..., r_t, s_t] with reward tokens
// from the policy's rule, runs the decision block and decodes greedily.
// Returns at most the decode limit's item indices, never special tokens.
std::vector<int> recommend(const RecommendationPolicy& policy,
                           const std::vector<HistoryStep>& history,
                           const std::vector<int>& current_state);

struct RolloutOptions {
  // Replay history with the generated actions instead of the logged ones,
  // rebuilding each state window from what was actually recommended.
  // Rewards stay logged either way; there is no reward simulator here.
  bool feedback = false;
};

// One evaluated round: what the policy generated next to what the log shows.
struct RolloutRecord {
  std::string user_id;
  int round = 0;  // 1-based within the capped trajectory
  std::vector<int> generated;
  std::vector<int> logged;
  double logged_reward = 0.0;
};

// Generates a recommendation for every round of every test trajectory,
// conditioning on the history before that round. Trajectories longer than
// the model's length cap keep their most recent steps. Deterministic.
std::vector<RolloutRecord> rollout(const RecommendationPolicy& policy,
                                   const std::vector<Trajectory>& test_set,
                                   const RolloutOptions& options = {});

// Line-delimited records; read rejects unknown or missing fields.
void write_rollouts(const std::filesystem::path& path,
                    const std::vector<RolloutRecord>& records);
std::vector<RolloutRecord> read_rollouts(const std::filesystem::path& path);

}  // namespace dtrec
