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

#include <string>
#include <vector>

namespace dtrec {

// One interaction round: the items a user engaged with for the first time
// during one interval, plus the login pattern over the following horizon.
struct Round {
  int round_index = 0;              // 1-based position in the user's history
  std::vector<int> new_items;       // vocabulary indices, first-seen order
  std::vector<int> login_flags;     // one 0/1 flag per horizon interval
};

struct UserHistory {
  std::string user_id;
  std::vector<Round> rounds;
};

// A training trajectory: per-step return-to-go, state window and action set.
struct Trajectory {
  std::string user_id;
  std::vector<double> rewards;                 // e_t, one per step
  std::vector<double> return_to_go;            // suffix sums of rewards
  std::vector<std::vector<int>> states;        // recent items before the step
  std::vector<std::vector<int>> actions;       // items recommended at the step
  int length() const { return static_cast<int>(rewards.size()); }
};

// Number of logins in the horizon following a round.
double compute_retention(const Round& round);

// Suffix sums: out[t] = rewards[t] + ... + rewards[T-1].
std::vector<double> compute_return_to_go(const std::vector<double>& rewards);

// Sliding interaction window: appends the action items and keeps the most
// recent `window` entries.
std::vector<int> update_state(const std::vector<int>& state,
                              const std::vector<int>& action, int window);

// Builds the trajectory for one user. The state at step t accumulates the
// items of rounds 1..t-1 (capped to `state_window`); the action at step t is
// round t's items; the reward is the round's login count over the horizon.
Trajectory build_trajectory(const UserHistory& history, int state_window);

// Keeps the most recent `max_len` steps and recomputes return-to-go over the
// kept suffix. A trajectory at or under the cap is returned unchanged.
Trajectory cap_trajectory(const Trajectory& full, int max_len);

}  // namespace dtrec
