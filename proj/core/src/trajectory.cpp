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
#include "dtrec/trajectory.hpp"

#include <algorithm>
#include <numeric>

#include "dtrec/error.hpp"

namespace dtrec {

double compute_retention(const Round& round) {
  return static_cast<double>(
      std::count(round.login_flags.begin(), round.login_flags.end(), 1));
}

std::vector<double> compute_return_to_go(const std::vector<double>& rewards) {
  std::vector<double> rtg(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    rtg[i] = acc;
  }
  return rtg;
}

std::vector<int> update_state(const std::vector<int>& state,
                              const std::vector<int>& action, int window) {
  require(window > 0, ErrorKind::kConfig, "state window must be positive");
  std::vector<int> next = state;
  next.insert(next.end(), action.begin(), action.end());
  if (static_cast<int>(next.size()) > window) {
    next.erase(next.begin(),
               next.begin() + (static_cast<int>(next.size()) - window));
  }
  return next;
}

Trajectory build_trajectory(const UserHistory& history, int state_window) {
  Trajectory traj;
  traj.user_id = history.user_id;
  std::vector<int> state;
  for (const Round& round : history.rounds) {
    traj.rewards.push_back(compute_retention(round));
    traj.states.push_back(state);
    traj.actions.push_back(round.new_items);
    state = update_state(state, round.new_items, state_window);
  }
  traj.return_to_go = compute_return_to_go(traj.rewards);
  return traj;
}

Trajectory cap_trajectory(const Trajectory& full, int max_len) {
  require(max_len > 0, ErrorKind::kConfig, "trajectory cap must be positive");
  if (full.length() <= max_len) return full;
  const std::size_t drop = full.rewards.size() - static_cast<std::size_t>(max_len);
  Trajectory out;
  out.user_id = full.user_id;
  out.rewards.assign(full.rewards.begin() + drop, full.rewards.end());
  out.states.assign(full.states.begin() + drop, full.states.end());
  out.actions.assign(full.actions.begin() + drop, full.actions.end());
  out.return_to_go = compute_return_to_go(out.rewards);
  return out;
}

}  // namespace dtrec
