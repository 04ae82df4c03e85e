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

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dtrec/error.hpp"
#include "dtrec/model.hpp"
#include "dtrec/trajectory.hpp"
#include "dtrec/training.hpp"
#include "dtrec/vocabulary.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;

using dtrec::Checkpoint;
using dtrec::DecodeSettings;
using dtrec::Error;
using dtrec::ErrorKind;
using dtrec::HistoryStep;
using dtrec::ModelConfig;
using dtrec::RecommendationPolicy;
using dtrec::RolloutOptions;
using dtrec::RolloutRecord;
using dtrec::SequenceModel;
using dtrec::TargetRewardRule;
using dtrec::TrainConfig;
using dtrec::Trajectory;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() /
           ("dtrec-test-" + name + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

constexpr std::uint64_t kVocabHash = 0x5eed;
constexpr int kVocabSize = 12;

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.dim = 8;
  c.prompt_buckets = 4;
  c.heads = 2;
  c.block_layers = 1;
  c.ffn_hidden = 16;
  c.dropout = 0.0;
  c.state_window = 6;
  c.action_limit = 4;
  c.max_trajectory_len = 3;
  c.horizon = 7;
  return c;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = tiny_model_config();
  c.allow_any_trajectory_len = true;
  c.epochs = 5;
  c.batch_size = 2;
  c.n_negatives = 1;
  c.seed = 5;
  return c;
}

Checkpoint untrained_checkpoint(std::uint64_t seed) {
  Checkpoint ck;
  ck.config = tiny_train_config();
  ck.config.seed = seed;
  ck.vocab_hash = kVocabHash;
  ck.vocab_size = kVocabSize;
  ck.model = SequenceModel::create(ck.config.model, kVocabSize, seed);
  return ck;
}

Trajectory make_traj(const std::string& user, std::vector<double> rewards,
                     std::vector<std::vector<int>> states,
                     std::vector<std::vector<int>> actions) {
  Trajectory t;
  t.user_id = user;
  t.rewards = std::move(rewards);
  t.return_to_go = dtrec::compute_return_to_go(t.rewards);
  t.states = std::move(states);
  t.actions = std::move(actions);
  return t;
}

std::vector<Trajectory> tiny_test_set() {
  return {
      make_traj("u1", {3, 2}, {{3, 4}, {3, 4, 5}}, {{5, 6}, {7}}),
      make_traj("u2", {0, 1, 4}, {{8}, {8, 9}, {8, 9, 10}},
                {{9}, {10, 11}, {3}}),
      make_traj("u3", {7}, {{4, 7, 9}}, {{11, 6}}),
      make_traj("u4", {2, 2}, {{}, {5}}, {{5}, {6, 8, 3}}),
  };
}

bool any_special(const std::vector<int>& items) {
  for (int i : items) {
    if (dtrec::ItemVocabulary::is_special(i)) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("max-constant schedule prompts the largest reachable return") {
  SUBCASE("empty history at horizon 7 and cap 10 starts at 70") {
    auto s = dtrec::prompt_schedule(TargetRewardRule::kMaxConstant, 7, 10, {});
    REQUIRE(s.size() == 1);
    CHECK(s[0] == 70.0);
  }
  SUBCASE("each later step loses one full-horizon round") {
    auto s = dtrec::prompt_schedule(TargetRewardRule::kMaxConstant, 7, 10,
                                    {4.0, 0.0});
    REQUIRE(s.size() == 3);
    CHECK(s[0] == 70.0);
    CHECK(s[1] == 63.0);
    CHECK(s[2] == 56.0);
  }
  SUBCASE("observed rewards do not move the max-constant values") {
    auto a = dtrec::prompt_schedule(TargetRewardRule::kMaxConstant, 7, 10,
                                    {7.0, 7.0});
    auto b = dtrec::prompt_schedule(TargetRewardRule::kMaxConstant, 7, 10,
                                    {0.0, 0.0});
    CHECK(a == b);
  }
}

TEST_CASE("decrementing schedule subtracts what was observed") {
  auto s = dtrec::prompt_schedule(TargetRewardRule::kDecrementingReturnToGo,
                                  7, 10, {5.0});
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 70.0);
  CHECK(s[1] == 65.0);

  auto longer = dtrec::prompt_schedule(
      TargetRewardRule::kDecrementingReturnToGo, 7, 10, {5.0, 3.0, 7.0});
  CHECK(longer == std::vector<double>{70.0, 65.0, 62.0, 55.0});
}

TEST_CASE("schedule validates its inputs") {
  const auto rule = TargetRewardRule::kMaxConstant;
  CHECK_THROWS_AS(dtrec::prompt_schedule(rule, 0, 10, {}), Error);
  CHECK_THROWS_AS(dtrec::prompt_schedule(rule, 7, 0, {}), Error);
  // A full history leaves no step to prompt.
  CHECK_THROWS_AS(dtrec::prompt_schedule(rule, 7, 2, {1.0, 2.0}), Error);
  CHECK_THROWS_AS(dtrec::prompt_schedule(rule, 7, 10, {8.0}), Error);
  CHECK_THROWS_AS(dtrec::prompt_schedule(rule, 7, 10, {-1.0}), Error);
  try {
    dtrec::prompt_schedule(rule, 7, 2, {1.0, 2.0});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
  }
  try {
    dtrec::prompt_schedule(rule, 7, 10, {8.0});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDomain);
  }
}

TEST_CASE("policies bind only to the vocabulary they were trained on") {
  const Checkpoint ck = untrained_checkpoint(1);
  const RecommendationPolicy ok = dtrec::make_policy(ck, kVocabHash);
  CHECK(ok.checkpoint == &ck);
  CHECK(ok.rule == TargetRewardRule::kMaxConstant);
  CHECK(ok.prompt_scale == 1.0);

  CHECK_THROWS_AS(dtrec::make_policy(ck, kVocabHash + 1), Error);
  try {
    dtrec::make_policy(ck, kVocabHash + 1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCompatibility);
  }

  DecodeSettings too_long;
  too_long.max_items = ck.config.model.action_limit + 1;
  CHECK_THROWS_AS(
      dtrec::make_policy(ck, kVocabHash, TargetRewardRule::kMaxConstant,
                         too_long),
      Error);
  DecodeSettings negative;
  negative.max_items = -1;
  CHECK_THROWS_AS(
      dtrec::make_policy(ck, kVocabHash, TargetRewardRule::kMaxConstant,
                         negative),
      Error);
}

TEST_CASE("recommendations stay within the budget and avoid special tokens") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Checkpoint ck = untrained_checkpoint(seed);
    const RecommendationPolicy policy = dtrec::make_policy(ck, kVocabHash);
    const auto items = dtrec::recommend(policy, {}, {3, 4, 5});
    CHECK(items.size() <= static_cast<std::size_t>(4));
    CHECK_FALSE(any_special(items));

    RecommendationPolicy capped = policy;
    capped.decode.max_items = 2;
    const auto two = dtrec::recommend(capped, {}, {3, 4, 5});
    CHECK(two.size() <= 2);
    CHECK_FALSE(any_special(two));

    RecommendationPolicy fixed = policy;
    fixed.decode.allow_eos = false;
    const auto full = dtrec::recommend(fixed, {}, {3, 4, 5});
    CHECK(full.size() == 4);
    CHECK_FALSE(any_special(full));
  }
}

TEST_CASE("recommend accepts a full prefix and rejects an overfull one") {
  const Checkpoint ck = untrained_checkpoint(2);
  const RecommendationPolicy policy = dtrec::make_policy(ck, kVocabHash);
  std::vector<HistoryStep> history = {
      {3.0, {3, 4}, {5, 6}},
      {2.0, {3, 4, 5}, {7}},
  };
  // Cap is 3: two completed rounds plus the current one fills it exactly.
  CHECK_NOTHROW(dtrec::recommend(policy, history, {8, 9}));
  history.push_back({1.0, {8}, {9}});
  CHECK_THROWS_AS(dtrec::recommend(policy, history, {10}), Error);

  RecommendationPolicy unbound;
  CHECK_THROWS_AS(dtrec::recommend(unbound, {}, {3}), Error);
}

TEST_CASE("reward-blind checkpoints ignore the prompt entirely") {
  Checkpoint ck = untrained_checkpoint(3);
  ck.config.ablate.no_reward = true;
  RecommendationPolicy max_prompt = dtrec::make_policy(ck, kVocabHash);
  RecommendationPolicy zero_prompt = max_prompt;
  zero_prompt.prompt_scale = 0.0;

  const std::vector<HistoryStep> history = {{3.0, {3, 4}, {5, 6}}};
  CHECK(dtrec::recommend(max_prompt, history, {7, 8}) ==
        dtrec::recommend(zero_prompt, history, {7, 8}));

  // The affine-prompt variant still routes the scalar through, so the
  // same construction is merely a smoke test there.
  Checkpoint naive = untrained_checkpoint(3);
  naive.config.ablate.naive_prompt = true;
  const RecommendationPolicy affine = dtrec::make_policy(naive, kVocabHash);
  CHECK_NOTHROW(dtrec::recommend(affine, history, {7, 8}));
}

TEST_CASE("rollout walks every round with teacher-forced history") {
  const Checkpoint ck = untrained_checkpoint(4);
  const RecommendationPolicy policy = dtrec::make_policy(ck, kVocabHash);
  const auto test_set = tiny_test_set();

  const auto records = dtrec::rollout(policy, test_set);
  REQUIRE(records.size() == 8);  // 2 + 3 + 1 + 2 rounds

  std::size_t i = 0;
  for (const Trajectory& traj : test_set) {
    for (int step = 0; step < traj.length(); ++step, ++i) {
      const RolloutRecord& rec = records[i];
      CHECK(rec.user_id == traj.user_id);
      CHECK(rec.round == step + 1);
      CHECK(rec.logged == traj.actions[static_cast<std::size_t>(step)]);
      CHECK(rec.logged_reward ==
            traj.rewards[static_cast<std::size_t>(step)]);
      CHECK(rec.generated.size() <= 4);
      CHECK_FALSE(any_special(rec.generated));
    }
  }

  const auto again = dtrec::rollout(policy, test_set);
  REQUIRE(again.size() == records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    CHECK(again[k].generated == records[k].generated);
  }
}

TEST_CASE("rollout keeps the most recent steps of an over-long trajectory") {
  const Checkpoint ck = untrained_checkpoint(5);
  const RecommendationPolicy policy = dtrec::make_policy(ck, kVocabHash);
  const Trajectory long_traj =
      make_traj("u9", {1, 2, 3, 4, 5},
                {{3}, {3, 4}, {3, 4, 5}, {4, 5, 6}, {5, 6, 7}},
                {{4}, {5}, {6}, {7}, {8}});

  const auto records = dtrec::rollout(policy, {long_traj});
  REQUIRE(records.size() == 3);  // cap is 3
  CHECK(records[0].logged == std::vector<int>{6});
  CHECK(records[1].logged == std::vector<int>{7});
  CHECK(records[2].logged == std::vector<int>{8});
  CHECK(records[0].logged_reward == 3.0);
  CHECK(records[0].round == 1);

  Trajectory empty;
  empty.user_id = "nobody";
  CHECK_THROWS_AS(dtrec::rollout(policy, {empty}), Error);
}

TEST_CASE("feedback rollout replays generated actions into the history") {
  // Round one sees the identical context either way; later rounds may
  // diverge once the generated actions replace the logged ones. A seed
  // scan keeps the divergence check deterministic.
  const auto test_set = tiny_test_set();
  bool diverged = false;
  for (std::uint64_t seed = 0; seed < 16 && !diverged; ++seed) {
    const Checkpoint ck = untrained_checkpoint(seed);
    const RecommendationPolicy policy = dtrec::make_policy(ck, kVocabHash);
    const auto forced = dtrec::rollout(policy, test_set);
    const auto fed = dtrec::rollout(policy, test_set, {.feedback = true});
    REQUIRE(forced.size() == fed.size());
    for (std::size_t k = 0; k < forced.size(); ++k) {
      if (forced[k].round == 1) {
        CHECK(forced[k].generated == fed[k].generated);
      } else if (forced[k].generated != fed[k].generated) {
        diverged = true;
      }
    }
  }
  CHECK(diverged);
}

TEST_CASE("trained models listen to the reward prompt") {
  // Two behaviors share one state and differ only in observed retention:
  // fully retained users took item 5, never-returning users item 6. Once
  // trained, the reward token is the only signal separating them, so the
  // maximal prompt and a zeroed prompt must decode differently for at
  // least half the users. The seed list is fixed, so the outcome is
  // reproducible.
  std::vector<Trajectory> data;
  for (int i = 0; i < 3; ++i) {
    data.push_back(make_traj("hi" + std::to_string(i), {7}, {{3, 4}}, {{5}}));
    data.push_back(make_traj("lo" + std::to_string(i), {0}, {{3, 4}}, {{6}}));
  }
  bool majority = false;
  for (std::uint64_t seed : {5ull, 7ull, 11ull, 13ull, 17ull}) {
    TrainConfig config = tiny_train_config();
    // A one-step budget makes the maximal prompt coincide with the best
    // return seen in training. The contrastive term is off so the probe
    // isolates the conditioning mechanism.
    config.model.max_trajectory_len = 1;
    config.beta = 0.0;
    config.seed = seed;
    config.epochs = 60;
    const Checkpoint ck = dtrec::train(data, config, kVocabHash, kVocabSize);

    RecommendationPolicy max_prompt = dtrec::make_policy(ck, kVocabHash);
    RecommendationPolicy zero_prompt = max_prompt;
    zero_prompt.prompt_scale = 0.0;

    const auto with_max = dtrec::rollout(max_prompt, data);
    const auto with_zero = dtrec::rollout(zero_prompt, data);
    REQUIRE(with_max.size() == with_zero.size());

    std::size_t changed = 0;
    for (std::size_t k = 0; k < with_max.size(); ++k) {
      changed += with_max[k].generated != with_zero[k].generated ? 1 : 0;
    }
    if (2 * changed >= with_max.size()) {
      majority = true;
      break;
    }
  }
  CHECK(majority);
}

TEST_CASE("rollout files round trip and reject malformed lines") {
  TempDir dir("rollouts");
  const fs::path file = dir.path / "rollouts.jsonl";

  std::vector<RolloutRecord> records;
  records.push_back({"u1", 1, {5, 6}, {5}, 3.0});
  records.push_back({"u1", 2, {}, {7, 8}, 0.0});
  records.push_back({"u2", 1, {9}, {9}, 7.0});
  dtrec::write_rollouts(file, records);

  const auto back = dtrec::read_rollouts(file);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].user_id == records[i].user_id);
    CHECK(back[i].round == records[i].round);
    CHECK(back[i].generated == records[i].generated);
    CHECK(back[i].logged == records[i].logged);
    CHECK(back[i].logged_reward == records[i].logged_reward);
  }

  // Rewriting what was read reproduces the file byte for byte.
  const fs::path copy = dir.path / "copy.jsonl";
  dtrec::write_rollouts(copy, back);
  std::ifstream a(file, std::ios::binary), b(copy, std::ios::binary);
  std::string text_a((std::istreambuf_iterator<char>(a)), {});
  std::string text_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(text_a == text_b);

  auto write_line = [&](const std::string& text) {
    const fs::path bad = dir.path / "bad.jsonl";
    std::ofstream out(bad, std::ios::binary);
    out << text << "\n";
    out.close();
    return bad;
  };
  CHECK_THROWS_AS(dtrec::read_rollouts(write_line("not json")), Error);
  CHECK_THROWS_AS(dtrec::read_rollouts(write_line(
                      R"({"user":"u","round":1,"generated":[],"logged":[]})")),
                  Error);
  CHECK_THROWS_AS(
      dtrec::read_rollouts(write_line(
          R"({"user":"u","round":1,"generated":[],"logged":[],)"
          R"("logged_reward":0,"extra":1})")),
      Error);
  CHECK_THROWS_AS(dtrec::read_rollouts(dir.path / "absent.jsonl"), Error);
}

}  // TEST_SUITE
