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
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "dtrec/error.hpp"
#include "dtrec/evaluation.hpp"
#include "dtrec/inference.hpp"
#include "dtrec/rng.hpp"
#include "dtrec/trajectory.hpp"

namespace {

namespace fs = std::filesystem;

namespace ad = dtrec::ad;

using dtrec::Error;
using dtrec::ErrorKind;
using dtrec::MetricInputs;
using dtrec::MetricReport;
using dtrec::MetricValues;
using dtrec::ModelConfig;
using dtrec::RetentionEstimate;
using dtrec::RewardClassSample;
using dtrec::RewardHead;
using dtrec::RewardModel;
using dtrec::RewardTrainConfig;
using dtrec::RolloutRecord;
using dtrec::SequenceModel;
using dtrec::Trajectory;
using dtrec::VarianceReport;

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

// Naive references computed a different way: per-element scans and
// multiset removal instead of count maps.
double naive_bleu(std::vector<int> pred, std::vector<int> truth) {
  if (pred.empty()) return 0.0;
  double matched = 0.0;
  for (int item : pred) {
    auto it = std::find(truth.begin(), truth.end(), item);
    if (it != truth.end()) {
      truth.erase(it);
      matched += 1.0;
    }
  }
  return matched / static_cast<double>(pred.size());
}

double naive_rouge(std::vector<int> pred, const std::vector<int>& truth) {
  double matched = 0.0;
  for (int item : truth) {
    auto it = std::find(pred.begin(), pred.end(), item);
    if (it != pred.end()) {
      pred.erase(it);
      matched += 1.0;
    }
  }
  return matched / static_cast<double>(truth.size());
}

double naive_hr(const std::vector<int>& pred, const std::vector<int>& truth,
                int k) {
  if (truth.empty()) return 0.0;
  double hits = 0.0;
  for (int item : truth) {
    for (std::size_t pos = 0;
         pos < pred.size() && pos < static_cast<std::size_t>(k); ++pos) {
      if (pred[pos] == item) {
        hits += 1.0;
        break;
      }
    }
  }
  return hits / static_cast<double>(truth.size());
}

double naive_ndcg(const std::vector<int>& pred, const std::vector<int>& truth,
                  int k) {
  if (truth.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t pos = 0;
       pos < pred.size() && pos < static_cast<std::size_t>(k); ++pos) {
    bool hit = false;
    for (int item : truth) hit = hit || item == pred[pos];
    if (hit) dcg += 1.0 / std::log2(pos + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t pos = 0;
       pos < truth.size() && pos < static_cast<std::size_t>(k); ++pos)
    ideal += 1.0 / std::log2(pos + 2.0);
  return dcg / ideal;
}

std::vector<int> random_items(std::mt19937_64& rng, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> item(0, 5);
  std::vector<int> out(static_cast<std::size_t>(len(rng)));
  for (int& x : out) x = item(rng);
  return out;
}

// Samples whose BLEU-1 is exactly 1 (identical lists) or exactly 0
// (disjoint alphabets), for rational-arithmetic oracles.
RewardClassSample sim_one(int reward_class) {
  return {{1, 2}, {1, 2}, reward_class};
}

RewardClassSample sim_zero(int reward_class) {
  return {{1, 2}, {3, 4}, reward_class};
}

RewardTrainConfig tiny_reward_config() {
  RewardTrainConfig c;
  c.model.dim = 8;
  c.model.prompt_buckets = 4;
  c.model.heads = 2;
  c.model.block_layers = 1;
  c.model.ffn_hidden = 16;
  c.model.dropout = 0.0;
  c.model.state_window = 4;
  c.model.action_limit = 3;
  c.model.max_trajectory_len = 3;
  c.model.horizon = 7;
  c.allow_any_trajectory_len = true;
  c.learning_rate = 0.01;
  c.batch_size = 2;
  c.epochs = 20;
  c.seed = 11;
  return c;
}

Trajectory make_traj(const std::string& user, int steps, double reward,
                     int item_shift = 0) {
  Trajectory t;
  t.user_id = user;
  for (int s = 0; s < steps; ++s) {
    t.rewards.push_back(reward);
    t.states.push_back({1 + (s + item_shift) % 5, 2 + item_shift % 5});
    t.actions.push_back({3 + (s + 2 * item_shift) % 6});
  }
  t.return_to_go = dtrec::compute_return_to_go(t.rewards);
  return t;
}

std::vector<Trajectory> constant_reward_split(int users, double reward) {
  std::vector<Trajectory> out;
  for (int u = 0; u < users; ++u)
    out.push_back(make_traj("v" + std::to_string(u), 3, reward, u));
  return out;
}

RewardModel untrained_reward_model(std::uint64_t seed) {
  RewardModel rm;
  rm.config = tiny_reward_config();
  rm.config.seed = seed;
  rm.vocab_hash = kVocabHash;
  rm.vocab_size = kVocabSize;
  rm.backbone =
      SequenceModel::create(rm.config.model, kVocabSize, rm.config.seed);
  auto rng = dtrec::make_rng(seed, "reward-head-init");
  rm.head = RewardHead::create(rm.config.model.dim, rng);
  return rm;
}

// A scorer that always outputs the same value: zero out the final matrix
// and put the constant in its bias.
RewardModel rigged_reward_model(double constant) {
  RewardModel rm = untrained_reward_model(3);
  rm.head.W2.setZero();
  rm.head.b2(0, 0) = constant;
  return rm;
}

// Rollout records that replay a logged trajectory with fabricated
// generated lists.
std::vector<RolloutRecord> replay_records(const Trajectory& traj,
                                          const std::vector<int>& generated) {
  std::vector<RolloutRecord> out;
  for (int s = 0; s < traj.length(); ++s) {
    const std::size_t i = static_cast<std::size_t>(s);
    out.push_back(
        {traj.user_id, s + 1, generated, traj.actions[i], traj.rewards[i]});
  }
  return out;
}

MetricValues distinct_values(double base) {
  MetricValues v;
  v.bleu = base + 0.01;
  v.rouge = base + 0.02;
  v.hr = base + 0.03;
  v.ndcg = base + 0.04;
  v.mb_urs = base + 0.05;
  v.sb_urs = base + 0.06;
  v.asb_urs = base + 0.07;
  v.iur = base + 0.08;
  v.nrc = base + 0.09;
  return v;
}

void check_values_equal(const MetricValues& a, const MetricValues& b) {
  CHECK(a.bleu == b.bleu);
  CHECK(a.rouge == b.rouge);
  CHECK(a.hr == b.hr);
  CHECK(a.ndcg == b.ndcg);
  CHECK(a.mb_urs == b.mb_urs);
  CHECK(a.sb_urs == b.sb_urs);
  CHECK(a.asb_urs == b.asb_urs);
  CHECK(a.iur == b.iur);
  CHECK(a.nrc == b.nrc);
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("overlap metrics match their worked examples") {
  CHECK(dtrec::bleu1({1, 2, 3}, {1, 2, 4}) == doctest::Approx(2.0 / 3.0));
  CHECK(dtrec::bleu1({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(dtrec::bleu1({5, 5, 5}, {5}) == doctest::Approx(1.0 / 3.0));
  CHECK(dtrec::bleu1({}, {1}) == 0.0);

  CHECK(dtrec::rouge1({1, 2, 3}, {1, 2, 4}) == doctest::Approx(2.0 / 3.0));
  CHECK(dtrec::rouge1({}, {1}) == 0.0);
  CHECK(dtrec::rouge1({1, 2, 3}, {2, 3}) == 1.0);

  CHECK(dtrec::hr_at_k({7, 1}, {7}, 1) == 1.0);
  CHECK(dtrec::hr_at_k({1, 2}, {3, 4}, 2) == 0.0);
  CHECK(dtrec::hr_at_k({1, 9}, {1, 2}, 2) == 0.5);
  // The cutoff hides hits past position k.
  CHECK(dtrec::hr_at_k({9, 1}, {1}, 1) == 0.0);

  CHECK(dtrec::ndcg_at_k({1, 2}, {1, 2}, 2) == doctest::Approx(1.0));
  CHECK(dtrec::ndcg_at_k({1, 2}, {3, 4}, 2) == 0.0);
  CHECK(dtrec::ndcg_at_k({9, 1}, {1}, 2) ==
        doctest::Approx(1.0 / std::log2(3.0)));

  // Empty truth: precision-style scores have no denominator, rank scores
  // degrade to zero.
  CHECK_THROWS_AS(dtrec::bleu1({1}, {}), Error);
  CHECK_THROWS_AS(dtrec::rouge1({1}, {}), Error);
  try {
    dtrec::bleu1({1}, {});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDomain);
  }
  CHECK(dtrec::hr_at_k({1}, {}, 3) == 0.0);
  CHECK(dtrec::ndcg_at_k({1}, {}, 3) == 0.0);

  CHECK_THROWS_AS(dtrec::hr_at_k({1}, {1}, 0), Error);
  CHECK_THROWS_AS(dtrec::ndcg_at_k({1}, {1}, 0), Error);
}

TEST_CASE("overlap metrics agree with naive references on random cases") {
  auto rng = dtrec::make_rng(99, "metric-fuzz");
  std::uniform_int_distribution<int> kdist(1, 5);
  for (int i = 0; i < 50; ++i) {
    const std::vector<int> pred = random_items(rng, 0, 6);
    const std::vector<int> truth = random_items(rng, 1, 6);
    const int k = kdist(rng);
    CAPTURE(i);
    CHECK(dtrec::bleu1(pred, truth) ==
          doctest::Approx(naive_bleu(pred, truth)).epsilon(1e-9));
    CHECK(dtrec::rouge1(pred, truth) ==
          doctest::Approx(naive_rouge(pred, truth)).epsilon(1e-9));
    CHECK(dtrec::hr_at_k(pred, truth, k) ==
          doctest::Approx(naive_hr(pred, truth, k)).epsilon(1e-9));
    CHECK(dtrec::ndcg_at_k(pred, truth, k) ==
          doctest::Approx(naive_ndcg(pred, truth, k)).epsilon(1e-9));
  }
}

TEST_CASE("class-binned retention scores match hand-computed oracles") {
  // Ten perfect matches in the top class: 1 * (7 - 3.5) * 10.
  std::vector<RewardClassSample> top;
  for (int i = 0; i < 10; ++i) top.push_back(sim_one(7));
  CHECK(dtrec::sb_urs(top, 7) == 35.0);
  CHECK(dtrec::asb_urs(top, 7) == 3.5);

  // Four perfect matches in the bottom class: 1 * (0 - 3.5) * 4.
  std::vector<RewardClassSample> bottom;
  for (int i = 0; i < 4; ++i) bottom.push_back(sim_one(0));
  CHECK(dtrec::sb_urs(bottom, 7) == -14.0);

  // Zero similarity everywhere scores zero regardless of class weights.
  std::vector<RewardClassSample> misses;
  for (int k = 0; k <= 7; ++k) misses.push_back(sim_zero(k));
  CHECK(dtrec::sb_urs(misses, 7) == 0.0);

  // Equal similarity in every class: the weights are antisymmetric around
  // the middle, so the normalized score cancels exactly.
  std::vector<RewardClassSample> uniform;
  for (int k = 0; k <= 7; ++k) uniform.push_back(sim_one(k));
  CHECK(dtrec::asb_urs(uniform, 7) == 0.0);

  CHECK_THROWS_AS(dtrec::sb_urs({sim_one(8)}, 7), Error);
  CHECK_THROWS_AS(dtrec::sb_urs({sim_one(-1)}, 7), Error);
  try {
    dtrec::sb_urs({sim_one(8)}, 7);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDomain);
  }
  CHECK_THROWS_AS(dtrec::asb_urs({sim_one(1)}, 0), Error);
}

TEST_CASE("empty sample set scores zero and warns") {
  std::ostringstream captured;
  std::streambuf* old = std::cerr.rdbuf(captured.rdbuf());
  const double value = dtrec::asb_urs({}, 7);
  std::cerr.rdbuf(old);
  CHECK(value == 0.0);
  CHECK(captured.str().find("no samples") != std::string::npos);
  CHECK(dtrec::sb_urs({}, 7) == 0.0);
}

TEST_CASE("retention scores favor similarity concentrated in high classes") {
  // Good recommendations only for low-retention users: negative score.
  std::vector<RewardClassSample> low_heavy;
  for (int k = 0; k <= 3; ++k) low_heavy.push_back(sim_one(k));
  for (int k = 4; k <= 7; ++k) low_heavy.push_back(sim_zero(k));
  CHECK(dtrec::sb_urs(low_heavy, 7) < 0.0);
  CHECK(dtrec::asb_urs(low_heavy, 7) < 0.0);

  std::vector<RewardClassSample> high_heavy;
  for (int k = 0; k <= 3; ++k) high_heavy.push_back(sim_zero(k));
  for (int k = 4; k <= 7; ++k) high_heavy.push_back(sim_one(k));
  CHECK(dtrec::sb_urs(high_heavy, 7) > 0.0);
  CHECK(dtrec::asb_urs(high_heavy, 7) > 0.0);
}

TEST_CASE("reward predictions have one value per step and respect order") {
  const RewardModel rm = untrained_reward_model(7);
  CHECK(rm.head.W1.rows() == 8);
  CHECK(rm.head.W1.cols() == 8);
  CHECK(rm.head.b1.isZero());
  CHECK(rm.head.W2.cols() == 1);
  CHECK(rm.head.b2.isZero());

  const std::vector<std::vector<int>> states = {{1, 2}, {3}, {4, 5}};
  const std::vector<std::vector<int>> actions = {{6}, {7, 8}, {9}};
  const std::vector<double> rewards = {3.0, 2.0, 1.0};

  ad::Tape t;
  const ad::Var pred = dtrec::predict_rewards(t, rm, states, actions, rewards);
  const ad::Mat values = t.val(pred);
  CHECK(values.rows() == 3);
  CHECK(values.cols() == 1);
  CHECK(values.allFinite());

  // A step's prediction is read before its own reward token, so changing
  // the final reward cannot move any prediction.
  std::vector<double> late = rewards;
  late.back() = 7.0;
  ad::Tape t2;
  const ad::Mat moved =
      t2.val(dtrec::predict_rewards(t2, rm, states, actions, late));
  CHECK(values == moved);

  // Changing the first reward leaves the first prediction alone but feeds
  // the later ones.
  std::vector<double> early = rewards;
  early.front() = 7.0;
  ad::Tape t3;
  const ad::Mat shifted =
      t3.val(dtrec::predict_rewards(t3, rm, states, actions, early));
  CHECK(values(0, 0) == shifted(0, 0));
  CHECK(values(2, 0) != shifted(2, 0));

  CHECK_THROWS_AS(dtrec::predict_rewards(t, rm, states, actions, {1.0}),
                  Error);
  CHECK_THROWS_AS(
      dtrec::predict_rewards(t, rm, states, actions, {1.0, 2.0, 8.0}), Error);
  CHECK_THROWS_AS(dtrec::predict_rewards(t, rm, {}, {}, {}), Error);
}

TEST_CASE("reward model fits a constant-reward split") {
  const std::vector<Trajectory> val = constant_reward_split(8, 4.0);
  const RewardTrainConfig config = tiny_reward_config();
  RewardModel rm = dtrec::train_reward_model(val, config, kVocabHash,
                                             kVocabSize);
  CHECK(rm.epoch == config.epochs);
  CHECK(static_cast<int>(rm.history.size()) == config.epochs);
  CHECK(rm.history.back() < 0.1);
  CHECK(rm.history.back() < rm.history.front());

  // Same seed, same run.
  RewardModel again = dtrec::train_reward_model(val, config, kVocabHash,
                                                kVocabSize);
  CHECK(again.history == rm.history);
}

TEST_CASE("zero learning rate leaves the untrained predictions") {
  const std::vector<Trajectory> val = constant_reward_split(4, 2.0);
  RewardTrainConfig config = tiny_reward_config();
  config.learning_rate = 0.0;
  config.epochs = 3;
  config.seed = 21;
  RewardModel trained =
      dtrec::train_reward_model(val, config, kVocabHash, kVocabSize);

  RewardModel fresh = untrained_reward_model(21);

  ad::Tape t1, t2;
  const Trajectory& probe = val.front();
  const ad::Mat a = t1.val(dtrec::predict_rewards(
      t1, trained, probe.states, probe.actions, probe.rewards));
  const ad::Mat b = t2.val(dtrec::predict_rewards(
      t2, fresh, probe.states, probe.actions, probe.rewards));
  CHECK(a == b);
}

TEST_CASE("reward model training rejects bad splits") {
  const RewardTrainConfig config = tiny_reward_config();
  CHECK_THROWS_AS(
      dtrec::train_reward_model({}, config, kVocabHash, kVocabSize), Error);
  try {
    dtrec::train_reward_model({}, config, kVocabHash, kVocabSize);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }

  // The scorer must never see users the policies were fitted on.
  const std::vector<Trajectory> val = constant_reward_split(3, 1.0);
  std::vector<Trajectory> train_split = {make_traj("t0", 2, 2.0),
                                         make_traj(val[1].user_id, 2, 2.0)};
  CHECK_THROWS_AS(dtrec::train_reward_model(val, config, kVocabHash,
                                            kVocabSize, &train_split),
                  Error);
  try {
    dtrec::train_reward_model(val, config, kVocabHash, kVocabSize,
                              &train_split);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }

  std::vector<Trajectory> disjoint = {make_traj("t0", 2, 2.0)};
  RewardTrainConfig quick = config;
  quick.epochs = 1;
  const RewardModel rm = dtrec::train_reward_model(val, quick, kVocabHash,
                                                   kVocabSize, &disjoint);
  CHECK(rm.epoch == 1);

  RewardTrainConfig bad = config;
  bad.allow_any_trajectory_len = false;  // cap of 3 is not a settlement size
  CHECK_THROWS_AS(dtrec::train_reward_model(val, bad, kVocabHash, kVocabSize),
                  Error);
}

TEST_CASE("reward config survives a strict JSON round trip") {
  RewardTrainConfig config = tiny_reward_config();
  config.weight_decay = 0.002;
  config.seed = 99;
  const std::string text = dtrec::reward_config_to_json(config);
  const RewardTrainConfig back = dtrec::reward_config_from_json(text);
  CHECK(back.model.dim == config.model.dim);
  CHECK(back.model.max_trajectory_len == config.model.max_trajectory_len);
  CHECK(back.learning_rate == config.learning_rate);
  CHECK(back.weight_decay == config.weight_decay);
  CHECK(back.clip_norm == config.clip_norm);
  CHECK(back.epochs == config.epochs);
  CHECK(back.batch_size == config.batch_size);
  CHECK(back.seed == config.seed);
  CHECK(back.allow_any_trajectory_len == config.allow_any_trajectory_len);
  CHECK(dtrec::reward_config_to_json(back) == text);

  CHECK_THROWS_AS(dtrec::reward_config_from_json("not json"), Error);
  CHECK_THROWS_AS(dtrec::reward_config_from_json("{\"beta\": 0.5}"), Error);
  try {
    dtrec::reward_config_from_json("{\"beta\": 0.5}");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
}

TEST_CASE("reward model files round trip bit for bit") {
  TempDir dir("reward-model-io");
  const std::vector<Trajectory> val = constant_reward_split(4, 3.0);
  RewardTrainConfig config = tiny_reward_config();
  config.epochs = 2;
  RewardModel rm =
      dtrec::train_reward_model(val, config, kVocabHash, kVocabSize);

  const fs::path path = dir.path / "scorer.bin";
  dtrec::save_reward_model(path, rm);
  RewardModel back = dtrec::load_reward_model(path);
  CHECK(back.vocab_hash == rm.vocab_hash);
  CHECK(back.vocab_size == rm.vocab_size);
  CHECK(back.epoch == rm.epoch);
  CHECK(back.history == rm.history);
  CHECK(back.config.seed == rm.config.seed);

  const Trajectory& probe = val.front();
  ad::Tape t1, t2;
  const ad::Mat a = t1.val(dtrec::predict_rewards(
      t1, rm, probe.states, probe.actions, probe.rewards));
  const ad::Mat b = t2.val(dtrec::predict_rewards(
      t2, back, probe.states, probe.actions, probe.rewards));
  CHECK(a == b);

  // Saving the loaded model reproduces the file exactly.
  const fs::path copy = dir.path / "scorer2.bin";
  dtrec::save_reward_model(copy, back);
  std::ifstream f1(path, std::ios::binary), f2(copy, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(!s1.str().empty());

  // A truncated file and a wrong-magic file are both rejected.
  const std::string full = s1.str();
  const fs::path cut = dir.path / "cut.bin";
  std::ofstream(cut, std::ios::binary)
      .write(full.data(), static_cast<long>(full.size() / 2));
  CHECK_THROWS_AS(dtrec::load_reward_model(cut), Error);

  const fs::path wrong = dir.path / "wrong.bin";
  std::string tampered = full;
  tampered[0] = 'X';
  std::ofstream(wrong, std::ios::binary)
      .write(tampered.data(), static_cast<long>(tampered.size()));
  CHECK_THROWS_AS(dtrec::load_reward_model(wrong), Error);
  try {
    dtrec::load_reward_model(wrong);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
}

TEST_CASE("a constant scorer pins the model-based retention score") {
  const RewardModel rm = rigged_reward_model(5.0);
  std::vector<Trajectory> test_set = {make_traj("u1", 2, 3.0),
                                      make_traj("u2", 3, 1.0)};
  std::vector<RolloutRecord> rollouts;
  for (const Trajectory& traj : test_set)
    for (const RolloutRecord& rec : replay_records(traj, {4, 5}))
      rollouts.push_back(rec);

  const RetentionEstimate est =
      dtrec::estimate_retention(rollouts, test_set, rm, kVocabHash);
  CHECK(est.predicted_mean == 5.0);
  CHECK(est.logged_mean == doctest::Approx((3.0 * 2 + 1.0 * 3) / 5.0));
  CHECK(est.users == std::vector<std::string>{"u1", "u2"});
  CHECK(est.per_user_predicted == std::vector<double>{5.0, 5.0});
  CHECK(dtrec::mb_urs(rollouts, test_set, rm, kVocabHash) == 5.0);
}

TEST_CASE("retention scoring keeps the most recent steps under its cap") {
  const RewardModel rm = rigged_reward_model(2.0);  // cap is 3 steps
  Trajectory long_user = make_traj("u1", 5, 0.0);
  long_user.rewards = {1.0, 2.0, 3.0, 4.0, 5.0};
  long_user.return_to_go = dtrec::compute_return_to_go(long_user.rewards);
  const std::vector<Trajectory> test_set = {long_user};
  const std::vector<RolloutRecord> rollouts =
      replay_records(long_user, {4});

  const RetentionEstimate est =
      dtrec::estimate_retention(rollouts, test_set, rm, kVocabHash);
  CHECK(est.predicted_mean == 2.0);
  CHECK(est.logged_mean == doctest::Approx(4.0));  // last three rewards
}

TEST_CASE("retention scoring rejects mismatched inputs") {
  const RewardModel rm = rigged_reward_model(1.0);
  const Trajectory traj = make_traj("u1", 2, 3.0);
  const std::vector<Trajectory> test_set = {traj};
  const std::vector<RolloutRecord> good = replay_records(traj, {4});

  CHECK_THROWS_AS(dtrec::estimate_retention({}, test_set, rm, kVocabHash),
                  Error);
  try {
    dtrec::estimate_retention({}, test_set, rm, kVocabHash);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerate);
  }

  CHECK_THROWS_AS(
      dtrec::estimate_retention(good, test_set, rm, kVocabHash + 1), Error);
  try {
    dtrec::estimate_retention(good, test_set, rm, kVocabHash + 1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCompatibility);
  }

  auto expect_format = [&](std::vector<RolloutRecord> records) {
    CHECK_THROWS_AS(
        dtrec::estimate_retention(records, test_set, rm, kVocabHash), Error);
    try {
      dtrec::estimate_retention(records, test_set, rm, kVocabHash);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
    }
  };

  std::vector<RolloutRecord> unknown_user = good;
  unknown_user[0].user_id = "ghost";
  expect_format(unknown_user);

  std::vector<RolloutRecord> wrong_reward = good;
  wrong_reward[1].logged_reward = 9.0;
  expect_format(wrong_reward);

  std::vector<RolloutRecord> wrong_round = good;
  std::swap(wrong_round[0].round, wrong_round[1].round);
  expect_format(wrong_round);

  std::vector<RolloutRecord> wrong_items = good;
  wrong_items[0].logged = {11};
  expect_format(wrong_items);

  std::vector<RolloutRecord> extra = good;
  extra.push_back(good.back());
  extra.back().round = 3;
  expect_format(extra);
}

TEST_CASE("improvement and churn percentages follow their definitions") {
  CHECK(dtrec::iur(6.0, 4.8) == doctest::Approx(25.0));
  CHECK(dtrec::iur(4.8, 4.8) == 0.0);
  CHECK(dtrec::iur(2.4, 4.8) == doctest::Approx(-50.0));
  CHECK_THROWS_AS(dtrec::iur(1.0, 0.0), Error);
  try {
    dtrec::iur(1.0, 0.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDomain);
  }

  CHECK(dtrec::nrc({7.0, 7.0, 7.0}) == 0.0);
  CHECK(dtrec::nrc({0.0, 0.0}) == 100.0);
  CHECK(dtrec::nrc({0.0, 1.0, 2.0, 3.0}, 0.5) == 25.0);
  CHECK(dtrec::nrc({0.5}, 0.5) == 0.0);  // strict comparison
  CHECK_THROWS_AS(dtrec::nrc({1.0}, -0.1), Error);
  CHECK_THROWS_AS(dtrec::nrc({}, 0.5), Error);
}

TEST_CASE("user partitions are deterministic, disjoint and near-equal") {
  std::vector<Trajectory> test_set;
  for (int u = 0; u < 20; ++u)
    test_set.push_back(make_traj("u" + std::to_string(u), 1, 1.0));

  const auto groups = dtrec::partition_users(test_set, 6, 42);
  CHECK(groups.size() == 6);
  std::set<std::size_t> seen;
  std::size_t max_size = 0, min_size = test_set.size();
  for (const auto& g : groups) {
    max_size = std::max(max_size, g.size());
    min_size = std::min(min_size, g.size());
    for (std::size_t idx : g) {
      CHECK(idx < test_set.size());
      CHECK(seen.insert(idx).second);  // no index twice
    }
  }
  CHECK(seen.size() == test_set.size());
  CHECK(max_size - min_size <= 1);

  CHECK(dtrec::partition_users(test_set, 6, 42) == groups);

  CHECK_THROWS_AS(dtrec::partition_users(test_set, 0, 42), Error);
  CHECK_THROWS_AS(dtrec::partition_users(test_set, 21, 42), Error);
  try {
    dtrec::partition_users(test_set, 21, 42);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
}

TEST_CASE("split variance matches the population formula") {
  // One user per split; the metric reads the lone first reward, so the
  // split values are a permutation of {1..5} whatever the shuffle does.
  std::vector<Trajectory> test_set;
  for (int u = 0; u < 5; ++u)
    test_set.push_back(
        make_traj("u" + std::to_string(u), 1, static_cast<double>(u + 1)));

  const dtrec::MetricFn first_reward =
      [](const std::vector<Trajectory>& users) {
        return users.front().rewards.front();
      };
  const VarianceReport report =
      dtrec::variance_analysis(first_reward, test_set, 5, 7);
  CHECK(report.per_split.size() == 5);
  CHECK(report.variance == 2.0);
  std::vector<double> sorted = report.per_split;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0});

  // Same seed, same partition, same values.
  const VarianceReport again =
      dtrec::variance_analysis(first_reward, test_set, 5, 7);
  CHECK(again.per_split == report.per_split);

  const dtrec::MetricFn constant = [](const std::vector<Trajectory>&) {
    return 3.25;
  };
  CHECK(dtrec::variance_analysis(constant, test_set, 5, 7).variance == 0.0);

  CHECK_THROWS_AS(dtrec::variance_analysis(first_reward, test_set, 9, 7),
                  Error);
  CHECK_THROWS_AS(dtrec::variance_analysis({}, test_set, 5, 7), Error);
}

TEST_CASE("the metric suite scores a rollout end to end") {
  const RewardModel rm = rigged_reward_model(2.0);
  std::vector<Trajectory> test_set = {make_traj("u1", 2, 3.0),
                                      make_traj("u2", 1, 6.0)};
  // One round with an empty log: nothing to match there, but the sequence
  // still feeds the retention model.
  test_set[0].actions[1] = {};

  std::vector<RolloutRecord> rollouts;
  const std::size_t i0 = 0;
  rollouts.push_back({"u1", 1, {4, 5}, test_set[0].actions[i0], 3.0});
  rollouts.push_back({"u1", 2, {4, 5}, {}, 3.0});
  rollouts.push_back({"u2", 1, {9}, test_set[1].actions[0], 6.0});

  MetricInputs inputs;
  inputs.rollouts = &rollouts;
  inputs.test_set = &test_set;
  inputs.reward_model = &rm;
  inputs.vocab_hash = kVocabHash;
  inputs.top_k = 2;

  const MetricValues values = dtrec::compute_metric_values(inputs);
  // Two scorable rounds: u1 round 1 and u2 round 1.
  const double b1 = dtrec::bleu1({4, 5}, test_set[0].actions[0]);
  const double b2 = dtrec::bleu1({9}, test_set[1].actions[0]);
  CHECK(values.bleu == doctest::Approx((b1 + b2) / 2.0));
  CHECK(values.mb_urs == 2.0);
  const double logged = (3.0 + 3.0 + 6.0) / 3.0;
  CHECK(values.iur == doctest::Approx(100.0 * (2.0 - logged) / logged));
  CHECK(values.nrc == 0.0);
  CHECK(std::isfinite(values.sb_urs));
  CHECK(std::isfinite(values.asb_urs));

  // A rollout whose rounds all have empty logs cannot be scored.
  std::vector<Trajectory> blank_set = {make_traj("u1", 1, 3.0)};
  blank_set[0].actions[0] = {};
  std::vector<RolloutRecord> blank = {{"u1", 1, {4}, {}, 3.0}};
  MetricInputs bad = inputs;
  bad.rollouts = &blank;
  bad.test_set = &blank_set;
  CHECK_THROWS_AS(dtrec::compute_metric_values(bad), Error);

  MetricInputs missing;
  CHECK_THROWS_AS(dtrec::compute_metric_values(missing), Error);
}

TEST_CASE("metric reports round trip through JSON and reject junk") {
  MetricReport report;
  report.overall = distinct_values(0.5);
  report.top_k = 5;
  report.nrc_threshold = 0.25;
  report.config_echo = "{\"seed\": 3}";
  report.per_split = {distinct_values(0.1), distinct_values(0.2)};
  report.split_variance = distinct_values(0.0);

  const std::string text = dtrec::metric_report_to_json(report);
  const MetricReport back = dtrec::metric_report_from_json(text);
  check_values_equal(back.overall, report.overall);
  CHECK(back.top_k == report.top_k);
  CHECK(back.nrc_threshold == report.nrc_threshold);
  CHECK(back.config_echo == report.config_echo);
  REQUIRE(back.per_split.size() == 2);
  check_values_equal(back.per_split[0], report.per_split[0]);
  check_values_equal(back.per_split[1], report.per_split[1]);
  check_values_equal(back.split_variance, report.split_variance);
  CHECK(dtrec::metric_report_to_json(back) == text);

  // Without splits the variance block disappears.
  MetricReport flat;
  flat.overall = distinct_values(0.5);
  const std::string flat_text = dtrec::metric_report_to_json(flat);
  CHECK(flat_text.find("variance") == std::string::npos);
  CHECK(!dtrec::metric_report_from_json(flat_text).has_variance());

  CHECK_THROWS_AS(dtrec::metric_report_from_json("nope"), Error);
  CHECK_THROWS_AS(dtrec::metric_report_from_json("{\"overall\": {}}"), Error);

  // Splits and variance only travel together.
  nlohmann::json broken = nlohmann::json::parse(text);
  broken.erase("variance");
  CHECK_THROWS_AS(dtrec::metric_report_from_json(broken.dump()), Error);

  nlohmann::json extra = nlohmann::json::parse(text);
  extra["surprise"] = 1;
  CHECK_THROWS_AS(dtrec::metric_report_from_json(extra.dump()), Error);

  MetricReport infinite = flat;
  infinite.overall.ndcg = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(dtrec::metric_report_to_json(infinite), Error);
  try {
    dtrec::metric_report_to_json(infinite);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
}

TEST_CASE("report files land as JSON plus a flat table") {
  TempDir dir("metric-report-io");
  MetricReport report;
  report.overall = distinct_values(0.5);
  report.per_split = {distinct_values(0.1), distinct_values(0.2),
                      distinct_values(0.3)};
  report.split_variance = distinct_values(0.0);
  report.config_echo = "{}";

  const fs::path json_path = dir.path / "report.json";
  dtrec::write_metric_report(json_path, report);
  std::ifstream in(json_path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const MetricReport back = dtrec::metric_report_from_json(buffer.str());
  check_values_equal(back.overall, report.overall);

  const fs::path table_path = dir.path / "report.csv";
  dtrec::write_metric_table(table_path, report);
  std::ifstream table(table_path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  REQUIRE(lines.size() == 6);  // header, overall, 3 splits, variance
  CHECK(lines[0] == "scope,bleu,rouge,hr,ndcg,mb_urs,sb_urs,asb_urs,iur,nrc");
  CHECK(lines[1].rfind("overall,", 0) == 0);
  CHECK(lines[2].rfind("split1,", 0) == 0);
  CHECK(lines[4].rfind("split3,", 0) == 0);
  CHECK(lines[5].rfind("variance,", 0) == 0);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t commas =
        static_cast<std::size_t>(std::count(lines[i].begin(), lines[i].end(),
                                            ','));
    CHECK(commas == 9);
  }
}

TEST_SUITE_END();
