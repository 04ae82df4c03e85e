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
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dtrec/inference.hpp"
#include "dtrec/model.hpp"
#include "dtrec/params.hpp"
#include "dtrec/tape.hpp"
#include "dtrec/trajectory.hpp"
#include "dtrec/training.hpp"

namespace dtrec {

// List-overlap accuracy. bleu1 is clipped unigram precision (empty
// prediction scores 0), rouge1 the matching recall; both reject an empty
// truth list. hr_at_k is the fraction of truth items present among the
// first k predictions; ndcg_at_k uses binary gains, a log2(position + 1)
// discount and an ideal ranking of min(|truth|, k) hits. hr and ndcg
// return 0 for an empty truth.
double bleu1(const std::vector<int>& pred, const std::vector<int>& truth);
double rouge1(const std::vector<int>& pred, const std::vector<int>& truth);
double hr_at_k(const std::vector<int>& pred, const std::vector<int>& truth,
               int k);
double ndcg_at_k(const std::vector<int>& pred, const std::vector<int>& truth,
                 int k);

// One scored round bucketed by its integer reward.
struct RewardClassSample {
  std::vector<int> pred;
  std::vector<int> truth;
  int reward_class = 0;  // in [0, horizon]
};

// Similarity-based retention scores over reward classes 0..horizon. With
// s_k the mean BLEU-1 of class k and N_k its size, sb_urs returns
// sum_k s_k * (k - horizon/2) * N_k; asb_urs drops the N_k factor and sums
// over populated classes only. Empty input returns 0 (asb_urs warns).
double sb_urs(const std::vector<RewardClassSample>& samples, int horizon);
double asb_urs(const std::vector<RewardClassSample>& samples, int horizon);

// Scalar head decoding a reconstruction embedding into a reward value:
// gelu(x W1 + b1) W2 + b2.
struct RewardHead {
  ad::Mat W1;  // d x d
  ad::Mat b1;  // 1 x d
  ad::Mat W2;  // d x 1
  ad::Mat b2;  // 1 x 1

  static RewardHead create(int dim, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

struct RewardTrainConfig {
  ModelConfig model;
  double learning_rate = 0.01;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool allow_any_trajectory_len = false;

  void validate() const;
};

// Supervised reward predictor used by the model-based retention score: the
// recommender's architecture re-ordered to read [s_t, a_t, r_t] tokens,
// with the block's reconstruction at each action position decoded by the
// scalar head. Fitted with squared error on the validation split only.
struct RewardModel {
  RewardTrainConfig config;
  std::uint64_t vocab_hash = 0;
  int vocab_size = 0;
  int epoch = 0;
  std::vector<double> history;  // mean squared error per epoch
  SequenceModel backbone;
  RewardHead head;

  void collect_params(ParamList& out);
};

// Per-step reward predictions, one column of length T. The prediction for
// step t sees states and actions up to t and rewards before t only.
ad::Var predict_rewards(ad::Tape& t, const RewardModel& m,
                        const std::vector<std::vector<int>>& states,
                        const std::vector<std::vector<int>>& actions,
                        const std::vector<double>& rewards,
                        std::mt19937_64* dropout_rng = nullptr);

// Fits the reward model on the validation split. When the training split
// is supplied, any shared user id is rejected: the scorer must never see
// the data the policies were fitted on.
RewardModel train_reward_model(
    const std::vector<Trajectory>& validation, const RewardTrainConfig& config,
    std::uint64_t vocab_hash, int vocab_size,
    const std::vector<Trajectory>* train_split = nullptr);

// Strict JSON round trip; unknown keys are rejected.
std::string reward_config_to_json(const RewardTrainConfig& config);
RewardTrainConfig reward_config_from_json(const std::string& text);

// Reward-model files share the checkpoint container (distinct magic).
void save_reward_model(const std::filesystem::path& path, RewardModel& model);
RewardModel load_reward_model(const std::filesystem::path& path);

// Model-based retention over a rollout: per user, the logged states and
// rewards are re-joined from the test set, the generated actions replace
// the logged ones, and the reward model scores every step.
struct RetentionEstimate {
  double predicted_mean = 0.0;  // MB-URS
  double logged_mean = 0.0;     // same average over the logged rewards
  std::vector<std::string> users;
  std::vector<double> per_user_predicted;  // aligned with users
};

RetentionEstimate estimate_retention(const std::vector<RolloutRecord>& rollouts,
                                     const std::vector<Trajectory>& test_set,
                                     const RewardModel& model,
                                     std::uint64_t dataset_vocab_hash);

// Mean predicted per-step reward of the rollout's sequences.
double mb_urs(const std::vector<RolloutRecord>& rollouts,
              const std::vector<Trajectory>& test_set, const RewardModel& model,
              std::uint64_t dataset_vocab_hash);

// Relative retention improvement, in percent.
double iur(double predicted_mean, double logged_mean);

// Percentage of users whose predicted retention falls below the threshold.
double nrc(const std::vector<double>& per_user_predicted,
           double threshold = 0.5);

// Deterministic user-level partition into n_splits near-equal groups of
// trajectory indices.
std::vector<std::vector<std::size_t>> partition_users(
    const std::vector<Trajectory>& test_set, int n_splits, std::uint64_t seed);

using MetricFn = std::function<double(const std::vector<Trajectory>&)>;

struct VarianceReport {
  std::vector<double> per_split;
  double variance = 0.0;  // population variance across splits
};

VarianceReport variance_analysis(const MetricFn& metric,
                                 const std::vector<Trajectory>& test_set,
                                 int n_splits, std::uint64_t seed);

// The full metric suite for one rollout. Overlap metrics skip rounds whose
// log holds no first-time items (nothing to match); at least one scorable
// round is required.
struct MetricValues {
  double bleu = 0.0;
  double rouge = 0.0;
  double hr = 0.0;
  double ndcg = 0.0;
  double mb_urs = 0.0;
  double sb_urs = 0.0;
  double asb_urs = 0.0;
  double iur = 0.0;
  double nrc = 0.0;
};

struct MetricInputs {
  const std::vector<RolloutRecord>* rollouts = nullptr;
  const std::vector<Trajectory>* test_set = nullptr;
  const RewardModel* reward_model = nullptr;
  std::uint64_t vocab_hash = 0;
  int top_k = 10;               // HR/NDCG cutoff
  double nrc_threshold = 0.5;
};

MetricValues compute_metric_values(const MetricInputs& inputs);

// A run's results: the overall values, optionally the per-split table with
// its variance row, and the resolved config document.
struct MetricReport {
  MetricValues overall;
  int top_k = 10;
  double nrc_threshold = 0.5;
  std::vector<MetricValues> per_split;
  MetricValues split_variance;  // meaningful when per_split is non-empty
  std::string config_echo;

  bool has_variance() const { return !per_split.empty(); }
};

// Structured form (JSON, strict on read) and a flat comma-delimited table
// with one row per scope (overall, each split, the variance row). Every
// value must be finite.
std::string metric_report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const std::string& text);
std::string metric_table_to_string(const MetricReport& report);
void write_metric_report(const std::filesystem::path& path,
                         const MetricReport& report);
void write_metric_table(const std::filesystem::path& path,
                        const MetricReport& report);

}  // namespace dtrec
