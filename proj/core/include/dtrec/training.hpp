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
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dtrec/ingest.hpp"
#include "dtrec/model.hpp"
#include "dtrec/params.hpp"
#include "dtrec/tape.hpp"
#include "dtrec/trajectory.hpp"

namespace dtrec {

// Weight for one negative: linear in the reward gap, 1 at gap r_max and
// 1/(r_max+1) at gap 0. Requires 0 <= r_neg <= r_max.
double kappa(double r_neg, double r_max);

// Mean over rows of the dot product between matching rows of two equally
// shaped embedding matrices.
ad::Var similarity(ad::Tape& t, ad::Var v, ad::Var v_neg);

struct WeightedNegative {
  ad::Var embeddings;
  double kappa = 1.0;
};

// Contrastive objective: minus the kappa-weighted sum of similarities
// between the positive embeddings and each negative's embeddings.
ad::Var contrastive_loss(ad::Tape& t, ad::Var positive,
                         const std::vector<WeightedNegative>& negatives);

// Mean over valid rows of -log(prob of the true label). `probs` holds
// probability rows; `valid` marks rows that count.
double ce_loss(const ad::Mat& probs, const std::vector<int>& labels,
               const std::vector<std::uint8_t>& valid);

double total_loss(double ce, double contrastive, double beta);

struct TrainConfig {
  ModelConfig model;
  double beta = 0.5;
  double learning_rate = 0.01;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  int epochs = 10;
  int batch_size = 32;
  int n_negatives = 2;
  NegativeRewardMode negative_mode = NegativeRewardMode::kLowerOnly;
  std::uint64_t seed = 0;
  // max_trajectory_len is normally one of {10, 20, 30, 40, 50}; this flag
  // admits any positive value (used by small test configs).
  bool allow_any_trajectory_len = false;
  AblationFlags ablate;

  void validate() const;  // throws ErrorKind::kConfig
  // Contrastive term is active unless ablated away (removing the reward
  // prompt also removes the contrast over reward prompts).
  bool contrastive_active() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double total = 0.0;
  double ce = 0.0;
  double contrastive = 0.0;
};

struct Checkpoint {
  TrainConfig config;
  std::uint64_t vocab_hash = 0;
  int vocab_size = 0;
  int epoch = 0;
  std::vector<EpochRecord> history;
  SequenceModel model;
};

// Decoupled weight decay Adam with global-norm gradient clipping. Rows
// marked frozen in the parameter list never move and do not count toward
// the clipping norm.
class AdamW {
 public:
  struct Options {
    double learning_rate = 0.01;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  AdamW(ParamList params, const Options& options);

  // One update from gradients aligned with the parameter list.
  void apply(std::vector<ad::Mat>& grads);

  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  Options options_;
  std::vector<ad::Mat> m_;
  std::vector<ad::Mat> v_;
  long step_ = 0;
};

// Collects per-sample tape gradients into one buffer per parameter.
class GradientAccumulator {
 public:
  explicit GradientAccumulator(const ParamList& params);

  void add(ad::Tape& tape);
  void scale(double factor);
  void reset();
  std::vector<ad::Mat>& grads() { return grads_; }

 private:
  const ParamList& params_;
  std::vector<ad::Mat> grads_;
};

struct LossParts {
  double total = 0.0;
  double ce = 0.0;
  double contrastive = 0.0;
};

// Builds the full loss for one trajectory on the tape: sequence prediction
// cross entropy plus beta times the contrastive term over the given
// negatives. Returns the loss Var; components land in `parts` when given.
ad::Var trajectory_loss(ad::Tape& t, const SequenceModel& model,
                        const Trajectory& trajectory,
                        const std::vector<NegativeSample>& negatives,
                        double beta, const AblationFlags& ablate,
                        std::mt19937_64* dropout_rng = nullptr,
                        LossParts* parts = nullptr);

using EpochSink = std::function<void(const EpochRecord&, const Checkpoint&)>;

// Full training loop: deterministic for a fixed config and seed, down to
// bit-identical parameters. `sink` runs after every epoch with the loss
// record and the current checkpoint state.
Checkpoint train(const std::vector<Trajectory>& data, const TrainConfig& config,
                 std::uint64_t vocab_hash, int vocab_size,
                 const EpochSink& sink = {});

// Strict JSON round trip for training configs; unknown keys are rejected.
std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

// Same round trip for the architecture alone (compact), reused by configs
// that wrap a model without the recommender's loss settings.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace dtrec
