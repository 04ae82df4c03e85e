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
#include <vector>

#include "dtrec/action_decoder.hpp"
#include "dtrec/decision_block.hpp"
#include "dtrec/encoders.hpp"
#include "dtrec/params.hpp"
#include "dtrec/reward_prompt.hpp"
#include "dtrec/trajectory.hpp"

namespace dtrec {

struct ModelConfig {
  int dim = 128;
  int prompt_buckets = 10;
  int heads = 8;
  int block_layers = 2;
  int ffn_hidden = 0;  // 0 selects 4 * dim
  double dropout = 0.1;
  int state_window = 30;
  int action_limit = 20;        // decoder length budget N
  int max_trajectory_len = 10;  // steps kept per trajectory, sizes positions
  bool last_valid_state = false;
  bool share_item_embeddings = true;
  int horizon = 7;  // retention look-ahead K

  DecisionBlockConfig block_config() const;
  void validate() const;
};

// Which model variant trains or runs: no_reward replaces every reward token
// by one learned constant (and disables the contrastive term, which would
// compare identical inputs); naive_prompt swaps the soft-bucket prompt for
// the affine lift.
struct AblationFlags {
  bool no_reward = false;
  bool no_contrastive = false;
  bool no_weight = false;
  bool naive_prompt = false;
};

// Every learnable component of the recommender. All variants' parameters
// exist regardless of the ablation flags so checkpoints share one manifest.
struct SequenceModel {
  ModelConfig config;
  int vocab_size = 0;
  PromptParams prompt;
  NaivePromptParams naive;
  ad::Mat constant_token;  // 1 x d reward stand-in for no_reward
  ItemEmbeddingTable state_items;
  ItemEmbeddingTable action_items;  // empty when share_item_embeddings
  GruParams state_gru;
  GruParams action_gru;
  DecisionBlockParams block;
  DecoderParams decoder;

  static SequenceModel create(const ModelConfig& config, int vocab_size,
                              std::uint64_t seed);
  void collect_params(ParamList& out);

  const ItemEmbeddingTable& action_table() const {
    return config.share_item_embeddings ? state_items : action_items;
  }
};

// Per-step state and action codes for one trajectory; shared between the
// positive pass and every negative pass.
struct StepEncodings {
  std::vector<ad::Var> states;
  std::vector<ad::Var> actions;
};

StepEncodings encode_steps(ad::Tape& t, const SequenceModel& m,
                           const Trajectory& traj);

// One reward token per step from the return-to-go values, routed by the
// ablation flags.
std::vector<ad::Var> reward_tokens(ad::Tape& t, const SequenceModel& m,
                                   const std::vector<double>& return_to_go,
                                   const AblationFlags& flags);

// Decision-block pass over a full teacher-forced trajectory: T x d matrix
// of predicted action embeddings.
ad::Var predict_actions(ad::Tape& t, const SequenceModel& m,
                        const std::vector<ad::Var>& rewards,
                        const StepEncodings& enc,
                        std::mt19937_64* dropout_rng = nullptr);

// Teacher-forced decodes of every step stacked into (T*N) x d, with the
// aligned labels and loss mask.
struct DecodedTrajectory {
  ad::Var embeddings;
  std::vector<int> labels;
  std::vector<std::uint8_t> valid;
};

DecodedTrajectory decode_trajectory(ad::Tape& t, const SequenceModel& m,
                                    ad::Var action_embs,
                                    const Trajectory& traj);

}  // namespace dtrec
