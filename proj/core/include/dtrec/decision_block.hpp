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

#include <vector>

#include "dtrec/params.hpp"
#include "dtrec/tape.hpp"

namespace dtrec {

enum class TokenKind { kReward = 0, kState = 1, kAction = 2 };

// Interleaved (reward, state, action) token sequence for one trajectory,
// with position and kind embeddings already added. The final action slot is
// absent in an inference prefix.
struct TokenizedTrajectory {
  ad::Var tokens;                     // (3T or 3T-1) x d
  std::vector<int> timestep;          // 1-based step per token
  std::vector<TokenKind> kind;        // cycles reward, state, action
  std::vector<int> state_positions;   // row of s_t per step
  std::vector<int> action_positions;  // row of a_t per step, when present
  ad::Mat causal_mask;                // additive, row attends to cols <= row
  int n_steps = 0;

  int token_count() const { return static_cast<int>(kind.size()); }
};

struct DecisionBlockConfig {
  int dim = 128;
  int heads = 8;
  int layers = 2;
  int ffn_hidden = 0;  // 0 selects 4 * dim
  double dropout = 0.1;
  int max_steps = 50;

  int ffn_dim() const { return ffn_hidden > 0 ? ffn_hidden : 4 * dim; }
};

struct AttentionLayerParams {
  ad::Mat ln1_gamma, ln1_beta;  // 1 x d
  ad::Mat Wq, Wk, Wv, Wo;       // d x d
  ad::Mat bq, bk, bv, bo;       // 1 x d
  ad::Mat ln2_gamma, ln2_beta;  // 1 x d
  ad::Mat W1, b1;               // d x f, 1 x f
  ad::Mat W2, b2;               // f x d, 1 x d
};

struct DecisionBlockParams {
  DecisionBlockConfig config;
  ad::Mat pos;   // max_steps x d, shared by the three tokens of a step
  ad::Mat kind;  // 3 x d, one row per token kind
  std::vector<AttentionLayerParams> layers;

  static DecisionBlockParams create(const DecisionBlockConfig& config,
                                    std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

struct ForwardOptions {
  // Seeded dropout; null disables dropout (evaluation mode).
  std::mt19937_64* dropout_rng = nullptr;
  // When set, receives the softmax rows of every (layer, head) in order.
  std::vector<ad::Mat>* attention_out = nullptr;
};

// Lays out [r_1, s_1, a_1, ...] and adds position and kind embeddings.
// action_embs may hold T or T-1 entries (inference prefix).
TokenizedTrajectory interleave(ad::Tape& t, const DecisionBlockParams& p,
                               const std::vector<ad::Var>& reward_embs,
                               const std::vector<ad::Var>& state_embs,
                               const std::vector<ad::Var>& action_embs);

// Lays out [s_1, a_1, r_1, ...]: the reward-prediction ordering, where the
// token at a_t sees the state and action but never the step's own reward.
// All three streams must hold one entry per step.
TokenizedTrajectory interleave_state_action_reward(
    ad::Tape& t, const DecisionBlockParams& p,
    const std::vector<ad::Var>& state_embs,
    const std::vector<ad::Var>& action_embs,
    const std::vector<ad::Var>& reward_embs);

// Runs the attention stack and reads the predicted action embedding of each
// step at its state-token position; returns a T x d matrix.
ad::Var decision_forward(ad::Tape& t, const DecisionBlockParams& p,
                         const TokenizedTrajectory& tok,
                         const ForwardOptions& options = {});

// Same stack, read at an arbitrary set of token rows.
ad::Var decision_forward_rows(ad::Tape& t, const DecisionBlockParams& p,
                              const TokenizedTrajectory& tok,
                              const std::vector<int>& rows,
                              const ForwardOptions& options = {});

}  // namespace dtrec
