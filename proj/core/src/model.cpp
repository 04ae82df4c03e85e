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
#include "dtrec/model.hpp"

#include "dtrec/error.hpp"
#include "dtrec/rng.hpp"

namespace dtrec {

DecisionBlockConfig ModelConfig::block_config() const {
  DecisionBlockConfig c;
  c.dim = dim;
  c.heads = heads;
  c.layers = block_layers;
  c.ffn_hidden = ffn_hidden;
  c.dropout = dropout;
  c.max_steps = max_trajectory_len;
  return c;
}

void ModelConfig::validate() const {
  require(dim > 0 && prompt_buckets > 0 && heads > 0 && block_layers > 0,
          ErrorKind::kConfig, "model dims must be positive");
  require(dim % heads == 0, ErrorKind::kConfig,
          "attention heads must divide the embedding dim");
  require(state_window > 0, ErrorKind::kConfig,
          "state window must be positive");
  require(action_limit >= 2, ErrorKind::kConfig,
          "action limit needs room for one item plus eos");
  require(max_trajectory_len > 0, ErrorKind::kConfig,
          "trajectory length cap must be positive");
  require(horizon > 0, ErrorKind::kConfig, "horizon must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::kConfig,
          "dropout must lie in [0, 1)");
}

SequenceModel SequenceModel::create(const ModelConfig& config, int vocab_size,
                                    std::uint64_t seed) {
  config.validate();
  require(vocab_size > ItemVocabulary::kFirstItem, ErrorKind::kConfig,
          "vocabulary must contain at least one real item");
  SequenceModel m;
  m.config = config;
  m.vocab_size = vocab_size;
  auto rng = make_rng(seed, "model-init");
  m.prompt = PromptParams::create(config.prompt_buckets, config.dim, rng);
  m.naive = NaivePromptParams::create(config.dim, rng);
  m.constant_token = ad::Mat(1, config.dim);
  init_uniform(m.constant_token, rng, config.dim);
  m.state_items = ItemEmbeddingTable::create(vocab_size, config.dim, rng);
  if (!config.share_item_embeddings)
    m.action_items = ItemEmbeddingTable::create(vocab_size, config.dim, rng);
  m.state_gru = GruParams::create(config.dim, config.dim, rng);
  m.action_gru = GruParams::create(config.dim, config.dim, rng);
  m.block = DecisionBlockParams::create(config.block_config(), rng);
  m.decoder = DecoderParams::create(config.dim, vocab_size, rng);
  return m;
}

void SequenceModel::collect_params(ParamList& out) {
  prompt.collect("prompt", out);
  naive.collect("naive_prompt", out);
  out.push_back({"constant_token", &constant_token});
  state_items.collect("state_items", out);
  if (!config.share_item_embeddings) action_items.collect("action_items", out);
  state_gru.collect("state_gru", out);
  action_gru.collect("action_gru", out);
  block.collect("block", out);
  decoder.collect("decoder", out);
}

StepEncodings encode_steps(ad::Tape& t, const SequenceModel& m,
                           const Trajectory& traj) {
  require(traj.length() > 0, ErrorKind::kShape, "empty trajectory");
  require(traj.length() <= m.config.max_trajectory_len, ErrorKind::kShape,
          "trajectory exceeds the configured length cap");
  StepEncodings enc;
  for (int step = 0; step < traj.length(); ++step) {
    const auto& state = traj.states[static_cast<std::size_t>(step)];
    const auto& action = traj.actions[static_cast<std::size_t>(step)];
    enc.states.push_back(encode_sequence(t, m.state_gru, m.state_items, state,
                                         m.config.state_window,
                                         m.config.last_valid_state));
    enc.actions.push_back(encode_sequence(t, m.action_gru, m.action_table(),
                                          action, m.config.action_limit,
                                          m.config.last_valid_state));
  }
  return enc;
}

std::vector<ad::Var> reward_tokens(ad::Tape& t, const SequenceModel& m,
                                   const std::vector<double>& return_to_go,
                                   const AblationFlags& flags) {
  std::vector<ad::Var> tokens;
  tokens.reserve(return_to_go.size());
  for (double rtg : return_to_go) {
    if (flags.no_reward) {
      tokens.push_back(t.param(m.constant_token));
    } else if (flags.naive_prompt) {
      tokens.push_back(embed_reward_naive(t, m.naive, rtg));
    } else {
      tokens.push_back(embed_reward(t, m.prompt, rtg));
    }
  }
  return tokens;
}

ad::Var predict_actions(ad::Tape& t, const SequenceModel& m,
                        const std::vector<ad::Var>& rewards,
                        const StepEncodings& enc,
                        std::mt19937_64* dropout_rng) {
  auto tok = interleave(t, m.block, rewards, enc.states, enc.actions);
  ForwardOptions opts;
  opts.dropout_rng = dropout_rng;
  return decision_forward(t, m.block, tok, opts);
}

DecodedTrajectory decode_trajectory(ad::Tape& t, const SequenceModel& m,
                                    ad::Var action_embs,
                                    const Trajectory& traj) {
  const int steps = traj.length();
  require(t.val(action_embs).rows() == steps, ErrorKind::kShape,
          "predicted embeddings do not align with the trajectory");
  DecodedTrajectory out;
  std::vector<ad::Var> decoded;
  decoded.reserve(static_cast<std::size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    const auto& truth = traj.actions[static_cast<std::size_t>(step)];
    auto a_tilde = t.block(action_embs, step, 0, 1, m.config.dim);
    decoded.push_back(decode_teacher_forced(t, m.decoder, m.action_table(),
                                            a_tilde, truth,
                                            m.config.action_limit));
    const DecoderTargets targets =
        make_decoder_targets(truth, m.config.action_limit);
    out.labels.insert(out.labels.end(), targets.labels.begin(),
                      targets.labels.end());
    out.valid.insert(out.valid.end(), targets.valid.begin(),
                     targets.valid.end());
  }
  out.embeddings = t.concat_rows(decoded);
  return out;
}

}  // namespace dtrec
