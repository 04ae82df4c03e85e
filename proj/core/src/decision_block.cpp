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
#include "dtrec/decision_block.hpp"

#include <cmath>

#include "dtrec/error.hpp"

namespace dtrec {

namespace {

constexpr double kMaskedOut = -1e30;

// Inverted dropout as an elementwise input mask: kept entries carry
// 1/(1-rate) so evaluation needs no rescaling.
ad::Var apply_dropout(ad::Tape& t, ad::Var x, double rate,
                      std::mt19937_64* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  const ad::Mat& v = t.val(x);
  std::bernoulli_distribution keep(1.0 - rate);
  ad::Mat mask(v.rows(), v.cols());
  const double scale = 1.0 / (1.0 - rate);
  for (int i = 0; i < mask.rows(); ++i)
    for (int j = 0; j < mask.cols(); ++j)
      mask(i, j) = keep(*rng) ? scale : 0.0;
  return t.cmul(x, t.input(std::move(mask)));
}

}  // namespace

DecisionBlockParams DecisionBlockParams::create(
    const DecisionBlockConfig& config, std::mt19937_64& rng) {
  require(config.dim > 0 && config.heads > 0 && config.layers > 0 &&
              config.max_steps > 0,
          ErrorKind::kConfig, "decision block dims must be positive");
  require(config.dim % config.heads == 0, ErrorKind::kConfig,
          "attention heads must divide the embedding dim");
  require(config.dropout >= 0.0 && config.dropout < 1.0, ErrorKind::kConfig,
          "dropout must lie in [0, 1)");
  DecisionBlockParams p;
  p.config = config;
  const int d = config.dim;
  const int f = config.ffn_dim();
  p.pos = ad::Mat(config.max_steps, d);
  init_uniform(p.pos, rng, d);
  p.kind = ad::Mat(3, d);
  init_uniform(p.kind, rng, d);
  for (int l = 0; l < config.layers; ++l) {
    AttentionLayerParams lay;
    lay.ln1_gamma = ad::Mat::Ones(1, d);
    lay.ln1_beta = ad::Mat::Zero(1, d);
    auto proj = [&](ad::Mat& m) {
      m = ad::Mat(d, d);
      init_uniform(m, rng, d);
    };
    proj(lay.Wq);
    proj(lay.Wk);
    proj(lay.Wv);
    proj(lay.Wo);
    lay.bq = ad::Mat::Zero(1, d);
    lay.bk = ad::Mat::Zero(1, d);
    lay.bv = ad::Mat::Zero(1, d);
    lay.bo = ad::Mat::Zero(1, d);
    lay.ln2_gamma = ad::Mat::Ones(1, d);
    lay.ln2_beta = ad::Mat::Zero(1, d);
    lay.W1 = ad::Mat(d, f);
    init_uniform(lay.W1, rng, d);
    lay.b1 = ad::Mat::Zero(1, f);
    lay.W2 = ad::Mat(f, d);
    init_uniform(lay.W2, rng, f);
    lay.b2 = ad::Mat::Zero(1, d);
    p.layers.push_back(std::move(lay));
  }
  return p;
}

void DecisionBlockParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".pos", &pos});
  out.push_back({prefix + ".kind", &kind});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    AttentionLayerParams& lay = layers[l];
    const std::string base = prefix + ".layer" + std::to_string(l);
    out.push_back({base + ".ln1_gamma", &lay.ln1_gamma});
    out.push_back({base + ".ln1_beta", &lay.ln1_beta});
    out.push_back({base + ".Wq", &lay.Wq});
    out.push_back({base + ".bq", &lay.bq});
    out.push_back({base + ".Wk", &lay.Wk});
    out.push_back({base + ".bk", &lay.bk});
    out.push_back({base + ".Wv", &lay.Wv});
    out.push_back({base + ".bv", &lay.bv});
    out.push_back({base + ".Wo", &lay.Wo});
    out.push_back({base + ".bo", &lay.bo});
    out.push_back({base + ".ln2_gamma", &lay.ln2_gamma});
    out.push_back({base + ".ln2_beta", &lay.ln2_beta});
    out.push_back({base + ".W1", &lay.W1});
    out.push_back({base + ".b1", &lay.b1});
    out.push_back({base + ".W2", &lay.W2});
    out.push_back({base + ".b2", &lay.b2});
  }
}

TokenizedTrajectory interleave(ad::Tape& t, const DecisionBlockParams& p,
                               const std::vector<ad::Var>& reward_embs,
                               const std::vector<ad::Var>& state_embs,
                               const std::vector<ad::Var>& action_embs) {
  const int steps = static_cast<int>(reward_embs.size());
  require(steps > 0, ErrorKind::kShape, "interleave: empty trajectory");
  require(static_cast<int>(state_embs.size()) == steps, ErrorKind::kShape,
          "interleave: reward/state length mismatch");
  const int actions = static_cast<int>(action_embs.size());
  require(actions == steps || actions == steps - 1, ErrorKind::kShape,
          "interleave: action count must be T or T-1");
  require(steps <= p.config.max_steps, ErrorKind::kShape,
          "trajectory longer than the position table");

  TokenizedTrajectory tok;
  tok.n_steps = steps;
  std::vector<ad::Var> rows;
  std::vector<int> pos_index;
  std::vector<int> kind_index;
  for (int step = 0; step < steps; ++step) {
    auto push = [&](ad::Var emb, TokenKind kind) {
      rows.push_back(emb);
      pos_index.push_back(step);
      kind_index.push_back(static_cast<int>(kind));
      tok.timestep.push_back(step + 1);
      tok.kind.push_back(kind);
    };
    push(reward_embs[static_cast<std::size_t>(step)], TokenKind::kReward);
    tok.state_positions.push_back(static_cast<int>(rows.size()));
    push(state_embs[static_cast<std::size_t>(step)], TokenKind::kState);
    if (step < actions) {
      tok.action_positions.push_back(static_cast<int>(rows.size()));
      push(action_embs[static_cast<std::size_t>(step)], TokenKind::kAction);
    }
  }

  auto stacked = t.concat_rows(rows);
  auto pos_rows = t.gather_rows(t.param(p.pos), pos_index);
  auto kind_rows = t.gather_rows(t.param(p.kind), kind_index);
  tok.tokens = t.add(t.add(stacked, pos_rows), kind_rows);

  const int n = static_cast<int>(rows.size());
  tok.causal_mask = ad::Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) tok.causal_mask(i, j) = kMaskedOut;
  return tok;
}

TokenizedTrajectory interleave_state_action_reward(
    ad::Tape& t, const DecisionBlockParams& p,
    const std::vector<ad::Var>& state_embs,
    const std::vector<ad::Var>& action_embs,
    const std::vector<ad::Var>& reward_embs) {
  const int steps = static_cast<int>(state_embs.size());
  require(steps > 0, ErrorKind::kShape, "interleave: empty trajectory");
  require(static_cast<int>(action_embs.size()) == steps &&
              static_cast<int>(reward_embs.size()) == steps,
          ErrorKind::kShape, "interleave: stream length mismatch");
  require(steps <= p.config.max_steps, ErrorKind::kShape,
          "trajectory longer than the position table");

  TokenizedTrajectory tok;
  tok.n_steps = steps;
  std::vector<ad::Var> rows;
  std::vector<int> pos_index;
  std::vector<int> kind_index;
  for (int step = 0; step < steps; ++step) {
    auto push = [&](ad::Var emb, TokenKind kind) {
      rows.push_back(emb);
      pos_index.push_back(step);
      kind_index.push_back(static_cast<int>(kind));
      tok.timestep.push_back(step + 1);
      tok.kind.push_back(kind);
    };
    tok.state_positions.push_back(static_cast<int>(rows.size()));
    push(state_embs[static_cast<std::size_t>(step)], TokenKind::kState);
    tok.action_positions.push_back(static_cast<int>(rows.size()));
    push(action_embs[static_cast<std::size_t>(step)], TokenKind::kAction);
    push(reward_embs[static_cast<std::size_t>(step)], TokenKind::kReward);
  }

  auto stacked = t.concat_rows(rows);
  auto pos_rows = t.gather_rows(t.param(p.pos), pos_index);
  auto kind_rows = t.gather_rows(t.param(p.kind), kind_index);
  tok.tokens = t.add(t.add(stacked, pos_rows), kind_rows);

  const int n = static_cast<int>(rows.size());
  tok.causal_mask = ad::Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) tok.causal_mask(i, j) = kMaskedOut;
  return tok;
}

ad::Var decision_forward(ad::Tape& t, const DecisionBlockParams& p,
                         const TokenizedTrajectory& tok,
                         const ForwardOptions& options) {
  return decision_forward_rows(t, p, tok, tok.state_positions, options);
}

ad::Var decision_forward_rows(ad::Tape& t, const DecisionBlockParams& p,
                              const TokenizedTrajectory& tok,
                              const std::vector<int>& rows,
                              const ForwardOptions& options) {
  const int d = p.config.dim;
  const int heads = p.config.heads;
  const int dh = d / heads;
  const int n = tok.token_count();
  require(t.val(tok.tokens).rows() == n && t.val(tok.tokens).cols() == d,
          ErrorKind::kShape, "tokenized trajectory shape mismatch");
  t.require_finite(tok.tokens, "decision block input");

  auto x = tok.tokens;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const AttentionLayerParams& lay = p.layers[l];
    auto normed =
        t.layer_norm(x, t.param(lay.ln1_gamma), t.param(lay.ln1_beta));
    auto q = t.add_rowvec(t.matmul(normed, t.param(lay.Wq)), t.param(lay.bq));
    auto k = t.add_rowvec(t.matmul(normed, t.param(lay.Wk)), t.param(lay.bk));
    auto v = t.add_rowvec(t.matmul(normed, t.param(lay.Wv)), t.param(lay.bv));

    std::vector<ad::Var> contexts;
    contexts.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto qh = t.block(q, 0, h * dh, n, dh);
      auto kh = t.block(k, 0, h * dh, n, dh);
      auto vh = t.block(v, 0, h * dh, n, dh);
      auto scores =
          t.scale(t.matmul(qh, kh, false, true), 1.0 / std::sqrt(double(dh)));
      auto probs = t.softmax_rows_masked(scores, tok.causal_mask);
      if (options.attention_out != nullptr)
        options.attention_out->push_back(t.val(probs));
      contexts.push_back(t.matmul(probs, vh));
    }
    auto attn = t.add_rowvec(
        t.matmul(t.concat_cols(contexts), t.param(lay.Wo)), t.param(lay.bo));
    attn = apply_dropout(t, attn, p.config.dropout, options.dropout_rng);
    x = t.add(x, attn);

    auto normed2 =
        t.layer_norm(x, t.param(lay.ln2_gamma), t.param(lay.ln2_beta));
    auto hidden = t.gelu(
        t.add_rowvec(t.matmul(normed2, t.param(lay.W1)), t.param(lay.b1)));
    auto ffn =
        t.add_rowvec(t.matmul(hidden, t.param(lay.W2)), t.param(lay.b2));
    ffn = apply_dropout(t, ffn, p.config.dropout, options.dropout_rng);
    x = t.add(x, ffn);
    t.require_finite(x, "decision block layer " + std::to_string(l));
  }
  return t.gather_rows(x, rows);
}

}  // namespace dtrec
