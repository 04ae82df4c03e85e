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
#include "dtrec/action_decoder.hpp"

#include <limits>

#include "dtrec/error.hpp"

namespace dtrec {

DecoderParams DecoderParams::create(int dim, int vocab_size,
                                    std::mt19937_64& rng) {
  require(dim > 0 && vocab_size > ItemVocabulary::kFirstItem,
          ErrorKind::kConfig, "decoder needs a dim and real items");
  DecoderParams p;
  p.gru = GruParams::create(2 * dim, dim, rng);
  p.v0 = ad::Mat(1, dim);
  init_uniform(p.v0, rng, dim);
  p.Wv = ad::Mat(dim, vocab_size);
  init_uniform(p.Wv, rng, dim);
  p.bv = ad::Mat::Zero(1, vocab_size);
  return p;
}

void DecoderParams::collect(const std::string& prefix, ParamList& out) {
  gru.collect(prefix + ".gru", out);
  out.push_back({prefix + ".v0", &v0});
  out.push_back({prefix + ".Wv", &Wv});
  out.push_back({prefix + ".bv", &bv});
}

DecoderTargets make_decoder_targets(const std::vector<int>& truth_items,
                                    int max_len) {
  require(static_cast<int>(truth_items.size()) <= max_len - 1,
          ErrorKind::kShape, "truth longer than the decoder length budget");
  DecoderTargets targets;
  targets.labels = truth_items;
  targets.labels.push_back(ItemVocabulary::kEos);
  targets.labels.resize(static_cast<std::size_t>(max_len),
                        ItemVocabulary::kPad);
  targets.valid.assign(static_cast<std::size_t>(max_len), 0);
  for (std::size_t i = 0; i <= truth_items.size(); ++i) targets.valid[i] = 1;
  return targets;
}

ad::Var decode_teacher_forced(ad::Tape& t, const DecoderParams& p,
                              const ItemEmbeddingTable& emb, ad::Var a_tilde,
                              const std::vector<int>& truth_items,
                              int max_len) {
  const DecoderTargets targets = make_decoder_targets(truth_items, max_len);
  std::vector<int> inputs;
  inputs.reserve(static_cast<std::size_t>(max_len));
  inputs.push_back(ItemVocabulary::kBos);
  inputs.insert(inputs.end(), targets.labels.begin(),
                targets.labels.end() - 1);

  auto items = t.gather_rows(t.param(emb.table), inputs);
  auto context = t.concat_rows(
      std::vector<ad::Var>(static_cast<std::size_t>(max_len), a_tilde));
  auto xs = t.concat_cols({items, context});
  return gru_run_all(t, p.gru, xs, t.param(p.v0), max_len);
}

ad::Var vocab_logits(ad::Tape& t, const DecoderParams& p, ad::Var v_tilde) {
  return t.add_rowvec(t.matmul(v_tilde, t.param(p.Wv)), t.param(p.bv));
}

ad::Var project_vocab(ad::Tape& t, const DecoderParams& p, ad::Var v_tilde) {
  return t.softmax_rows(vocab_logits(t, p, v_tilde));
}

std::vector<int> decode_autoregressive(const DecoderParams& p,
                                       const ItemEmbeddingTable& emb,
                                       const ad::Mat& a_tilde, int max_len,
                                       bool allow_eos) {
  require(a_tilde.rows() == 1 && a_tilde.cols() == p.dim(), ErrorKind::kShape,
          "action embedding shape mismatch");
  require(a_tilde.allFinite(), ErrorKind::kNumeric,
          "non-finite action embedding");
  constexpr double kBlocked = -std::numeric_limits<double>::infinity();

  std::vector<int> out;
  ad::Mat h = p.v0;
  int item = ItemVocabulary::kBos;
  for (int n = 0; n < max_len; ++n) {
    ad::Mat x(1, 2 * p.dim());
    x << emb.table.row(item), a_tilde;
    h = gru_step_value(p.gru, x, h);
    Eigen::RowVectorXd logits = h * p.Wv + p.bv;
    logits(ItemVocabulary::kPad) = kBlocked;
    logits(ItemVocabulary::kBos) = kBlocked;
    if (!allow_eos) logits(ItemVocabulary::kEos) = kBlocked;
    int best = 0;
    logits.maxCoeff(&best);  // first maximum wins on ties
    if (best == ItemVocabulary::kEos) break;
    out.push_back(best);
    item = best;
  }
  return out;
}

}  // namespace dtrec
