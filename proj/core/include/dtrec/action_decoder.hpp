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

#include "dtrec/encoders.hpp"
#include "dtrec/params.hpp"
#include "dtrec/tape.hpp"
#include "dtrec/vocabulary.hpp"

namespace dtrec {

// Expands one predicted action embedding into an item sequence. Each cell
// input is the previous item's embedding concatenated with the action
// embedding; the hidden state doubles as the predicted item embedding and
// is projected onto the vocabulary by the head.
struct DecoderParams {
  GruParams gru;  // input 2d, hidden d
  ad::Mat v0;     // 1 x d learned initial hidden
  ad::Mat Wv;     // d x vocab
  ad::Mat bv;     // 1 x vocab

  int dim() const { return gru.hidden_dim(); }
  int vocab_size() const { return static_cast<int>(Wv.cols()); }

  static DecoderParams create(int dim, int vocab_size, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

// Teacher-forcing targets: the truth items, an eos, then zero padding to N.
// `valid` marks the positions that carry loss (items and the eos).
struct DecoderTargets {
  std::vector<int> labels;
  std::vector<std::uint8_t> valid;
};
DecoderTargets make_decoder_targets(const std::vector<int>& truth_items,
                                    int max_len);

// Predicted embeddings for all N positions, fed with bos then the truth
// labels. Requires length(truth_items) <= N-1 so the eos fits.
ad::Var decode_teacher_forced(ad::Tape& t, const DecoderParams& p,
                              const ItemEmbeddingTable& emb, ad::Var a_tilde,
                              const std::vector<int>& truth_items, int max_len);

// Per-position vocabulary logits and probability rows.
ad::Var vocab_logits(ad::Tape& t, const DecoderParams& p, ad::Var v_tilde);
ad::Var project_vocab(ad::Tape& t, const DecoderParams& p, ad::Var v_tilde);

// Greedy decode: argmax items (ties to the lowest index) until eos or the
// length cap. Pad and bos can never be emitted; with `allow_eos` off the
// decode always runs the full cap (fixed-length evaluation).
std::vector<int> decode_autoregressive(const DecoderParams& p,
                                       const ItemEmbeddingTable& emb,
                                       const ad::Mat& a_tilde, int max_len,
                                       bool allow_eos = true);

}  // namespace dtrec
