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
#include "dtrec/vocabulary.hpp"

namespace dtrec {

// Embedding rows for every vocabulary index. The padding row is kept at
// zero: it starts zero and its gradient row is dropped by the optimiser.
struct ItemEmbeddingTable {
  ad::Mat table;  // vocab_size x d

  int dim() const { return static_cast<int>(table.cols()); }
  int size() const { return static_cast<int>(table.rows()); }

  static ItemEmbeddingTable create(int vocab_size, int dim,
                                   std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

// Gated recurrent unit over row vectors:
//   r  = sigmoid(x Wr + h Ur + br)
//   z  = sigmoid(x Wz + h Uz + bz)
//   n  = tanh(x Wn + r .* (h Un) + bn)
//   h' = (1 - z) .* n + z .* h
struct GruParams {
  ad::Mat Wr, Wz, Wn;  // input_dim x hidden_dim
  ad::Mat Ur, Uz, Un;  // hidden_dim x hidden_dim
  ad::Mat br, bz, bn;  // 1 x hidden_dim

  int input_dim() const { return static_cast<int>(Wr.rows()); }
  int hidden_dim() const { return static_cast<int>(Wr.cols()); }

  static GruParams create(int input_dim, int hidden_dim,
                          std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

ad::Var gru_step(ad::Tape& t, const GruParams& g, ad::Var x, ad::Var h);

// Tape-free cell step for autoregressive decoding and rollouts.
ad::Mat gru_step_value(const GruParams& g, const ad::Mat& x, const ad::Mat& h);

// Runs the cell over the first `n_steps` rows of xs from h0; returns the
// final hidden state (1 x hidden).
ad::Var gru_run(ad::Tape& t, const GruParams& g, ad::Var xs, ad::Var h0,
                int n_steps);

// Same, but stacks every hidden state into an (n_steps x hidden) matrix.
ad::Var gru_run_all(ad::Tape& t, const GruParams& g, ad::Var xs, ad::Var h0,
                    int n_steps);

// Encodes an item-index sequence: embeds the indices zero-padded to `limit`
// positions and runs the cell from a zero hidden state. The readout is the
// hidden state after all `limit` positions; with `last_valid` it is the
// hidden state after the last real item instead (zero for an empty
// sequence), so trailing padding cannot influence the code.
ad::Var encode_sequence(ad::Tape& t, const GruParams& g,
                        const ItemEmbeddingTable& table,
                        const std::vector<int>& items, int limit,
                        bool last_valid);

}  // namespace dtrec
