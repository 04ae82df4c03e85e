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

#include "dtrec/params.hpp"
#include "dtrec/tape.hpp"

namespace dtrec {

// Learned soft discretisation of a scalar return into bucket weights, plus
// bucket embeddings. With h = leaky_relu(r * w) the weights are
// z = softmax(h W + alpha * h) and the embedding is z M. At r = 0 the
// weights are exactly uniform because the map has no bias terms.
struct PromptParams {
  ad::Mat w;  // 1 x B
  ad::Mat W;  // B x B
  ad::Mat M;  // B x d bucket embeddings
  double alpha = 0.1;
  double leaky_slope = 0.01;

  int buckets() const { return static_cast<int>(w.cols()); }
  int dim() const { return static_cast<int>(M.cols()); }

  static PromptParams create(int buckets, int dim, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

// Ablation: a plain affine lift of the scalar return, out = r * k + b.
struct NaivePromptParams {
  ad::Mat k;  // 1 x d
  ad::Mat b;  // 1 x d

  int dim() const { return static_cast<int>(k.cols()); }

  static NaivePromptParams create(int dim, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

// Bucket weights for one scalar return; 1 x B row summing to one.
ad::Var reward_weights(ad::Tape& t, const PromptParams& p, double rtg);

// Prompt embedding, 1 x d.
ad::Var embed_reward(ad::Tape& t, const PromptParams& p, double rtg);
ad::Var embed_reward_naive(ad::Tape& t, const NaivePromptParams& p,
                           double rtg);

// Value-only convenience wrappers.
ad::Mat reward_weights_value(const PromptParams& p, double rtg);
ad::Mat embed_reward_value(const PromptParams& p, double rtg);

}  // namespace dtrec
