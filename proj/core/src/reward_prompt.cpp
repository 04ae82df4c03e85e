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
#include "dtrec/reward_prompt.hpp"

#include "dtrec/error.hpp"

namespace dtrec {

PromptParams PromptParams::create(int buckets, int dim, std::mt19937_64& rng) {
  require(buckets > 0 && dim > 0, ErrorKind::kConfig,
          "prompt buckets and dim must be positive");
  PromptParams p;
  p.w = ad::Mat(1, buckets);
  p.W = ad::Mat(buckets, buckets);
  p.M = ad::Mat(buckets, dim);
  init_uniform(p.w, rng, 1);
  init_uniform(p.W, rng, buckets);
  init_uniform(p.M, rng, buckets);
  return p;
}

void PromptParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".w", &w});
  out.push_back({prefix + ".W", &W});
  out.push_back({prefix + ".M", &M});
}

NaivePromptParams NaivePromptParams::create(int dim, std::mt19937_64& rng) {
  require(dim > 0, ErrorKind::kConfig, "prompt dim must be positive");
  NaivePromptParams p;
  p.k = ad::Mat(1, dim);
  init_uniform(p.k, rng, 1);
  p.b = ad::Mat::Zero(1, dim);
  return p;
}

void NaivePromptParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".k", &k});
  out.push_back({prefix + ".b", &b});
}

ad::Var reward_weights(ad::Tape& t, const PromptParams& p, double rtg) {
  auto h = t.leaky_relu(t.scale(t.param(p.w), rtg), p.leaky_slope);
  auto mixed = t.add(t.matmul(h, t.param(p.W)), t.scale(h, p.alpha));
  return t.softmax_rows(mixed);
}

ad::Var embed_reward(ad::Tape& t, const PromptParams& p, double rtg) {
  return t.matmul(reward_weights(t, p, rtg), t.param(p.M));
}

ad::Var embed_reward_naive(ad::Tape& t, const NaivePromptParams& p,
                           double rtg) {
  return t.add(t.scale(t.param(p.k), rtg), t.param(p.b));
}

ad::Mat reward_weights_value(const PromptParams& p, double rtg) {
  ad::Tape t;
  return t.val(reward_weights(t, p, rtg));
}

ad::Mat embed_reward_value(const PromptParams& p, double rtg) {
  ad::Tape t;
  return t.val(embed_reward(t, p, rtg));
}

}  // namespace dtrec
