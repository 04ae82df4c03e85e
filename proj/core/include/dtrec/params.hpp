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

#include <random>
#include <string>
#include <vector>

#include "dtrec/tape.hpp"

namespace dtrec {

// Named handle to one learnable matrix. `frozen_row` marks a row whose
// gradient must be discarded (the padding row of an embedding table).
struct ParamRef {
  std::string name;
  ad::Mat* mat = nullptr;
  int frozen_row = -1;
};

using ParamList = std::vector<ParamRef>;

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialisation.
inline void init_uniform(ad::Mat& m, std::mt19937_64& rng, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
}

}  // namespace dtrec
