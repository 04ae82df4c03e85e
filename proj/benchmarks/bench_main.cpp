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
#include <benchmark/benchmark.h>

#include <random>

#include "dtrec/tape.hpp"

namespace {

using dtrec::ad::Mat;
using dtrec::ad::Tape;

Mat random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

void BM_TapeMatmulBackward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Mat a = random_matrix(d, d, 1);
  Mat b = random_matrix(d, d, 2);
  for (auto _ : state) {
    Tape t;
    auto loss = t.sum_all(t.tanh(t.matmul(t.param(a), t.param(b))));
    t.backward(loss);
    benchmark::DoNotOptimize(t.val(loss)(0, 0));
  }
}
BENCHMARK(BM_TapeMatmulBackward)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
