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

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtrec/error.hpp"

namespace dtrec::ad {

using Mat = Eigen::MatrixXd;

// Handle into a Tape. Cheap to copy; only meaningful for the tape that
// created it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over dense double matrices.
//
// One Tape owns every intermediate value of a single forward pass. Ops
// append nodes; backward() seeds the (scalar) root with 1 and walks the
// nodes in reverse creation order. Parameter leaves are bound to external
// matrices so their gradients can be pulled out afterwards.
//
// Tapes are single-threaded and meant to be short-lived: one per sample.
class Tape {
 public:
  // Leaf holding data; no gradient is tracked through it.
  Var input(Mat value);
  // Leaf bound to a parameter matrix. The tape keeps a pointer to `slot`
  // (no copy); the matrix must outlive the tape.
  Var param(const Mat& slot);

  // c = a * b, with optional transposition of either operand.
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);  // elementwise product
  Var scale(Var a, double c);
  // Adds a 1 x cols row vector to every row of `a`.
  Var add_rowvec(Var a, Var v);

  Var sigmoid(Var a);
  Var tanh(Var a);
  Var leaky_relu(Var a, double negative_slope);
  Var gelu(Var a);  // exact form, x * Phi(x)

  // Row-wise softmax; `additive_mask`, when given, is added to the logits
  // first (use large negative entries to mask positions out).
  Var softmax_rows(Var a);
  Var softmax_rows_masked(Var a, const Mat& additive_mask);

  // Per-row layer normalization with learnable gain/bias (both 1 x cols).
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);

  // Selects rows of `table` by index; duplicates allowed.
  Var gather_rows(Var table, std::vector<int> row_indices);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var block(Var a, int row0, int col0, int rows, int cols);

  Var sum_all(Var a);   // 1x1
  Var mean_all(Var a);  // 1x1
  // (1/rows) * sum_r dot(a.row(r), b.row(r)); shapes must match.
  Var mean_rowwise_dot(Var a, Var b);

  // Mean over rows with valid[r] != 0 of -log softmax(logits.row(r))[label[r]].
  // Computed from logits via log-sum-exp for numerical stability.
  Var ce_with_logits(Var logits, std::vector<int> labels, std::vector<std::uint8_t> valid);
  // Mean squared error against a fixed target of the same shape.
  Var mse(Var a, const Mat& target);

  // Runs reverse accumulation from a scalar root.
  void backward(Var root);

  const Mat& val(Var v) const;
  // Gradient of the last backward() root w.r.t. `v`. Zero matrix if the
  // node was never touched.
  Mat grad(Var v) const;

  // Calls `sink(slot, grad)` for every parameter leaf with a nonzero
  // gradient, in creation order.
  void for_each_param_grad(const std::function<void(const Mat*, const Mat&)>& sink) const;

  // Throws a numeric error mentioning `context` if `v` holds a non-finite
  // value.
  void require_finite(Var v, const std::string& context) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value_store;
    // Set for parameter leaves: the external matrix the leaf is bound to.
    // Node values must not be addressed through pointers into nodes_
    // because the vector reallocates as the tape grows.
    const Mat* external = nullptr;
    Mat grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  int push_value(Mat value, bool needs_grad);
  Mat& grad_ref(int id);
  void bump(int id, const Mat& g);

  const Mat& v(int id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value_store;
  }
  bool ng(int id) const { return nodes_[id].needs_grad; }

  std::vector<Node> nodes_;
  // One leaf node per bound parameter matrix, so gradients for a matrix
  // used at many graph sites accumulate in a single place.
  std::unordered_map<const Mat*, int> param_ids_;
};

}  // namespace dtrec::ad
