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
#include "dtrec/tape.hpp"

#include <cmath>
#include <utility>

namespace dtrec::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double phi_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double phi_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

int Tape::push_value(Mat value, bool needs_grad) {
  Node node;
  node.value_store = std::move(value);
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_ref(int id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    const Mat& value = v(id);
    node.grad = Mat::Zero(value.rows(), value.cols());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::bump(int id, const Mat& g) {
  if (!nodes_[id].needs_grad) return;
  grad_ref(id) += g;
}

Var Tape::input(Mat value) { return Var{push_value(std::move(value), false)}; }

Var Tape::param(const Mat& slot) {
  auto it = param_ids_.find(&slot);
  if (it != param_ids_.end()) return Var{it->second};
  Node node;
  node.external = &slot;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_ids_.emplace(&slot, id);
  return Var{id};
}

const Mat& Tape::val(Var var) const { return v(var.id); }

Mat Tape::grad(Var var) const {
  const Node& node = nodes_[var.id];
  if (node.has_grad) return node.grad;
  const Mat& value = v(var.id);
  return Mat::Zero(value.rows(), value.cols());
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Mat& ma = v(a.id);
  const Mat& mb = v(b.id);
  const long inner_a = trans_a ? ma.rows() : ma.cols();
  const long inner_b = trans_b ? mb.cols() : mb.rows();
  require(inner_a == inner_b, ErrorKind::kShape, "matmul: inner dimensions differ");
  Mat out;
  if (!trans_a && !trans_b) out = ma * mb;
  else if (trans_a && !trans_b) out = ma.transpose() * mb;
  else if (!trans_a && trans_b) out = ma * mb.transpose();
  else out = ma.transpose() * mb.transpose();

  int id = push_value(std::move(out), ng(a.id) || ng(b.id));
  nodes_[id].backward = [id, a, b, trans_a, trans_b](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    const Mat& ma2 = t.v(a.id);
    const Mat& mb2 = t.v(b.id);
    if (t.ng(a.id)) {
      Mat ga;
      if (!trans_a && !trans_b) ga = g * mb2.transpose();
      else if (trans_a && !trans_b) ga = mb2 * g.transpose();
      else if (!trans_a && trans_b) ga = g * mb2;
      else ga = (g * mb2).transpose();
      t.bump(a.id, ga);
    }
    if (t.ng(b.id)) {
      Mat gb;
      if (!trans_a && !trans_b) gb = ma2.transpose() * g;
      else if (trans_a && !trans_b) gb = ma2 * g;
      else if (!trans_a && trans_b) gb = g.transpose() * ma2;
      else gb = (ma2 * g).transpose();
      t.bump(b.id, gb);
    }
  };
  return Var{id};
}

Var Tape::add(Var a, Var b) {
  const Mat& ma = v(a.id);
  const Mat& mb = v(b.id);
  require(ma.rows() == mb.rows() && ma.cols() == mb.cols(), ErrorKind::kShape,
          "add: shapes differ");
  int id = push_value(ma + mb, ng(a.id) || ng(b.id));
  nodes_[id].backward = [id, a, b](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    t.bump(a.id, g);
    t.bump(b.id, g);
  };
  return Var{id};
}

Var Tape::sub(Var a, Var b) {
  const Mat& ma = v(a.id);
  const Mat& mb = v(b.id);
  require(ma.rows() == mb.rows() && ma.cols() == mb.cols(), ErrorKind::kShape,
          "sub: shapes differ");
  int id = push_value(ma - mb, ng(a.id) || ng(b.id));
  nodes_[id].backward = [id, a, b](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    t.bump(a.id, g);
    if (t.ng(b.id)) t.bump(b.id, -g);
  };
  return Var{id};
}

Var Tape::cmul(Var a, Var b) {
  const Mat& ma = v(a.id);
  const Mat& mb = v(b.id);
  require(ma.rows() == mb.rows() && ma.cols() == mb.cols(), ErrorKind::kShape,
          "cmul: shapes differ");
  int id = push_value(ma.cwiseProduct(mb), ng(a.id) || ng(b.id));
  nodes_[id].backward = [id, a, b](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    if (t.ng(a.id)) t.bump(a.id, g.cwiseProduct(t.v(b.id)));
    if (t.ng(b.id)) t.bump(b.id, g.cwiseProduct(t.v(a.id)));
  };
  return Var{id};
}

Var Tape::scale(Var a, double c) {
  int id = push_value(v(a.id) * c, ng(a.id));
  nodes_[id].backward = [id, a, c](Tape& t) { t.bump(a.id, t.nodes_[id].grad * c); };
  return Var{id};
}

Var Tape::add_rowvec(Var a, Var vec) {
  const Mat& ma = v(a.id);
  const Mat& mv = v(vec.id);
  require(mv.rows() == 1 && mv.cols() == ma.cols(), ErrorKind::kShape,
          "add_rowvec: vector must be 1 x cols");
  Mat out = ma;
  out.rowwise() += mv.row(0);
  int id = push_value(std::move(out), ng(a.id) || ng(vec.id));
  nodes_[id].backward = [id, a, vec](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    t.bump(a.id, g);
    if (t.ng(vec.id)) t.bump(vec.id, g.colwise().sum());
  };
  return Var{id};
}

Var Tape::sigmoid(Var a) {
  Mat out = v(a.id).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a](Tape& t) {
    const Mat& y = t.v(id);
    t.bump(a.id, t.nodes_[id].grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  };
  return Var{id};
}

Var Tape::tanh(Var a) {
  Mat out = v(a.id).array().tanh().matrix();
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a](Tape& t) {
    const Mat& y = t.v(id);
    t.bump(a.id, t.nodes_[id].grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  };
  return Var{id};
}

Var Tape::leaky_relu(Var a, double negative_slope) {
  Mat out = v(a.id).unaryExpr(
      [negative_slope](double x) { return x >= 0.0 ? x : negative_slope * x; });
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a, negative_slope](Tape& t) {
    const Mat& x = t.v(a.id);
    Mat slope = x.unaryExpr(
        [negative_slope](double e) { return e >= 0.0 ? 1.0 : negative_slope; });
    t.bump(a.id, t.nodes_[id].grad.cwiseProduct(slope));
  };
  return Var{id};
}

Var Tape::gelu(Var a) {
  Mat out = v(a.id).unaryExpr([](double x) { return x * phi_cdf(x); });
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a](Tape& t) {
    const Mat& x = t.v(a.id);
    Mat deriv = x.unaryExpr([](double e) { return phi_cdf(e) + e * phi_pdf(e); });
    t.bump(a.id, t.nodes_[id].grad.cwiseProduct(deriv));
  };
  return Var{id};
}

Var Tape::softmax_rows(Var a) { return softmax_rows_masked(a, Mat()); }

Var Tape::softmax_rows_masked(Var a, const Mat& additive_mask) {
  Mat logits = v(a.id);
  if (additive_mask.size() > 0) {
    require(additive_mask.rows() == logits.rows() && additive_mask.cols() == logits.cols(),
            ErrorKind::kShape, "softmax mask shape mismatch");
    logits += additive_mask;
  }
  Mat out(logits.rows(), logits.cols());
  for (long r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a](Tape& t) {
    const Mat& y = t.v(id);
    const Mat& g = t.nodes_[id].grad;
    Mat gx(y.rows(), y.cols());
    for (long r = 0; r < y.rows(); ++r) {
      double dot = g.row(r).dot(y.row(r));
      gx.row(r) = (g.row(r).array() - dot) * y.row(r).array();
    }
    t.bump(a.id, gx);
  };
  return Var{id};
}

Var Tape::layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Mat& x = v(a.id);
  const Mat& gm = v(gamma.id);
  const Mat& bt = v(beta.id);
  require(gm.rows() == 1 && gm.cols() == x.cols(), ErrorKind::kShape,
          "layer_norm: gamma must be 1 x cols");
  require(bt.rows() == 1 && bt.cols() == x.cols(), ErrorKind::kShape,
          "layer_norm: beta must be 1 x cols");
  const long n = x.cols();
  Mat xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (long r = 0; r < x.rows(); ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (x.row(r).array() - mean) * is;
  }
  Mat out = (xhat.array().rowwise() * gm.row(0).array()).rowwise() + bt.row(0).array();
  int id = push_value(std::move(out), ng(a.id) || ng(gamma.id) || ng(beta.id));
  nodes_[id].backward = [id, a, gamma, beta, xhat, inv_std](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    const Mat& gm2 = t.v(gamma.id);
    const long n2 = g.cols();
    if (t.ng(gamma.id)) t.bump(gamma.id, (g.array() * xhat.array()).colwise().sum().matrix());
    if (t.ng(beta.id)) t.bump(beta.id, g.colwise().sum());
    if (t.ng(a.id)) {
      Mat gx(g.rows(), n2);
      for (long r = 0; r < g.rows(); ++r) {
        Eigen::RowVectorXd gy = g.row(r).cwiseProduct(gm2.row(0));
        double m1 = gy.mean();
        double m2 = gy.cwiseProduct(xhat.row(r)).mean();
        gx.row(r) = ((gy.array() - m1) - xhat.row(r).array() * m2) * inv_std(r);
      }
      t.bump(a.id, gx);
    }
  };
  return Var{id};
}

Var Tape::gather_rows(Var table, std::vector<int> row_indices) {
  const Mat& tab = v(table.id);
  for (int idx : row_indices) {
    require(idx >= 0 && idx < tab.rows(), ErrorKind::kVocab,
            "gather_rows: index " + std::to_string(idx) + " out of range");
  }
  Mat out(static_cast<long>(row_indices.size()), tab.cols());
  for (std::size_t i = 0; i < row_indices.size(); ++i) out.row(i) = tab.row(row_indices[i]);
  int id = push_value(std::move(out), ng(table.id));
  nodes_[id].backward = [id, table, idx = std::move(row_indices)](Tape& t) {
    if (!t.ng(table.id)) return;
    const Mat& g = t.nodes_[id].grad;
    Mat& gt = t.grad_ref(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(i);
  };
  return Var{id};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::kShape, "concat_rows: no parts");
  long rows = 0;
  const long cols = v(parts[0].id).cols();
  bool needs = false;
  for (Var p : parts) {
    require(v(p.id).cols() == cols, ErrorKind::kShape, "concat_rows: column mismatch");
    rows += v(p.id).rows();
    needs = needs || ng(p.id);
  }
  Mat out(rows, cols);
  long at = 0;
  for (Var p : parts) {
    out.middleRows(at, v(p.id).rows()) = v(p.id);
    at += v(p.id).rows();
  }
  int id = push_value(std::move(out), needs);
  nodes_[id].backward = [id, parts](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    long at2 = 0;
    for (Var p : parts) {
      long r = t.v(p.id).rows();
      if (t.ng(p.id)) t.bump(p.id, g.middleRows(at2, r));
      at2 += r;
    }
  };
  return Var{id};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::kShape, "concat_cols: no parts");
  long cols = 0;
  const long rows = v(parts[0].id).rows();
  bool needs = false;
  for (Var p : parts) {
    require(v(p.id).rows() == rows, ErrorKind::kShape, "concat_cols: row mismatch");
    cols += v(p.id).cols();
    needs = needs || ng(p.id);
  }
  Mat out(rows, cols);
  long at = 0;
  for (Var p : parts) {
    out.middleCols(at, v(p.id).cols()) = v(p.id);
    at += v(p.id).cols();
  }
  int id = push_value(std::move(out), needs);
  nodes_[id].backward = [id, parts](Tape& t) {
    const Mat& g = t.nodes_[id].grad;
    long at2 = 0;
    for (Var p : parts) {
      long c = t.v(p.id).cols();
      if (t.ng(p.id)) t.bump(p.id, g.middleCols(at2, c));
      at2 += c;
    }
  };
  return Var{id};
}

Var Tape::block(Var a, int row0, int col0, int rows, int cols) {
  const Mat& ma = v(a.id);
  require(row0 >= 0 && col0 >= 0 && row0 + rows <= ma.rows() && col0 + cols <= ma.cols(),
          ErrorKind::kShape, "block: out of range");
  int id = push_value(ma.block(row0, col0, rows, cols), ng(a.id));
  nodes_[id].backward = [id, a, row0, col0, rows, cols](Tape& t) {
    if (!t.ng(a.id)) return;
    Mat& ga = t.grad_ref(a.id);
    ga.block(row0, col0, rows, cols) += t.nodes_[id].grad;
  };
  return Var{id};
}

Var Tape::sum_all(Var a) {
  Mat out(1, 1);
  out(0, 0) = v(a.id).sum();
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a](Tape& t) {
    double g = t.nodes_[id].grad(0, 0);
    const Mat& ma = t.v(a.id);
    t.bump(a.id, Mat::Constant(ma.rows(), ma.cols(), g));
  };
  return Var{id};
}

Var Tape::mean_all(Var a) {
  const Mat& ma = v(a.id);
  const double inv = 1.0 / static_cast<double>(ma.size());
  Mat out(1, 1);
  out(0, 0) = ma.sum() * inv;
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a, inv](Tape& t) {
    double g = t.nodes_[id].grad(0, 0) * inv;
    const Mat& ma2 = t.v(a.id);
    t.bump(a.id, Mat::Constant(ma2.rows(), ma2.cols(), g));
  };
  return Var{id};
}

Var Tape::mean_rowwise_dot(Var a, Var b) {
  const Mat& ma = v(a.id);
  const Mat& mb = v(b.id);
  require(ma.rows() == mb.rows() && ma.cols() == mb.cols(), ErrorKind::kShape,
          "mean_rowwise_dot: shapes differ");
  const double inv = 1.0 / static_cast<double>(ma.rows());
  Mat out(1, 1);
  out(0, 0) = ma.cwiseProduct(mb).sum() * inv;
  int id = push_value(std::move(out), ng(a.id) || ng(b.id));
  nodes_[id].backward = [id, a, b, inv](Tape& t) {
    double g = t.nodes_[id].grad(0, 0) * inv;
    if (t.ng(a.id)) t.bump(a.id, g * t.v(b.id));
    if (t.ng(b.id)) t.bump(b.id, g * t.v(a.id));
  };
  return Var{id};
}

Var Tape::ce_with_logits(Var logits, std::vector<int> labels, std::vector<std::uint8_t> valid) {
  const Mat& lg = v(logits.id);
  require(static_cast<long>(labels.size()) == lg.rows(), ErrorKind::kShape,
          "ce_with_logits: one label per row required");
  require(valid.size() == labels.size(), ErrorKind::kShape,
          "ce_with_logits: one valid flag per row required");
  long n_valid = 0;
  double total = 0.0;
  Eigen::VectorXd lse(lg.rows());
  for (long r = 0; r < lg.rows(); ++r) {
    if (!valid[r]) continue;
    require(labels[r] >= 0 && labels[r] < lg.cols(), ErrorKind::kDomain,
            "ce_with_logits: label out of range");
    double mx = lg.row(r).maxCoeff();
    double s = (lg.row(r).array() - mx).exp().sum();
    lse(r) = mx + std::log(s);
    total += lse(r) - lg(r, labels[r]);
    ++n_valid;
  }
  require(n_valid > 0, ErrorKind::kDegenerate, "ce_with_logits: no valid positions");
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(n_valid);
  int id = push_value(std::move(out), ng(logits.id));
  nodes_[id].backward = [id, logits, labels = std::move(labels), valid = std::move(valid),
                         n_valid](Tape& t) {
    if (!t.ng(logits.id)) return;
    const Mat& lg2 = t.v(logits.id);
    double g = t.nodes_[id].grad(0, 0) / static_cast<double>(n_valid);
    Mat gx = Mat::Zero(lg2.rows(), lg2.cols());
    for (long r = 0; r < lg2.rows(); ++r) {
      if (!valid[r]) continue;
      double mx = lg2.row(r).maxCoeff();
      Eigen::RowVectorXd e = (lg2.row(r).array() - mx).exp();
      gx.row(r) = (e / e.sum()) * g;
      gx(r, labels[r]) -= g;
    }
    t.bump(logits.id, gx);
  };
  return Var{id};
}

Var Tape::mse(Var a, const Mat& target) {
  const Mat& ma = v(a.id);
  require(ma.rows() == target.rows() && ma.cols() == target.cols(), ErrorKind::kShape,
          "mse: shapes differ");
  const double inv = 1.0 / static_cast<double>(ma.size());
  Mat out(1, 1);
  out(0, 0) = (ma - target).squaredNorm() * inv;
  int id = push_value(std::move(out), ng(a.id));
  nodes_[id].backward = [id, a, target, inv](Tape& t) {
    double g = t.nodes_[id].grad(0, 0) * 2.0 * inv;
    t.bump(a.id, g * (t.v(a.id) - target));
  };
  return Var{id};
}

void Tape::backward(Var root) {
  require(root.valid() && root.id < static_cast<int>(nodes_.size()), ErrorKind::kShape,
          "backward: invalid root");
  const Mat& rv = v(root.id);
  require(rv.rows() == 1 && rv.cols() == 1, ErrorKind::kShape,
          "backward: root must be scalar");
  if (!nodes_[root.id].needs_grad) return;
  grad_ref(root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.has_grad && node.backward) node.backward(*this);
  }
}

void Tape::for_each_param_grad(
    const std::function<void(const Mat*, const Mat&)>& sink) const {
  for (const Node& node : nodes_) {
    if (node.external != nullptr && node.has_grad) sink(node.external, node.grad);
  }
}

void Tape::require_finite(Var var, const std::string& context) const {
  if (!val(var).allFinite()) fail(ErrorKind::kNumeric, "non-finite values in " + context);
}

}  // namespace dtrec::ad
