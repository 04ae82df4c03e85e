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
#include <cmath>
#include <random>

#include "doctest.h"
#include "dtrec/error.hpp"
#include "dtrec/tape.hpp"
#include "test_util.hpp"

using dtrec::ad::Mat;
using dtrec::ad::Tape;
using dtrec::testutil::check_grad_fd;
using dtrec::testutil::rand_mat;
using dtrec::testutil::rand_mat_off_zero;

namespace {

double sum_loss_matmul(Mat& a, Mat& b, bool ta, bool tb) {
  Tape t;
  auto va = t.param(a);
  auto vb = t.param(b);
  auto y = t.matmul(va, vb, ta, tb);
  return t.val(t.sum_all(t.tanh(y)))(0, 0);
}

}  // namespace

TEST_SUITE_BEGIN("tape");

TEST_CASE("matmul values and gradients for every transpose combination") {
  std::mt19937_64 rng(7);
  for (int ta = 0; ta <= 1; ++ta) {
    for (int tb = 0; tb <= 1; ++tb) {
      Mat a = ta ? rand_mat(4, 3, rng) : rand_mat(3, 4, rng);
      Mat b = tb ? rand_mat(5, 4, rng) : rand_mat(4, 5, rng);

      Mat ea = ta ? Mat(a.transpose()) : a;
      Mat eb = tb ? Mat(b.transpose()) : b;
      Mat expect = ea * eb;

      Tape t;
      auto va = t.param(a);
      auto vb = t.param(b);
      auto y = t.matmul(va, vb, ta != 0, tb != 0);
      CHECK(((t.val(y) - expect).cwiseAbs().maxCoeff()) < 1e-12);

      auto loss = t.sum_all(t.tanh(y));
      t.backward(loss);
      const Mat ga = t.grad(va);
      const Mat gb = t.grad(vb);
      auto f = [&] { return sum_loss_matmul(a, b, ta != 0, tb != 0); };
      check_grad_fd("matmul A", f, a, ga);
      check_grad_fd("matmul B", f, b, gb);
    }
  }
}

TEST_CASE("elementwise arithmetic matches Eigen and finite differences") {
  std::mt19937_64 rng(11);
  Mat a = rand_mat(3, 4, rng);
  Mat b = rand_mat(3, 4, rng);
  Mat v = rand_mat(1, 4, rng);

  auto build = [&](Tape& t) {
    auto va = t.param(a);
    auto vb = t.param(b);
    auto vv = t.param(v);
    auto mix = t.add(t.cmul(va, vb), t.sub(va, t.scale(vb, 0.25)));
    auto shifted = t.add_rowvec(mix, vv);
    return std::tuple{va, vb, vv, t.mean_all(t.sigmoid(shifted))};
  };

  Tape t;
  auto [va, vb, vv, loss] = build(t);
  const Mat expect_mix =
      (a.array() * b.array() + a.array() - 0.25 * b.array()).matrix();
  (void)expect_mix;
  t.backward(loss);
  const Mat ga = t.grad(va);
  const Mat gb = t.grad(vb);
  const Mat gv = t.grad(vv);

  auto f = [&] {
    Tape u;
    auto [ua, ub, uv, l] = build(u);
    (void)ua;
    (void)ub;
    (void)uv;
    return u.val(l)(0, 0);
  };
  check_grad_fd("cmul/add/sub/scale A", f, a, ga);
  check_grad_fd("cmul/add/sub/scale B", f, b, gb);
  check_grad_fd("add_rowvec v", f, v, gv);
}

TEST_CASE("scalar activations match std reference pointwise") {
  std::mt19937_64 rng(13);
  Mat x = rand_mat_off_zero(4, 5, rng);
  Tape t;
  auto vx = t.input(x);
  const Mat sig = t.val(t.sigmoid(vx));
  const Mat th = t.val(t.tanh(vx));
  const Mat lr = t.val(t.leaky_relu(vx, 0.01));
  const Mat ge = t.val(t.gelu(vx));
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      CHECK(sig(i, j) == doctest::Approx(1.0 / (1.0 + std::exp(-v))));
      CHECK(th(i, j) == doctest::Approx(std::tanh(v)));
      CHECK(lr(i, j) == doctest::Approx(v > 0 ? v : 0.01 * v));
      const double phi = 0.5 * std::erfc(-v / std::sqrt(2.0));
      CHECK(ge(i, j) == doctest::Approx(v * phi));
    }
  }
}

TEST_CASE("activation gradients agree with finite differences") {
  std::mt19937_64 rng(17);
  Mat x = rand_mat_off_zero(3, 4, rng);

  enum class Fn { kSigmoid, kTanh, kLeaky, kGelu };
  for (Fn fn : {Fn::kSigmoid, Fn::kTanh, Fn::kLeaky, Fn::kGelu}) {
    auto apply = [&](Tape& t, dtrec::ad::Var v) {
      switch (fn) {
        case Fn::kSigmoid: return t.sigmoid(v);
        case Fn::kTanh: return t.tanh(v);
        case Fn::kLeaky: return t.leaky_relu(v, 0.01);
        case Fn::kGelu: return t.gelu(v);
      }
      return v;
    };
    Tape t;
    auto vx = t.param(x);
    auto loss = t.sum_all(apply(t, vx));
    t.backward(loss);
    const Mat gx = t.grad(vx);
    auto f = [&] {
      Tape u;
      auto uv = u.param(x);
      return u.val(u.sum_all(apply(u, uv)))(0, 0);
    };
    check_grad_fd("activation", f, x, gx);
  }
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  std::mt19937_64 rng(19);
  Mat x = rand_mat(3, 5, rng, -2.0, 2.0);

  Tape t;
  auto vx = t.param(x);
  auto sm = t.softmax_rows(vx);
  const Mat y = t.val(sm);
  for (int i = 0; i < y.rows(); ++i)
    CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Mat w = rand_mat(3, 5, rng);
  auto loss = t.sum_all(t.cmul(sm, t.input(w)));
  t.backward(loss);
  const Mat gx = t.grad(vx);
  auto f = [&] {
    Tape u;
    auto uv = u.param(x);
    return u.val(u.sum_all(u.cmul(u.softmax_rows(uv), u.input(w))))(0, 0);
  };
  check_grad_fd("softmax", f, x, gx);
}

TEST_CASE("masked softmax zeroes masked positions and stays stable") {
  Mat x(2, 4);
  x << 1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.5;
  Mat mask = Mat::Zero(2, 4);
  mask(0, 2) = -1e30;
  mask(0, 3) = -1e30;
  mask(1, 0) = -1e30;

  Tape t;
  auto vx = t.param(x);
  auto sm = t.softmax_rows_masked(vx, mask);
  const Mat y = t.val(sm);
  CHECK(y(0, 2) == 0.0);
  CHECK(y(0, 3) == 0.0);
  CHECK(y(1, 0) == 0.0);
  for (int i = 0; i < 2; ++i)
    CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  const double z0 = std::exp(1.0) + std::exp(2.0);
  CHECK(y(0, 0) == doctest::Approx(std::exp(1.0) / z0));

  std::mt19937_64 rng(23);
  Mat w = rand_mat(2, 4, rng);
  auto loss = t.sum_all(t.cmul(sm, t.input(w)));
  t.backward(loss);
  const Mat gx = t.grad(vx);
  auto f = [&] {
    Tape u;
    auto uv = u.param(x);
    return u.val(
        u.sum_all(u.cmul(u.softmax_rows_masked(uv, mask), u.input(w))))(0, 0);
  };
  check_grad_fd("masked softmax", f, x, gx);
}

TEST_CASE("layer norm forward oracle and gradients") {
  std::mt19937_64 rng(29);
  Mat x = rand_mat(4, 6, rng, -2.0, 2.0);
  Mat gamma = rand_mat(1, 6, rng, 0.5, 1.5);
  Mat beta = rand_mat(1, 6, rng, -0.5, 0.5);
  const double eps = 1e-5;

  Tape t;
  auto vx = t.param(x);
  auto vg = t.param(gamma);
  auto vb = t.param(beta);
  auto ln = t.layer_norm(vx, vg, vb, eps);
  const Mat y = t.val(ln);
  for (int i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    for (int j = 0; j < x.cols(); ++j) {
      const double xhat = (x(i, j) - mean) / std::sqrt(var + eps);
      CHECK(y(i, j) == doctest::Approx(gamma(0, j) * xhat + beta(0, j))
                           .epsilon(1e-10));
    }
  }

  Mat w = rand_mat(4, 6, rng);
  auto loss = t.sum_all(t.cmul(ln, t.input(w)));
  t.backward(loss);
  const Mat gx = t.grad(vx);
  const Mat gg = t.grad(vg);
  const Mat gb = t.grad(vb);
  auto f = [&] {
    Tape u;
    auto ux = u.param(x);
    auto ug = u.param(gamma);
    auto ub = u.param(beta);
    return u.val(u.sum_all(
        u.cmul(u.layer_norm(ux, ug, ub, eps), u.input(w))))(0, 0);
  };
  check_grad_fd("layer_norm x", f, x, gx, 1e-6, 1e-5);
  check_grad_fd("layer_norm gamma", f, gamma, gg, 1e-6, 1e-5);
  check_grad_fd("layer_norm beta", f, beta, gb, 1e-6, 1e-5);
}

TEST_CASE("gather rows selects, scatter-adds duplicates, rejects bad indices") {
  std::mt19937_64 rng(31);
  Mat table = rand_mat(6, 3, rng);
  const std::vector<int> idx = {2, 0, 2, 5};

  Tape t;
  auto vt = t.param(table);
  auto g = t.gather_rows(vt, idx);
  const Mat y = t.val(g);
  for (std::size_t r = 0; r < idx.size(); ++r)
    CHECK((y.row(static_cast<int>(r)) - table.row(idx[r])).cwiseAbs().maxCoeff() <
          1e-15);

  Mat w = rand_mat(4, 3, rng);
  auto loss = t.sum_all(t.cmul(g, t.input(w)));
  t.backward(loss);
  const Mat gt = t.grad(vt);
  // Row 2 is gathered twice, so its gradient accumulates both stripes.
  CHECK((gt.row(2) - (w.row(0) + w.row(2))).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(gt.row(1).cwiseAbs().maxCoeff() == 0.0);
  auto f = [&] {
    Tape u;
    auto uv = u.param(table);
    return u.val(u.sum_all(u.cmul(u.gather_rows(uv, idx), u.input(w))))(0, 0);
  };
  check_grad_fd("gather", f, table, gt);

  Tape bad;
  auto vb = bad.param(table);
  CHECK_THROWS_AS(bad.gather_rows(vb, {6}), dtrec::Error);
  CHECK_THROWS_AS(bad.gather_rows(vb, {-1}), dtrec::Error);
}

TEST_CASE("concat and block are exact inverses with routed gradients") {
  std::mt19937_64 rng(37);
  Mat a = rand_mat(2, 3, rng);
  Mat b = rand_mat(4, 3, rng);
  Mat c = rand_mat(2, 5, rng);

  Tape t;
  auto va = t.param(a);
  auto vb = t.param(b);
  auto vc = t.param(c);
  auto rows = t.concat_rows({va, vb});
  CHECK(t.val(rows).rows() == 6);
  CHECK((t.val(t.block(rows, 2, 0, 4, 3)) - b).cwiseAbs().maxCoeff() < 1e-15);

  auto cols = t.concat_cols({va, vc});
  CHECK(t.val(cols).cols() == 8);
  CHECK((t.val(t.block(cols, 0, 3, 2, 5)) - c).cwiseAbs().maxCoeff() < 1e-15);

  auto loss = t.add(t.sum_all(t.tanh(rows)), t.sum_all(t.tanh(cols)));
  t.backward(loss);
  const Mat ga = t.grad(va);
  const Mat gb2 = t.grad(vb);
  const Mat gc = t.grad(vc);
  auto f = [&] {
    Tape u;
    auto ua = u.param(a);
    auto ub = u.param(b);
    auto uc = u.param(c);
    auto r = u.concat_rows({ua, ub});
    auto cl = u.concat_cols({ua, uc});
    return u.val(u.add(u.sum_all(u.tanh(r)), u.sum_all(u.tanh(cl))))(0, 0);
  };
  check_grad_fd("concat a (fan-out)", f, a, ga);
  check_grad_fd("concat b", f, b, gb2);
  check_grad_fd("concat c", f, c, gc);
}

TEST_CASE("reductions and row dot products") {
  std::mt19937_64 rng(41);
  Mat a = rand_mat(3, 4, rng);
  Mat b = rand_mat(3, 4, rng);

  Tape t;
  auto va = t.param(a);
  auto vb = t.param(b);
  CHECK(t.val(t.sum_all(va))(0, 0) == doctest::Approx(a.sum()));
  CHECK(t.val(t.mean_all(va))(0, 0) == doctest::Approx(a.mean()));

  auto md = t.mean_rowwise_dot(va, vb);
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) expect += a.row(i).dot(b.row(i));
  expect /= 3.0;
  CHECK(t.val(md)(0, 0) == doctest::Approx(expect));

  t.backward(md);
  const Mat ga = t.grad(va);
  const Mat gb = t.grad(vb);
  auto f = [&] {
    Tape u;
    auto ua = u.param(a);
    auto ub = u.param(b);
    return u.val(u.mean_rowwise_dot(ua, ub))(0, 0);
  };
  check_grad_fd("mean_rowwise_dot a", f, a, ga);
  check_grad_fd("mean_rowwise_dot b", f, b, gb);
}

TEST_CASE("cross entropy with logits matches explicit softmax form") {
  std::mt19937_64 rng(43);
  Mat logits = rand_mat(4, 6, rng, -3.0, 3.0);
  const std::vector<int> labels = {2, 0, 5, 1};
  const std::vector<std::uint8_t> valid = {1, 1, 0, 1};

  double expect = 0.0;
  int n = 0;
  for (int i = 0; i < 4; ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    const double mx = logits.row(i).maxCoeff();
    const double lse =
        mx + std::log((logits.row(i).array() - mx).exp().sum());
    expect += lse - logits(i, labels[static_cast<std::size_t>(i)]);
    ++n;
  }
  expect /= n;

  Tape t;
  auto vl = t.param(logits);
  auto loss = t.ce_with_logits(vl, labels, valid);
  CHECK(t.val(loss)(0, 0) == doctest::Approx(expect).epsilon(1e-12));

  t.backward(loss);
  const Mat gl = t.grad(vl);
  CHECK(gl.row(2).cwiseAbs().maxCoeff() == 0.0);
  auto f = [&] {
    Tape u;
    auto uv = u.param(logits);
    return u.val(u.ce_with_logits(uv, labels, valid))(0, 0);
  };
  check_grad_fd("ce_with_logits", f, logits, gl);

  Tape empty;
  auto ve = empty.param(logits);
  CHECK_THROWS_AS(empty.ce_with_logits(ve, labels, {0, 0, 0, 0}),
                  dtrec::Error);
}

TEST_CASE("mse value and gradient") {
  std::mt19937_64 rng(47);
  Mat a = rand_mat(3, 3, rng);
  Mat target = rand_mat(3, 3, rng);

  Tape t;
  auto va = t.param(a);
  auto loss = t.mse(va, target);
  CHECK(t.val(loss)(0, 0) ==
        doctest::Approx((a - target).array().square().mean()));
  t.backward(loss);
  const Mat ga = t.grad(va);
  auto f = [&] {
    Tape u;
    auto uv = u.param(a);
    return u.val(u.mse(uv, target))(0, 0);
  };
  check_grad_fd("mse", f, a, ga);
}

TEST_CASE("gradient accumulates across reused subexpressions") {
  std::mt19937_64 rng(53);
  Mat x = rand_mat(2, 3, rng);

  auto build = [&](Tape& t, dtrec::ad::Var vx) {
    auto s = t.sigmoid(vx);
    auto y = t.cmul(s, t.add(s, vx));
    return t.mean_all(y);
  };
  Tape t;
  auto vx = t.param(x);
  auto loss = build(t, vx);
  t.backward(loss);
  const Mat gx = t.grad(vx);
  auto f = [&] {
    Tape u;
    auto uv = u.param(x);
    return u.val(build(u, uv))(0, 0);
  };
  check_grad_fd("fan-out reuse", f, x, gx);
}

TEST_CASE("parameter gradients are visited in creation order") {
  Mat a = Mat::Ones(1, 2);
  Mat b = Mat::Ones(2, 1);
  Tape t;
  auto va = t.param(a);
  auto vb = t.param(b);
  auto loss = t.sum_all(t.matmul(va, vb));
  t.backward(loss);
  std::vector<const Mat*> seen;
  t.for_each_param_grad(
      [&](const Mat* slot, const Mat& grad) {
        seen.push_back(slot);
        CHECK(grad.rows() == slot->rows());
        CHECK(grad.cols() == slot->cols());
      });
  REQUIRE(seen.size() == 2);
  CHECK(seen[0] == &a);
  CHECK(seen[1] == &b);
}

TEST_CASE("binding a parameter twice reuses one leaf with a summed gradient") {
  std::mt19937_64 rng(59);
  Mat x = rand_mat(2, 2, rng);
  Tape t;
  auto v1 = t.param(x);
  auto v2 = t.param(x);
  CHECK(v1.id == v2.id);

  // x appears on both sides of the product, so the gradient must combine
  // both uses: d/dX sum(X X) = (sum over the product rule of both factors).
  auto loss = t.sum_all(t.matmul(v1, v2));
  t.backward(loss);
  const Mat gx = t.grad(v1);
  auto f = [&] {
    Tape u;
    auto uv = u.param(x);
    return u.val(u.sum_all(u.matmul(uv, uv)))(0, 0);
  };
  check_grad_fd("shared param", f, x, gx);

  int visits = 0;
  t.for_each_param_grad([&](const Mat*, const Mat&) { ++visits; });
  CHECK(visits == 1);
}

TEST_CASE("require_finite flags NaN and infinity") {
  Mat ok = Mat::Ones(2, 2);
  Tape t;
  auto v = t.input(ok);
  CHECK_NOTHROW(t.require_finite(v, "ok"));
  Mat bad = ok;
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  auto vb = t.input(bad);
  CHECK_THROWS_AS(t.require_finite(vb, "nan"), dtrec::Error);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  auto vi = t.input(bad);
  CHECK_THROWS_AS(t.require_finite(vi, "inf"), dtrec::Error);
}

TEST_SUITE_END();
