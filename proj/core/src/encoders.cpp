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
#include "dtrec/encoders.hpp"

#include "dtrec/error.hpp"

namespace dtrec {

ItemEmbeddingTable ItemEmbeddingTable::create(int vocab_size, int dim,
                                              std::mt19937_64& rng) {
  require(vocab_size > ItemVocabulary::kFirstItem - 1 && dim > 0,
          ErrorKind::kConfig, "embedding table needs specials and a dim");
  ItemEmbeddingTable e;
  e.table = ad::Mat(vocab_size, dim);
  init_uniform(e.table, rng, dim);
  e.table.row(ItemVocabulary::kPad).setZero();
  return e;
}

void ItemEmbeddingTable::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".table", &table, ItemVocabulary::kPad});
}

GruParams GruParams::create(int input_dim, int hidden_dim,
                            std::mt19937_64& rng) {
  require(input_dim > 0 && hidden_dim > 0, ErrorKind::kConfig,
          "gru dims must be positive");
  GruParams g;
  auto init_w = [&](ad::Mat& m) {
    m = ad::Mat(input_dim, hidden_dim);
    init_uniform(m, rng, input_dim);
  };
  auto init_u = [&](ad::Mat& m) {
    m = ad::Mat(hidden_dim, hidden_dim);
    init_uniform(m, rng, hidden_dim);
  };
  init_w(g.Wr);
  init_w(g.Wz);
  init_w(g.Wn);
  init_u(g.Ur);
  init_u(g.Uz);
  init_u(g.Un);
  g.br = ad::Mat::Zero(1, hidden_dim);
  g.bz = ad::Mat::Zero(1, hidden_dim);
  g.bn = ad::Mat::Zero(1, hidden_dim);
  return g;
}

void GruParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".Wr", &Wr});
  out.push_back({prefix + ".Wz", &Wz});
  out.push_back({prefix + ".Wn", &Wn});
  out.push_back({prefix + ".Ur", &Ur});
  out.push_back({prefix + ".Uz", &Uz});
  out.push_back({prefix + ".Un", &Un});
  out.push_back({prefix + ".br", &br});
  out.push_back({prefix + ".bz", &bz});
  out.push_back({prefix + ".bn", &bn});
}

ad::Var gru_step(ad::Tape& t, const GruParams& g, ad::Var x, ad::Var h) {
  auto r = t.sigmoid(t.add(
      t.add(t.matmul(x, t.param(g.Wr)), t.matmul(h, t.param(g.Ur))),
      t.param(g.br)));
  auto z = t.sigmoid(t.add(
      t.add(t.matmul(x, t.param(g.Wz)), t.matmul(h, t.param(g.Uz))),
      t.param(g.bz)));
  auto n = t.tanh(t.add(
      t.add(t.matmul(x, t.param(g.Wn)),
            t.cmul(r, t.matmul(h, t.param(g.Un)))),
      t.param(g.bn)));
  return t.add(t.sub(n, t.cmul(z, n)), t.cmul(z, h));
}

ad::Mat gru_step_value(const GruParams& g, const ad::Mat& x,
                       const ad::Mat& h) {
  auto sig = [](const ad::Mat& m) {
    return ad::Mat((1.0 / (1.0 + (-m.array()).exp())).matrix());
  };
  const ad::Mat r = sig(x * g.Wr + h * g.Ur + g.br);
  const ad::Mat z = sig(x * g.Wz + h * g.Uz + g.bz);
  const ad::Mat pre =
      x * g.Wn + (r.array() * (h * g.Un).array()).matrix() + g.bn;
  const ad::Mat n = pre.array().tanh().matrix();
  return ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
}

ad::Var gru_run(ad::Tape& t, const GruParams& g, ad::Var xs, ad::Var h0,
                int n_steps) {
  auto h = h0;
  const int cols = g.input_dim();
  for (int n = 0; n < n_steps; ++n)
    h = gru_step(t, g, t.block(xs, n, 0, 1, cols), h);
  return h;
}

ad::Var gru_run_all(ad::Tape& t, const GruParams& g, ad::Var xs, ad::Var h0,
                    int n_steps) {
  require(n_steps > 0, ErrorKind::kShape, "gru needs at least one step");
  std::vector<ad::Var> hiddens;
  hiddens.reserve(static_cast<std::size_t>(n_steps));
  auto h = h0;
  const int cols = g.input_dim();
  for (int n = 0; n < n_steps; ++n) {
    h = gru_step(t, g, t.block(xs, n, 0, 1, cols), h);
    hiddens.push_back(h);
  }
  return t.concat_rows(hiddens);
}

ad::Var encode_sequence(ad::Tape& t, const GruParams& g,
                        const ItemEmbeddingTable& table,
                        const std::vector<int>& items, int limit,
                        bool last_valid) {
  require(static_cast<int>(items.size()) <= limit, ErrorKind::kShape,
          "sequence longer than the encoder limit");
  auto h0 = t.input(ad::Mat::Zero(1, g.hidden_dim()));
  if (last_valid) {
    if (items.empty()) return h0;
    auto xs = t.gather_rows(t.param(table.table), items);
    return gru_run(t, g, xs, h0, static_cast<int>(items.size()));
  }
  std::vector<int> padded = items;
  padded.resize(static_cast<std::size_t>(limit), ItemVocabulary::kPad);
  auto xs = t.gather_rows(t.param(table.table), padded);
  return gru_run(t, g, xs, h0, limit);
}

}  // namespace dtrec
