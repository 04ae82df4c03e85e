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
#include "dtrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <utility>

#include <nlohmann/json.hpp>

#include "dtrec/action_decoder.hpp"
#include "dtrec/error.hpp"
#include "dtrec/rng.hpp"

namespace dtrec {

double kappa(double r_neg, double r_max) {
  require(r_max >= 0.0, ErrorKind::kDomain, "kappa needs r_max >= 0");
  require(r_neg >= 0.0 && r_neg <= r_max, ErrorKind::kDomain,
          "kappa needs 0 <= r_neg <= r_max");
  return (r_max - r_neg + 1.0) / (r_max + 1.0);
}

ad::Var similarity(ad::Tape& t, ad::Var v, ad::Var v_neg) {
  const ad::Mat& a = t.val(v);
  const ad::Mat& b = t.val(v_neg);
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShape,
          "similarity needs equally shaped embedding matrices");
  return t.mean_rowwise_dot(v, v_neg);
}

ad::Var contrastive_loss(ad::Tape& t, ad::Var positive,
                         const std::vector<WeightedNegative>& negatives) {
  require(!negatives.empty(), ErrorKind::kConfig,
          "contrastive loss needs at least one negative");
  ad::Var acc = t.scale(similarity(t, positive, negatives[0].embeddings),
                        -negatives[0].kappa);
  for (std::size_t i = 1; i < negatives.size(); ++i) {
    acc = t.add(acc, t.scale(similarity(t, positive, negatives[i].embeddings),
                             -negatives[i].kappa));
  }
  return acc;
}

double ce_loss(const ad::Mat& probs, const std::vector<int>& labels,
               const std::vector<std::uint8_t>& valid) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size() &&
              labels.size() == valid.size(),
          ErrorKind::kShape, "cross entropy rows, labels and mask must align");
  double sum = 0.0;
  long count = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (!valid[r]) continue;
    require(labels[r] >= 0 && labels[r] < probs.cols(), ErrorKind::kDomain,
            "cross entropy label out of range");
    const double p = probs(static_cast<long>(r), labels[r]);
    require(p > 0.0, ErrorKind::kNumeric,
            "cross entropy hit a zero probability");
    sum -= std::log(p);
    ++count;
  }
  require(count > 0, ErrorKind::kDegenerate,
          "cross entropy needs at least one valid row");
  return sum / static_cast<double>(count);
}

double total_loss(double ce, double contrastive, double beta) {
  return ce + beta * contrastive;
}

void TrainConfig::validate() const {
  model.validate();
  require(beta >= 0.0, ErrorKind::kConfig, "beta must be >= 0");
  require(learning_rate >= 0.0, ErrorKind::kConfig,
          "learning_rate must be >= 0");
  require(weight_decay >= 0.0, ErrorKind::kConfig, "weight_decay must be >= 0");
  require(clip_norm > 0.0, ErrorKind::kConfig, "clip_norm must be > 0");
  require(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
  require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  require(n_negatives >= 1, ErrorKind::kConfig, "n_negatives must be >= 1");
  if (!allow_any_trajectory_len) {
    const int len = model.max_trajectory_len;
    require(len == 10 || len == 20 || len == 30 || len == 40 || len == 50,
            ErrorKind::kConfig,
            "max_trajectory_len must be one of 10, 20, 30, 40, 50 "
            "(or set allow_any_trajectory_len)");
  }
}

bool TrainConfig::contrastive_active() const {
  return beta > 0.0 && !ablate.no_contrastive && !ablate.no_reward;
}

AdamW::AdamW(ParamList params, const Options& options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ParamRef& p : params_) {
    m_.push_back(ad::Mat::Zero(p.mat->rows(), p.mat->cols()));
    v_.push_back(ad::Mat::Zero(p.mat->rows(), p.mat->cols()));
  }
}

void AdamW::apply(std::vector<ad::Mat>& grads) {
  require(grads.size() == params_.size(), ErrorKind::kShape,
          "gradient count does not match parameter count");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(grads[i].rows() == params_[i].mat->rows() &&
                grads[i].cols() == params_[i].mat->cols(),
            ErrorKind::kShape, "gradient shape mismatch for " + params_[i].name);
    if (params_[i].frozen_row >= 0) grads[i].row(params_[i].frozen_row).setZero();
  }

  double sq = 0.0;
  for (const ad::Mat& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > options_.clip_norm) {
    const double factor = options_.clip_norm / norm;
    for (ad::Mat& g : grads) g *= factor;
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Mat& p = *params_[i].mat;
    const ad::Mat& g = grads[i];
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i].array().matrix() +
            (1.0 - options_.beta2) * g.array().square().matrix();
    const ad::Mat m_hat = m_[i] / bc1;
    const ad::Mat v_hat = v_[i] / bc2;
    const ad::Mat update =
        options_.learning_rate *
        (m_hat.array() / (v_hat.array().sqrt() + options_.epsilon)).matrix();
    ad::Mat frozen;
    const int fr = params_[i].frozen_row;
    if (fr >= 0) frozen = p.row(fr);
    p -= options_.learning_rate * options_.weight_decay * p;
    p -= update;
    if (fr >= 0) p.row(fr) = frozen;
  }
}

GradientAccumulator::GradientAccumulator(const ParamList& params)
    : params_(params) {
  grads_.reserve(params_.size());
  for (const ParamRef& p : params_)
    grads_.push_back(ad::Mat::Zero(p.mat->rows(), p.mat->cols()));
}

void GradientAccumulator::add(ad::Tape& tape) {
  std::unordered_map<const ad::Mat*, std::size_t> index;
  index.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) index.emplace(params_[i].mat, i);
  tape.for_each_param_grad([&](const ad::Mat* slot, const ad::Mat& g) {
    auto it = index.find(slot);
    require(it != index.end(), ErrorKind::kShape,
            "tape produced a gradient for an untracked parameter");
    grads_[it->second] += g;
  });
}

void GradientAccumulator::scale(double factor) {
  for (ad::Mat& g : grads_) g *= factor;
}

void GradientAccumulator::reset() {
  for (ad::Mat& g : grads_) g.setZero();
}

ad::Var trajectory_loss(ad::Tape& t, const SequenceModel& model,
                        const Trajectory& trajectory,
                        const std::vector<NegativeSample>& negatives,
                        double beta, const AblationFlags& ablate,
                        std::mt19937_64* dropout_rng, LossParts* parts) {
  const StepEncodings enc = encode_steps(t, model, trajectory);
  const std::vector<ad::Var> rewards =
      reward_tokens(t, model, trajectory.return_to_go, ablate);
  const ad::Var a_tilde = predict_actions(t, model, rewards, enc, dropout_rng);
  const DecodedTrajectory dec = decode_trajectory(t, model, a_tilde, trajectory);
  const ad::Var logits = vocab_logits(t, model.decoder, dec.embeddings);
  const ad::Var ce = t.ce_with_logits(logits, dec.labels, dec.valid);

  const bool active = beta > 0.0 && !ablate.no_contrastive &&
                      !ablate.no_reward && !negatives.empty();
  ad::Var total = ce;
  double contrastive_value = 0.0;
  if (active) {
    std::vector<WeightedNegative> weighted;
    weighted.reserve(negatives.size());
    for (const NegativeSample& neg : negatives) {
      require(static_cast<int>(neg.return_to_go.size()) == trajectory.length(),
              ErrorKind::kShape,
              "negative sample length does not match its trajectory");
      const std::vector<ad::Var> neg_rewards =
          reward_tokens(t, model, neg.return_to_go, ablate);
      const ad::Var neg_a = predict_actions(t, model, neg_rewards, enc, dropout_rng);
      const DecodedTrajectory neg_dec =
          decode_trajectory(t, model, neg_a, trajectory);
      weighted.push_back(
          {neg_dec.embeddings, ablate.no_weight ? 1.0 : neg.kappa});
    }
    const ad::Var cl = contrastive_loss(t, dec.embeddings, weighted);
    contrastive_value = t.val(cl)(0, 0);
    total = t.add(ce, t.scale(cl, beta));
  }
  if (parts) {
    parts->ce = t.val(ce)(0, 0);
    parts->contrastive = contrastive_value;
    parts->total = t.val(total)(0, 0);
  }
  return total;
}

namespace {

std::string param_norms(const ParamList& params) {
  std::ostringstream os;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i) os << ", ";
    os << params[i].name << "=" << params[i].mat->norm();
  }
  return os.str();
}

}  // namespace

Checkpoint train(const std::vector<Trajectory>& data, const TrainConfig& config,
                 std::uint64_t vocab_hash, int vocab_size,
                 const EpochSink& sink) {
  config.validate();
  require(!data.empty(), ErrorKind::kDegenerate,
          "training needs at least one trajectory");

  std::vector<Trajectory> capped;
  capped.reserve(data.size());
  for (const Trajectory& traj : data) {
    require(traj.length() > 0, ErrorKind::kDegenerate,
            "training trajectory without steps: user " + traj.user_id);
    capped.push_back(cap_trajectory(traj, config.model.max_trajectory_len));
  }

  Checkpoint ck;
  ck.config = config;
  ck.vocab_hash = vocab_hash;
  ck.vocab_size = vocab_size;
  ck.model = SequenceModel::create(config.model, vocab_size, config.seed);

  ParamList params;
  ck.model.collect_params(params);
  AdamW optimizer(params, {config.learning_rate, config.weight_decay,
                           config.clip_norm, 0.9, 0.999, 1e-8});
  GradientAccumulator acc(optimizer.params());

  auto shuffle_rng = make_rng(config.seed, "train-shuffle");
  auto dropout_rng = make_rng(config.seed, "train-dropout");
  const bool use_negatives = config.contrastive_active();
  const int r_max = config.model.horizon;

  std::vector<std::size_t> order(capped.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossParts epoch_sum;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      acc.reset();
      for (std::size_t pos = start; pos < stop; ++pos) {
        const std::size_t idx = order[pos];
        const Trajectory& traj = capped[idx];
        std::vector<NegativeSample> negatives;
        if (use_negatives) {
          const std::uint64_t neg_seed = derive_seed(
              config.seed,
              "negatives-e" + std::to_string(epoch) + "-i" + std::to_string(idx));
          negatives = make_negatives(traj, config.n_negatives, r_max, neg_seed,
                                     config.negative_mode);
        }
        ad::Tape tape;
        LossParts parts;
        const ad::Var loss =
            trajectory_loss(tape, ck.model, traj, negatives, config.beta,
                            config.ablate,
                            config.model.dropout > 0.0 ? &dropout_rng : nullptr,
                            &parts);
        if (!std::isfinite(parts.total)) {
          fail(ErrorKind::kNumeric,
               "non-finite loss at epoch " + std::to_string(epoch) +
                   ", batch starting at sample " + std::to_string(start) +
                   "; parameter norms: " + param_norms(params));
        }
        tape.backward(loss);
        acc.add(tape);
        epoch_sum.total += parts.total;
        epoch_sum.ce += parts.ce;
        epoch_sum.contrastive += parts.contrastive;
      }
      acc.scale(1.0 / static_cast<double>(stop - start));
      optimizer.apply(acc.grads());
    }
    for (const ParamRef& p : params) {
      if (!p.mat->allFinite()) {
        fail(ErrorKind::kNumeric, "non-finite parameter " + p.name +
                                      " after epoch " + std::to_string(epoch) +
                                      "; parameter norms: " + param_norms(params));
      }
    }
    const double n = static_cast<double>(capped.size());
    EpochRecord rec{epoch, epoch_sum.total / n, epoch_sum.ce / n,
                    epoch_sum.contrastive / n};
    ck.history.push_back(rec);
    ck.epoch = epoch;
    if (sink) sink(rec, ck);
  }
  return ck;
}

namespace {

using nlohmann::json;

void check_keys(const json& object, const char* what,
                std::initializer_list<const char*> allowed) {
  for (auto it = object.begin(); it != object.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) known = true;
    require(known, ErrorKind::kConfig,
            std::string("unknown ") + what + " key: " + it.key());
  }
}

template <typename T>
void read_field(const json& object, const char* key, T& out) {
  if (auto it = object.find(key); it != object.end()) out = it->get<T>();
}

json model_to_json(const ModelConfig& m) {
  return json{{"dim", m.dim},
              {"prompt_buckets", m.prompt_buckets},
              {"heads", m.heads},
              {"block_layers", m.block_layers},
              {"ffn_hidden", m.ffn_hidden},
              {"dropout", m.dropout},
              {"state_window", m.state_window},
              {"action_limit", m.action_limit},
              {"max_trajectory_len", m.max_trajectory_len},
              {"last_valid_state", m.last_valid_state},
              {"share_item_embeddings", m.share_item_embeddings},
              {"horizon", m.horizon}};
}

ModelConfig model_from_json(const json& object) {
  require(object.is_object(), ErrorKind::kConfig,
          "\"model\" must be an object");
  check_keys(object, "model config",
             {"dim", "prompt_buckets", "heads", "block_layers", "ffn_hidden",
              "dropout", "state_window", "action_limit", "max_trajectory_len",
              "last_valid_state", "share_item_embeddings", "horizon"});
  ModelConfig m;
  read_field(object, "dim", m.dim);
  read_field(object, "prompt_buckets", m.prompt_buckets);
  read_field(object, "heads", m.heads);
  read_field(object, "block_layers", m.block_layers);
  read_field(object, "ffn_hidden", m.ffn_hidden);
  read_field(object, "dropout", m.dropout);
  read_field(object, "state_window", m.state_window);
  read_field(object, "action_limit", m.action_limit);
  read_field(object, "max_trajectory_len", m.max_trajectory_len);
  read_field(object, "last_valid_state", m.last_valid_state);
  read_field(object, "share_item_embeddings", m.share_item_embeddings);
  read_field(object, "horizon", m.horizon);
  return m;
}

json ablate_to_json(const AblationFlags& a) {
  return json{{"no_reward", a.no_reward},
              {"no_contrastive", a.no_contrastive},
              {"no_weight", a.no_weight},
              {"naive_prompt", a.naive_prompt}};
}

AblationFlags ablate_from_json(const json& object) {
  require(object.is_object(), ErrorKind::kConfig,
          "\"ablate\" must be an object");
  check_keys(object, "ablation",
             {"no_reward", "no_contrastive", "no_weight", "naive_prompt"});
  AblationFlags a;
  read_field(object, "no_reward", a.no_reward);
  read_field(object, "no_contrastive", a.no_contrastive);
  read_field(object, "no_weight", a.no_weight);
  read_field(object, "naive_prompt", a.naive_prompt);
  return a;
}

const char* mode_name(NegativeRewardMode mode) {
  return mode == NegativeRewardMode::kLowerOnly ? "lower_only" : "any_different";
}

NegativeRewardMode mode_from_name(const std::string& name) {
  if (name == "lower_only") return NegativeRewardMode::kLowerOnly;
  if (name == "any_different") return NegativeRewardMode::kAnyDifferent;
  fail(ErrorKind::kConfig, "unknown negative_mode: " + name);
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"model", model_to_json(c.model)},
         {"beta", c.beta},
         {"learning_rate", c.learning_rate},
         {"weight_decay", c.weight_decay},
         {"clip_norm", c.clip_norm},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"n_negatives", c.n_negatives},
         {"negative_mode", mode_name(c.negative_mode)},
         {"seed", c.seed},
         {"allow_any_trajectory_len", c.allow_any_trajectory_len},
         {"ablate", ablate_to_json(c.ablate)}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("invalid config JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  check_keys(j, "train config",
             {"model", "beta", "learning_rate", "weight_decay", "clip_norm",
              "epochs", "batch_size", "n_negatives", "negative_mode", "seed",
              "allow_any_trajectory_len", "ablate"});
  TrainConfig c;
  try {
    if (auto it = j.find("model"); it != j.end()) c.model = model_from_json(*it);
    read_field(j, "beta", c.beta);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "weight_decay", c.weight_decay);
    read_field(j, "clip_norm", c.clip_norm);
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "n_negatives", c.n_negatives);
    if (auto it = j.find("negative_mode"); it != j.end())
      c.negative_mode = mode_from_name(it->get<std::string>());
    read_field(j, "seed", c.seed);
    read_field(j, "allow_any_trajectory_len", c.allow_any_trajectory_len);
    if (auto it = j.find("ablate"); it != j.end())
      c.ablate = ablate_from_json(*it);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
  return c;
}

std::string model_config_to_json(const ModelConfig& config) {
  return model_to_json(config).dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("invalid config JSON: ") + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
}

}  // namespace dtrec
