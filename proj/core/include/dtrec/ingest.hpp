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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtrec/trajectory.hpp"
#include "dtrec/vocabulary.hpp"

namespace dtrec {

struct InteractionEvent {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

struct LogFormat {
  char delimiter = '\t';
  int user_col = 0;
  int item_col = 1;
  int time_col = 2;
  bool has_header = false;
};

struct ParseReport {
  std::size_t total_rows = 0;
  std::size_t malformed_rows = 0;
};

// Reads a delimited interaction log; rows that cannot be parsed are counted
// and skipped, but more than 10% malformed rows is a format error. Events
// come back sorted by (user_id, timestamp).
std::vector<InteractionEvent> parse_log(const std::filesystem::path& path,
                                        const LogFormat& format,
                                        ParseReport* report = nullptr);

// Drops users with fewer than `min_interactions` events.
std::vector<InteractionEvent> filter_short_users(
    std::vector<InteractionEvent> events, int min_interactions);

// Buckets events into fixed intervals and emits one round per active
// interval whose full look-ahead horizon is observable: rounds stop at
// horizon intervals before the log's last active interval. A round's items
// are the user's first-ever interactions of that interval (first-timestamp
// order, capped at `max_items_per_round`); login_flags[k] records activity
// at interval t+k+1. Item ids are interned into `vocab` in event order.
std::vector<UserHistory> sessionize(const std::vector<InteractionEvent>& events,
                                    std::int64_t interval_seconds, int horizon,
                                    ItemVocabulary& vocab,
                                    int max_items_per_round);

struct SplitFractions {
  double train = 0.56;
  double validation = 0.24;
  double test = 0.20;
};

struct DatasetSplit {
  std::vector<Trajectory> train;
  std::vector<Trajectory> validation;
  std::vector<Trajectory> test;
  std::uint64_t split_seed = 0;
};

// Deterministic user-level split. Counts are floors of the fractions with
// the remainder going to the largest fractional parts (ties to the earlier
// split).
DatasetSplit split_dataset(const std::vector<Trajectory>& trajectories,
                           const SplitFractions& fractions,
                           std::uint64_t seed);

enum class NegativeRewardMode {
  kLowerOnly,     // replacements drawn below the positive reward
  kAnyDifferent,  // replacements drawn anywhere in [0, r_max] except equal
};

// A contrastive counterpart of one positive trajectory: identical states
// and actions, rewards replaced per step, return-to-go recomputed, and the
// similarity weight kappa from the mean replaced reward.
struct NegativeSample {
  const Trajectory* base = nullptr;
  std::vector<double> rewards;
  std::vector<double> return_to_go;
  double kappa = 1.0;
};

std::vector<NegativeSample> make_negatives(
    const Trajectory& positive, int n_neg, int r_max, std::uint64_t seed,
    NegativeRewardMode mode = NegativeRewardMode::kLowerOnly);

// Monotone map from a round's preference-match rate to the per-interval
// login probability: p_min + (p_max - p_min) * rate^gamma.
struct RetentionLink {
  double p_min = 0.2;
  double p_max = 0.9;
  double gamma = 1.0;
  double operator()(double match_rate) const;
};

struct SyntheticWorldConfig {
  int n_users = 200;
  int n_items = 100;
  int n_genres = 5;
  int n_intervals = 30;
  int items_per_round = 3;
  double preference_sharpness = 4.0;  // weight on the preferred genre
  RetentionLink link;
  std::uint64_t seed = 0;
};

// A generated world: the event log plus the latent ground truth used by
// oracle checks (per-user activity per interval, genre assignments).
struct SyntheticWorld {
  std::vector<InteractionEvent> events;
  std::vector<std::vector<std::uint8_t>> activity;  // user x interval
  std::vector<int> preferred_genre;                 // per user
  std::vector<int> item_genre;                      // per item
};

SyntheticWorld synth_generate(const SyntheticWorldConfig& config);

// End-to-end ingestion settings; one bundle on disk captures everything a
// training or evaluation run needs.
struct IngestConfig {
  std::int64_t interval_seconds = 86400;
  int horizon = 7;
  int min_interactions = 20;
  int max_items_per_round = 19;
  SplitFractions fractions;
  int state_window = 30;
  std::uint64_t split_seed = 0;
};

struct BundleStats {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_interactions = 0;
  double mean_retention = 0.0;
  double density = 0.0;
};

struct DatasetBundle {
  int version = 1;
  IngestConfig config;
  BundleStats stats;
  ItemVocabulary vocab;
  DatasetSplit split;
};

// Builds trajectories from raw events and splits them by user.
DatasetBundle build_bundle(const std::vector<InteractionEvent>& events,
                           const IngestConfig& config);

// Directory layout: manifest.json, vocab.tsv, train.jsonl,
// validation.jsonl, test.jsonl. Writing is deterministic; reruns are
// byte-identical.
void write_bundle(const std::filesystem::path& dir, const DatasetBundle& b);
DatasetBundle read_bundle(const std::filesystem::path& dir);

}  // namespace dtrec
