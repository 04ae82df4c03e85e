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
#include "dtrec/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "dtrec/error.hpp"
#include "dtrec/rng.hpp"
#include "dtrec/training.hpp"

namespace dtrec {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> split_fields(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace

std::vector<InteractionEvent> parse_log(const fs::path& path,
                                        const LogFormat& format,
                                        ParseReport* report) {
  require(format.user_col >= 0 && format.item_col >= 0 && format.time_col >= 0,
          ErrorKind::kConfig, "log format column indices must be >= 0");
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open log file: " + path.string());

  const int needed = std::max({format.user_col, format.item_col,
                               format.time_col}) + 1;
  std::vector<InteractionEvent> events;
  ParseReport local;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && format.has_header) {
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    ++local.total_rows;
    const std::vector<std::string> fields = split_fields(line, format.delimiter);
    if (static_cast<int>(fields.size()) < needed) {
      ++local.malformed_rows;
      continue;
    }
    const std::string& user = fields[format.user_col];
    const std::string& item = fields[format.item_col];
    const std::string& time = fields[format.time_col];
    std::int64_t ts = 0;
    const auto [ptr, ec] =
        std::from_chars(time.data(), time.data() + time.size(), ts);
    if (user.empty() || item.empty() || ec != std::errc{} ||
        ptr != time.data() + time.size()) {
      ++local.malformed_rows;
      continue;
    }
    events.push_back({user, item, ts});
  }
  if (local.total_rows > 0 &&
      10 * local.malformed_rows > local.total_rows) {
    fail(ErrorKind::kFormat,
         "more than 10% malformed rows (" +
             std::to_string(local.malformed_rows) + " of " +
             std::to_string(local.total_rows) + ") in " + path.string());
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const InteractionEvent& a, const InteractionEvent& b) {
                     if (a.user_id != b.user_id) return a.user_id < b.user_id;
                     return a.timestamp < b.timestamp;
                   });
  if (report) *report = local;
  return events;
}

std::vector<InteractionEvent> filter_short_users(
    std::vector<InteractionEvent> events, int min_interactions) {
  require(min_interactions >= 0, ErrorKind::kConfig,
          "min_interactions must be >= 0");
  std::unordered_map<std::string, int> counts;
  for (const InteractionEvent& e : events) ++counts[e.user_id];
  std::vector<InteractionEvent> kept;
  kept.reserve(events.size());
  for (InteractionEvent& e : events) {
    if (counts[e.user_id] >= min_interactions) kept.push_back(std::move(e));
  }
  return kept;
}

std::vector<UserHistory> sessionize(const std::vector<InteractionEvent>& events,
                                    std::int64_t interval_seconds, int horizon,
                                    ItemVocabulary& vocab,
                                    int max_items_per_round) {
  require(interval_seconds > 0, ErrorKind::kConfig,
          "interval_seconds must be > 0");
  require(horizon >= 1, ErrorKind::kConfig, "horizon must be >= 1");
  require(max_items_per_round >= 1, ErrorKind::kConfig,
          "max_items_per_round must be >= 1");
  if (events.empty()) return {};

  for (std::size_t i = 1; i < events.size(); ++i) {
    const bool ordered =
        events[i - 1].user_id < events[i].user_id ||
        (events[i - 1].user_id == events[i].user_id &&
         events[i - 1].timestamp <= events[i].timestamp);
    require(ordered, ErrorKind::kOrdering,
            "events must be sorted by (user_id, timestamp)");
  }

  for (const InteractionEvent& e : events) vocab.add(e.item_id);

  const auto interval_of = [interval_seconds](std::int64_t ts) {
    // Floor division keeps pre-epoch timestamps in the right bucket.
    std::int64_t q = ts / interval_seconds;
    if (ts % interval_seconds != 0 && ts < 0) --q;
    return q;
  };

  std::int64_t last_interval = interval_of(events[0].timestamp);
  for (const InteractionEvent& e : events)
    last_interval = std::max(last_interval, interval_of(e.timestamp));

  std::vector<UserHistory> histories;
  std::size_t begin = 0;
  while (begin < events.size()) {
    std::size_t end = begin;
    while (end < events.size() && events[end].user_id == events[begin].user_id)
      ++end;

    // Active intervals and the first-ever items consumed in each.
    std::set<std::int64_t> active;
    std::map<std::int64_t, std::vector<int>> fresh;
    std::unordered_set<int> seen;
    for (std::size_t i = begin; i < end; ++i) {
      const std::int64_t t = interval_of(events[i].timestamp);
      active.insert(t);
      const int index = vocab.index_of(events[i].item_id);
      if (seen.insert(index).second) fresh[t].push_back(index);
    }

    UserHistory history;
    history.user_id = events[begin].user_id;
    for (const std::int64_t t : active) {
      if (t + horizon > last_interval) break;  // look-ahead not observable
      Round round;
      round.round_index = static_cast<int>(history.rounds.size()) + 1;
      if (auto it = fresh.find(t); it != fresh.end()) {
        round.new_items = it->second;
        if (static_cast<int>(round.new_items.size()) > max_items_per_round)
          round.new_items.resize(max_items_per_round);
      }
      round.login_flags.reserve(horizon);
      for (int k = 1; k <= horizon; ++k)
        round.login_flags.push_back(active.count(t + k) ? 1 : 0);
      history.rounds.push_back(std::move(round));
    }
    if (!history.rounds.empty()) histories.push_back(std::move(history));
    begin = end;
  }
  return histories;
}

DatasetSplit split_dataset(const std::vector<Trajectory>& trajectories,
                           const SplitFractions& fractions,
                           std::uint64_t seed) {
  require(fractions.train >= 0.0 && fractions.validation >= 0.0 &&
              fractions.test >= 0.0,
          ErrorKind::kConfig, "split fractions must be >= 0");
  const double sum = fractions.train + fractions.validation + fractions.test;
  require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::kConfig,
          "split fractions must sum to 1");

  const std::size_t n = trajectories.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trajectories[a].user_id < trajectories[b].user_id;
  });
  auto rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);

  const double fracs[3] = {fractions.train, fractions.validation,
                           fractions.test};
  std::size_t counts[3];
  double parts[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fracs[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(exact));
    parts[s] = exact - std::floor(exact);
    assigned += counts[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (parts[s] > parts[best]) best = s;
    ++counts[best];
    parts[best] = -1.0;
    ++assigned;
  }

  DatasetSplit split;
  split.split_seed = seed;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < counts[0]; ++i) split.train.push_back(trajectories[order[pos++]]);
  for (std::size_t i = 0; i < counts[1]; ++i) split.validation.push_back(trajectories[order[pos++]]);
  for (std::size_t i = 0; i < counts[2]; ++i) split.test.push_back(trajectories[order[pos++]]);
  return split;
}

std::vector<NegativeSample> make_negatives(const Trajectory& positive,
                                           int n_neg, int r_max,
                                           std::uint64_t seed,
                                           NegativeRewardMode mode) {
  require(n_neg >= 1, ErrorKind::kConfig, "n_neg must be >= 1");
  require(r_max >= 0, ErrorKind::kDomain, "r_max must be >= 0");
  require(positive.length() > 0, ErrorKind::kDegenerate,
          "cannot build negatives for an empty trajectory");
  std::vector<int> levels(positive.rewards.size());
  for (std::size_t t = 0; t < positive.rewards.size(); ++t) {
    const double r = positive.rewards[t];
    const int level = static_cast<int>(std::llround(r));
    require(std::abs(r - level) < 1e-9 && level >= 0 && level <= r_max,
            ErrorKind::kDomain,
            "positive rewards must be integers in [0, r_max]");
    levels[t] = level;
  }

  auto rng = make_rng(seed, "negatives");
  std::vector<NegativeSample> out;
  out.reserve(static_cast<std::size_t>(n_neg));
  for (int k = 0; k < n_neg; ++k) {
    NegativeSample neg;
    neg.base = &positive;
    neg.rewards.resize(levels.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < levels.size(); ++t) {
      const int e = levels[t];
      int drawn = 0;
      if (mode == NegativeRewardMode::kLowerOnly) {
        if (e > 0) {
          std::uniform_int_distribution<int> dist(0, e - 1);
          drawn = dist(rng);
        }
      } else {
        if (r_max > 0) {
          std::uniform_int_distribution<int> dist(0, r_max - 1);
          drawn = dist(rng);
          if (drawn >= e) ++drawn;  // uniform over [0, r_max] minus e
        }
      }
      neg.rewards[t] = static_cast<double>(drawn);
      sum += neg.rewards[t];
    }
    neg.return_to_go = compute_return_to_go(neg.rewards);
    neg.kappa = kappa(sum / static_cast<double>(levels.size()),
                      static_cast<double>(r_max));
    out.push_back(std::move(neg));
  }
  return out;
}

double RetentionLink::operator()(double match_rate) const {
  require(match_rate >= 0.0 && match_rate <= 1.0, ErrorKind::kDomain,
          "match rate must lie in [0, 1]");
  return p_min + (p_max - p_min) * std::pow(match_rate, gamma);
}

namespace {

std::string padded_id(char prefix, int index, int width) {
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << index;
  return os.str();
}

void validate_world(const SyntheticWorldConfig& c) {
  require(c.n_users >= 1, ErrorKind::kConfig, "n_users must be >= 1");
  require(c.n_items >= 1, ErrorKind::kConfig, "n_items must be >= 1");
  require(c.n_genres >= 1 && c.n_genres <= c.n_items, ErrorKind::kConfig,
          "n_genres must be in [1, n_items]");
  require(c.n_intervals >= 1, ErrorKind::kConfig, "n_intervals must be >= 1");
  require(c.items_per_round >= 1, ErrorKind::kConfig,
          "items_per_round must be >= 1");
  require(c.preference_sharpness > 0.0, ErrorKind::kConfig,
          "preference_sharpness must be > 0");
  require(c.link.p_min >= 0.0 && c.link.p_max <= 1.0 &&
              c.link.p_min <= c.link.p_max,
          ErrorKind::kConfig, "retention link needs 0 <= p_min <= p_max <= 1");
  require(c.link.gamma > 0.0, ErrorKind::kConfig, "link gamma must be > 0");
}

}  // namespace

SyntheticWorld synth_generate(const SyntheticWorldConfig& config) {
  validate_world(config);
  constexpr std::int64_t kDay = 86400;

  SyntheticWorld world;
  world.item_genre.resize(config.n_items);
  std::vector<std::vector<int>> genre_items(config.n_genres);
  for (int i = 0; i < config.n_items; ++i) {
    world.item_genre[i] = i % config.n_genres;
    genre_items[i % config.n_genres].push_back(i);
  }

  world.preferred_genre.resize(config.n_users);
  world.activity.assign(config.n_users,
                        std::vector<std::uint8_t>(config.n_intervals, 0));

  for (int u = 0; u < config.n_users; ++u) {
    auto rng = make_rng(config.seed, "synth-u" + std::to_string(u));
    std::uniform_int_distribution<int> genre_dist(0, config.n_genres - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int pref = genre_dist(rng);
    world.preferred_genre[u] = pref;
    const std::string user_id = padded_id('u', u, 6);

    std::vector<std::uint8_t>& active = world.activity[u];
    active[0] = 1;
    double current_p = config.link.p_min;
    const double total_weight =
        config.preference_sharpness + static_cast<double>(config.n_genres - 1);
    for (int t = 0; t < config.n_intervals; ++t) {
      if (active[t]) {
        int matched = 0;
        for (int j = 0; j < config.items_per_round; ++j) {
          int genre;
          if (config.n_genres == 1) {
            genre = 0;
          } else {
            const double x = unit(rng) * total_weight;
            if (x < config.preference_sharpness) {
              genre = pref;
            } else {
              int other = static_cast<int>(x - config.preference_sharpness);
              other = std::min(other, config.n_genres - 2);
              genre = other >= pref ? other + 1 : other;
            }
          }
          if (genre == pref) ++matched;
          const std::vector<int>& pool = genre_items[genre];
          std::uniform_int_distribution<int> pick(
              0, static_cast<int>(pool.size()) - 1);
          const int item = pool[pick(rng)];
          world.events.push_back(
              {user_id, padded_id('i', item, 6),
               static_cast<std::int64_t>(t) * kDay + 60 * (j + 1)});
        }
        current_p = config.link(static_cast<double>(matched) /
                                static_cast<double>(config.items_per_round));
      }
      if (t + 1 < config.n_intervals) active[t + 1] = unit(rng) < current_p;
    }
  }
  return world;
}

DatasetBundle build_bundle(const std::vector<InteractionEvent>& events,
                           const IngestConfig& config) {
  DatasetBundle bundle;
  bundle.config = config;

  std::vector<InteractionEvent> kept =
      filter_short_users(events, config.min_interactions);
  const std::vector<UserHistory> histories =
      sessionize(kept, config.interval_seconds, config.horizon, bundle.vocab,
                 config.max_items_per_round);

  std::vector<Trajectory> trajectories;
  trajectories.reserve(histories.size());
  double reward_sum = 0.0;
  std::size_t steps = 0;
  for (const UserHistory& h : histories) {
    Trajectory traj = build_trajectory(h, config.state_window);
    if (traj.length() == 0) continue;
    for (const double r : traj.rewards) reward_sum += r;
    steps += traj.rewards.size();
    trajectories.push_back(std::move(traj));
  }

  bundle.split = split_dataset(trajectories, config.fractions, config.split_seed);
  bundle.stats.n_users = trajectories.size();
  bundle.stats.n_items = static_cast<std::size_t>(bundle.vocab.item_count());
  bundle.stats.n_interactions = kept.size();
  bundle.stats.mean_retention =
      steps > 0 ? reward_sum / static_cast<double>(steps) : 0.0;
  const double cells = static_cast<double>(bundle.stats.n_users) *
                       static_cast<double>(bundle.stats.n_items);
  bundle.stats.density =
      cells > 0.0 ? static_cast<double>(kept.size()) / cells : 0.0;
  return bundle;
}

namespace {

json trajectory_to_json(const Trajectory& t) {
  return json{{"user", t.user_id},
              {"rewards", t.rewards},
              {"rtg", t.return_to_go},
              {"states", t.states},
              {"actions", t.actions}};
}

Trajectory trajectory_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kFormat, "trajectory record must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    require(key == "user" || key == "rewards" || key == "rtg" ||
                key == "states" || key == "actions",
            ErrorKind::kFormat, "unknown trajectory record key: " + key);
  }
  Trajectory t;
  try {
    t.user_id = j.at("user").get<std::string>();
    t.rewards = j.at("rewards").get<std::vector<double>>();
    t.return_to_go = j.at("rtg").get<std::vector<double>>();
    t.states = j.at("states").get<std::vector<std::vector<int>>>();
    t.actions = j.at("actions").get<std::vector<std::vector<int>>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad trajectory record: ") + e.what());
  }
  require(t.rewards.size() == t.return_to_go.size() &&
              t.rewards.size() == t.states.size() &&
              t.rewards.size() == t.actions.size(),
          ErrorKind::kFormat, "trajectory record fields must align");
  const std::vector<double> rtg = compute_return_to_go(t.rewards);
  for (std::size_t i = 0; i < rtg.size(); ++i) {
    require(std::abs(rtg[i] - t.return_to_go[i]) <= 1e-9, ErrorKind::kFormat,
            "trajectory return-to-go does not match its rewards");
  }
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

void write_jsonl(const fs::path& path, const std::vector<Trajectory>& list) {
  std::ostringstream os;
  for (const Trajectory& t : list) os << trajectory_to_json(t).dump() << '\n';
  write_text(path, os.str());
}

std::vector<Trajectory> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<Trajectory> list;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat,
           "bad JSON in " + path.string() + ": " + e.what());
    }
    list.push_back(trajectory_from_json(j));
  }
  return list;
}

}  // namespace

void write_bundle(const fs::path& dir, const DatasetBundle& b) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create directory " + dir.string());

  json manifest{
      {"version", b.version},
      {"config",
       {{"interval_seconds", b.config.interval_seconds},
        {"horizon", b.config.horizon},
        {"min_interactions", b.config.min_interactions},
        {"max_items_per_round", b.config.max_items_per_round},
        {"fractions",
         {{"train", b.config.fractions.train},
          {"validation", b.config.fractions.validation},
          {"test", b.config.fractions.test}}},
        {"state_window", b.config.state_window},
        {"split_seed", b.config.split_seed}}},
      {"stats",
       {{"n_users", b.stats.n_users},
        {"n_items", b.stats.n_items},
        {"n_interactions", b.stats.n_interactions},
        {"mean_retention", b.stats.mean_retention},
        {"density", b.stats.density}}},
      {"counts",
       {{"train", b.split.train.size()},
        {"validation", b.split.validation.size()},
        {"test", b.split.test.size()}}},
      {"vocab_hash", b.vocab.hash()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ostringstream vocab_text;
  const std::vector<std::string>& ids = b.vocab.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    vocab_text << (ItemVocabulary::kFirstItem + static_cast<int>(i)) << '\t'
               << ids[i] << '\n';
  }
  write_text(dir / "vocab.tsv", vocab_text.str());

  write_jsonl(dir / "train.jsonl", b.split.train);
  write_jsonl(dir / "validation.jsonl", b.split.validation);
  write_jsonl(dir / "test.jsonl", b.split.test);
}

DatasetBundle read_bundle(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(in.good(), ErrorKind::kIo,
          "cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad manifest JSON: ") + e.what());
  }

  DatasetBundle b;
  try {
    b.version = manifest.at("version").get<int>();
    require(b.version == 1, ErrorKind::kFormat,
            "unsupported bundle version " + std::to_string(b.version));
    const json& cfg = manifest.at("config");
    b.config.interval_seconds = cfg.at("interval_seconds").get<std::int64_t>();
    b.config.horizon = cfg.at("horizon").get<int>();
    b.config.min_interactions = cfg.at("min_interactions").get<int>();
    b.config.max_items_per_round = cfg.at("max_items_per_round").get<int>();
    b.config.fractions.train = cfg.at("fractions").at("train").get<double>();
    b.config.fractions.validation =
        cfg.at("fractions").at("validation").get<double>();
    b.config.fractions.test = cfg.at("fractions").at("test").get<double>();
    b.config.state_window = cfg.at("state_window").get<int>();
    b.config.split_seed = cfg.at("split_seed").get<std::uint64_t>();
    const json& stats = manifest.at("stats");
    b.stats.n_users = stats.at("n_users").get<std::size_t>();
    b.stats.n_items = stats.at("n_items").get<std::size_t>();
    b.stats.n_interactions = stats.at("n_interactions").get<std::size_t>();
    b.stats.mean_retention = stats.at("mean_retention").get<double>();
    b.stats.density = stats.at("density").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad manifest: ") + e.what());
  }

  std::ifstream vocab_in(dir / "vocab.tsv");
  require(vocab_in.good(), ErrorKind::kIo,
          "cannot open " + (dir / "vocab.tsv").string());
  std::string line;
  while (std::getline(vocab_in, line)) {
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    require(tab != std::string::npos, ErrorKind::kFormat,
            "vocab.tsv line without a tab");
    const std::string index_text = line.substr(0, tab);
    const std::string id = line.substr(tab + 1);
    int expected = 0;
    const auto [ptr, ec] = std::from_chars(
        index_text.data(), index_text.data() + index_text.size(), expected);
    require(ec == std::errc{} && ptr == index_text.data() + index_text.size(),
            ErrorKind::kFormat, "vocab.tsv line with a bad index");
    const int got = b.vocab.add(id);
    require(got == expected, ErrorKind::kFormat,
            "vocab.tsv indices out of order at " + id);
  }
  const std::uint64_t expected_hash =
      manifest.value("vocab_hash", std::uint64_t{0});
  require(manifest.contains("vocab_hash"), ErrorKind::kFormat,
          "manifest missing vocab_hash");
  require(b.vocab.hash() == expected_hash, ErrorKind::kCompatibility,
          "vocabulary does not match the manifest hash");

  b.split.split_seed = b.config.split_seed;
  b.split.train = read_jsonl(dir / "train.jsonl");
  b.split.validation = read_jsonl(dir / "validation.jsonl");
  b.split.test = read_jsonl(dir / "test.jsonl");
  return b;
}

}  // namespace dtrec
