#include "prefrl/prefdb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "prefrl/error.hpp"
#include "prefrl/rng.hpp"

namespace prefrl {

using nlohmann::json;

Vec Segment::flatten() const {
  Vec flat;
  flat.reserve(states.size() + actions.size());
  for (std::size_t i = 0; i < length(); ++i) {
    auto s = state(i);
    auto a = action(i);
    flat.insert(flat.end(), s.begin(), s.end());
    flat.insert(flat.end(), a.begin(), a.end());
  }
  return flat;
}

Segment make_segment(const Trajectory& trajectory, std::size_t start, std::size_t length,
                     std::size_t state_dim, std::size_t action_dim, std::uint64_t clip_seed) {
  require(length >= 1, "segment length must be at least 1");
  require(start + length <= trajectory.steps.size(),
          "segment [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") exceeds episode " + std::to_string(trajectory.episode_id) + " of length " +
              std::to_string(trajectory.steps.size()));
  Segment segment;
  segment.env_name = trajectory.env_name;
  segment.episode_id = trajectory.episode_id;
  segment.start_index = start;
  segment.clip_seed = clip_seed;
  segment.state_dim = state_dim;
  segment.action_dim = action_dim;
  segment.states.reserve(length * state_dim);
  segment.actions.reserve(length * action_dim);
  for (std::size_t t = start; t < start + length; ++t) {
    const auto& step = trajectory.steps[t];
    require(step.state.size() == state_dim && step.action.size() == action_dim,
            "trajectory step dimensions do not match the segment layout");
    segment.states.insert(segment.states.end(), step.state.begin(), step.state.end());
    segment.actions.insert(segment.actions.end(), step.action.begin(), step.action.end());
  }
  return segment;
}

std::string_view to_string(LabelSource source) {
  switch (source) {
    case LabelSource::human: return "human";
    case LabelSource::oracle: return "oracle";
    case LabelSource::discriminator: return "discriminator";
    case LabelSource::reward_model: return "reward_model";
  }
  return "oracle";
}

LabelSource parse_label_source(std::string_view name) {
  if (name == "human") return LabelSource::human;
  if (name == "oracle") return LabelSource::oracle;
  if (name == "discriminator") return LabelSource::discriminator;
  if (name == "reward_model") return LabelSource::reward_model;
  throw Error("unknown label source '" + std::string(name) + "'");
}

std::string_view to_string(LabelChoice choice) {
  switch (choice) {
    case LabelChoice::first: return "first";
    case LabelChoice::second: return "second";
    case LabelChoice::equal: return "equal";
    case LabelChoice::incomparable: return "incomparable";
  }
  return "incomparable";
}

std::optional<LabelChoice> parse_label_choice(std::string_view name) {
  if (name == "first") return LabelChoice::first;
  if (name == "second") return LabelChoice::second;
  if (name == "equal") return LabelChoice::equal;
  if (name == "incomparable") return LabelChoice::incomparable;
  return std::nullopt;
}

std::optional<Xi> xi_from_choice(LabelChoice choice) {
  switch (choice) {
    case LabelChoice::first: return kPreferFirst;
    case LabelChoice::second: return kPreferSecond;
    case LabelChoice::equal: return kIndifferent;
    case LabelChoice::incomparable: return std::nullopt;
  }
  return std::nullopt;
}

const Segment& PreferenceRecord::preferred() const {
  require(strict(), "preferred() needs a strict record");
  return xi->first > xi->second ? seg1 : seg2;
}

const Segment& PreferenceRecord::non_preferred() const {
  require(strict(), "non_preferred() needs a strict record");
  return xi->first > xi->second ? seg2 : seg1;
}

PreferenceRecord swapped(const PreferenceRecord& record) {
  PreferenceRecord result = record;
  std::swap(result.seg1, result.seg2);
  if (result.xi) std::swap(result.xi->first, result.xi->second);
  if (result.scores) std::swap((*result.scores)[0], (*result.scores)[1]);
  return result;
}

PrefDatabase::PrefDatabase(const PrefDatabase& other) : records_(other.snapshot()) {}

PrefDatabase& PrefDatabase::operator=(const PrefDatabase& other) {
  if (this != &other) {
    auto copy = other.snapshot();
    std::lock_guard lock(mutex_);
    records_ = std::move(copy);
  }
  return *this;
}

bool PrefDatabase::insert(PreferenceRecord record) {
  if (record.incomparable()) return false;
  const Xi& xi = *record.xi;
  require(xi.first >= 0.0 && xi.second >= 0.0 && std::abs(xi.first + xi.second - 1.0) < 1e-12,
          "xi must be a distribution over {1, 2}");
  require(record.seg1.length() == record.seg2.length(), "paired segments must share a length");
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(record));
  return true;
}

std::vector<PreferenceRecord> PrefDatabase::snapshot() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t PrefDatabase::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::size_t PrefDatabase::count(LabelSource source) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(),
                                                [&](const auto& r) { return r.source == source; }));
}

std::size_t PrefDatabase::strict_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [](const auto& r) { return r.strict(); }));
}

std::vector<Segment> PrefDatabase::preferred(const SourceFilter& filter) const {
  std::lock_guard lock(mutex_);
  std::vector<Segment> result;
  for (const auto& r : records_)
    if (r.strict() && (!filter || filter(r.source))) result.push_back(r.preferred());
  return result;
}

std::vector<Segment> PrefDatabase::non_preferred(const SourceFilter& filter) const {
  std::lock_guard lock(mutex_);
  std::vector<Segment> result;
  for (const auto& r : records_)
    if (r.strict() && (!filter || filter(r.source))) result.push_back(r.non_preferred());
  return result;
}

namespace {

json slot_json(const Segment& s) {
  return {{"episode_id", s.episode_id}, {"start_index", s.start_index}, {"clip_seed", s.clip_seed}};
}

}  // namespace

void PrefDatabase::save_jsonl(const std::filesystem::path& path) const {
  auto records = snapshot();
  std::ofstream out(path);
  if (!out) throw Error("cannot write preference database " + path.string());
  for (const auto& r : records) {
    json row = {{"pair_id", r.pair_id},
                {"seg1", slot_json(r.seg1)},
                {"seg2", slot_json(r.seg2)},
                {"xi", {r.xi->first, r.xi->second}},
                {"source", to_string(r.source)},
                {"timestamp", r.timestamp}};
    if (r.scores) row["scores"] = {(*r.scores)[0], (*r.scores)[1]};
    out << row.dump() << '\n';
  }
}

PrefDatabase PrefDatabase::load_jsonl(const std::filesystem::path& path,
                                      const std::map<std::int64_t, const Trajectory*>& episodes,
                                      std::size_t segment_length, std::size_t state_dim,
                                      std::size_t action_dim) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read preference database " + path.string());
  PrefDatabase db;
  std::string line;
  auto load_segment = [&](const json& slot) {
    const auto id = slot.at("episode_id").get<std::int64_t>();
    auto it = episodes.find(id);
    if (it == episodes.end())
      throw Error("preference database references unknown episode " + std::to_string(id));
    return make_segment(*it->second, slot.at("start_index").get<std::size_t>(), segment_length,
                        state_dim, action_dim, slot.at("clip_seed").get<std::uint64_t>());
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    PreferenceRecord r;
    r.pair_id = row.at("pair_id").get<std::uint64_t>();
    r.seg1 = load_segment(row.at("seg1"));
    r.seg2 = load_segment(row.at("seg2"));
    const auto xi = row.at("xi").get<std::array<double, 2>>();
    r.xi = Xi{xi[0], xi[1]};
    r.source = parse_label_source(row.at("source").get<std::string>());
    r.timestamp = row.at("timestamp").get<std::int64_t>();
    if (row.contains("scores")) r.scores = row.at("scores").get<std::array<double, 2>>();
    db.insert(std::move(r));
  }
  return db;
}

std::vector<SegmentPair> extract_pairs(const std::vector<Trajectory>& trajectories,
                                       std::size_t segment_length, std::size_t n_pairs,
                                       std::uint64_t seed, std::size_t state_dim,
                                       std::size_t action_dim) {
  require(segment_length >= 1, "segment length must be at least 1");
  struct Slot {
    std::size_t trajectory;
    std::size_t start;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const std::size_t len = trajectories[i].steps.size();
    if (len < segment_length)
      throw InsufficientData("episode " + std::to_string(trajectories[i].episode_id) + " has " +
                             std::to_string(len) + " steps, fewer than the segment length " +
                             std::to_string(segment_length));
    for (std::size_t start = 0; start + segment_length <= len; ++start) slots.push_back({i, start});
  }
  const std::size_t needed = 2 * n_pairs;
  if (slots.size() < needed || (n_pairs > 0 && slots.size() < 2))
    throw InsufficientData("need " + std::to_string(needed) + " distinct segment slots for " +
                           std::to_string(n_pairs) + " pairs but only " +
                           std::to_string(slots.size()) + " exist (short by " +
                           std::to_string(needed - slots.size()) + ")");

  // Partial Fisher-Yates: the first `needed` entries become a uniform draw
  // without replacement; consecutive entries are paired.
  Rng rng(derive_seed(seed, "pairs"));
  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < needed; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<SegmentPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const Slot& a = slots[order[2 * p]];
    const Slot& b = slots[order[2 * p + 1]];
    SegmentPair pair;
    pair.first = make_segment(trajectories[a.trajectory], a.start, segment_length, state_dim,
                              action_dim, derive_seed(seed, "clip", 2 * p));
    pair.second = make_segment(trajectories[b.trajectory], b.start, segment_length, state_dim,
                               action_dim, derive_seed(seed, "clip", 2 * p + 1));
    pair.pair_id = derive_seed(seed, "pair-id", p);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

double discounted_sum(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

Xi label_from_returns(double g1, double g2, double tie_band) {
  if (tie_band > 0.0 && std::abs(g1 - g2) <= tie_band) return kIndifferent;
  return g1 > g2 ? kPreferFirst : kPreferSecond;
}

double discounted_segment_return(const Segment& segment, const StepRewardFn& reward, double gamma) {
  Vec rewards(segment.length());
  for (std::size_t i = 0; i < segment.length(); ++i)
    rewards[i] = reward(segment.state(i), segment.action(i));
  return discounted_sum(rewards, gamma);
}

PreferenceRecord c3_label(const SegmentPair& pair, const StepRewardFn& reward, double gamma,
                          double tie_band, std::int64_t timestamp) {
  require(pair.first.length() == pair.second.length(), "paired segments must share a length");
  PreferenceRecord record;
  record.seg1 = pair.first;
  record.seg2 = pair.second;
  record.pair_id = pair.pair_id;
  record.timestamp = timestamp;
  record.source = LabelSource::reward_model;
  record.xi = label_from_returns(discounted_segment_return(pair.first, reward, gamma),
                                 discounted_segment_return(pair.second, reward, gamma), tie_band);
  return record;
}

PreferenceRecord oracle_label(const SegmentPair& pair, const Environment& env, double tie_band,
                              std::int64_t timestamp) {
  StepRewardFn hidden = [&env](std::span<const double> s, std::span<const double> a) {
    return env.true_reward(s, a);
  };
  PreferenceRecord record = c3_label(pair, hidden, env.spec().gamma, tie_band, timestamp);
  record.source = LabelSource::oracle;
  return record;
}

std::size_t next_query_budget(const QuerySchedule& schedule, std::int64_t episode) {
  require(episode >= 0, "episode must be non-negative");
  // The online cadence starts at episode 0, so after N episodes a schedule
  // has issued initial + online * ceil(N / period) labels.
  const std::size_t initial = episode == 0 ? schedule.initial_labels : 0;
  if (schedule.online_period_episodes == 0) return initial;
  const bool online = static_cast<std::size_t>(episode) % schedule.online_period_episodes == 0;
  return initial + (online ? schedule.online_labels : 0);
}

std::vector<QuerySchedule> builtin_schedules() {
  return {
      {"human-175", 175, 6, 1, LabelSource::human},
      {"human-345", 345, 6, 1, LabelSource::human},
      {"synthetic-175", 175, 175, 100, LabelSource::oracle},
      {"gan-assisted-50", 50, 50, 100, LabelSource::discriminator},
      {"gan-assisted-175", 175, 175, 100, LabelSource::discriminator},
      {"oracle-40", 40, 40, 20, LabelSource::oracle},
      {"gan-assisted-desk", 50, 80, 1, LabelSource::discriminator},
  };
}

std::optional<QuerySchedule> find_schedule(std::string_view name) {
  for (auto& s : builtin_schedules())
    if (s.name == name) return s;
  return std::nullopt;
}

}  // namespace prefrl
