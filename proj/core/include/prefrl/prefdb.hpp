#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prefrl/env.hpp"
#include "prefrl/trajectory.hpp"

namespace prefrl {

/// Fixed-length run of (state, action) pairs cut from one trajectory.
/// States and actions are stored flat, step-major.
struct Segment {
  std::string env_name;
  std::int64_t episode_id = 0;
  std::size_t start_index = 0;
  std::uint64_t clip_seed = 0;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  Vec states;
  Vec actions;

  [[nodiscard]] std::size_t length() const { return state_dim == 0 ? 0 : states.size() / state_dim; }
  [[nodiscard]] std::span<const double> state(std::size_t i) const {
    return {states.data() + i * state_dim, state_dim};
  }
  [[nodiscard]] std::span<const double> action(std::size_t i) const {
    return {actions.data() + i * action_dim, action_dim};
  }
  /// (s_0, a_0, s_1, a_1, ...) as one vector, the discriminator input.
  [[nodiscard]] Vec flatten() const;
  [[nodiscard]] bool same_slot(const Segment& other) const {
    return episode_id == other.episode_id && start_index == other.start_index;
  }
};

Segment make_segment(const Trajectory& trajectory, std::size_t start, std::size_t length,
                     std::size_t state_dim, std::size_t action_dim, std::uint64_t clip_seed = 0);

struct SegmentPair {
  Segment first;
  Segment second;
  std::uint64_t pair_id = 0;
};

enum class LabelSource { human, oracle, discriminator, reward_model };
std::string_view to_string(LabelSource source);
LabelSource parse_label_source(std::string_view name);

/// Preference distribution over {1, 2}.
struct Xi {
  double first = 0.5;
  double second = 0.5;
  [[nodiscard]] bool indifferent() const { return first == second; }
  friend bool operator==(const Xi&, const Xi&) = default;
};

inline constexpr Xi kPreferFirst{1.0, 0.0};
inline constexpr Xi kPreferSecond{0.0, 1.0};
inline constexpr Xi kIndifferent{0.5, 0.5};

enum class LabelChoice { first, second, equal, incomparable };
std::string_view to_string(LabelChoice choice);
std::optional<LabelChoice> parse_label_choice(std::string_view name);
/// first -> (1,0), second -> (0,1), equal -> (0.5,0.5), incomparable -> none.
std::optional<Xi> xi_from_choice(LabelChoice choice);

struct PreferenceRecord {
  Segment seg1;
  Segment seg2;
  std::optional<Xi> xi;  // empty = incomparable
  LabelSource source = LabelSource::oracle;
  std::int64_t timestamp = 0;  // episode at which the label was obtained
  std::uint64_t pair_id = 0;
  /// Independent discriminator scores (Y(seg1), Y(seg2)); discriminator
  /// records only. They need not sum to 1.
  std::optional<std::array<double, 2>> scores;

  [[nodiscard]] bool incomparable() const { return !xi.has_value(); }
  [[nodiscard]] bool strict() const { return xi && !xi->indifferent(); }
  [[nodiscard]] bool indifferent() const { return xi && xi->indifferent(); }
  /// Strict records only.
  [[nodiscard]] const Segment& preferred() const;
  [[nodiscard]] const Segment& non_preferred() const;
};

/// Swap the two segments and everything attached to their order.
PreferenceRecord swapped(const PreferenceRecord& record);

/// Append-only preference database D with derived partitions D_p / D_np.
/// Writes are serialized internally; snapshot() is safe from any thread.
class PrefDatabase {
public:
  PrefDatabase() = default;
  PrefDatabase(const PrefDatabase& other);
  PrefDatabase& operator=(const PrefDatabase& other);

  /// Appends the record unless it is incomparable. Returns whether stored.
  bool insert(PreferenceRecord record);

  [[nodiscard]] std::vector<PreferenceRecord> snapshot() const;
  [[nodiscard]] const std::vector<PreferenceRecord>& records() const { return records_; }
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::size_t count(LabelSource source) const;
  [[nodiscard]] std::size_t strict_count() const;

  using SourceFilter = std::function<bool(LabelSource)>;
  /// D_p: the preferred segment of every strict record accepted by `filter`.
  [[nodiscard]] std::vector<Segment> preferred(const SourceFilter& filter = {}) const;
  /// D_np: the non-preferred segment of every strict record.
  [[nodiscard]] std::vector<Segment> non_preferred(const SourceFilter& filter = {}) const;

  /// Line-delimited persistence. Segments are written as slot references
  /// (episode_id, start_index, clip_seed) into the trajectory dump.
  void save_jsonl(const std::filesystem::path& path) const;
  /// `episodes` must hold every trajectory referenced by the file.
  static PrefDatabase load_jsonl(const std::filesystem::path& path,
                                 const std::map<std::int64_t, const Trajectory*>& episodes,
                                 std::size_t segment_length, std::size_t state_dim,
                                 std::size_t action_dim);

private:
  mutable std::mutex mutex_;
  std::vector<PreferenceRecord> records_;
};

/// Sample `n_pairs` pairs of distinct (episode, start) slots uniformly
/// without replacement. Throws InsufficientData naming the shortfall.
std::vector<SegmentPair> extract_pairs(const std::vector<Trajectory>& trajectories,
                                       std::size_t segment_length, std::size_t n_pairs,
                                       std::uint64_t seed, std::size_t state_dim,
                                       std::size_t action_dim);

/// Sum_i gamma^(i-1) * rewards_i.
double discounted_sum(std::span<const double> rewards, double gamma);

/// Label from two segment returns. With tie_band > 0, |g1 - g2| <= tie_band
/// is indifferent. Otherwise g1 > g2 prefers the first segment and anything
/// else prefers the second.
Xi label_from_returns(double g1, double g2, double tie_band);

inline constexpr double kDefaultTieBand = 1e-3;

using StepRewardFn = std::function<double(std::span<const double> state, std::span<const double> action)>;

double discounted_segment_return(const Segment& segment, const StepRewardFn& reward, double gamma);

/// Synthetic oracle: compares discounted hidden true returns.
PreferenceRecord oracle_label(const SegmentPair& pair, const Environment& env,
                              double tie_band = kDefaultTieBand, std::int64_t timestamp = 0);

/// Criterion C3 over any per-step reward estimate.
PreferenceRecord c3_label(const SegmentPair& pair, const StepRewardFn& reward, double gamma,
                          double tie_band = kDefaultTieBand, std::int64_t timestamp = 0);

/// Label-budget policy. `source` names who answers scheduled queries:
/// human or oracle directly, or discriminator for the assisted schedules
/// (human/oracle until handoff, discriminator after).
struct QuerySchedule {
  std::string name;
  std::size_t initial_labels = 0;
  std::size_t online_labels = 0;
  std::size_t online_period_episodes = 1;
  LabelSource source = LabelSource::oracle;

  friend bool operator==(const QuerySchedule&, const QuerySchedule&) = default;
};

/// Labels owed at `episode`: initial_labels at episode 0, plus online_labels
/// at every episode divisible by online_period_episodes (episode 0 included).
/// human-175 therefore owes 175 + 6 * N labels over its first N episodes.
std::size_t next_query_budget(const QuerySchedule& schedule, std::int64_t episode);

/// Built-in schedules: human-175, human-345, synthetic-175, gan-assisted-50,
/// gan-assisted-175 and the desk-scale analogs oracle-40 and gan-assisted-desk.
std::optional<QuerySchedule> find_schedule(std::string_view name);
std::vector<QuerySchedule> builtin_schedules();

}  // namespace prefrl
