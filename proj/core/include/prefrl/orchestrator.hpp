#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefrl/config.hpp"
#include "prefrl/discriminator.hpp"
#include "prefrl/env.hpp"
#include "prefrl/label_gateway.hpp"
#include "prefrl/policy.hpp"
#include "prefrl/prefdb.hpp"
#include "prefrl/reward_model.hpp"

namespace prefrl {

/// Answers C1 queries: a human through the label gateway, or the synthetic
/// oracle standing in for one.
class LabelChannel {
public:
  virtual ~LabelChannel() = default;
  [[nodiscard]] virtual LabelSource source() const = 0;
  /// One record per pair, in order. Incomparable answers come back with an
  /// empty xi. Throws ChannelUnavailable when no label can be obtained.
  virtual std::vector<PreferenceRecord> label(std::span<const SegmentPair> pairs,
                                              std::int64_t episode) = 0;
};

class OracleChannel final : public LabelChannel {
public:
  OracleChannel(Environment env, double tie_band) : env_(std::move(env)), tie_band_(tie_band) {}
  [[nodiscard]] LabelSource source() const override { return LabelSource::oracle; }
  std::vector<PreferenceRecord> label(std::span<const SegmentPair> pairs, std::int64_t episode) override;

private:
  Environment env_;
  double tie_band_;
};

/// Offers every pair of a batch on the gateway, then waits for each label.
class GatewayChannel final : public LabelChannel {
public:
  GatewayChannel(LabelGateway& gateway, double timeout_seconds)
      : gateway_(gateway), timeout_seconds_(timeout_seconds) {}
  [[nodiscard]] LabelSource source() const override { return LabelSource::human; }
  std::vector<PreferenceRecord> label(std::span<const SegmentPair> pairs, std::int64_t episode) override;

private:
  LabelGateway& gateway_;
  double timeout_seconds_;
};

/// Labels obtained per source. `consumed` counts every answer, including
/// incomparable ones (they use budget but are not stored); `stored` counts
/// database records and matches PrefDatabase::count per source.
struct LabelLedger {
  std::map<LabelSource, std::size_t> consumed;
  std::map<LabelSource, std::size_t> stored;
  std::size_t scheduled = 0;  // labels owed by the query schedule so far
  std::size_t fine_tune = 0;  // extra labels requested to fine-tune the discriminator
  std::size_t c1_batches = 0;  // human/oracle batches the discriminator has been trained on

  [[nodiscard]] std::size_t consumed_from(LabelSource source) const;
  [[nodiscard]] std::size_t total_consumed() const;
  friend bool operator==(const LabelLedger&, const LabelLedger&) = default;
};

struct HandoffState {
  bool handed_off = false;
  std::int64_t handoff_episode = -1;
  std::size_t c1_batches_at_handoff = 0;
  std::size_t low_streak = 0;  // consecutive post-handoff GAN-tests below the collapse threshold
  std::size_t revocations = 0;
  std::vector<std::pair<std::int64_t, double>> gan_test_history;
  friend bool operator==(const HandoffState&, const HandoffState&) = default;
};

/// One metrics row per completed episode.
struct MetricRow {
  std::int64_t episode = 0;
  std::size_t env_steps = 0;
  double rollout_return = 0.0;  // mean true return of the stochastic rollouts
  double eval_return = 0.0;     // mean true return of deterministic evaluation episodes
  double actor_objective = 0.0;
  double shaped_objective = 0.0;
  double critic_loss = 0.0;
  double reward_loss = 0.0;
  double alpha = 0.0;
  std::size_t human_labels = 0;
  std::size_t oracle_labels = 0;
  std::size_t discriminator_labels = 0;
  std::size_t reward_model_labels = 0;
  std::size_t scheduled_labels = 0;
  std::size_t fine_tune_labels = 0;
  std::size_t database_size = 0;
  double gan_test = -1.0;  // -1 when not evaluated this episode
  bool handed_off = false;
  double actor_delta = 0.0;
  double discriminator_delta = 0.0;
  double reward_delta = 0.0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

std::string metrics_header();
std::string format_metric_row(const MetricRow& row);
MetricRow parse_metric_row(const std::string& line);

/// Everything needed to continue a run.
struct RunState {
  RunConfig config;
  std::int64_t episode = -1;  // last completed episode
  PolicyLearner learner;
  Discriminator discriminator;
  Optimizer discriminator_optimizer;
  RewardModel reward;
  Optimizer reward_optimizer;
  RunningStats true_reward_stats;  // learner normalization in true-reward mode
  PrefDatabase database;
  LabelLedger ledger;
  HandoffState handoff;
  std::vector<MetricRow> metrics;
  std::uint64_t next_pair_id = 1;
  std::size_t converged_streak = 0;
  bool converged = false;
  std::set<std::int64_t> dumped_episodes;  // trajectories already in the dump file
  std::map<std::int64_t, Trajectory> referenced;  // labeled trajectories not yet dumped
};

/// Fresh state at episode -1.
RunState make_run_state(const RunConfig& config);

/// Reads the checkpoint in `out_dir` without touching any file.
/// `iterations`, when given, replaces the iteration limit.
RunState load_run_state(const std::filesystem::path& out_dir,
                        std::optional<std::size_t> iterations = std::nullopt);

/// Runs the training loop: rollout, scheduled queries (C1 before the discriminator
/// handoff, C2 after), discriminator fine-tuning, reward fitting and the
/// policy update, one episode at a time.
class Orchestrator {
public:
  /// `channel` answers C1 queries; null builds one from the config (the
  /// oracle, or a gateway channel backed by an owned LabelGateway).
  explicit Orchestrator(RunConfig config, std::unique_ptr<LabelChannel> channel = nullptr);
  /// Continues from the checkpoint in `out_dir`. `iterations`, when given,
  /// replaces the iteration limit.
  static Orchestrator resume(const std::filesystem::path& out_dir,
                             std::unique_ptr<LabelChannel> channel = nullptr,
                             std::optional<std::size_t> iterations = std::nullopt);

  Orchestrator(Orchestrator&&);
  Orchestrator& operator=(Orchestrator&&);
  ~Orchestrator();

  /// One episode. Returns false once the run is finished.
  bool step();
  /// Steps until the iteration limit or convergence, then checkpoints.
  RunState& run();
  [[nodiscard]] bool finished() const;

  [[nodiscard]] const RunState& state() const { return state_; }
  RunState& state() { return state_; }
  [[nodiscard]] const Environment& environment() const { return env_; }
  /// Non-null when the run owns a label gateway (human channel).
  LabelGateway* gateway() { return gateway_.get(); }

  /// Writes the checkpoint directory, the database, the trajectory dump
  /// and the config into out_dir.
  void checkpoint();

private:
  Orchestrator(RunState state, std::unique_ptr<LabelChannel> channel);
  void open_channel(std::unique_ptr<LabelChannel> channel);
  void open_outputs(bool resuming);
  void publish_status();

  RunState state_;
  Environment env_;
  std::unique_ptr<LabelGateway> gateway_;
  std::unique_ptr<LabelChannel> channel_;
};

/// Convenience: a fresh run to completion.
RunState run(const RunConfig& config, std::unique_ptr<LabelChannel> channel = nullptr);

/// Routes one scheduled query: the discriminator after handoff (C2),
/// otherwise `channel`. The record enters the database and the ledger.
PreferenceRecord route_query(RunState& state, const SegmentPair& pair, LabelChannel& channel,
                             std::int64_t episode);

/// Batched form of route_query; one channel call for the whole batch.
std::vector<PreferenceRecord> route_queries(RunState& state, std::span<const SegmentPair> pairs,
                                            LabelChannel& channel, std::int64_t episode);

struct HumanSavingReport {
  std::map<LabelSource, double> fraction;  // of all labels consumed; sums to 1
  double human_fraction = 0.0;            // human + oracle share
  std::size_t total_labels = 0;
  std::size_t human_labels = 0;
  /// Human labels the human-175 schedule would have needed over the same
  /// episodes, and this run's human labels relative to it.
  std::size_t baseline_labels = 0;
  double versus_baseline = 0.0;
};

HumanSavingReport human_saving_report(const RunState& state);

/// Mean true return of deterministic evaluation episodes; read-only.
double evaluate(const RunState& state, std::size_t n_episodes);

/// Episodes used for the GAN-test are drawn from a separate rollout stream,
/// so the test pairs never enter training.
double held_out_gan_test(const RunState& state, const Environment& env, std::int64_t episode,
                         std::uint64_t stream);

}  // namespace prefrl
