#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "prefrl/mlp.hpp"
#include "prefrl/prefdb.hpp"

namespace prefrl {

/// Welford running mean / variance.
struct RunningStats {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void observe(double value);
  void reset() { *this = RunningStats{}; }
  [[nodiscard]] double stddev() const;
  /// (value - mean) / max(stddev, 1e-6); identity until two samples exist.
  [[nodiscard]] double normalize(double value) const;
  /// d normalize / d value.
  [[nodiscard]] double scale() const;
  friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

/// Estimated per-step reward r_hat(s, a): (s, a) -> two ReLU hidden layers
/// -> scalar. The normalization statistics accumulate over the whole run
/// (fits do not reset them) and only feed the policy objective; preference
/// losses use raw outputs.
struct RewardModel {
  MlpModel model;
  RunningStats normalization;
  std::size_t fit_count = 0;
};

RewardModel make_reward_model(std::size_t state_dim, std::size_t action_dim, std::uint64_t seed,
                              std::vector<std::size_t> hidden = {64, 64});

double predict(const RewardModel& rm, std::span<const double> state, std::span<const double> action);

/// r_hat(s, a) and d r_hat / d action.
std::pair<double, Vec> predict_with_action_grad(const RewardModel& rm, std::span<const double> state,
                                                std::span<const double> action);

/// Undiscounted segment return Q = sum_i r_hat(s_i, a_i).
double segment_q(const RewardModel& rm, const Segment& segment);

inline constexpr double kProbabilityClamp = 1e-7;

/// (p12, p21) = (1 / (1 + exp(q2 - q1)), 1 / (1 + exp(q1 - q2))), each
/// evaluated without overflow.
std::pair<double, double> preference_probabilities(double q1, double q2);
std::pair<double, double> pref_prob(const RewardModel& rm, const Segment& first, const Segment& second);

/// Cross-entropy against labeler distributions xi:
///   -sum [xi1 log p12 + xi2 log p21]
/// Probabilities are clamped to [1e-7, 1 - 1e-7]. Throws on an empty set.
double loss_a(const RewardModel& rm, std::span<const PreferenceRecord> records);

/// Double symmetric cross-entropy against independent discriminator scores:
///   -sum [p12 log p12^ + (1 - p12) log p21^] - sum [p21 log p21^ + (1 - p21) log p12^]
double loss_g(const RewardModel& rm, std::span<const PreferenceRecord> records);

/// Gradient of loss_a (if `use_loss_g` is false) or loss_g over `records`.
Vec preference_loss_gradient(const RewardModel& rm, std::span<const PreferenceRecord> records,
                             bool use_loss_g, double* loss = nullptr);

struct RewardFitOptions {
  std::size_t epochs = 4;
  std::size_t batch_size = 32;
  /// 0 = every matching record. Otherwise at most max_records are drawn:
  /// human/oracle/reward-model records get all slots beyond
  /// discriminator_share * max_records, discriminator records get the
  /// reserved share plus whatever the labeler pool cannot fill. Each pool
  /// contributes its newest half plus a seeded uniform sample of the rest.
  std::size_t max_records = 0;
  double discriminator_share = 0.5;
  std::uint64_t seed = 0;
};

struct RewardFitResult {
  double final_loss = 0.0;
  std::vector<double> epoch_losses;  // mean per-record loss accumulated over each epoch's mini-batches
  std::size_t records_used = 0;
  std::size_t discriminator_records = 0;  // of records_used
};

/// Gradient-descent epochs: loss_a on human/oracle/reward-model records and
/// loss_g on discriminator records, mixed within each mini-batch.
/// Throws InsufficientData when no record passes `filter`.
RewardFitResult fit(RewardModel& rm, const std::vector<PreferenceRecord>& records,
                    const PrefDatabase::SourceFilter& filter, const RewardFitOptions& options,
                    Optimizer& optimizer);

/// C3 with the model's raw r_hat. Requires at least one completed fit.
PreferenceRecord c3_label(const SegmentPair& pair, const RewardModel& rm, double gamma,
                          double tie_band = kDefaultTieBand, std::int64_t timestamp = 0);

}  // namespace prefrl
