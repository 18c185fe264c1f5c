#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "prefrl/env.hpp"
#include "prefrl/mlp.hpp"
#include "prefrl/prefdb.hpp"

namespace prefrl {

/// Adversarial preference model: scores one segment with the probability
/// that a labeler would pick it. Input is the flattened (s, a) sequence of
/// a segment; two ReLU hidden layers; logistic output.
struct Discriminator {
  MlpModel model;
  std::size_t segment_length = 0;
  /// Per-feature (state then action) standardization applied at every time
  /// step before the network. Empty means raw inputs.
  Vec feature_mean;
  Vec feature_scale;
  std::vector<std::pair<std::int64_t, double>> train_log;  // (step, objective)
  std::int64_t steps_taken = 0;
};

inline constexpr double kDefaultIndifferenceBand = 0.05;

/// The output layer starts at zero, so a fresh discriminator scores 0.5.
Discriminator make_discriminator(std::size_t segment_length, std::size_t state_dim,
                                 std::size_t action_dim, std::uint64_t seed,
                                 std::vector<std::size_t> hidden = {64, 64});

/// Flattened, standardized network input for one segment.
Vec discriminator_input(const Discriminator& disc, const Segment& segment);

/// Sets feature_mean / feature_scale to the per-feature mean and
/// 1 / max(stddev, 1e-3) over every step of the given segments.
void standardize_inputs(Discriminator& disc, std::span<const Segment> preferred,
                        std::span<const Segment> non_preferred);

double score(const Discriminator& disc, const Segment& segment);

/// E_{D_np} log(1 - Y) + E_{D_p} log Y. An empty side contributes 0.
double discriminator_objective(const Discriminator& disc, std::span<const Segment> preferred,
                               std::span<const Segment> non_preferred);

/// Gradient of discriminator_objective with respect to the parameters.
Vec discriminator_gradient(const Discriminator& disc, std::span<const Segment> preferred,
                           std::span<const Segment> non_preferred, double* objective = nullptr);

/// One stochastic gradient ascent step on the objective above.
/// Throws NonFiniteError (disc untouched) when the objective is not finite.
Discriminator train_step(const Discriminator& disc, std::span<const Segment> preferred,
                         std::span<const Segment> non_preferred, double learning_rate);

/// Mini-batch ascent over several epochs with the given optimizer; logs the
/// full-batch objective after each epoch. Returns the final objective.
double fit_discriminator(Discriminator& disc, std::span<const Segment> preferred,
                         std::span<const Segment> non_preferred, std::size_t epochs,
                         std::size_t batch_size, Optimizer& optimizer, std::uint64_t seed);

/// Criterion C2: p(1>2) = Y(seg1), p(2>1) = Y(seg2) computed independently;
/// hard label to the larger score unless |Y1 - Y2| <= band. The raw scores
/// are kept on the record.
PreferenceRecord c2_label(const Discriminator& disc, const SegmentPair& pair,
                          double band = kDefaultIndifferenceBand, std::int64_t timestamp = 0);

using SegmentScorer = std::function<double(const Segment&)>;
using PairLabeler = std::function<PreferenceRecord(const SegmentPair&)>;

/// Agreement of a scorer's pair decisions with a reference labeler over the
/// pairs the reference labels strictly. Exact match scores 1, mismatch 0,
/// a predicted tie (within `band`) 0.5. Throws InsufficientData when the
/// reference labels no pair strictly.
double gan_test(std::span<const SegmentPair> fresh_pairs, const SegmentScorer& scorer,
                const PairLabeler& reference, double band = kDefaultIndifferenceBand);

double gan_test(const Discriminator& disc, std::span<const SegmentPair> fresh_pairs,
                const Environment& oracle_env, double band = kDefaultIndifferenceBand);

}  // namespace prefrl
