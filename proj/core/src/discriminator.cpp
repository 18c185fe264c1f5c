#include "prefrl/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prefrl/error.hpp"
#include "prefrl/rng.hpp"

namespace prefrl {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_length(const Discriminator& disc, const Segment& segment) {
  require(segment.length() == disc.segment_length,
          "segment length " + std::to_string(segment.length()) +
              " does not match the discriminator's " + std::to_string(disc.segment_length));
}

}  // namespace

Discriminator make_discriminator(std::size_t segment_length, std::size_t state_dim,
                                 std::size_t action_dim, std::uint64_t seed,
                                 std::vector<std::size_t> hidden) {
  require(segment_length >= 1, "segment length must be at least 1");
  std::vector<std::size_t> sizes{segment_length * (state_dim + action_dim)};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  Discriminator disc;
  disc.model = make_mlp(std::move(sizes), OutputTransform::logistic, seed, true);
  disc.segment_length = segment_length;
  return disc;
}

Vec discriminator_input(const Discriminator& disc, const Segment& segment) {
  check_length(disc, segment);
  Vec input = segment.flatten();
  if (disc.feature_mean.empty()) return input;
  const std::size_t width = disc.feature_mean.size();
  require(width == segment.state_dim + segment.action_dim, "standardization width does not match the segment");
  for (std::size_t i = 0; i < input.size(); ++i)
    input[i] = (input[i] - disc.feature_mean[i % width]) * disc.feature_scale[i % width];
  return input;
}

void standardize_inputs(Discriminator& disc, std::span<const Segment> preferred,
                        std::span<const Segment> non_preferred) {
  std::size_t width = 0;
  Vec sum;
  Vec sum_sq;
  double count = 0.0;
  for (auto side : {preferred, non_preferred}) {
    for (const auto& segment : side) {
      check_length(disc, segment);
      if (width == 0) {
        width = segment.state_dim + segment.action_dim;
        sum.assign(width, 0.0);
        sum_sq.assign(width, 0.0);
      }
      const Vec flat = segment.flatten();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        sum[i % width] += flat[i];
        sum_sq[i % width] += flat[i] * flat[i];
      }
      count += static_cast<double>(segment.length());
    }
  }
  require(count > 0.0, "standardization needs at least one segment");
  disc.feature_mean.assign(width, 0.0);
  disc.feature_scale.assign(width, 1.0);
  for (std::size_t j = 0; j < width; ++j) {
    const double mean = sum[j] / count;
    const double variance = std::max(sum_sq[j] / count - mean * mean, 0.0);
    disc.feature_mean[j] = mean;
    disc.feature_scale[j] = 1.0 / std::max(std::sqrt(variance), 1e-3);
  }
}

double score(const Discriminator& disc, const Segment& segment) {
  return forward(disc.model, discriminator_input(disc, segment))[0];
}

Vec discriminator_gradient(const Discriminator& disc, std::span<const Segment> preferred,
                           std::span<const Segment> non_preferred, double* objective) {
  require(!preferred.empty() || !non_preferred.empty(),
          "discriminator update needs at least one labeled segment");
  Vec grad(disc.model.params.size(), 0.0);
  double value = 0.0;
  // Upstream is attached to the logit: dlogY/dz = 1 - Y, dlog(1-Y)/dz = -Y.
  if (!preferred.empty()) {
    const double weight = 1.0 / static_cast<double>(preferred.size());
    for (const auto& segment : preferred) {
      const auto trace = forward_trace(disc.model, discriminator_input(disc, segment));
      const double z = trace.pre.back()[0];
      value -= weight * softplus(-z);
      const double upstream[1] = {weight * (1.0 - logistic(z))};
      accumulate_gradient(disc.model, trace, upstream, grad, GradientAt::pre_transform);
    }
  }
  if (!non_preferred.empty()) {
    const double weight = 1.0 / static_cast<double>(non_preferred.size());
    for (const auto& segment : non_preferred) {
      const auto trace = forward_trace(disc.model, discriminator_input(disc, segment));
      const double z = trace.pre.back()[0];
      value -= weight * softplus(z);
      const double upstream[1] = {-weight * logistic(z)};
      accumulate_gradient(disc.model, trace, upstream, grad, GradientAt::pre_transform);
    }
  }
  if (objective) *objective = value;
  return grad;
}

double discriminator_objective(const Discriminator& disc, std::span<const Segment> preferred,
                               std::span<const Segment> non_preferred) {
  double value = 0.0;
  for (const auto& segment : preferred) {
    value -= softplus(-forward_logits(disc.model, discriminator_input(disc, segment))[0]) /
             static_cast<double>(preferred.size());
  }
  for (const auto& segment : non_preferred) {
    value -= softplus(forward_logits(disc.model, discriminator_input(disc, segment))[0]) /
             static_cast<double>(non_preferred.size());
  }
  return value;
}

Discriminator train_step(const Discriminator& disc, std::span<const Segment> preferred,
                         std::span<const Segment> non_preferred, double learning_rate) {
  double objective = 0.0;
  const Vec grad = discriminator_gradient(disc, preferred, non_preferred, &objective);
  if (!std::isfinite(objective)) throw NonFiniteError("non-finite discriminator objective");
  Discriminator updated = disc;
  sgd_step_inplace(updated.model, grad, learning_rate, Direction::ascend);
  ++updated.steps_taken;
  updated.train_log.emplace_back(updated.steps_taken, objective);
  return updated;
}

double fit_discriminator(Discriminator& disc, std::span<const Segment> preferred,
                         std::span<const Segment> non_preferred, std::size_t epochs,
                         std::size_t batch_size, Optimizer& optimizer, std::uint64_t seed) {
  require(batch_size >= 1, "batch size must be positive");
  // Batches are drawn over (segment, side) items so both partitions mix.
  struct Item {
    const Segment* segment;
    bool preferred;
  };
  std::vector<Item> items;
  for (const auto& s : preferred) items.push_back({&s, true});
  for (const auto& s : non_preferred) items.push_back({&s, false});
  require(!items.empty(), "discriminator fit needs labeled segments");

  Rng rng(derive_seed(seed, "disc-fit"));
  double objective = discriminator_objective(disc, preferred, non_preferred);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t begin = 0; begin < items.size(); begin += batch_size) {
      const std::size_t end = std::min(items.size(), begin + batch_size);
      std::vector<Segment> batch_p;
      std::vector<Segment> batch_np;
      for (std::size_t i = begin; i < end; ++i)
        (items[i].preferred ? batch_p : batch_np).push_back(*items[i].segment);
      double batch_objective = 0.0;
      const Vec grad = discriminator_gradient(disc, batch_p, batch_np, &batch_objective);
      if (!std::isfinite(batch_objective))
        throw NonFiniteError("non-finite discriminator objective");
      optimizer.apply(disc.model, grad, Direction::ascend);
      ++disc.steps_taken;
    }
    objective = discriminator_objective(disc, preferred, non_preferred);
    disc.train_log.emplace_back(disc.steps_taken, objective);
  }
  return objective;
}

PreferenceRecord c2_label(const Discriminator& disc, const SegmentPair& pair, double band,
                          std::int64_t timestamp) {
  const double y1 = score(disc, pair.first);
  const double y2 = score(disc, pair.second);
  PreferenceRecord record;
  record.seg1 = pair.first;
  record.seg2 = pair.second;
  record.pair_id = pair.pair_id;
  record.timestamp = timestamp;
  record.source = LabelSource::discriminator;
  record.scores = std::array<double, 2>{y1, y2};
  if (std::abs(y1 - y2) <= band)
    record.xi = kIndifferent;
  else
    record.xi = y1 > y2 ? kPreferFirst : kPreferSecond;
  return record;
}

double gan_test(std::span<const SegmentPair> fresh_pairs, const SegmentScorer& scorer,
                const PairLabeler& reference, double band) {
  double credit = 0.0;
  std::size_t strict = 0;
  for (const auto& pair : fresh_pairs) {
    const PreferenceRecord truth = reference(pair);
    if (!truth.strict()) continue;
    ++strict;
    const double y1 = scorer(pair.first);
    const double y2 = scorer(pair.second);
    if (std::abs(y1 - y2) <= band) {
      credit += 0.5;
    } else {
      const bool predicted_first = y1 > y2;
      const bool truth_first = truth.xi->first > truth.xi->second;
      credit += predicted_first == truth_first ? 1.0 : 0.0;
    }
  }
  if (strict == 0) throw InsufficientData("GAN-test is undefined: no strictly labeled pairs");
  return credit / static_cast<double>(strict);
}

double gan_test(const Discriminator& disc, std::span<const SegmentPair> fresh_pairs,
                const Environment& oracle_env, double band) {
  return gan_test(
      fresh_pairs, [&](const Segment& s) { return score(disc, s); },
      [&](const SegmentPair& p) { return oracle_label(p, oracle_env); }, band);
}

}  // namespace prefrl
