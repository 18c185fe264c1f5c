#include "prefrl/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prefrl/error.hpp"
#include "prefrl/rng.hpp"

namespace prefrl {

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

bool unclamped(double p) { return p > kProbabilityClamp && p < 1.0 - kProbabilityClamp; }

Vec step_input(std::span<const double> state, std::span<const double> action) {
  Vec input(state.begin(), state.end());
  input.insert(input.end(), action.begin(), action.end());
  return input;
}

// Weights on (log p12, log p21) contributed by one record.
std::pair<double, double> log_weights(const PreferenceRecord& r, bool use_loss_g) {
  if (use_loss_g) {
    require(r.scores.has_value(), "loss_g needs discriminator scores on every record");
    const double p12 = (*r.scores)[0];
    const double p21 = (*r.scores)[1];
    return {p12 + (1.0 - p21), (1.0 - p12) + p21};
  }
  require(r.xi.has_value(), "loss_a needs a preference distribution on every record");
  return {r.xi->first, r.xi->second};
}

double record_loss(double q1, double q2, std::pair<double, double> w) {
  const auto [p12, p21] = preference_probabilities(q1, q2);
  return -(w.first * std::log(clamp_probability(p12)) + w.second * std::log(clamp_probability(p21)));
}

double sum_loss(const RewardModel& rm, std::span<const PreferenceRecord> records, bool use_loss_g) {
  if (records.empty()) throw InsufficientData("preference loss over an empty record set");
  double total = 0.0;
  for (const auto& r : records)
    total += record_loss(segment_q(rm, r.seg1), segment_q(rm, r.seg2), log_weights(r, use_loss_g));
  return total;
}

bool uses_loss_g(const PreferenceRecord& r) {
  return r.source == LabelSource::discriminator && r.scores.has_value();
}

void segment_inputs(const Segment& segment, Vec& out) {
  out.clear();
  for (std::size_t i = 0; i < segment.length(); ++i) {
    const auto s = segment.state(i);
    const auto a = segment.action(i);
    out.insert(out.end(), s.begin(), s.end());
    out.insert(out.end(), a.begin(), a.end());
  }
}

struct Workspace {
  Vec inputs;
  Vec upstream;
  BatchTrace first;
  BatchTrace second;
};

double batch_q(const RewardModel& rm, const Segment& segment, Vec& inputs, BatchTrace& trace) {
  segment_inputs(segment, inputs);
  forward_batch(rm.model, inputs, segment.length(), trace);
  return std::accumulate(trace.output.begin(), trace.output.end(), 0.0);
}

// Adds d(loss of r)/d params into grad; returns the record loss.
double accumulate_record(const RewardModel& rm, const PreferenceRecord& r, bool use_loss_g,
                         double weight, Vec& grad, Workspace& ws) {
  const double q1 = batch_q(rm, r.seg1, ws.inputs, ws.first);
  const double q2 = batch_q(rm, r.seg2, ws.inputs, ws.second);
  const auto w = log_weights(r, use_loss_g);
  const auto [p12, p21] = preference_probabilities(q1, q2);
  // d log p12 / d(q1 - q2) = 1 - p12 = p21; d log p21 / d(q1 - q2) = -p12.
  // A clamped probability contributes no gradient.
  double dloss_ddiff = 0.0;
  if (unclamped(p12)) dloss_ddiff -= w.first * p21;
  if (unclamped(p21)) dloss_ddiff += w.second * p12;
  if (dloss_ddiff != 0.0) {
    ws.upstream.assign(r.seg1.length(), weight * dloss_ddiff);
    accumulate_gradient_batch(rm.model, ws.first, ws.upstream, grad);
    ws.upstream.assign(r.seg2.length(), -weight * dloss_ddiff);
    accumulate_gradient_batch(rm.model, ws.second, ws.upstream, grad);
  }
  return record_loss(q1, q2, w);
}

}  // namespace

void RunningStats::observe(double value) {
  count += 1.0;
  const double delta = value - mean;
  mean += delta / count;
  m2 += delta * (value - mean);
}

double RunningStats::stddev() const { return count > 1.0 ? std::sqrt(m2 / (count - 1.0)) : 1.0; }

double RunningStats::scale() const { return count > 1.0 ? 1.0 / std::max(stddev(), 1e-6) : 1.0; }

double RunningStats::normalize(double value) const {
  if (count <= 1.0) return value;
  return (value - mean) * scale();
}

RewardModel make_reward_model(std::size_t state_dim, std::size_t action_dim, std::uint64_t seed,
                              std::vector<std::size_t> hidden) {
  std::vector<std::size_t> sizes{state_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  RewardModel rm;
  rm.model = make_mlp(std::move(sizes), OutputTransform::identity, seed);
  return rm;
}

double predict(const RewardModel& rm, std::span<const double> state, std::span<const double> action) {
  return forward(rm.model, step_input(state, action))[0];
}

std::pair<double, Vec> predict_with_action_grad(const RewardModel& rm, std::span<const double> state,
                                                std::span<const double> action) {
  const double upstream[1] = {1.0};
  GradBundle bundle = backward(rm.model, step_input(state, action), upstream);
  Vec action_grad(bundle.input_grad.begin() + static_cast<std::ptrdiff_t>(state.size()),
                  bundle.input_grad.end());
  return {bundle.value[0], std::move(action_grad)};
}

double segment_q(const RewardModel& rm, const Segment& segment) {
  if (segment.length() == 0) return 0.0;
  Vec inputs;
  BatchTrace trace;
  return batch_q(rm, segment, inputs, trace);
}

std::pair<double, double> preference_probabilities(double q1, double q2) {
  return {logistic(q1 - q2), logistic(q2 - q1)};
}

std::pair<double, double> pref_prob(const RewardModel& rm, const Segment& first, const Segment& second) {
  return preference_probabilities(segment_q(rm, first), segment_q(rm, second));
}

double loss_a(const RewardModel& rm, std::span<const PreferenceRecord> records) {
  return sum_loss(rm, records, false);
}

double loss_g(const RewardModel& rm, std::span<const PreferenceRecord> records) {
  return sum_loss(rm, records, true);
}

Vec preference_loss_gradient(const RewardModel& rm, std::span<const PreferenceRecord> records,
                             bool use_loss_g, double* loss) {
  if (records.empty()) throw InsufficientData("preference loss over an empty record set");
  Vec grad(rm.model.params.size(), 0.0);
  double total = 0.0;
  Workspace ws;
  for (const auto& r : records) total += accumulate_record(rm, r, use_loss_g, 1.0, grad, ws);
  if (loss) *loss = total;
  return grad;
}

RewardFitResult fit(RewardModel& rm, const std::vector<PreferenceRecord>& records,
                    const PrefDatabase::SourceFilter& filter, const RewardFitOptions& options,
                    Optimizer& optimizer) {
  require(options.batch_size >= 1, "batch size must be positive");
  require(options.discriminator_share >= 0.0 && options.discriminator_share <= 1.0,
          "discriminator share must lie in [0, 1]");
  std::vector<const PreferenceRecord*> matching;
  for (const auto& r : records)
    if (r.xi && (!filter || filter(r.source))) matching.push_back(&r);
  if (matching.empty()) throw InsufficientData("no preference records match the fit filter");

  Rng rng(derive_seed(options.seed, "reward-fit"));
  if (options.max_records > 0 && matching.size() > options.max_records) {
    // Labeler records are never crowded out beyond the discriminator share;
    // slots they cannot fill go to discriminator records. Each pool is its
    // newest half plus a seeded sample of the rest.
    std::vector<const PreferenceRecord*> labeler;
    std::vector<const PreferenceRecord*> assisted;
    for (const auto* r : matching) (r->source == LabelSource::discriminator ? assisted : labeler).push_back(r);
    const std::size_t cap = options.max_records;
    const auto assisted_cap = static_cast<std::size_t>(std::floor(options.discriminator_share * static_cast<double>(cap)));
    const std::size_t labeler_quota =
        std::min(labeler.size(), std::max(cap - assisted_cap, cap - std::min(cap, assisted.size())));
    const std::size_t assisted_quota = std::min(assisted.size(), cap - labeler_quota);
    matching.clear();
    for (auto* pool : {&labeler, &assisted}) {
      const std::size_t quota = pool == &labeler ? labeler_quota : assisted_quota;
      if (pool->size() > quota) {
        const std::size_t newest = quota / 2;
        std::vector<const PreferenceRecord*> older(pool->begin(), pool->end() - static_cast<std::ptrdiff_t>(newest));
        std::shuffle(older.begin(), older.end(), rng);
        older.resize(quota - newest);
        older.insert(older.end(), pool->end() - static_cast<std::ptrdiff_t>(newest), pool->end());
        *pool = std::move(older);
      }
      matching.insert(matching.end(), pool->begin(), pool->end());
    }
  }

  RewardFitResult result;
  Workspace ws;
  result.records_used = matching.size();
  result.discriminator_records = static_cast<std::size_t>(std::count_if(
      matching.begin(), matching.end(), [](const PreferenceRecord* r) { return r->source == LabelSource::discriminator; }));
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(matching.begin(), matching.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < matching.size(); begin += options.batch_size) {
      const std::size_t end = std::min(matching.size(), begin + options.batch_size);
      const double weight = 1.0 / static_cast<double>(end - begin);
      Vec grad(rm.model.params.size(), 0.0);
      for (std::size_t i = begin; i < end; ++i)
        epoch_loss += accumulate_record(rm, *matching[i], uses_loss_g(*matching[i]), weight, grad, ws);
      optimizer.apply(rm.model, grad, Direction::descend);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(matching.size()));
  }
  if (options.epochs > 0) ++rm.fit_count;
  result.final_loss = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
  return result;
}

PreferenceRecord c3_label(const SegmentPair& pair, const RewardModel& rm, double gamma,
                          double tie_band, std::int64_t timestamp) {
  require(rm.fit_count > 0, "C3 labels need a reward model that has been fit at least once");
  StepRewardFn estimate = [&rm](std::span<const double> s, std::span<const double> a) {
    return predict(rm, s, a);
  };
  return c3_label(pair, estimate, gamma, tie_band, timestamp);
}

}  // namespace prefrl
