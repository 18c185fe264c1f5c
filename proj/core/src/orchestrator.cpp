#include "prefrl/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prefrl/error.hpp"
#include "prefrl/rng.hpp"

namespace prefrl {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Channels.

std::vector<PreferenceRecord> OracleChannel::label(std::span<const SegmentPair> pairs,
                                                   std::int64_t episode) {
  std::vector<PreferenceRecord> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs) records.push_back(oracle_label(pair, env_, tie_band_, episode));
  return records;
}

std::vector<PreferenceRecord> GatewayChannel::label(std::span<const SegmentPair> pairs,
                                                    std::int64_t episode) {
  for (const auto& pair : pairs) gateway_.enqueue(pair);
  const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout_seconds_ * 1000.0));
  std::vector<PreferenceRecord> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const auto choice = gateway_.wait_for_label(pair.pair_id, timeout);
    if (!choice)
      throw ChannelUnavailable("human label channel: no label for pair " + std::to_string(pair.pair_id) +
                               " within " + std::to_string(timeout_seconds_) +
                               " s; is a label console attached to the gateway?");
    PreferenceRecord record;
    record.seg1 = pair.first;
    record.seg2 = pair.second;
    record.pair_id = pair.pair_id;
    record.xi = xi_from_choice(*choice);
    record.source = LabelSource::human;
    record.timestamp = episode;
    records.push_back(std::move(record));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Ledger and metrics.

std::size_t LabelLedger::consumed_from(LabelSource source) const {
  auto it = consumed.find(source);
  return it == consumed.end() ? 0 : it->second;
}

std::size_t LabelLedger::total_consumed() const {
  std::size_t total = 0;
  for (const auto& [source, n] : consumed) total += n;
  return total;
}

namespace {

constexpr const char* kMetricColumns[] = {
    "episode",          "env_steps",          "rollout_return",      "eval_return",
    "actor_objective",  "shaped_objective",   "critic_loss",         "reward_loss",
    "alpha",            "human_labels",       "oracle_labels",       "discriminator_labels",
    "reward_model_labels", "scheduled_labels", "fine_tune_labels",   "database_size",
    "gan_test",         "handed_off",         "actor_delta",         "discriminator_delta",
    "reward_delta"};

std::string real(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

}  // namespace

std::string metrics_header() {
  std::string header;
  for (const char* column : kMetricColumns) {
    if (!header.empty()) header += ',';
    header += column;
  }
  return header;
}

std::string format_metric_row(const MetricRow& r) {
  std::ostringstream out;
  out << r.episode << ',' << r.env_steps << ',' << real(r.rollout_return) << ',' << real(r.eval_return)
      << ',' << real(r.actor_objective) << ',' << real(r.shaped_objective) << ','
      << real(r.critic_loss) << ',' << real(r.reward_loss) << ',' << real(r.alpha) << ','
      << r.human_labels << ',' << r.oracle_labels << ',' << r.discriminator_labels << ','
      << r.reward_model_labels << ',' << r.scheduled_labels << ',' << r.fine_tune_labels << ','
      << r.database_size << ',' << real(r.gan_test) << ',' << (r.handed_off ? 1 : 0) << ','
      << real(r.actor_delta) << ',' << real(r.discriminator_delta) << ',' << real(r.reward_delta);
  return out.str();
}

MetricRow parse_metric_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (cells.size() != std::size(kMetricColumns))
    throw Error("metric row has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(std::size(kMetricColumns)));
  std::size_t i = 0;
  auto integer = [&] { return static_cast<std::size_t>(std::stoull(cells[i++])); };
  auto number = [&] { return std::strtod(cells[i++].c_str(), nullptr); };
  MetricRow r;
  r.episode = std::stoll(cells[i++]);
  r.env_steps = integer();
  r.rollout_return = number();
  r.eval_return = number();
  r.actor_objective = number();
  r.shaped_objective = number();
  r.critic_loss = number();
  r.reward_loss = number();
  r.alpha = number();
  r.human_labels = integer();
  r.oracle_labels = integer();
  r.discriminator_labels = integer();
  r.reward_model_labels = integer();
  r.scheduled_labels = integer();
  r.fine_tune_labels = integer();
  r.database_size = integer();
  r.gan_test = number();
  r.handed_off = integer() != 0;
  r.actor_delta = number();
  r.discriminator_delta = number();
  r.reward_delta = number();
  return r;
}

// ---------------------------------------------------------------------------
// State construction.

namespace {

Optimizer make_optimizer(const OptimizerConfig& config) {
  return Optimizer{config.kind, config.learning_rate, {}};
}

bool uses_discriminator(const RunConfig& config) {
  return config.reward_source == RewardSource::preferences &&
         config.schedule.source == LabelSource::discriminator;
}

// Every label route goes through here so the ledger and database agree.
void record_labels(RunState& state, std::vector<PreferenceRecord>& records) {
  for (auto& record : records) {
    ++state.ledger.consumed[record.source];
    if (state.database.insert(record)) ++state.ledger.stored[record.source];
  }
}

void remember_trajectories(RunState& state, const std::vector<Trajectory>& batch,
                           std::span<const SegmentPair> pairs) {
  for (const auto& pair : pairs) {
    for (const Segment* segment : {&pair.first, &pair.second}) {
      if (state.dumped_episodes.contains(segment->episode_id) ||
          state.referenced.contains(segment->episode_id))
        continue;
      for (const auto& trajectory : batch)
        if (trajectory.episode_id == segment->episode_id) state.referenced.emplace(trajectory.episode_id, trajectory);
    }
  }
}

std::size_t slot_count(const std::vector<Trajectory>& batch, std::size_t length) {
  std::size_t slots = 0;
  for (const auto& t : batch)
    if (t.steps.size() >= length) slots += t.steps.size() - length + 1;
  return slots;
}

// Pairs of distinct slots; requests larger than one draw allows are split
// into chunks, each drawn without replacement.
std::vector<SegmentPair> sample_pairs(RunState& state, const Environment& env,
                                      const std::vector<Trajectory>& batch, std::size_t count,
                                      const char* stream, std::int64_t episode) {
  const std::size_t length = resolved_segment_length(state.config, env.spec());
  const std::size_t per_draw = slot_count(batch, length) / 2;
  if (per_draw == 0) throw InsufficientData("rollouts are shorter than one segment");
  std::vector<SegmentPair> pairs;
  for (std::uint64_t chunk = 0; pairs.size() < count; ++chunk) {
    const std::size_t n = std::min(per_draw, count - pairs.size());
    const std::uint64_t seed =
        derive_seed(derive_seed(state.config.seed, stream, static_cast<std::uint64_t>(episode)), "chunk", chunk);
    auto drawn = extract_pairs(batch, length, n, seed, env.spec().state_dim, env.spec().action_dim);
    for (auto& pair : drawn) {
      pair.pair_id = state.next_pair_id++;
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

std::vector<Trajectory> rollout_batch(const RunState& state, const Environment& env,
                                      std::int64_t episode, const char* stream) {
  RolloutOptions options;
  options.workers = state.config.workers;
  options.first_episode_id = episode * static_cast<std::int64_t>(state.config.state_samples);
  options.max_steps = resolved_rollout_limit(state.config, env.spec());
  return rollout(state.learner, env, state.config.state_samples, derive_seed(state.config.seed, stream),
                 options);
}

void fit_discriminator_on_c1(RunState& state, std::int64_t episode) {
  const auto filter = [](LabelSource s) { return s != LabelSource::discriminator; };
  const auto preferred = state.database.preferred(filter);
  const auto non_preferred = state.database.non_preferred(filter);
  if (preferred.empty()) return;
  standardize_inputs(state.discriminator, preferred, non_preferred);
  fit_discriminator(state.discriminator, preferred, non_preferred, state.config.discriminator_epochs,
                    state.config.discriminator_batch, state.discriminator_optimizer,
                    derive_seed(state.config.seed, "discriminator-fit", static_cast<std::uint64_t>(episode)));
}

// Labels for a discriminator fine-tune batch: the C1 channel or C3.
std::vector<PreferenceRecord> fine_tune_labels(RunState& state, std::span<const SegmentPair> pairs,
                                               LabelChannel& channel, std::int64_t episode) {
  if (state.config.fine_tune_criterion == FineTuneCriterion::c3 && state.reward.fit_count > 0) {
    std::vector<PreferenceRecord> records;
    for (const auto& pair : pairs) {
      PreferenceRecord r = c3_label(pair, state.reward, state.config.gamma, state.config.oracle_tie_band, episode);
      r.source = LabelSource::reward_model;
      records.push_back(std::move(r));
    }
    return records;
  }
  return channel.label(pairs, episode);
}

void fine_tune(RunState& state, const Environment& env, const std::vector<Trajectory>& batch,
               LabelChannel& channel, std::int64_t episode) {
  auto pairs = sample_pairs(state, env, batch, resolved_fine_tune_labels(state.config), "fine-tune-pairs", episode);
  auto records = fine_tune_labels(state, pairs, channel, episode);
  const bool c1 = !records.empty() && records.front().source != LabelSource::reward_model;
  state.ledger.fine_tune += records.size();
  remember_trajectories(state, batch, pairs);
  record_labels(state, records);
  fit_discriminator_on_c1(state, episode);
  if (c1) ++state.ledger.c1_batches;
}

double gan_check(RunState& state, const Environment& env, std::int64_t episode, std::uint64_t salt) {
  const double accuracy = held_out_gan_test(state, env, episode, salt);
  state.handoff.gan_test_history.emplace_back(episode, accuracy);
  return accuracy;
}

void hand_off(RunState& state, std::int64_t episode) {
  state.handoff.handed_off = true;
  state.handoff.handoff_episode = episode;
  state.handoff.c1_batches_at_handoff = state.ledger.c1_batches;
  state.handoff.low_streak = 0;
}

// GAN-test monitoring, handoff, fine-tuning and collapse revocation.
// Returns the last GAN-test accuracy of the episode, or -1.
double discriminator_phase(RunState& state, const Environment& env, const std::vector<Trajectory>& batch,
                           LabelChannel& channel, std::int64_t episode, bool c1_scheduled_now) {
  const RunConfig& c = state.config;
  HandoffState& h = state.handoff;
  if (c1_scheduled_now) {
    fit_discriminator_on_c1(state, episode);
    ++state.ledger.c1_batches;
  }
  const bool periodic = episode > 0 && episode % static_cast<std::int64_t>(c.fine_tune_period) == 0;
  if (!c1_scheduled_now && !periodic) return -1.0;

  double accuracy = gan_check(state, env, episode, 0);
  if (!h.handed_off) {
    if (accuracy >= c.gan_test_threshold) {
      hand_off(state, episode);
    } else if (periodic && !c1_scheduled_now) {
      fine_tune(state, env, batch, channel, episode);
      accuracy = gan_check(state, env, episode, 1);
      if (accuracy >= c.gan_test_threshold) hand_off(state, episode);
    }
    return accuracy;
  }
  h.low_streak = accuracy < c.collapse_threshold ? h.low_streak + 1 : 0;
  if (h.low_streak >= c.collapse_patience) {
    h.handed_off = false;
    h.low_streak = 0;
    ++h.revocations;
    return accuracy;
  }
  if (accuracy < c.gan_test_threshold) {
    fine_tune(state, env, batch, channel, episode);
    accuracy = gan_check(state, env, episode, 1);
  }
  return accuracy;
}

std::vector<PreferenceRecord> sample_records(const std::vector<PreferenceRecord>& strict, std::size_t n,
                                             std::uint64_t seed) {
  if (strict.size() <= n) return strict;
  std::vector<std::size_t> order(strict.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::vector<PreferenceRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
    out.push_back(strict[order[i]]);
  }
  return out;
}

json adam_to_json(const Optimizer& o) {
  return {{"steps", o.adam.steps}, {"first_moment", o.adam.first_moment}, {"second_moment", o.adam.second_moment}};
}

void adam_from_json(Optimizer& o, const json& j) {
  o.adam.steps = j.at("steps").get<std::uint64_t>();
  o.adam.first_moment = j.at("first_moment").get<Vec>();
  o.adam.second_moment = j.at("second_moment").get<Vec>();
}

json stats_to_json(const RunningStats& s) { return {{"count", s.count}, {"mean", s.mean}, {"m2", s.m2}}; }

RunningStats stats_from_json(const json& j) {
  return {j.at("count").get<double>(), j.at("mean").get<double>(), j.at("m2").get<double>()};
}

json ledger_to_json(const LabelLedger& l) {
  json consumed = json::object();
  json stored = json::object();
  for (const auto& [s, n] : l.consumed) consumed[std::string(to_string(s))] = n;
  for (const auto& [s, n] : l.stored) stored[std::string(to_string(s))] = n;
  return {{"consumed", consumed}, {"stored", stored},         {"scheduled", l.scheduled},
          {"fine_tune", l.fine_tune}, {"c1_batches", l.c1_batches}};
}

LabelLedger ledger_from_json(const json& j) {
  LabelLedger l;
  for (const auto& [s, n] : j.at("consumed").items()) l.consumed[parse_label_source(s)] = n.get<std::size_t>();
  for (const auto& [s, n] : j.at("stored").items()) l.stored[parse_label_source(s)] = n.get<std::size_t>();
  l.scheduled = j.at("scheduled").get<std::size_t>();
  l.fine_tune = j.at("fine_tune").get<std::size_t>();
  l.c1_batches = j.at("c1_batches").get<std::size_t>();
  return l;
}

json handoff_to_json(const HandoffState& h) {
  return {{"handed_off", h.handed_off},
          {"handoff_episode", h.handoff_episode},
          {"c1_batches_at_handoff", h.c1_batches_at_handoff},
          {"low_streak", h.low_streak},
          {"revocations", h.revocations},
          {"gan_test_history", h.gan_test_history}};
}

HandoffState handoff_from_json(const json& j) {
  HandoffState h;
  h.handed_off = j.at("handed_off").get<bool>();
  h.handoff_episode = j.at("handoff_episode").get<std::int64_t>();
  h.c1_batches_at_handoff = j.at("c1_batches_at_handoff").get<std::size_t>();
  h.low_streak = j.at("low_streak").get<std::size_t>();
  h.revocations = j.at("revocations").get<std::size_t>();
  h.gan_test_history = j.at("gan_test_history").get<std::vector<std::pair<std::int64_t, double>>>();
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string gan_test_header() { return "episode,accuracy"; }

std::string gan_test_line(std::int64_t episode, double accuracy) {
  return std::to_string(episode) + ',' + real(accuracy);
}

}  // namespace

RunState make_run_state(const RunConfig& config) {
  validate(config);
  const Environment env = Environment::from_name(config.env);
  const EnvSpec& spec = env.spec();
  RunState state;
  state.config = config;
  PolicyOptions policy;
  policy.alpha = config.alpha;
  policy.gamma = config.gamma;
  policy.actor_optimizer = make_optimizer(config.actor_optimizer);
  policy.critic_optimizer = make_optimizer(config.critic_optimizer);
  policy.initial_log_std = config.initial_log_std;
  policy.mean_penalty = config.mean_penalty;
  policy.clip_ratio = config.clip_ratio;
  state.learner = make_policy_learner(spec, derive_seed(config.seed, "policy-init"), policy);
  state.discriminator = make_discriminator(resolved_segment_length(config, spec), spec.state_dim,
                                           spec.action_dim, derive_seed(config.seed, "discriminator-init"));
  state.discriminator_optimizer = make_optimizer(config.discriminator_optimizer);
  state.reward = make_reward_model(spec.state_dim, spec.action_dim, derive_seed(config.seed, "reward-init"));
  state.reward_optimizer = make_optimizer(config.reward_optimizer);
  return state;
}

PreferenceRecord route_query(RunState& state, const SegmentPair& pair, LabelChannel& channel,
                             std::int64_t episode) {
  return route_queries(state, std::span<const SegmentPair>(&pair, 1), channel, episode).front();
}

std::vector<PreferenceRecord> route_queries(RunState& state, std::span<const SegmentPair> pairs,
                                            LabelChannel& channel, std::int64_t episode) {
  std::vector<PreferenceRecord> records;
  if (pairs.empty()) return records;
  if (uses_discriminator(state.config) && state.handoff.handed_off) {
    for (const auto& pair : pairs)
      records.push_back(c2_label(state.discriminator, pair, state.config.indifference_band, episode));
  } else {
    records = channel.label(pairs, episode);
    require(records.size() == pairs.size(), "label channel returned the wrong number of records");
  }
  state.ledger.scheduled += records.size();
  record_labels(state, records);
  return records;
}

double held_out_gan_test(const RunState& state, const Environment& env, std::int64_t episode,
                         std::uint64_t salt) {
  RunState probe;
  probe.config = state.config;
  probe.learner = state.learner;
  probe.next_pair_id = 0;
  const std::uint64_t stream = derive_seed(state.config.seed, "gan-test", salt);
  RolloutOptions options;
  options.workers = state.config.workers;
  options.first_episode_id = episode;
  options.max_steps = resolved_rollout_limit(state.config, env.spec());
  const auto batch = rollout(state.learner, env, state.config.state_samples, stream, options);
  const auto pairs = sample_pairs(probe, env, batch, state.config.gan_test_pairs, "gan-test-pairs", episode);
  return gan_test(state.discriminator, pairs, env, state.config.indifference_band);
}

HumanSavingReport human_saving_report(const RunState& state) {
  HumanSavingReport report;
  report.total_labels = state.ledger.total_consumed();
  report.human_labels = state.ledger.consumed_from(LabelSource::human) +
                        state.ledger.consumed_from(LabelSource::oracle);
  for (const auto& [source, n] : state.ledger.consumed)
    report.fraction[source] =
        report.total_labels == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(report.total_labels);
  report.human_fraction = report.total_labels == 0
                              ? 0.0
                              : static_cast<double>(report.human_labels) / static_cast<double>(report.total_labels);
  const QuerySchedule baseline = *find_schedule("human-175");
  for (std::int64_t e = 0; e <= state.episode; ++e) report.baseline_labels += next_query_budget(baseline, e);
  report.versus_baseline = report.baseline_labels == 0
                               ? 0.0
                               : static_cast<double>(report.human_labels) /
                                     static_cast<double>(report.baseline_labels);
  return report;
}

double evaluate(const RunState& state, std::size_t n_episodes) {
  require(n_episodes >= 1, "evaluation needs at least one episode");
  return evaluate_policy(state.learner, Environment::from_name(state.config.env), n_episodes,
                         derive_seed(state.config.seed, "evaluation"));
}

// ---------------------------------------------------------------------------
// Orchestrator.

Orchestrator::Orchestrator(RunConfig config, std::unique_ptr<LabelChannel> channel)
    : Orchestrator(make_run_state(config), std::move(channel)) {
  open_outputs(false);
  checkpoint();
}

Orchestrator::Orchestrator(RunState state, std::unique_ptr<LabelChannel> channel)
    : state_(std::move(state)), env_(Environment::from_name(state_.config.env)) {
  open_channel(std::move(channel));
}

Orchestrator::Orchestrator(Orchestrator&&) = default;
Orchestrator& Orchestrator::operator=(Orchestrator&&) = default;
Orchestrator::~Orchestrator() = default;

void Orchestrator::open_channel(std::unique_ptr<LabelChannel> channel) {
  if (channel) {
    channel_ = std::move(channel);
    return;
  }
  if (state_.config.channel == ChannelKind::oracle) {
    channel_ = std::make_unique<OracleChannel>(env_, state_.config.oracle_tie_band);
    return;
  }
  gateway_ = std::make_unique<LabelGateway>(env_.name(), env_.spec().dt);
  gateway_->start(state_.config.gateway_host, state_.config.gateway_port);
  channel_ = std::make_unique<GatewayChannel>(*gateway_, state_.config.human_timeout_seconds);
  publish_status();
}

void Orchestrator::open_outputs(bool resuming) {
  const fs::path out(state_.config.out_dir);
  fs::create_directories(out);
  save_config(out / "config.json", state_.config);
  std::string metrics = metrics_header() + '\n';
  for (const auto& row : state_.metrics) metrics += format_metric_row(row) + '\n';
  write_text(out / "metrics.csv", metrics);
  std::string curve = gan_test_header() + '\n';
  for (const auto& [e, a] : state_.handoff.gan_test_history) curve += gan_test_line(e, a) + '\n';
  write_text(out / "gan_test.csv", curve);
  if (!resuming) write_text(out / "trajectories.jsonl", "");
}

void Orchestrator::publish_status() {
  if (!gateway_) return;
  json sources = json::object();
  for (const auto& [source, n] : state_.ledger.consumed) sources[std::string(to_string(source))] = n;
  gateway_->set_status({{"episode", state_.episode + 1},
                        {"schedule", state_.config.schedule.name},
                        {"budgets",
                         {{"consumed", sources},
                          {"scheduled", state_.ledger.scheduled},
                          {"fine_tune", state_.ledger.fine_tune},
                          {"next", next_query_budget(state_.config.schedule, state_.episode + 1)}}},
                        {"gan_test", state_.handoff.gan_test_history},
                        {"handoff", state_.handoff.handed_off}});
}

bool Orchestrator::finished() const {
  return state_.converged || state_.episode + 1 >= static_cast<std::int64_t>(state_.config.iterations);
}

bool Orchestrator::step() {
  if (finished()) return false;
  RunState& s = state_;
  const RunConfig& c = s.config;
  const std::int64_t episode = s.episode + 1;
  const Vec actor_before = s.learner.actor.params;
  const Vec discriminator_before = s.discriminator.model.params;
  const Vec reward_before = s.reward.model.params;
  MetricRow row;
  row.episode = episode;

  // Rollout: n initial-state samples of the current stochastic policy.
  const auto batch = rollout_batch(s, env_, episode, "rollout");
  for (const auto& t : batch) {
    row.env_steps += t.steps.size();
    row.rollout_return += t.true_return();
  }
  row.rollout_return /= static_cast<double>(batch.size());

  double reward_loss = 0.0;
  if (c.reward_source == RewardSource::preferences) {
    // Scheduled queries.
    const std::size_t owed = next_query_budget(c.schedule, episode);
    bool c1_now = false;
    if (owed > 0) {
      const bool before_handoff = !s.handoff.handed_off;
      auto pairs = sample_pairs(s, env_, batch, owed, "query-pairs", episode);
      remember_trajectories(s, batch, pairs);
      route_queries(s, pairs, *channel_, episode);
      c1_now = uses_discriminator(c) && before_handoff;
      publish_status();
    }
    if (uses_discriminator(c)) row.gan_test = discriminator_phase(s, env_, batch, *channel_, episode, c1_now);

    if (s.database.size() > 0) {
      RewardFitOptions fit_options;
      fit_options.epochs = c.reward_epochs;
      fit_options.batch_size = c.reward_batch;
      fit_options.max_records = c.reward_max_records;
      fit_options.discriminator_share = c.reward_discriminator_share;
      fit_options.seed = derive_seed(c.seed, "reward-fit", static_cast<std::uint64_t>(episode));
      reward_loss = fit(s.reward, s.database.records(), {}, fit_options, s.reward_optimizer).final_loss;
    }
  }

  // Policy update on the learned (or, for the baseline, true) reward.
  std::vector<LearnerStep> steps;
  ShapedBatch shaped;
  bool use_shaped = false;
  if (c.reward_source == RewardSource::preferences) {
    for (const auto& t : batch)
      for (const auto& tr : t.steps) s.reward.normalization.observe(predict(s.reward, tr.state, tr.action));
    steps = make_learner_steps(batch, [&](std::span<const double> st, std::span<const double> a) {
      return s.reward.normalization.normalize(predict(s.reward, st, a));
    });
    if (c.shaping_weight > 0.0 && c.shaped_segments > 0 && s.database.strict_count() > 0) {
      std::vector<PreferenceRecord> strict;
      for (const auto& r : s.database.records())
        if (r.strict()) strict.push_back(r);
      const auto chosen = sample_records(strict, c.shaped_segments,
                                         derive_seed(c.seed, "shaped-records", static_cast<std::uint64_t>(episode)));
      std::vector<Segment> preferred;
      std::vector<Segment> non_preferred;
      for (const auto& r : chosen) {
        preferred.push_back(r.preferred());
        non_preferred.push_back(r.non_preferred());
      }
      shaped = make_shaped_batch(s.learner, preferred, non_preferred, s.reward);
      use_shaped = true;
    }
  } else {
    for (const auto& t : batch)
      for (const auto& tr : t.steps) s.true_reward_stats.observe(tr.true_reward);
    steps = make_learner_steps(batch, [&](std::span<const double> st, std::span<const double> a) {
      return s.true_reward_stats.normalize(env_.true_reward(st, a));
    });
  }
  UpdateOptions update;
  update.actor_epochs = c.actor_epochs;
  update.critic_epochs = c.critic_epochs;
  update.minibatch_size = c.minibatch_size;
  update.gae_lambda = c.gae_lambda;
  update.shaping_weight = c.shaping_weight;
  update.shaped_segments = c.shaped_segments;
  const UpdateStats stats =
      update_policy(s.learner, std::move(steps), use_shaped ? &shaped : nullptr, use_shaped ? &s.reward : nullptr,
                    update, derive_seed(c.seed, "policy-update", static_cast<std::uint64_t>(episode)));

  row.eval_return = evaluate(s, c.eval_episodes);
  row.actor_objective = stats.actor_critic_objective;
  row.shaped_objective = stats.shaped_objective;
  row.critic_loss = stats.critic_loss;
  row.reward_loss = reward_loss;
  row.alpha = s.learner.alpha;
  row.human_labels = s.ledger.consumed_from(LabelSource::human);
  row.oracle_labels = s.ledger.consumed_from(LabelSource::oracle);
  row.discriminator_labels = s.ledger.consumed_from(LabelSource::discriminator);
  row.reward_model_labels = s.ledger.consumed_from(LabelSource::reward_model);
  row.scheduled_labels = s.ledger.scheduled;
  row.fine_tune_labels = s.ledger.fine_tune;
  row.database_size = s.database.size();
  row.handed_off = s.handoff.handed_off;
  row.actor_delta = l2_distance(actor_before, s.learner.actor.params);
  row.discriminator_delta = l2_distance(discriminator_before, s.discriminator.model.params);
  row.reward_delta = l2_distance(reward_before, s.reward.model.params);

  const bool small = row.actor_delta < c.convergence_threshold &&
                     row.discriminator_delta < c.convergence_threshold &&
                     row.reward_delta < c.convergence_threshold;
  s.converged_streak = small ? s.converged_streak + 1 : 0;
  s.converged = s.converged_streak >= 2;
  s.episode = episode;
  s.metrics.push_back(row);

  const fs::path out(c.out_dir);
  {
    std::ofstream metrics(out / "metrics.csv", std::ios::app | std::ios::binary);
    metrics << format_metric_row(row) << '\n';
  }
  {
    std::ofstream curve(out / "gan_test.csv", std::ios::app | std::ios::binary);
    for (const auto& [e, a] : s.handoff.gan_test_history)
      if (e == episode) curve << gan_test_line(e, a) << '\n';
  }
  publish_status();
  if ((episode + 1) % static_cast<std::int64_t>(c.checkpoint_period) == 0 || finished()) checkpoint();
  return !finished();
}

RunState& Orchestrator::run() {
  while (step()) {
  }
  return state_;
}

void Orchestrator::checkpoint() {
  const fs::path out(state_.config.out_dir);
  fs::create_directories(out);

  // Trajectories referenced by labels are appended once.
  if (!state_.referenced.empty()) {
    std::vector<Trajectory> pending;
    for (auto& [id, t] : state_.referenced) pending.push_back(std::move(t));
    append_trajectory_dump(out / "trajectories.jsonl", pending);
    for (const auto& t : pending) state_.dumped_episodes.insert(t.episode_id);
    state_.referenced.clear();
  }

  const fs::path staging = out / "checkpoint.tmp";
  fs::remove_all(staging);
  fs::create_directories(staging);
  save_mlp(staging / "actor.mlp", state_.learner.actor);
  save_mlp(staging / "critic.mlp", state_.learner.critic);
  save_mlp(staging / "discriminator.mlp", state_.discriminator.model);
  save_mlp(staging / "reward.mlp", state_.reward.model);
  state_.database.save_jsonl(staging / "preferences.jsonl");
  std::string metrics = metrics_header() + '\n';
  for (const auto& row : state_.metrics) metrics += format_metric_row(row) + '\n';
  write_text(staging / "metrics.csv", metrics);
  const json meta{{"format", "prefrl-run 1"},
                  {"episode", state_.episode},
                  {"next_pair_id", state_.next_pair_id},
                  {"converged_streak", state_.converged_streak},
                  {"converged", state_.converged},
                  {"ledger", ledger_to_json(state_.ledger)},
                  {"handoff", handoff_to_json(state_.handoff)},
                  {"optimizers",
                   {{"actor", adam_to_json(state_.learner.actor_optimizer)},
                    {"critic", adam_to_json(state_.learner.critic_optimizer)},
                    {"discriminator", adam_to_json(state_.discriminator_optimizer)},
                    {"reward", adam_to_json(state_.reward_optimizer)}}},
                  {"reward_fit_count", state_.reward.fit_count},
                  {"reward_normalization", stats_to_json(state_.reward.normalization)},
                  {"true_reward_stats", stats_to_json(state_.true_reward_stats)},
                  {"discriminator_steps", state_.discriminator.steps_taken},
                  {"discriminator_standardization",
                   {{"mean", state_.discriminator.feature_mean}, {"scale", state_.discriminator.feature_scale}}},
                  {"dumped_episodes", state_.dumped_episodes}};
  write_text(staging / "state.json", meta.dump(1) + '\n');
  save_config(staging / "config.json", state_.config);

  const fs::path final_dir = out / "checkpoint";
  fs::remove_all(final_dir);
  fs::rename(staging, final_dir);
}

RunState load_run_state(const fs::path& out_dir, std::optional<std::size_t> iterations) {
  const fs::path dir = out_dir / "checkpoint";
  if (!fs::exists(dir / "state.json")) throw Error("no checkpoint in " + out_dir.string());
  RunConfig config = load_config(dir / "config.json");
  config.out_dir = out_dir.string();
  if (iterations) config.iterations = *iterations;
  validate(config);
  RunState state = make_run_state(config);

  json meta;
  {
    std::ifstream in(dir / "state.json");
    in >> meta;
  }
  if (meta.at("format") != "prefrl-run 1") throw Error("unsupported checkpoint format");
  state.episode = meta.at("episode").get<std::int64_t>();
  state.next_pair_id = meta.at("next_pair_id").get<std::uint64_t>();
  state.converged_streak = meta.at("converged_streak").get<std::size_t>();
  state.converged = meta.at("converged").get<bool>();
  state.ledger = ledger_from_json(meta.at("ledger"));
  state.handoff = handoff_from_json(meta.at("handoff"));
  const json& opts = meta.at("optimizers");
  state.learner.actor = load_mlp(dir / "actor.mlp");
  state.learner.critic = load_mlp(dir / "critic.mlp");
  state.discriminator.model = load_mlp(dir / "discriminator.mlp");
  state.reward.model = load_mlp(dir / "reward.mlp");
  adam_from_json(state.learner.actor_optimizer, opts.at("actor"));
  adam_from_json(state.learner.critic_optimizer, opts.at("critic"));
  adam_from_json(state.discriminator_optimizer, opts.at("discriminator"));
  adam_from_json(state.reward_optimizer, opts.at("reward"));
  state.reward.fit_count = meta.at("reward_fit_count").get<std::size_t>();
  state.reward.normalization = stats_from_json(meta.at("reward_normalization"));
  state.true_reward_stats = stats_from_json(meta.at("true_reward_stats"));
  state.discriminator.steps_taken = meta.at("discriminator_steps").get<std::int64_t>();
  state.discriminator.feature_mean = meta.at("discriminator_standardization").at("mean").get<Vec>();
  state.discriminator.feature_scale = meta.at("discriminator_standardization").at("scale").get<Vec>();
  state.dumped_episodes = meta.at("dumped_episodes").get<std::set<std::int64_t>>();

  std::ifstream metrics(dir / "metrics.csv");
  std::string line;
  std::getline(metrics, line);
  while (std::getline(metrics, line))
    if (!line.empty()) state.metrics.push_back(parse_metric_row(line));

  const Environment env = Environment::from_name(config.env);
  const auto trajectories = read_trajectory_dump(out_dir / "trajectories.jsonl", env.name());
  std::map<std::int64_t, const Trajectory*> episodes;
  for (const auto& t : trajectories)
    if (state.dumped_episodes.contains(t.episode_id)) episodes[t.episode_id] = &t;
  state.database = PrefDatabase::load_jsonl(dir / "preferences.jsonl", episodes,
                                            resolved_segment_length(config, env.spec()),
                                            env.spec().state_dim, env.spec().action_dim);
  return state;
}

Orchestrator Orchestrator::resume(const fs::path& out_dir, std::unique_ptr<LabelChannel> channel,
                                  std::optional<std::size_t> iterations) {
  RunState state = load_run_state(out_dir, iterations);
  // A crash between the dump append and the checkpoint rename leaves
  // episodes in the dump that the checkpoint does not know; drop them (and
  // any duplicates) so later appends stay unique.
  const fs::path dump = out_dir / "trajectories.jsonl";
  std::vector<Trajectory> kept;
  std::set<std::int64_t> seen;
  for (auto& t : read_trajectory_dump(dump, state.config.env))
    if (state.dumped_episodes.contains(t.episode_id) && seen.insert(t.episode_id).second)
      kept.push_back(std::move(t));
  write_text(dump, "");
  append_trajectory_dump(dump, kept);

  Orchestrator orchestrator(std::move(state), std::move(channel));
  orchestrator.open_outputs(true);
  return orchestrator;
}

RunState run(const RunConfig& config, std::unique_ptr<LabelChannel> channel) {
  Orchestrator orchestrator(config, std::move(channel));
  orchestrator.run();
  return std::move(orchestrator.state());
}

}  // namespace prefrl
