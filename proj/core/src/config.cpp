#include "prefrl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <variant>

#include "prefrl/error.hpp"

namespace prefrl {

namespace {

using json = nlohmann::json;

// Scalar fields shared by the reader and the writer.
using FieldPtr = std::variant<std::size_t RunConfig::*, double RunConfig::*, int RunConfig::*,
                              std::string RunConfig::*>;

const std::vector<std::pair<std::string, FieldPtr>>& scalar_fields() {
  static const std::vector<std::pair<std::string, FieldPtr>> fields{
      {"env", &RunConfig::env},
      {"iterations", &RunConfig::iterations},
      {"state_samples", &RunConfig::state_samples},
      {"rollout_limit", &RunConfig::rollout_limit},
      {"segment_length", &RunConfig::segment_length},
      {"workers", &RunConfig::workers},
      {"gamma", &RunConfig::gamma},
      {"alpha", &RunConfig::alpha},
      {"oracle_tie_band", &RunConfig::oracle_tie_band},
      {"indifference_band", &RunConfig::indifference_band},
      {"gan_test_threshold", &RunConfig::gan_test_threshold},
      {"gan_test_pairs", &RunConfig::gan_test_pairs},
      {"fine_tune_period", &RunConfig::fine_tune_period},
      {"fine_tune_labels", &RunConfig::fine_tune_labels},
      {"collapse_threshold", &RunConfig::collapse_threshold},
      {"collapse_patience", &RunConfig::collapse_patience},
      {"discriminator_epochs", &RunConfig::discriminator_epochs},
      {"discriminator_batch", &RunConfig::discriminator_batch},
      {"reward_epochs", &RunConfig::reward_epochs},
      {"reward_batch", &RunConfig::reward_batch},
      {"reward_max_records", &RunConfig::reward_max_records},
      {"reward_discriminator_share", &RunConfig::reward_discriminator_share},
      {"actor_epochs", &RunConfig::actor_epochs},
      {"critic_epochs", &RunConfig::critic_epochs},
      {"minibatch_size", &RunConfig::minibatch_size},
      {"gae_lambda", &RunConfig::gae_lambda},
      {"clip_ratio", &RunConfig::clip_ratio},
      {"mean_penalty", &RunConfig::mean_penalty},
      {"initial_log_std", &RunConfig::initial_log_std},
      {"shaping_weight", &RunConfig::shaping_weight},
      {"shaped_segments", &RunConfig::shaped_segments},
      {"convergence_threshold", &RunConfig::convergence_threshold},
      {"eval_episodes", &RunConfig::eval_episodes},
      {"checkpoint_period", &RunConfig::checkpoint_period},
      {"out_dir", &RunConfig::out_dir},
      {"gateway_host", &RunConfig::gateway_host},
      {"gateway_port", &RunConfig::gateway_port},
      {"human_timeout_seconds", &RunConfig::human_timeout_seconds},
  };
  return fields;
}

const std::vector<std::pair<std::string, OptimizerConfig RunConfig::*>>& optimizer_fields() {
  static const std::vector<std::pair<std::string, OptimizerConfig RunConfig::*>> fields{
      {"actor", &RunConfig::actor_optimizer},
      {"critic", &RunConfig::critic_optimizer},
      {"discriminator", &RunConfig::discriminator_optimizer},
      {"reward", &RunConfig::reward_optimizer},
  };
  return fields;
}

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw ConfigError("config field '" + field + "': " + message);
}

template <typename T>
T read_as(const json& value, const std::string& field) {
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!value.is_string()) fail(field, "expected a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!value.is_number()) fail(field, "expected a number");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!value.is_number_integer() || (!value.is_number_unsigned() && value.get<std::int64_t>() < 0))
        fail(field, "expected a non-negative integer");
    } else {
      if (!value.is_number_integer()) fail(field, "expected an integer");
    }
    return value.get<T>();
  } catch (const json::exception& e) {
    fail(field, e.what());
  }
}

std::string channel_name(ChannelKind kind) { return kind == ChannelKind::human ? "human" : "oracle"; }
std::string reward_source_name(RewardSource source) {
  return source == RewardSource::true_reward ? "true" : "preferences";
}
std::string criterion_name(FineTuneCriterion c) { return c == FineTuneCriterion::c3 ? "c3" : "c1"; }
std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

QuerySchedule read_schedule(const json& value) {
  if (value.is_string()) {
    const auto name = value.get<std::string>();
    auto schedule = find_schedule(name);
    if (!schedule) fail("schedule", "unknown schedule name '" + name + "'");
    return *schedule;
  }
  if (!value.is_object()) fail("schedule", "expected a schedule name or an object");
  QuerySchedule schedule;
  schedule.name = "custom";
  static const std::set<std::string> known{"name", "initial_labels", "online_labels",
                                           "online_period_episodes", "source"};
  for (const auto& [key, item] : value.items())
    if (!known.contains(key)) fail("schedule." + key, "unknown key");
  if (value.contains("name")) schedule.name = read_as<std::string>(value["name"], "schedule.name");
  for (const char* key : {"initial_labels", "online_labels", "online_period_episodes"})
    if (!value.contains(key)) fail(std::string("schedule.") + key, "missing");
  schedule.initial_labels = read_as<std::size_t>(value["initial_labels"], "schedule.initial_labels");
  schedule.online_labels = read_as<std::size_t>(value["online_labels"], "schedule.online_labels");
  schedule.online_period_episodes =
      read_as<std::size_t>(value["online_period_episodes"], "schedule.online_period_episodes");
  if (value.contains("source")) {
    const auto source = read_as<std::string>(value["source"], "schedule.source");
    try {
      schedule.source = parse_label_source(source);
    } catch (const Error&) {
      fail("schedule.source", "unknown label source '" + source + "'");
    }
  }
  return schedule;
}

}  // namespace

void validate(const RunConfig& c) {
  try {
    (void)Environment::from_name(c.env);
  } catch (const Error&) {
    fail("env", "unknown environment '" + c.env + "' (expected pointgoal or pendulum)");
  }
  if (c.schedule.online_period_episodes == 0) fail("schedule.online_period_episodes", "must be positive");
  if (c.schedule.initial_labels == 0 && c.reward_source == RewardSource::preferences)
    fail("schedule.initial_labels", "must be positive when learning from preferences");
  if (c.schedule.source == LabelSource::reward_model)
    fail("schedule.source", "scheduled queries go to human, oracle or discriminator");
  auto positive = [](const char* name, std::size_t value) {
    if (value == 0) fail(name, "must be positive");
  };
  positive("iterations", c.iterations);
  positive("state_samples", c.state_samples);
  positive("workers", c.workers);
  positive("gan_test_pairs", c.gan_test_pairs);
  positive("fine_tune_period", c.fine_tune_period);
  positive("collapse_patience", c.collapse_patience);
  positive("discriminator_batch", c.discriminator_batch);
  positive("reward_batch", c.reward_batch);
  positive("minibatch_size", c.minibatch_size);
  positive("eval_episodes", c.eval_episodes);
  positive("checkpoint_period", c.checkpoint_period);
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) fail("gamma", "must lie in (0, 1]");
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) fail("alpha", "must be finite and non-negative");
  if (!(c.gan_test_threshold >= 0.0 && c.gan_test_threshold <= 1.0))
    fail("gan_test_threshold", "must lie in [0, 1]");
  if (!(c.collapse_threshold >= 0.0 && c.collapse_threshold <= 1.0))
    fail("collapse_threshold", "must lie in [0, 1]");
  if (!(c.oracle_tie_band >= 0.0)) fail("oracle_tie_band", "must be non-negative");
  if (!(c.indifference_band >= 0.0)) fail("indifference_band", "must be non-negative");
  if (!(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0)) fail("gae_lambda", "must lie in [0, 1]");
  if (!(c.clip_ratio >= 0.0 && c.clip_ratio < 1.0)) fail("clip_ratio", "must lie in [0, 1)");
  if (!(c.reward_discriminator_share >= 0.0 && c.reward_discriminator_share <= 1.0))
    fail("reward_discriminator_share", "must lie in [0, 1]");
  if (!(c.mean_penalty >= 0.0)) fail("mean_penalty", "must be non-negative");
  if (!(c.shaping_weight >= 0.0)) fail("shaping_weight", "must be non-negative");
  if (!(c.convergence_threshold >= 0.0)) fail("convergence_threshold", "must be non-negative");
  if (!(c.human_timeout_seconds > 0.0)) fail("human_timeout_seconds", "must be positive");
  if (c.gateway_port < 0 || c.gateway_port > 65535) fail("gateway_port", "must lie in [0, 65535]");
  if (c.out_dir.empty()) fail("out_dir", "must not be empty");
  for (const auto& [name, member] : optimizer_fields()) {
    const double lr = (c.*member).learning_rate;
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("optimizers." + name + ".learning_rate", "must be positive");
  }
  const EnvSpec spec = Environment::from_name(c.env).spec();
  if (c.rollout_limit > spec.horizon) fail("rollout_limit", "exceeds the environment horizon");
  const std::size_t steps = resolved_rollout_limit(c, spec);
  if (c.segment_length > steps) fail("segment_length", "exceeds the rollout length");
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object at the top level");
  RunConfig c;
  std::set<std::string> known{"schedule", "channel", "reward_source", "fine_tune_criterion",
                              "optimizers", "seed"};
  if (j.contains("seed")) c.seed = read_as<std::uint64_t>(j["seed"], "seed");
  for (const auto& [name, member] : scalar_fields()) {
    known.insert(name);
    if (!j.contains(name)) continue;
    std::visit(
        [&](auto ptr) {
          using T = std::remove_reference_t<decltype(c.*ptr)>;
          c.*ptr = read_as<T>(j[name], name);
        },
        member);
  }
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) fail(key, "unknown key");

  if (j.contains("schedule")) c.schedule = read_schedule(j["schedule"]);
  if (j.contains("channel")) {
    const auto name = read_as<std::string>(j["channel"], "channel");
    if (name == "oracle") c.channel = ChannelKind::oracle;
    else if (name == "human") c.channel = ChannelKind::human;
    else fail("channel", "expected 'oracle' or 'human', got '" + name + "'");
  }
  if (j.contains("reward_source")) {
    const auto name = read_as<std::string>(j["reward_source"], "reward_source");
    if (name == "preferences") c.reward_source = RewardSource::preferences;
    else if (name == "true") c.reward_source = RewardSource::true_reward;
    else fail("reward_source", "expected 'preferences' or 'true', got '" + name + "'");
  }
  if (j.contains("fine_tune_criterion")) {
    const auto name = read_as<std::string>(j["fine_tune_criterion"], "fine_tune_criterion");
    if (name == "c1") c.fine_tune_criterion = FineTuneCriterion::c1;
    else if (name == "c3") c.fine_tune_criterion = FineTuneCriterion::c3;
    else fail("fine_tune_criterion", "expected 'c1' or 'c3', got '" + name + "'");
  }
  if (j.contains("optimizers")) {
    const json& opts = j["optimizers"];
    if (!opts.is_object()) fail("optimizers", "expected an object");
    for (const auto& [key, value] : opts.items()) {
      auto it = std::find_if(optimizer_fields().begin(), optimizer_fields().end(),
                             [&](const auto& f) { return f.first == key; });
      if (it == optimizer_fields().end()) fail("optimizers." + key, "unknown network");
      if (!value.is_object()) fail("optimizers." + key, "expected an object");
      OptimizerConfig& target = c.*(it->second);
      for (const auto& [field, item] : value.items()) {
        const std::string path = "optimizers." + key + "." + field;
        if (field == "kind") {
          const auto kind = read_as<std::string>(item, path);
          if (kind == "sgd") target.kind = OptimizerKind::sgd;
          else if (kind == "adam") target.kind = OptimizerKind::adam;
          else fail(path, "expected 'sgd' or 'adam', got '" + kind + "'");
        } else if (field == "learning_rate") {
          target.learning_rate = read_as<double>(item, path);
        } else {
          fail(path, "unknown key");
        }
      }
    }
  }
  validate(c);
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  for (const auto& [name, member] : scalar_fields())
    std::visit([&](auto ptr) { j[name] = c.*ptr; }, member);
  j["seed"] = c.seed;
  j["schedule"] = {{"name", c.schedule.name},
                   {"initial_labels", c.schedule.initial_labels},
                   {"online_labels", c.schedule.online_labels},
                   {"online_period_episodes", c.schedule.online_period_episodes},
                   {"source", std::string(to_string(c.schedule.source))}};
  j["channel"] = channel_name(c.channel);
  j["reward_source"] = reward_source_name(c.reward_source);
  j["fine_tune_criterion"] = criterion_name(c.fine_tune_criterion);
  json opts = json::object();
  for (const auto& [name, member] : optimizer_fields())
    opts[name] = {{"kind", optimizer_name((c.*member).kind)},
                  {"learning_rate", (c.*member).learning_rate}};
  j["optimizers"] = opts;
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << config_to_json(config).dump(2) << '\n';
}

std::size_t resolved_rollout_limit(const RunConfig& config, const EnvSpec& spec) {
  return config.rollout_limit == 0 ? spec.horizon : config.rollout_limit;
}

std::size_t resolved_segment_length(const RunConfig& config, const EnvSpec& spec) {
  if (config.segment_length != 0) return config.segment_length;
  const auto five_seconds = static_cast<std::size_t>(std::lround(5.0 / spec.dt));
  return std::max<std::size_t>(1, std::min(five_seconds, resolved_rollout_limit(config, spec) / 2));
}

std::size_t resolved_fine_tune_labels(const RunConfig& config) {
  return config.fine_tune_labels == 0 ? config.schedule.initial_labels : config.fine_tune_labels;
}

}  // namespace prefrl
