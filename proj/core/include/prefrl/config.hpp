#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "prefrl/mlp.hpp"
#include "prefrl/prefdb.hpp"

namespace prefrl {

/// Who answers C1 queries.
enum class ChannelKind { oracle, human };

/// What the learner is trained on: the learned reward (the preference
/// pipeline) or the hidden true reward (the reference baseline).
enum class RewardSource { preferences, true_reward };

/// Which criterion produces fine-tune labels for the discriminator.
enum class FineTuneCriterion { c1, c3 };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 3e-4;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Every knob of one run. The JSON file form uses the same field names.
struct RunConfig {
  std::string env = "pointgoal";
  QuerySchedule schedule = *find_schedule("oracle-40");
  ChannelKind channel = ChannelKind::oracle;
  RewardSource reward_source = RewardSource::preferences;

  std::size_t iterations = 200;     // m: outer iterations (schedule episodes)
  std::size_t state_samples = 6;    // n: initial-state samples (rollouts) per iteration
  std::size_t rollout_limit = 0;    // steps per rollout; 0 = the environment horizon
  std::size_t segment_length = 0;   // k: clip length; 0 = 5 s of simulated time, at most horizon / 2
  std::size_t workers = 6;
  double gamma = 0.99;
  double alpha = 0.2;
  double oracle_tie_band = 1e-3;
  double indifference_band = 0.05;  // C2

  double gan_test_threshold = 0.8;
  std::size_t gan_test_pairs = 50;
  std::size_t fine_tune_period = 10;  // T: episodes between GAN-test checks
  std::size_t fine_tune_labels = 0;   // 0 = the schedule's initial batch size
  FineTuneCriterion fine_tune_criterion = FineTuneCriterion::c1;
  double collapse_threshold = 0.5;
  std::size_t collapse_patience = 3;
  std::size_t discriminator_epochs = 10;
  std::size_t discriminator_batch = 32;

  std::size_t reward_epochs = 4;
  std::size_t reward_batch = 32;
  std::size_t reward_max_records = 512;
  double reward_discriminator_share = 0.5;  // cap on discriminator records per reward fit

  std::size_t actor_epochs = 4;
  std::size_t critic_epochs = 8;
  std::size_t minibatch_size = 64;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double mean_penalty = 1e-3;
  double initial_log_std = -0.5;
  double shaping_weight = 0.0;  // weight of the shaped preference term in the actor objective
  std::size_t shaped_segments = 16;

  OptimizerConfig actor_optimizer{};
  OptimizerConfig critic_optimizer{};
  OptimizerConfig discriminator_optimizer{};
  OptimizerConfig reward_optimizer{};

  double convergence_threshold = 1e-4;
  std::size_t eval_episodes = 5;
  std::size_t checkpoint_period = 10;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  std::string gateway_host = "127.0.0.1";
  int gateway_port = 8080;
  double human_timeout_seconds = 300.0;
};

/// Throws ConfigError naming the offending field.
void validate(const RunConfig& config);

/// Parses and validates. Unknown keys are rejected by name.
RunConfig config_from_json(const nlohmann::json& json);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// Segment length after resolving the 0 default against the environment.
std::size_t resolved_segment_length(const RunConfig& config, const EnvSpec& spec);
std::size_t resolved_rollout_limit(const RunConfig& config, const EnvSpec& spec);
std::size_t resolved_fine_tune_labels(const RunConfig& config);

}  // namespace prefrl
