#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "prefrl/env.hpp"
#include "prefrl/mlp.hpp"
#include "prefrl/prefdb.hpp"
#include "prefrl/reward_model.hpp"
#include "prefrl/rng.hpp"
#include "prefrl/trajectory.hpp"

namespace prefrl {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Maximum-entropy actor-critic.
///
/// The actor maps a state to 2 * action_dim raw outputs: the pre-squash
/// Gaussian mean followed by log-sigma (clamped to [-5, 2]). Samples are
/// u = mean + sigma * eps, a = center + half_width * tanh(u), so every action
/// lies inside the box. The critic maps a state to a scalar soft value.
struct PolicyLearner {
  MlpModel actor;
  MlpModel critic;
  double alpha = 0.2;
  double gamma = 0.99;
  double mean_penalty = 1e-3;  // L2 on the pre-squash mean, keeps tanh out of saturation
  double clip_ratio = 0.2;     // likelihood-ratio clip of the actor surrogate; 0 disables it
  Vec action_low;
  Vec action_high;
  Optimizer actor_optimizer;
  Optimizer critic_optimizer;
  std::vector<Trajectory> rollout_buffer;  // latest batch, the empirical rho_pi

  [[nodiscard]] std::size_t state_dim() const { return actor.input_size(); }
  [[nodiscard]] std::size_t action_dim() const { return action_low.size(); }
};

struct PolicyOptions {
  double alpha = 0.2;
  double gamma = 0.99;
  std::vector<std::size_t> actor_hidden{64, 64};
  std::vector<std::size_t> critic_hidden{64};
  Optimizer actor_optimizer{};
  Optimizer critic_optimizer{};
  double initial_log_std = -0.5;
  double mean_penalty = 1e-3;
  double clip_ratio = 0.2;
};

PolicyLearner make_policy_learner(const EnvSpec& spec, std::uint64_t seed,
                                  const PolicyOptions& options = {});

/// Gaussian head evaluated at one state.
struct GaussianHead {
  Vec mean;     // pre-squash
  Vec log_std;  // clamped
  std::vector<bool> log_std_clamped;
};

GaussianHead policy_head(const PolicyLearner& learner, std::span<const double> state);

struct ActionSample {
  Vec action;      // inside the box
  Vec pre_squash;  // u
  Vec noise;       // eps
  double log_prob = 0.0;  // includes the tanh and box-scale correction
  double entropy = 0.0;   // closed-form Gaussian entropy before squashing
};

ActionSample sample_action(const PolicyLearner& learner, std::span<const double> state,
                           std::uint64_t seed);
ActionSample sample_action(const PolicyLearner& learner, std::span<const double> state, Rng& rng);

/// center + half_width * tanh(mean): the deterministic evaluation action.
Vec mean_action(const PolicyLearner& learner, std::span<const double> state);

/// log pi(action | state) for an action inside the box.
double log_prob(const PolicyLearner& learner, std::span<const double> state,
                std::span<const double> action);

/// Sum_j (0.5 * ln(2 pi e) + log_std_j).
double gaussian_entropy(std::span<const double> log_std);

/// One transition prepared for a learner update.
struct LearnerStep {
  Vec state;
  Vec action;
  Vec pre_squash;
  Vec next_state;
  double reward = 0.0;         // reward estimate fed to the learner
  double log_prob = 0.0;       // log pi(a | s) at collection time
  bool done = false;
  std::size_t episode = 0;  // index within the batch
};

/// Flattens trajectories into learner steps, attaching reward(s, a).
std::vector<LearnerStep> make_learner_steps(const std::vector<Trajectory>& trajectories,
                                            const StepRewardFn& reward);

/// Soft Bellman backup targets: r + gamma * V(s') with the soft value
/// V(s') = critic(s') + alpha * H(pi(. | s')), the closed-form pre-squash
/// entropy standing in for E[-log pi(a' | s')]; V = 0 on terminal steps.
/// `entropy_term = false` drops the entropy term.
Vec soft_backup_targets(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                        bool entropy_term = true);

/// Mean squared error of the critic against `targets`, and its gradient.
double critic_loss(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                   std::span<const double> targets, Vec* grad = nullptr);

/// One descent step of the critic towards fixed targets; returns the loss
/// before the step.
double critic_step(PolicyLearner& learner, std::span<const LearnerStep> steps,
                   std::span<const double> targets);

/// Generalized advantage estimates built from the same soft one-step
/// residuals as the targets, per episode.
Vec soft_advantages(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                    std::span<const double> targets, double lambda);

/// Entropy-augmented actor-critic surrogate on rollout steps:
///   mean_t [P_t + alpha * H(pi(. | s_t)) - mean_penalty * |mean_t|^2]
/// and its gradient with respect to the actor parameters. With
/// clip_ratio = 0, P_t = A_t log pi(a_t | s_t); otherwise
/// P_t = min(rho_t A_t, clip(rho_t, 1 - c, 1 + c) A_t) with
/// rho_t = pi(a_t | s_t) / pi_collect(a_t | s_t).
double actor_critic_objective(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                              std::span<const double> advantages, Vec* grad = nullptr);

// ---------------------------------------------------------------------------
// Preference-shaped objective.

struct ShapedStep {
  Vec state;
  Vec action;
  Vec noise;  // eps recovered at batch construction; held fixed afterwards
  std::size_t offset = 0;  // position l within the segment
  double weight = 1.0;     // non-preferred steps only
};

/// Steps drawn from D_p / D_np segments. weights[i] and q[l] = sum of the
/// weights at offset l; weights are stored up to a common per-offset
/// factor, which cancels in w_i / q.
struct ShapedBatch {
  std::vector<ShapedStep> preferred_steps;
  std::vector<ShapedStep> nonpreferred_steps;
  Vec q;  // indexed by offset
};

/// Builds the batch at the current parameters: recovers each step's noise,
/// evaluates w_i = exp(gamma^l r_ME) / pi(a | s) and the per-offset sums q.
ShapedBatch make_shaped_batch(const PolicyLearner& learner, std::span<const Segment> preferred,
                              std::span<const Segment> non_preferred, const RewardModel& reward);

/// r_ME(s, a_theta(s, eps)) = normalized r_hat + alpha * H(pi(. | s)).
double max_ent_reward(const PolicyLearner& learner, const ShapedStep& step,
                      const RewardModel& reward);

/// log((1/N) sum w_i), computed without overflow from log-weights.
double log_mean_exp(std::span<const double> log_weights);

/// Sum_l { mean_{D_p at l} gamma^l r_ME - log((1/N_l) sum_{D_np at l} w_i) }
/// with the weights re-evaluated at the current parameters. Throws when
/// both sides are empty.
double shaped_objective(const PolicyLearner& learner, const ShapedBatch& batch,
                        const RewardModel& reward);

/// Sum_l { mean_{D_p at l} gamma^l r_ME - sum_{D_np at l} (w_i / q_l) gamma^l r_ME }
/// with the batch's weights frozen. Its gradient is shaped_gradient().
double shaped_surrogate(const PolicyLearner& learner, const ShapedBatch& batch,
                        const RewardModel& reward);

/// dL/dtheta = E_{D_p} sum_l d(gamma^l r_ME)/dtheta
///           - E_{D_np} (1/q) sum_l w_i d(gamma^l r_ME)/dtheta, weights fixed.
Vec shaped_gradient(const PolicyLearner& learner, const ShapedBatch& batch,
                    const RewardModel& reward);

/// Plain gradient ascent along shaped_gradient(). Throws NonFiniteError
/// (learner untouched) on a non-finite gradient.
PolicyLearner policy_gradient_step(const PolicyLearner& learner, const ShapedBatch& batch,
                                   const RewardModel& reward, double learning_rate);

// ---------------------------------------------------------------------------
// Rollouts.

struct RolloutOptions {
  std::size_t workers = 6;
  std::int64_t first_episode_id = 0;
  std::size_t max_steps = 0;  // 0 = the environment horizon
};

/// Runs n_episodes full episodes of the stochastic policy. Episode e uses
/// reset seed derive_seed(seed, "env", id) and action noise from
/// derive_seed(seed, "actor", id), so results do not depend on the worker
/// count. Workers share read-only snapshots and hand finished episodes to
/// the caller through a queue; the result is ordered by episode id.
std::vector<Trajectory> rollout(const PolicyLearner& learner, const Environment& env,
                                std::size_t n_episodes, std::uint64_t seed,
                                const RolloutOptions& options = {});

/// Mean true return of deterministic mean-action episodes.
double evaluate_policy(const PolicyLearner& learner, const Environment& env,
                       std::size_t n_episodes, std::uint64_t seed);

/// Mean true return of uniformly random actions, the untrained baseline.
double evaluate_random_policy(const Environment& env, std::size_t n_episodes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// One learner update.

struct UpdateOptions {
  std::size_t actor_epochs = 4;
  std::size_t critic_epochs = 8;
  std::size_t minibatch_size = 64;
  double gae_lambda = 0.95;
  bool normalize_advantages = false;
  double shaping_weight = 0.1;
  std::size_t shaped_segments = 16;  // per side, drawn from D_p / D_np
};

struct UpdateStats {
  double actor_critic_objective = 0.0;
  double shaped_objective = 0.0;
  double critic_loss = 0.0;
};

/// Critic regression on soft targets, then the entropy-augmented
/// actor-critic ascent on the rollout steps plus `shaping_weight` times the
/// preference-shaped ascent when `shaped` is non-null.
UpdateStats update_policy(PolicyLearner& learner, std::vector<LearnerStep> steps,
                          const ShapedBatch* shaped, const RewardModel* reward,
                          const UpdateOptions& options, std::uint64_t seed);

}  // namespace prefrl
