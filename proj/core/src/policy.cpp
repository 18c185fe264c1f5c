#include "prefrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "prefrl/error.hpp"

namespace prefrl {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
constexpr double kSquashLimit = 1.0 - 1e-9;

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// ln(1 - tanh(u)^2), stable for large |u|.
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

double half_width(const PolicyLearner& l, std::size_t j) {
  return 0.5 * (l.action_high[j] - l.action_low[j]);
}

double center(const PolicyLearner& l, std::size_t j) {
  return 0.5 * (l.action_high[j] + l.action_low[j]);
}

GaussianHead head_from_raw(const Vec& raw, std::size_t action_dim) {
  GaussianHead head;
  head.mean.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(action_dim));
  head.log_std.resize(action_dim);
  head.log_std_clamped.resize(action_dim);
  for (std::size_t j = 0; j < action_dim; ++j) {
    const double raw_ls = raw[action_dim + j];
    head.log_std[j] = std::clamp(raw_ls, kLogStdMin, kLogStdMax);
    head.log_std_clamped[j] = raw_ls < kLogStdMin || raw_ls > kLogStdMax;
  }
  return head;
}

// log pi for a pre-squash value u under the head.
double log_prob_from_pre_squash(const PolicyLearner& l, const GaussianHead& head,
                                std::span<const double> u) {
  double total = 0.0;
  for (std::size_t j = 0; j < head.mean.size(); ++j) {
    const double sigma = std::exp(head.log_std[j]);
    const double eps = (u[j] - head.mean[j]) / sigma;
    total += -0.5 * eps * eps - head.log_std[j] - kHalfLogTwoPi - std::log(half_width(l, j)) -
             log_one_minus_tanh_sq(u[j]);
  }
  return total;
}

Vec pre_squash_of(const PolicyLearner& l, std::span<const double> action) {
  Vec u(action.size());
  for (std::size_t j = 0; j < action.size(); ++j) {
    const double unit = std::clamp((action[j] - center(l, j)) / half_width(l, j), -kSquashLimit,
                                   kSquashLimit);
    u[j] = std::atanh(unit);
  }
  return u;
}

double discount_pow(double gamma, std::size_t l) {
  return std::pow(gamma, static_cast<double>(l));
}

// Reparameterized evaluation of one shaped step at the current parameters.
struct ReparamEval {
  ForwardTrace trace;
  GaussianHead head;
  Vec u;
  Vec action;
  double r_hat_normalized = 0.0;
  Vec reward_action_grad;  // d normalized r_hat / d action
  double entropy = 0.0;
  double max_ent_reward = 0.0;
  double log_prob = 0.0;
};

ReparamEval reparam_eval(const PolicyLearner& l, const ShapedStep& step, const RewardModel& rm,
                         bool need_action_grad) {
  ReparamEval e;
  e.trace = forward_trace(l.actor, step.state);
  e.head = head_from_raw(e.trace.output, l.action_dim());
  const std::size_t d = l.action_dim();
  e.u.resize(d);
  e.action.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    e.u[j] = e.head.mean[j] + std::exp(e.head.log_std[j]) * step.noise[j];
    e.action[j] = center(l, j) + half_width(l, j) * std::tanh(e.u[j]);
  }
  double r_hat = 0.0;
  if (need_action_grad) {
    auto [value, grad] = predict_with_action_grad(rm, step.state, e.action);
    r_hat = value;
    e.reward_action_grad = std::move(grad);
    for (double& g : e.reward_action_grad) g *= rm.normalization.scale();
  } else {
    r_hat = predict(rm, step.state, e.action);
  }
  e.r_hat_normalized = rm.normalization.normalize(r_hat);
  e.entropy = gaussian_entropy(e.head.log_std);
  e.max_ent_reward = e.r_hat_normalized + l.alpha * e.entropy;
  e.log_prob = log_prob_from_pre_squash(l, e.head, e.u);
  return e;
}

// Adds coefficient * d r_ME / d actor-params into grad.
void accumulate_max_ent_gradient(const PolicyLearner& l, const ReparamEval& e, double coefficient,
                                 Vec& grad) {
  const std::size_t d = l.action_dim();
  Vec upstream(2 * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double t = std::tanh(e.u[j]);
    const double da_du = half_width(l, j) * (1.0 - t * t);
    const double sigma = std::exp(e.head.log_std[j]);
    const double du_dlogstd = sigma * (e.u[j] - e.head.mean[j]) / sigma;  // sigma * eps
    upstream[j] = coefficient * e.reward_action_grad[j] * da_du;
    if (!e.head.log_std_clamped[j])
      upstream[d + j] = coefficient * (e.reward_action_grad[j] * da_du * du_dlogstd + l.alpha);
  }
  accumulate_gradient(l.actor, e.trace, upstream, grad);
}

struct OffsetGroups {
  std::map<std::size_t, std::vector<std::size_t>> preferred;
  std::map<std::size_t, std::vector<std::size_t>> nonpreferred;
};

OffsetGroups group_by_offset(const ShapedBatch& batch) {
  OffsetGroups groups;
  for (std::size_t i = 0; i < batch.preferred_steps.size(); ++i)
    groups.preferred[batch.preferred_steps[i].offset].push_back(i);
  for (std::size_t i = 0; i < batch.nonpreferred_steps.size(); ++i)
    groups.nonpreferred[batch.nonpreferred_steps[i].offset].push_back(i);
  return groups;
}

double batch_q(const ShapedBatch& batch, std::size_t offset) {
  require(offset < batch.q.size(), "shaped batch is missing q for offset " + std::to_string(offset));
  return batch.q[offset];
}

}  // namespace

PolicyLearner make_policy_learner(const EnvSpec& spec, std::uint64_t seed,
                                  const PolicyOptions& options) {
  require(options.alpha >= 0.0, "alpha must be non-negative");
  require(options.gamma > 0.0 && options.gamma <= 1.0, "gamma must lie in (0, 1]");
  PolicyLearner learner;
  std::vector<std::size_t> actor_sizes{spec.state_dim};
  actor_sizes.insert(actor_sizes.end(), options.actor_hidden.begin(), options.actor_hidden.end());
  actor_sizes.push_back(2 * spec.action_dim);
  learner.actor = make_mlp(actor_sizes, OutputTransform::identity, derive_seed(seed, "actor-init"));
  // Small initial means and a common initial log-sigma.
  const std::size_t last_in = actor_sizes[actor_sizes.size() - 2];
  const std::size_t out = 2 * spec.action_dim;
  const std::size_t last_offset = learner.actor.params.size() - (last_in + 1) * out;
  for (std::size_t i = 0; i < last_in * out; ++i) learner.actor.params[last_offset + i] *= 0.01;
  for (std::size_t j = 0; j < spec.action_dim; ++j)
    learner.actor.params[last_offset + last_in * out + spec.action_dim + j] = options.initial_log_std;

  std::vector<std::size_t> critic_sizes{spec.state_dim};
  critic_sizes.insert(critic_sizes.end(), options.critic_hidden.begin(), options.critic_hidden.end());
  critic_sizes.push_back(1);
  learner.critic = make_mlp(critic_sizes, OutputTransform::identity, derive_seed(seed, "critic-init"));
  learner.alpha = options.alpha;
  learner.gamma = options.gamma;
  learner.mean_penalty = options.mean_penalty;
  learner.clip_ratio = options.clip_ratio;
  learner.action_low = spec.action_low;
  learner.action_high = spec.action_high;
  learner.actor_optimizer = options.actor_optimizer;
  learner.critic_optimizer = options.critic_optimizer;
  return learner;
}

GaussianHead policy_head(const PolicyLearner& learner, std::span<const double> state) {
  return head_from_raw(forward(learner.actor, state), learner.action_dim());
}

double gaussian_entropy(std::span<const double> log_std) {
  double total = 0.0;
  for (double ls : log_std) total += kHalfLogTwoPi + 0.5 + ls;
  return total;
}

ActionSample sample_action(const PolicyLearner& learner, std::span<const double> state, Rng& rng) {
  const GaussianHead head = policy_head(learner, state);
  const std::size_t d = learner.action_dim();
  std::normal_distribution<double> normal(0.0, 1.0);
  ActionSample sample;
  sample.noise.resize(d);
  sample.pre_squash.resize(d);
  sample.action.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    sample.noise[j] = normal(rng);
    sample.pre_squash[j] = head.mean[j] + std::exp(head.log_std[j]) * sample.noise[j];
    const double a = center(learner, j) + half_width(learner, j) * std::tanh(sample.pre_squash[j]);
    sample.action[j] = std::clamp(a, learner.action_low[j], learner.action_high[j]);
  }
  sample.log_prob = log_prob_from_pre_squash(learner, head, sample.pre_squash);
  sample.entropy = gaussian_entropy(head.log_std);
  return sample;
}

ActionSample sample_action(const PolicyLearner& learner, std::span<const double> state,
                           std::uint64_t seed) {
  Rng rng(mix64(seed));
  return sample_action(learner, state, rng);
}

Vec mean_action(const PolicyLearner& learner, std::span<const double> state) {
  const GaussianHead head = policy_head(learner, state);
  Vec action(learner.action_dim());
  for (std::size_t j = 0; j < action.size(); ++j)
    action[j] = center(learner, j) + half_width(learner, j) * std::tanh(head.mean[j]);
  return action;
}

double log_prob(const PolicyLearner& learner, std::span<const double> state,
                std::span<const double> action) {
  require(action.size() == learner.action_dim(), "action dimension mismatch");
  const GaussianHead head = policy_head(learner, state);
  return log_prob_from_pre_squash(learner, head, pre_squash_of(learner, action));
}

std::vector<LearnerStep> make_learner_steps(const std::vector<Trajectory>& trajectories,
                                            const StepRewardFn& reward) {
  std::vector<LearnerStep> steps;
  for (std::size_t e = 0; e < trajectories.size(); ++e) {
    const auto& trajectory = trajectories[e];
    for (std::size_t t = 0; t < trajectory.steps.size(); ++t) {
      const Transition& tr = trajectory.steps[t];
      LearnerStep step;
      step.state = tr.state;
      step.action = tr.action;
      step.next_state = tr.next_state;
      step.reward = reward(tr.state, tr.action);
      step.pre_squash = tr.pre_squash;
      step.log_prob = tr.log_prob;
      step.done = tr.done || t + 1 == trajectory.steps.size();
      step.episode = e;
      steps.push_back(std::move(step));
    }
  }
  return steps;
}

Vec soft_backup_targets(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                        bool entropy_term) {
  Vec targets(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const LearnerStep& s = steps[i];
    double next_value = 0.0;
    if (!s.done) {
      next_value = forward(learner.critic, s.next_state)[0];
      if (entropy_term) next_value += learner.alpha * gaussian_entropy(policy_head(learner, s.next_state).log_std);
    }
    targets[i] = s.reward + learner.gamma * next_value;
  }
  return targets;
}

double critic_loss(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                   std::span<const double> targets, Vec* grad) {
  require(steps.size() == targets.size(), "one target per step");
  require(!steps.empty(), "critic loss over an empty batch");
  if (grad) grad->assign(learner.critic.params.size(), 0.0);
  const double n = static_cast<double>(steps.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const ForwardTrace trace = forward_trace(learner.critic, steps[i].state);
    const double diff = trace.output[0] - targets[i];
    loss += diff * diff / n;
    if (grad) {
      const double upstream[1] = {2.0 * diff / n};
      accumulate_gradient(learner.critic, trace, upstream, *grad);
    }
  }
  return loss;
}

double critic_step(PolicyLearner& learner, std::span<const LearnerStep> steps,
                   std::span<const double> targets) {
  Vec grad;
  const double loss = critic_loss(learner, steps, targets, &grad);
  learner.critic_optimizer.apply(learner.critic, grad, Direction::descend);
  return loss;
}

Vec soft_advantages(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                    std::span<const double> targets, double lambda) {
  require(steps.size() == targets.size(), "one target per step");
  Vec advantages(steps.size(), 0.0);
  double running = 0.0;
  for (std::size_t i = steps.size(); i-- > 0;) {
    const bool boundary = steps[i].done || i + 1 == steps.size() ||
                          steps[i + 1].episode != steps[i].episode;
    if (boundary) running = 0.0;
    const double delta = targets[i] - forward(learner.critic, steps[i].state)[0];
    running = delta + learner.gamma * lambda * running;
    advantages[i] = running;
  }
  return advantages;
}

double actor_critic_objective(const PolicyLearner& learner, std::span<const LearnerStep> steps,
                              std::span<const double> advantages, Vec* grad) {
  require(steps.size() == advantages.size(), "one advantage per step");
  require(!steps.empty(), "actor objective over an empty batch");
  const std::size_t d = learner.action_dim();
  const double n = static_cast<double>(steps.size());
  if (grad) grad->assign(learner.actor.params.size(), 0.0);
  double objective = 0.0;
  Vec upstream(2 * d);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const LearnerStep& s = steps[i];
    const ForwardTrace trace = forward_trace(learner.actor, s.state);
    const GaussianHead head = head_from_raw(trace.output, d);
    const Vec u = s.pre_squash.empty() ? pre_squash_of(learner, s.action) : s.pre_squash;
    const double lp = log_prob_from_pre_squash(learner, head, u);
    double mean_sq = 0.0;
    for (double m : head.mean) mean_sq += m * m;
    // d(policy term)/d(log pi): A for the plain surrogate, A * ratio inside
    // the clip window and 0 outside it.
    double policy_term = advantages[i] * lp;
    double lp_coefficient = advantages[i];
    if (learner.clip_ratio > 0.0) {
      const double ratio = std::exp(std::min(lp - s.log_prob, 20.0));
      const double clipped = std::clamp(ratio, 1.0 - learner.clip_ratio, 1.0 + learner.clip_ratio);
      const double unclipped_term = ratio * advantages[i];
      const double clipped_term = clipped * advantages[i];
      policy_term = std::min(unclipped_term, clipped_term);
      lp_coefficient = unclipped_term <= clipped_term ? unclipped_term : 0.0;
    }
    objective += (policy_term + learner.alpha * gaussian_entropy(head.log_std) -
                  learner.mean_penalty * mean_sq) /
                 n;
    if (!grad) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const double sigma = std::exp(head.log_std[j]);
      const double eps = (u[j] - head.mean[j]) / sigma;
      upstream[j] = (lp_coefficient * eps / sigma - 2.0 * learner.mean_penalty * head.mean[j]) / n;
      upstream[d + j] = head.log_std_clamped[j]
                            ? 0.0
                            : (lp_coefficient * (eps * eps - 1.0) + learner.alpha) / n;
    }
    accumulate_gradient(learner.actor, trace, upstream, *grad);
  }
  return objective;
}

// ---------------------------------------------------------------------------

double log_mean_exp(std::span<const double> log_weights) {
  require(!log_weights.empty(), "log_mean_exp of an empty set");
  const double peak = *std::max_element(log_weights.begin(), log_weights.end());
  double total = 0.0;
  for (double lw : log_weights) total += std::exp(lw - peak);
  return peak + std::log(total / static_cast<double>(log_weights.size()));
}

double max_ent_reward(const PolicyLearner& learner, const ShapedStep& step,
                      const RewardModel& reward) {
  return reparam_eval(learner, step, reward, false).max_ent_reward;
}

ShapedBatch make_shaped_batch(const PolicyLearner& learner, std::span<const Segment> preferred,
                              std::span<const Segment> non_preferred, const RewardModel& reward) {
  ShapedBatch batch;
  std::size_t max_offset = 0;
  auto add_steps = [&](std::span<const Segment> segments, std::vector<ShapedStep>& out) {
    for (const auto& segment : segments) {
      require(segment.action_dim == learner.action_dim() && segment.state_dim == learner.state_dim(),
              "segment dimensions do not match the policy");
      for (std::size_t l = 0; l < segment.length(); ++l) {
        ShapedStep step;
        step.state.assign(segment.state(l).begin(), segment.state(l).end());
        step.action.assign(segment.action(l).begin(), segment.action(l).end());
        step.offset = l;
        const GaussianHead head = policy_head(learner, step.state);
        const Vec u = pre_squash_of(learner, step.action);
        step.noise.resize(u.size());
        for (std::size_t j = 0; j < u.size(); ++j)
          step.noise[j] = (u[j] - head.mean[j]) / std::exp(head.log_std[j]);
        max_offset = std::max(max_offset, l + 1);
        out.push_back(std::move(step));
      }
    }
  };
  add_steps(preferred, batch.preferred_steps);
  add_steps(non_preferred, batch.nonpreferred_steps);

  // log w_i = gamma^l r_ME - log pi(a | s), shifted by the per-offset peak.
  Vec log_w(batch.nonpreferred_steps.size());
  Vec peak(max_offset, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < batch.nonpreferred_steps.size(); ++i) {
    const ShapedStep& step = batch.nonpreferred_steps[i];
    const ReparamEval e = reparam_eval(learner, step, reward, false);
    log_w[i] = discount_pow(learner.gamma, step.offset) * e.max_ent_reward - e.log_prob;
    peak[step.offset] = std::max(peak[step.offset], log_w[i]);
  }
  batch.q.assign(max_offset, 0.0);
  for (std::size_t i = 0; i < batch.nonpreferred_steps.size(); ++i) {
    ShapedStep& step = batch.nonpreferred_steps[i];
    step.weight = std::exp(log_w[i] - peak[step.offset]);
    batch.q[step.offset] += step.weight;
  }
  return batch;
}

double shaped_objective(const PolicyLearner& learner, const ShapedBatch& batch,
                        const RewardModel& reward) {
  if (batch.preferred_steps.empty() && batch.nonpreferred_steps.empty())
    throw ContractViolation("shaped objective needs preferred or non-preferred steps");
  const OffsetGroups groups = group_by_offset(batch);
  double objective = 0.0;
  for (const auto& [offset, indices] : groups.preferred) {
    double mean = 0.0;
    for (std::size_t i : indices)
      mean += max_ent_reward(learner, batch.preferred_steps[i], reward);
    objective += discount_pow(learner.gamma, offset) * mean / static_cast<double>(indices.size());
  }
  for (const auto& [offset, indices] : groups.nonpreferred) {
    Vec log_w;
    log_w.reserve(indices.size());
    for (std::size_t i : indices) {
      const ReparamEval e = reparam_eval(learner, batch.nonpreferred_steps[i], reward, false);
      log_w.push_back(discount_pow(learner.gamma, offset) * e.max_ent_reward - e.log_prob);
    }
    objective -= log_mean_exp(log_w);
  }
  return objective;
}

double shaped_surrogate(const PolicyLearner& learner, const ShapedBatch& batch,
                        const RewardModel& reward) {
  if (batch.preferred_steps.empty() && batch.nonpreferred_steps.empty())
    throw ContractViolation("shaped objective needs preferred or non-preferred steps");
  const OffsetGroups groups = group_by_offset(batch);
  double value = 0.0;
  for (const auto& [offset, indices] : groups.preferred) {
    const double coefficient = discount_pow(learner.gamma, offset) / static_cast<double>(indices.size());
    for (std::size_t i : indices)
      value += coefficient * max_ent_reward(learner, batch.preferred_steps[i], reward);
  }
  for (const auto& [offset, indices] : groups.nonpreferred) {
    const double q = batch_q(batch, offset);
    for (std::size_t i : indices) {
      const ShapedStep& step = batch.nonpreferred_steps[i];
      value -= discount_pow(learner.gamma, offset) * step.weight / q *
               max_ent_reward(learner, step, reward);
    }
  }
  return value;
}

Vec shaped_gradient(const PolicyLearner& learner, const ShapedBatch& batch,
                    const RewardModel& reward) {
  if (batch.preferred_steps.empty() && batch.nonpreferred_steps.empty())
    throw ContractViolation("shaped gradient needs preferred or non-preferred steps");
  const OffsetGroups groups = group_by_offset(batch);
  Vec grad(learner.actor.params.size(), 0.0);
  for (const auto& [offset, indices] : groups.preferred) {
    const double coefficient = discount_pow(learner.gamma, offset) / static_cast<double>(indices.size());
    for (std::size_t i : indices)
      accumulate_max_ent_gradient(learner, reparam_eval(learner, batch.preferred_steps[i], reward, true),
                                  coefficient, grad);
  }
  for (const auto& [offset, indices] : groups.nonpreferred) {
    const double q = batch_q(batch, offset);
    for (std::size_t i : indices) {
      const ShapedStep& step = batch.nonpreferred_steps[i];
      const double coefficient = -discount_pow(learner.gamma, offset) * step.weight / q;
      accumulate_max_ent_gradient(learner, reparam_eval(learner, step, reward, true), coefficient,
                                  grad);
    }
  }
  return grad;
}

PolicyLearner policy_gradient_step(const PolicyLearner& learner, const ShapedBatch& batch,
                                   const RewardModel& reward, double learning_rate) {
  const Vec grad = shaped_gradient(learner, batch, reward);
  PolicyLearner updated = learner;
  sgd_step_inplace(updated.actor, grad, learning_rate, Direction::ascend);
  return updated;
}

// ---------------------------------------------------------------------------

namespace {

Trajectory run_episode(const PolicyLearner& learner, const Environment& env, std::int64_t id,
                       std::uint64_t seed, std::size_t max_steps) {
  Trajectory trajectory;
  trajectory.episode_id = id;
  trajectory.env_name = env.name();
  trajectory.seed = derive_seed(seed, "env", static_cast<std::uint64_t>(id));
  Rng actor_rng(derive_seed(seed, "actor", static_cast<std::uint64_t>(id)));
  Vec state = env.reset(trajectory.seed);
  const std::size_t horizon =
      max_steps == 0 ? env.spec().horizon : std::min(max_steps, env.spec().horizon);
  trajectory.steps.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    ActionSample sample = sample_action(learner, state, actor_rng);
    StepResult result = env.step(state, sample.action, t);
    Transition tr;
    tr.state = state;
    tr.action = std::move(sample.action);
    tr.log_prob = sample.log_prob;
    tr.pre_squash = std::move(sample.pre_squash);
    tr.true_reward = result.true_reward;
    tr.next_state = result.next_state;
    tr.done = result.done;
    state = std::move(result.next_state);
    trajectory.steps.push_back(std::move(tr));
    if (trajectory.steps.back().done) break;
  }
  return trajectory;
}

}  // namespace

std::vector<Trajectory> rollout(const PolicyLearner& learner, const Environment& env,
                                std::size_t n_episodes, std::uint64_t seed,
                                const RolloutOptions& options) {
  require(n_episodes >= 1, "rollout needs at least one episode");
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, n_episodes);

  // Finished episodes are handed over through this queue exactly once.
  std::mutex queue_mutex;
  std::vector<Trajectory> queue;
  queue.reserve(n_episodes);

  auto work = [&](std::size_t worker) {
    const PolicyLearner snapshot = learner;
    for (std::size_t i = worker; i < n_episodes; i += workers) {
      Trajectory trajectory =
          run_episode(snapshot, env, options.first_episode_id + static_cast<std::int64_t>(i), seed,
                      options.max_steps);
      std::lock_guard lock(queue_mutex);
      queue.push_back(std::move(trajectory));
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
  }
  std::sort(queue.begin(), queue.end(),
            [](const Trajectory& a, const Trajectory& b) { return a.episode_id < b.episode_id; });
  return queue;
}

double evaluate_policy(const PolicyLearner& learner, const Environment& env,
                       std::size_t n_episodes, std::uint64_t seed) {
  require(n_episodes >= 1, "evaluation needs at least one episode");
  double total = 0.0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Vec state = env.reset(derive_seed(seed, "eval", e));
    for (std::size_t t = 0; t < env.spec().horizon; ++t) {
      StepResult result = env.step(state, mean_action(learner, state), t);
      total += result.true_reward;
      state = std::move(result.next_state);
      if (result.done) break;
    }
  }
  return total / static_cast<double>(n_episodes);
}

double evaluate_random_policy(const Environment& env, std::size_t n_episodes, std::uint64_t seed) {
  require(n_episodes >= 1, "evaluation needs at least one episode");
  const EnvSpec& spec = env.spec();
  double total = 0.0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Rng rng(derive_seed(seed, "random-actions", e));
    Vec state = env.reset(derive_seed(seed, "eval", e));
    Vec action(spec.action_dim);
    for (std::size_t t = 0; t < spec.horizon; ++t) {
      for (std::size_t j = 0; j < spec.action_dim; ++j)
        action[j] = std::uniform_real_distribution<double>(spec.action_low[j], spec.action_high[j])(rng);
      StepResult result = env.step(state, action, t);
      total += result.true_reward;
      state = std::move(result.next_state);
      if (result.done) break;
    }
  }
  return total / static_cast<double>(n_episodes);
}

// ---------------------------------------------------------------------------

UpdateStats update_policy(PolicyLearner& learner, std::vector<LearnerStep> steps,
                          const ShapedBatch* shaped, const RewardModel* reward,
                          const UpdateOptions& options, std::uint64_t seed) {
  require(!steps.empty(), "policy update needs rollout steps");
  UpdateStats stats;
  Rng rng(derive_seed(seed, "policy-update"));
  const std::size_t batch = std::max<std::size_t>(1, options.minibatch_size);
  std::vector<std::size_t> order(steps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  // Critic: fitted soft backups, targets refreshed every epoch.
  for (std::size_t epoch = 0; epoch < options.critic_epochs; ++epoch) {
    const Vec targets = soft_backup_targets(learner, steps);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      std::vector<LearnerStep> mb_steps;
      Vec mb_targets;
      for (std::size_t i = begin; i < end; ++i) {
        mb_steps.push_back(steps[order[i]]);
        mb_targets.push_back(targets[order[i]]);
      }
      critic_step(learner, mb_steps, mb_targets);
    }
  }
  const Vec targets = soft_backup_targets(learner, steps);
  stats.critic_loss = critic_loss(learner, steps, targets);

  Vec advantages = soft_advantages(learner, steps, targets, options.gae_lambda);
  if (options.normalize_advantages) {
    double mean = 0.0;
    for (double a : advantages) mean += a;
    mean /= static_cast<double>(advantages.size());
    double var = 0.0;
    for (double a : advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(advantages.size()));
    for (double& a : advantages) a = (a - mean) / std::max(sd, 1e-8);
  }

  Vec shaped_grad;
  if (shaped && reward && options.shaping_weight > 0.0 &&
      !(shaped->preferred_steps.empty() && shaped->nonpreferred_steps.empty())) {
    stats.shaped_objective = shaped_objective(learner, *shaped, *reward);
    shaped_grad = shaped_gradient(learner, *shaped, *reward);
    if (!all_finite(shaped_grad)) throw NonFiniteError("non-finite shaped gradient");
  }

  stats.actor_critic_objective = actor_critic_objective(learner, steps, advantages);
  for (std::size_t epoch = 0; epoch < options.actor_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      std::vector<LearnerStep> mb_steps;
      Vec mb_adv;
      for (std::size_t i = begin; i < end; ++i) {
        mb_steps.push_back(steps[order[i]]);
        mb_adv.push_back(advantages[order[i]]);
      }
      Vec grad;
      actor_critic_objective(learner, mb_steps, mb_adv, &grad);
      if (!shaped_grad.empty())
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += options.shaping_weight * shaped_grad[k];
      learner.actor_optimizer.apply(learner.actor, grad, Direction::ascend);
    }
  }
  return stats;
}

}  // namespace prefrl
