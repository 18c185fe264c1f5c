#include "prefrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "prefrl/error.hpp"
#include "prefrl/rng.hpp"

namespace prefrl {

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(theta + std::numbers::pi, two_pi);
  if (wrapped < 0.0) wrapped += two_pi;
  wrapped -= std::numbers::pi;
  // fmod maps +pi onto -pi; the interval is half-open on the left.
  if (wrapped <= -std::numbers::pi) wrapped += two_pi;
  return wrapped;
}

Environment::Environment(EnvKind kind, std::string name, EnvSpec spec)
    : kind_(kind), name_(std::move(name)), spec_(std::move(spec)) {}

Environment Environment::point_goal() {
  EnvSpec spec;
  spec.state_dim = 2;
  spec.action_dim = 2;
  spec.action_low = {-1.0, -1.0};
  spec.action_high = {1.0, 1.0};
  spec.dt = 0.1;
  spec.horizon = 100;
  spec.gamma = 0.99;
  return Environment(EnvKind::point_goal, "pointgoal", std::move(spec));
}

Environment Environment::pendulum() {
  EnvSpec spec;
  spec.state_dim = 2;
  spec.action_dim = 1;
  spec.action_low = {-2.0};
  spec.action_high = {2.0};
  spec.dt = 0.05;
  spec.horizon = 200;
  spec.gamma = 0.99;
  return Environment(EnvKind::pendulum, "pendulum", std::move(spec));
}

Environment Environment::from_name(std::string_view name) {
  if (name == "pointgoal") return point_goal();
  if (name == "pendulum") return pendulum();
  throw ConfigError("unknown environment '" + std::string(name) +
                    "' (expected pointgoal or pendulum)");
}

Vec Environment::reset(std::uint64_t seed) const {
  Rng rng(mix64(seed));
  switch (kind_) {
    case EnvKind::point_goal: {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      double x = u(rng);
      double y = u(rng);
      return {x, y};
    }
    case EnvKind::pendulum: {
      std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
      std::uniform_real_distribution<double> speed(-1.0, 1.0);
      double theta = wrap_angle(angle(rng));
      double theta_dot = speed(rng);
      return {theta, theta_dot};
    }
  }
  return {};
}

Vec Environment::clip_action(std::span<const double> action) const {
  require(action.size() == spec_.action_dim,
          "action has " + std::to_string(action.size()) + " components, expected " +
              std::to_string(spec_.action_dim));
  Vec clipped(action.begin(), action.end());
  for (std::size_t i = 0; i < clipped.size(); ++i)
    clipped[i] = std::clamp(clipped[i], spec_.action_low[i], spec_.action_high[i]);
  return clipped;
}

bool Environment::state_in_bounds(std::span<const double> state) const {
  if (state.size() != spec_.state_dim) return false;
  for (double v : state)
    if (!std::isfinite(v)) return false;
  switch (kind_) {
    case EnvKind::point_goal:
      return std::abs(state[0]) <= kPositionLimit && std::abs(state[1]) <= kPositionLimit;
    case EnvKind::pendulum:
      return state[0] > -std::numbers::pi && state[0] <= std::numbers::pi &&
             std::abs(state[1]) <= kMaxSpeed;
  }
  return false;
}

StepResult Environment::step(std::span<const double> state, std::span<const double> action,
                             std::size_t step_index) const {
  require(state.size() == spec_.state_dim,
          "state has " + std::to_string(state.size()) + " components, expected " +
              std::to_string(spec_.state_dim));
  const Vec a = clip_action(action);

  StepResult result;
  result.true_reward = true_reward(state, a);
  result.done = step_index + 1 >= spec_.horizon;

  switch (kind_) {
    case EnvKind::point_goal: {
      // Velocity command: x' = x + dt * a.
      result.next_state = {
          std::clamp(state[0] + spec_.dt * a[0], -kPositionLimit, kPositionLimit),
          std::clamp(state[1] + spec_.dt * a[1], -kPositionLimit, kPositionLimit)};
      break;
    }
    case EnvKind::pendulum: {
      const double theta = state[0];
      const double theta_dot = state[1];
      const double u = a[0];
      const double accel = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta) +
                           3.0 * u / (kMass * kLength * kLength);
      const double new_theta_dot =
          std::clamp(theta_dot + accel * spec_.dt, -kMaxSpeed, kMaxSpeed);
      result.next_state = {wrap_angle(theta + new_theta_dot * spec_.dt), new_theta_dot};
      break;
    }
  }
  return result;
}

double Environment::true_reward(std::span<const double> state,
                                std::span<const double> action) const {
  const Vec a = clip_action(action);
  switch (kind_) {
    case EnvKind::point_goal: {
      const double dx = state[0] - kGoalX;
      const double dy = state[1] - kGoalY;
      const double effort = a[0] * a[0] + a[1] * a[1];
      return -std::hypot(dx, dy) - 0.01 * effort;
    }
    case EnvKind::pendulum: {
      const double theta = wrap_angle(state[0]);
      const double theta_dot = state[1];
      const double u = a[0];
      return -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    }
  }
  return 0.0;
}

}  // namespace prefrl
