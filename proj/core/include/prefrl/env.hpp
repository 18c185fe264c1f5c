#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prefrl {

using Vec = std::vector<double>;

struct EnvSpec {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  Vec action_low;
  Vec action_high;
  double dt = 0.0;
  std::size_t horizon = 0;
  double gamma = 0.99;
};

struct StepResult {
  Vec next_state;
  double true_reward = 0.0;  // hidden from the learner
  bool done = false;
};

enum class EnvKind { point_goal, pendulum };

/// Analytic continuous-control task with a hidden reward. Instances are
/// immutable; every operation is a pure function of its arguments, so one
/// Environment may be shared by any number of rollout threads.
class Environment {
public:
  static Environment point_goal();
  static Environment pendulum();
  /// "pointgoal" or "pendulum"; throws ConfigError otherwise.
  static Environment from_name(std::string_view name);

  [[nodiscard]] EnvKind kind() const { return kind_; }
  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] const EnvSpec& spec() const { return spec_; }

  /// Sample from the initial-state distribution; same seed, same state.
  [[nodiscard]] Vec reset(std::uint64_t seed) const;

  /// Deterministic transition. `step_index` is the 0-based index of this
  /// step within its episode and only drives `done`.
  [[nodiscard]] StepResult step(std::span<const double> state, std::span<const double> action,
                                std::size_t step_index = 0) const;

  /// Hidden reward of taking `action` in `state`. Only the synthetic oracle
  /// and evaluation code may call this.
  [[nodiscard]] double true_reward(std::span<const double> state,
                                   std::span<const double> action) const;

  [[nodiscard]] Vec clip_action(std::span<const double> action) const;
  [[nodiscard]] bool state_in_bounds(std::span<const double> state) const;

  // PointGoal constants.
  static constexpr double kGoalX = 2.0;
  static constexpr double kGoalY = 2.0;
  static constexpr double kPositionLimit = 5.0;
  // Pendulum constants.
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxSpeed = 8.0;

private:
  Environment(EnvKind kind, std::string name, EnvSpec spec);

  EnvKind kind_;
  std::string name_;
  EnvSpec spec_;
};

/// Wrap an angle to (-pi, pi].
double wrap_angle(double theta);

}  // namespace prefrl
