#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prefrl/env.hpp"

namespace prefrl {

struct Transition {
  Vec state;
  Vec action;  // as executed, inside the action box
  Vec pre_squash;  // policy pre-squash sample; not part of the dump
  double log_prob = 0.0;
  double true_reward = 0.0;  // evaluation only
  Vec next_state;
  bool done = false;
};

struct Trajectory {
  std::int64_t episode_id = 0;
  std::string env_name;
  std::uint64_t seed = 0;
  std::vector<Transition> steps;

  [[nodiscard]] double true_return() const;
};

/// Trajectory dump: one JSON object per line and per step,
///   {"episode_id":3,"t":0,"state":[..],"action":[..],"true_reward":-1.2}
/// Doubles are written with round-trip precision.
void append_trajectory_dump(const std::filesystem::path& path,
                            const std::vector<Trajectory>& trajectories);

/// Reads a dump back. log_prob is not part of the dump and is left at 0;
/// next_state is rebuilt from the following record (or left empty on the
/// final step).
std::vector<Trajectory> read_trajectory_dump(const std::filesystem::path& path,
                                             const std::string& env_name);

}  // namespace prefrl
