#include "prefrl/trajectory.hpp"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "prefrl/error.hpp"

namespace prefrl {

using nlohmann::json;

double Trajectory::true_return() const {
  double total = 0.0;
  for (const auto& step : steps) total += step.true_reward;
  return total;
}

void append_trajectory_dump(const std::filesystem::path& path,
                            const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open trajectory dump " + path.string());
  for (const auto& trajectory : trajectories) {
    for (std::size_t t = 0; t < trajectory.steps.size(); ++t) {
      const auto& step = trajectory.steps[t];
      json row = {{"episode_id", trajectory.episode_id},
                  {"t", t},
                  {"state", step.state},
                  {"action", step.action},
                  {"true_reward", step.true_reward}};
      out << row.dump() << '\n';
    }
  }
}

std::vector<Trajectory> read_trajectory_dump(const std::filesystem::path& path,
                                             const std::string& env_name) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trajectory dump " + path.string());
  std::map<std::int64_t, Trajectory> episodes;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_number) + ": " + e.what());
    }
    const auto id = row.at("episode_id").get<std::int64_t>();
    const auto t = row.at("t").get<std::size_t>();
    auto& trajectory = episodes[id];
    trajectory.episode_id = id;
    trajectory.env_name = env_name;
    // An episode written twice (an interrupted checkpoint) restarts at t = 0; the later copy wins.
    if (t == 0) trajectory.steps.clear();
    if (t != trajectory.steps.size())
      throw Error(path.string() + ":" + std::to_string(line_number) + ": episode " +
                  std::to_string(id) + " step " + std::to_string(t) + " out of order");
    Transition step;
    step.state = row.at("state").get<Vec>();
    step.action = row.at("action").get<Vec>();
    step.true_reward = row.at("true_reward").get<double>();
    trajectory.steps.push_back(std::move(step));
  }
  std::vector<Trajectory> result;
  result.reserve(episodes.size());
  for (auto& [id, trajectory] : episodes) {
    for (std::size_t t = 0; t + 1 < trajectory.steps.size(); ++t)
      trajectory.steps[t].next_state = trajectory.steps[t + 1].state;
    if (!trajectory.steps.empty()) trajectory.steps.back().done = true;
    result.push_back(std::move(trajectory));
  }
  return result;
}

}  // namespace prefrl
