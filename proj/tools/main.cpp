#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "prefrl/config.hpp"
#include "prefrl/error.hpp"
#include "prefrl/orchestrator.hpp"

namespace {

using namespace prefrl;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string schedule;
  bool oracle = false;
  std::optional<std::size_t> episodes;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Root seed");
  cmd->add_option("--out", flags.out, "Output directory");
  cmd->add_option("--schedule", flags.schedule, "Query schedule name");
  cmd->add_flag("--oracle", flags.oracle, "Answer C1 queries with the synthetic oracle");
  cmd->add_option("--episodes", flags.episodes, "Iteration limit (episodes)");
}

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig config = flags.config_path.empty() ? RunConfig{} : load_config(flags.config_path);
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out.empty()) config.out_dir = flags.out;
  if (!flags.schedule.empty()) {
    auto schedule = find_schedule(flags.schedule);
    if (!schedule) throw ConfigError("config field 'schedule': unknown schedule name '" + flags.schedule + "'");
    config.schedule = *schedule;
  }
  if (flags.oracle) config.channel = ChannelKind::oracle;
  if (flags.episodes) config.iterations = *flags.episodes;
  validate(config);
  return config;
}

void print_summary(const RunState& state) {
  const auto report = human_saving_report(state);
  std::printf("episodes completed: %lld%s\n", static_cast<long long>(state.episode + 1),
              state.converged ? " (converged)" : "");
  if (!state.metrics.empty())
    std::printf("final eval return: %.4f\n", state.metrics.back().eval_return);
  std::printf("labels consumed: %zu (human/oracle %zu, fraction %.4f)\n", report.total_labels,
              report.human_labels, report.human_fraction);
  for (const auto& [source, fraction] : report.fraction)
    std::printf("  %-13s %zu (%.4f)\n", std::string(to_string(source)).c_str(),
                state.ledger.consumed_from(source), fraction);
  std::printf("human-175 baseline over the same episodes: %zu labels; ratio %.4f\n",
              report.baseline_labels, report.versus_baseline);
  if (state.handoff.handoff_episode >= 0)
    std::printf("discriminator handoff at episode %lld after %zu C1 batch(es)%s\n",
                static_cast<long long>(state.handoff.handoff_episode), state.handoff.c1_batches_at_handoff,
                state.handoff.handed_off ? "" : " (later revoked)");
}

int run_command(const CommonFlags& flags, bool resume, bool force_human, int port) {
  if (resume) {
    if (flags.out.empty()) throw ConfigError("--resume needs --out <dir>");
    Orchestrator orchestrator = Orchestrator::resume(flags.out, nullptr, flags.episodes);
    print_summary(orchestrator.run());
    return 0;
  }
  RunConfig config = resolve_config(flags);
  if (force_human) {
    config.channel = ChannelKind::human;
    if (port >= 0) config.gateway_port = port;
  }
  Orchestrator orchestrator(config);
  if (auto* gateway = orchestrator.gateway())
    std::printf("label gateway listening on http://%s:%d\n", config.gateway_host.c_str(), gateway->port());
  std::fflush(stdout);
  print_summary(orchestrator.run());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-based reinforcement learning with a discriminator-assisted labeler"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  bool resume = false;
  auto* run_cmd = app.add_subcommand("run", "Run the training loop");
  add_common(run_cmd, run_flags);
  run_cmd->add_flag("--resume", resume, "Continue from the checkpoint in --out");

  CommonFlags eval_flags;
  std::size_t eval_episodes = 10;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate the checkpointed policy in --out");
  eval_cmd->add_option("--out", eval_flags.out, "Run directory")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "Evaluation episodes");

  CommonFlags report_flags;
  auto* report_cmd = app.add_subcommand("report", "Summarize a run directory");
  report_cmd->add_option("--out", report_flags.out, "Run directory")->required();

  CommonFlags serve_flags;
  int port = -1;
  auto* serve_cmd = app.add_subcommand("serve-labels", "Run with the human channel served over HTTP");
  add_common(serve_cmd, serve_flags);
  serve_cmd->add_option("--port", port, "Gateway port (0 picks a free port)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run_cmd) return run_command(run_flags, resume, false, -1);
    if (*serve_cmd) return run_command(serve_flags, false, true, port);
    if (*eval_cmd) {
      const RunState state = load_run_state(eval_flags.out);
      std::printf("mean true return over %zu episodes: %.6f\n", eval_episodes, evaluate(state, eval_episodes));
      return 0;
    }
    if (*report_cmd) {
      print_summary(load_run_state(report_flags.out));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ChannelUnavailable& e) {
    std::cerr << "label channel unavailable: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
