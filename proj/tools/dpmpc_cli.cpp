// dpmpc: run swing-up episodes and robustness sweeps from an INI config.
//
//   dpmpc swingup    [--config F] [--robot R] [--out DIR] [--seed N] [--duration S]
//   dpmpc robustness [--config F] [--robot R] [--out DIR] [--seed N] [--duration S]
//
// Exit codes: 0 ok, 1 configuration or usage error, 2 swing-up failed.

#include "dpmpc/dpmpc.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

struct CommonArgs {
  std::string config;
  std::string robot;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  bool no_timing = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--robot", a.robot, "acrobot or pendubot (overrides [model] robot)");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--duration", a.duration, "episode length [s]");
  cmd->add_flag("--no-timing", a.no_timing, "omit wall-clock timings for reproducible output");
}

dpmpc::RunConfig resolve(const CommonArgs& a) {
  std::optional<dpmpc::Robot> robot;
  if (!a.robot.empty()) {
    try {
      robot = dpmpc::robot_from_string(a.robot);
    } catch (const std::exception& e) {
      throw dpmpc::ConfigError(e.what(), 0);
    }
  }
  dpmpc::RunConfig rc =
      a.config.empty() ? dpmpc::parse_config(std::string{}, robot) : dpmpc::load_config(a.config, robot);
  if (a.seed) rc.episode.seed = *a.seed;
  if (a.duration) {
    if (!(*a.duration > 0)) throw dpmpc::ConfigError("--duration must be positive", 0);
    rc.episode.duration = *a.duration;
  }
  if (a.no_timing) rc.episode.record_timing = false;
  return rc;
}

int run_swingup(const CommonArgs& a) {
  const dpmpc::RunConfig rc = resolve(a);
  const dpmpc::EpisodeReport rep = dpmpc::simulate_episode(rc.episode);

  const std::filesystem::path dir(a.out);
  std::ostringstream csv;
  dpmpc::write_episode_csv(csv, rep);
  dpmpc::write_file_atomic(dir / "episode.csv", csv.str());

  auto j = dpmpc::episode_json(rep);
  j["robot"] = std::string(dpmpc::to_string(rc.episode.plant.robot));
  j["seed"] = rc.episode.seed;
  dpmpc::write_file_atomic(dir / "report.json", j.dump(2) + "\n");
  dpmpc::write_file_atomic(dir / "config.ini", dpmpc::serialize_config(rc));

  std::cout << dpmpc::to_string(rc.episode.plant.robot) << ": score " << dpmpc::reported_score(rep.score) << ", uptime "
            << rep.uptime << " s, swing-up " << (rep.swingup ? "yes" : "no") << "\n";
  return rep.swingup ? 0 : 2;
}

int run_robustness(const CommonArgs& a) {
  dpmpc::RunConfig rc = resolve(a);
  if (rc.robustness_duration && !a.duration) rc.episode.duration = *rc.robustness_duration;
  const dpmpc::RobustnessReport rep = dpmpc::robustness_suite(rc.episode, rc.axes);

  const std::filesystem::path dir(a.out);
  std::ostringstream csv;
  dpmpc::write_robustness_csv(csv, rep);
  dpmpc::write_file_atomic(dir / "robustness.csv", csv.str());
  auto j = dpmpc::robustness_json(rep);
  j["robot"] = std::string(dpmpc::to_string(rc.episode.plant.robot));
  j["seed"] = rc.episode.seed;
  dpmpc::write_file_atomic(dir / "robustness.json", j.dump(2) + "\n");
  dpmpc::write_file_atomic(dir / "config.ini", dpmpc::serialize_config(rc));

  for (const auto& ax : rep.axes)
    std::cout << ax.name << ": " << ax.score << " (" << ax.runs.size() << " runs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear MPC swing-up for the Acrobot and Pendubot"};
  app.require_subcommand(1);
  CommonArgs swing_args, rob_args;
  auto* swing = app.add_subcommand("swingup", "simulate one swing-up episode");
  add_common(swing, swing_args);
  auto* rob = app.add_subcommand("robustness", "run the robustness sweeps");
  add_common(rob, rob_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*swing) return run_swingup(swing_args);
    return run_robustness(rob_args);
  } catch (const dpmpc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
