// Closed-loop simulation harness and benchmark scores.

#pragma once

#include "dpmpc/controller.hpp"
#include "dpmpc/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace dpmpc {

/// Torque pulse added on top of the commanded torque. joint < 0 means the
/// active joint of the robot.
struct Disturbance {
  double t = 0.0;
  int joint = -1;
  double torque = 0.0;
  double duration = 0.0;
};

/// Three alternating 5 N*m, 0.1 s pulses at t = 15, 30 and 45 s.
inline std::vector<Disturbance> default_disturbances() {
  return {{15.0, -1, 5.0, 0.1}, {30.0, -1, -5.0, 0.1}, {45.0, -1, 5.0, 0.1}};
}

struct EpisodeConfig {
  double duration = 60.0;
  double dt_plant = 1e-3;
  ModelParams plant;
  /// Model used by the controller; the plant when unset.
  std::optional<ModelParams> controller_model;
  ControllerOptions controller;
  State target = upright_state();
  State initial_state = hanging_state();
  std::vector<Disturbance> disturbances = default_disturbances();
  double velocity_noise_std = 0.0;
  double torque_noise_std = 0.0;
  double delay = 0.0;
  std::uint64_t seed = 0;
  /// Goal region: tip height above the pivot > fraction * (l1 + l2).
  double goal_height_fraction = 0.9;
  /// Minimum final hold in the goal region for a successful swing-up [s].
  double success_hold_time = 2.0;
  /// Record every k-th plant step in the trajectory.
  int record_decimation = 1;
  bool record_trajectory = true;
  /// Wall-clock solver timings in samples and telemetry; off gives
  /// byte-identical reruns.
  bool record_timing = true;

  void validate() const {
    if (!(duration > 0)) throw std::invalid_argument("duration must be positive");
    if (!(dt_plant > 0)) throw std::invalid_argument("dt_plant must be positive");
    if (delay < 0) throw std::invalid_argument("delay must be non-negative");
    if (velocity_noise_std < 0 || torque_noise_std < 0)
      throw std::invalid_argument("noise std must be non-negative");
    if (record_decimation < 1) throw std::invalid_argument("record_decimation must be >= 1");
    plant.validate();
    controller.validate();
    for (const auto& d : disturbances) {
      if (d.joint > 1) throw std::invalid_argument("disturbance joint must be -1, 0 or 1");
      if (d.duration < 0) throw std::invalid_argument("disturbance duration must be >= 0");
    }
  }
};

struct EpisodeSample {
  double t = 0.0;
  State x = State::Zero();
  State measured = State::Zero();
  JointTorque u_cmd = JointTorque::Zero();
  JointTorque u_applied = JointTorque::Zero();
  double tip_height = 0.0;
  bool up = false;
  SolveStatus status = SolveStatus::Converged;
  double solve_time = 0.0;
};

struct GoalInterval {
  double start = 0.0;
  double end = 0.0;
  [[nodiscard]] double length() const { return end - start; }
};

struct EpisodeReport {
  std::vector<EpisodeSample> samples;
  std::vector<GoalInterval> goal_intervals;
  std::vector<CycleTelemetry> telemetry;
  double duration = 0.0;
  double uptime = 0.0;
  double score = 0.0;
  bool swingup = false;
  bool diverged = false;
  long failed_cycles = 0;
  long fallback_cycles = 0;
  double success_hold_time = 2.0;
};

/// uptime / duration.
inline double performance_score(double uptime, double duration) { return uptime / duration; }
inline double performance_score(const EpisodeReport& r) {
  return performance_score(r.uptime, r.duration);
}

/// Scores are reported cut (not rounded) to `digits` decimals, so
/// 46.176 s of 60 s reads 0.769. The small offset absorbs binary
/// representation error of quotients that are exact in decimal.
inline double reported_score(double score, int digits = 3) {
  const double scale = std::pow(10.0, digits);
  return std::floor(score * scale + 1e-9) / scale;
}

/// In the goal region at the end of the episode, continuously for at least
/// the configured hold time.
inline bool swingup_success(const EpisodeReport& r) {
  if (r.goal_intervals.empty()) return false;
  const auto& last = r.goal_intervals.back();
  return last.end >= r.duration - 1e-9 && last.length() >= r.success_hold_time - 1e-9;
}

inline double longest_goal_interval(const EpisodeReport& r) {
  double best = 0.0;
  for (const auto& g : r.goal_intervals) best = std::max(best, g.length());
  return best;
}

/// Longest continuous goal-region stretch inside [t0, t1).
inline double goal_time_within(const EpisodeReport& r, double t0, double t1) {
  double best = 0.0;
  for (const auto& g : r.goal_intervals)
    best = std::max(best, std::min(g.end, t1) - std::max(g.start, t0));
  return best;
}

/// Controller factory hook; the default builds a Controller from the config.
using TorquePolicy = std::function<JointTorque(const State&, double)>;

namespace detail {

inline long steps_for(double t, double dt) { return std::lround(t / dt); }

}  // namespace detail

/// Runs one closed-loop episode. When `policy` is given it replaces the MPC
/// controller (called at the controller's control_dt).
inline EpisodeReport simulate_episode(const EpisodeConfig& cfg,
                                      const TorquePolicy& policy = nullptr) {
  cfg.validate();
  const ModelParams& plant = cfg.plant;
  const int active = plant.active_joint();
  const int passive = plant.passive_joint();
  const double passive_limit = cfg.controller.friction_compensation_on_inactive_joint;

  const long steps = detail::steps_for(cfg.duration, cfg.dt_plant);
  const long ctrl_every =
      std::max<long>(1, detail::steps_for(cfg.controller.control_dt(), cfg.dt_plant));
  const long delay_steps = detail::steps_for(cfg.delay, cfg.dt_plant);

  std::optional<Controller> controller;
  if (!policy)
    controller.emplace(cfg.controller, cfg.controller_model.value_or(plant), cfg.target,
                       cfg.initial_state);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  EpisodeReport rep;
  rep.duration = steps * cfg.dt_plant;
  rep.success_hold_time = cfg.success_hold_time;
  if (cfg.record_trajectory) rep.samples.reserve(steps / cfg.record_decimation + 1);

  const double goal = cfg.goal_height_fraction * (plant.l1 + plant.l2);
  std::deque<State> history;  // true states of the last delay_steps + 1 steps
  State x = cfg.initial_state;
  JointTorque u_cmd = JointTorque::Zero();
  State measured = x;
  SolveStatus last_status = SolveStatus::Converged;
  double last_solve_time = 0.0;
  std::optional<double> up_since;

  for (long k = 0; k < steps; ++k) {
    const double t = k * cfg.dt_plant;
    history.push_back(x);
    if (static_cast<long>(history.size()) > delay_steps + 1) history.pop_front();
    // before enough history exists the oldest state stands in
    const State delayed = history.front();

    if (k % ctrl_every == 0) {
      measured = delayed;
      if (cfg.velocity_noise_std > 0) {
        measured[kQd1] += cfg.velocity_noise_std * normal(rng);
        measured[kQd2] += cfg.velocity_noise_std * normal(rng);
      }
      if (controller) {
        u_cmd = controller->compute_control(measured, t);
        const auto& tel = controller->telemetry().back();
        if (tel.mpc_update) {
          last_status = tel.status;
          last_solve_time = cfg.record_timing ? tel.solve_time : 0.0;
          if (tel.failed) ++rep.failed_cycles;
          if (tel.used_fallback) ++rep.fallback_cycles;
        }
      } else {
        u_cmd = policy(measured, t);
      }
    }

    JointTorque u = u_cmd;
    if (cfg.torque_noise_std > 0) u[active] += cfg.torque_noise_std * normal(rng);
    for (const auto& d : cfg.disturbances) {
      if (t >= d.t - 1e-12 && t < d.t + d.duration - 1e-12)
        u[d.joint < 0 ? active : d.joint] += d.torque;
    }
    u[active] = std::clamp(u[active], -plant.tau_max, plant.tau_max);
    u[passive] = std::clamp(u[passive], -passive_limit, passive_limit);

    const double h = tip_height(x, plant);
    const bool up = h > goal;
    if (up) {
      rep.uptime += cfg.dt_plant;
      if (!up_since) up_since = t;
    } else if (up_since) {
      rep.goal_intervals.push_back({*up_since, t});
      up_since.reset();
    }

    if (cfg.record_trajectory && k % cfg.record_decimation == 0) {
      EpisodeSample s;
      s.t = t;
      s.x = x;
      s.measured = measured;
      s.u_cmd = u_cmd;
      s.u_applied = u;
      s.tip_height = h;
      s.up = up;
      s.status = last_status;
      s.solve_time = last_solve_time;
      rep.samples.push_back(s);
    }

    State next = integrate_step(x, u, cfg.dt_plant, plant);
    if (!next.allFinite() || next.tail<2>().cwiseAbs().maxCoeff() > 1e3) {
      rep.diverged = true;
      for (int i = 0; i < 4; ++i) {
        if (!std::isfinite(next[i])) next[i] = 0.0;
      }
      next.tail<2>() = next.tail<2>().cwiseMax(-1e3).cwiseMin(1e3);
    }
    x = next;
  }
  if (up_since) rep.goal_intervals.push_back({*up_since, rep.duration});

  rep.score = performance_score(rep);
  rep.swingup = swingup_success(rep);
  if (controller) {
    rep.telemetry = controller->telemetry();
    if (!cfg.record_timing)
      for (auto& tel : rep.telemetry) tel.prepare_time = tel.feedback_time = tel.solve_time = 0.0;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Robustness sweeps

inline const std::vector<std::string>& scalable_parameters() {
  static const std::vector<std::string> names = {"m1", "m2", "l1", "l2", "r1",  "r2",
                                                 "I1", "I2", "b1", "b2", "cf1", "cf2"};
  return names;
}

/// Multiplies one physical parameter. Scaling a link length also caps the
/// matching center-of-mass distance at the new length.
inline ModelParams scale_parameter(ModelParams p, const std::string& name, double factor) {
  if (name == "m1") p.m1 *= factor;
  else if (name == "m2") p.m2 *= factor;
  else if (name == "l1") { p.l1 *= factor; p.r1 = std::min(p.r1, p.l1); }
  else if (name == "l2") { p.l2 *= factor; p.r2 = std::min(p.r2, p.l2); }
  else if (name == "r1") p.r1 = std::min(p.r1 * factor, p.l1);
  else if (name == "r2") p.r2 = std::min(p.r2 * factor, p.l2);
  else if (name == "I1") p.I1 *= factor;
  else if (name == "I2") p.I2 *= factor;
  else if (name == "b1") p.b1 *= factor;
  else if (name == "b2") p.b2 *= factor;
  else if (name == "cf1") p.cf1 *= factor;
  else if (name == "cf2") p.cf2 *= factor;
  else throw std::invalid_argument("unknown model parameter '" + name + "'");
  return p;
}

struct RobustnessAxes {
  std::vector<std::string> parameters = scalable_parameters();
  std::vector<double> param_factors = {0.75, 0.9, 1.0, 1.1, 1.25};
  std::vector<double> velocity_noise = {0.0, 0.05, 0.1, 0.25, 0.5};
  std::vector<double> torque_noise = {0.0, 0.1, 0.25, 0.5, 1.0};
  std::vector<double> delays = {0.0, 0.005, 0.01, 0.015, 0.02, 0.025};
  /// Episodes run concurrently; 0 means hardware concurrency.
  unsigned workers = 0;
};

struct RobustnessRun {
  std::string axis;       // e.g. "velocity_noise" or "param_scaling.m1"
  double value = 0.0;
  bool success = false;
  double score = 0.0;
};

struct AxisResult {
  std::string name;
  std::vector<RobustnessRun> runs;
  double score = 0.0;
  /// Per-parameter sub-scores for the param_scaling axis.
  std::vector<std::pair<std::string, double>> parameter_scores;
};

struct RobustnessReport {
  std::vector<AxisResult> axes;
};

/// Applies each sweep value to the plant (or the measurement/actuation
/// channel) only; the controller keeps the nominal model.
inline RobustnessReport robustness_suite(const EpisodeConfig& base, const RobustnessAxes& axes) {
  struct Job {
    std::size_t axis;
    std::string label;
    double value;
    EpisodeConfig cfg;
  };
  std::vector<Job> jobs;
  RobustnessReport rep;
  rep.axes = {{"param_scaling", {}, 0.0, {}},
              {"velocity_noise", {}, 0.0, {}},
              {"torque_noise", {}, 0.0, {}},
              {"time_delay", {}, 0.0, {}}};

  EpisodeConfig nominal = base;
  nominal.controller_model = base.controller_model.value_or(base.plant);
  nominal.record_trajectory = false;

  for (const auto& name : axes.parameters)
    for (double f : axes.param_factors) {
      EpisodeConfig c = nominal;
      c.plant = scale_parameter(base.plant, name, f);
      jobs.push_back({0, "param_scaling." + name, f, std::move(c)});
    }
  for (double v : axes.velocity_noise) {
    EpisodeConfig c = nominal;
    c.velocity_noise_std = v;
    jobs.push_back({1, "velocity_noise", v, std::move(c)});
  }
  for (double v : axes.torque_noise) {
    EpisodeConfig c = nominal;
    c.torque_noise_std = v;
    jobs.push_back({2, "torque_noise", v, std::move(c)});
  }
  for (double v : axes.delays) {
    EpisodeConfig c = nominal;
    c.delay = v;
    jobs.push_back({3, "time_delay", v, std::move(c)});
  }

  std::vector<RobustnessRun> results(jobs.size());
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = axes.workers > 0 ? axes.workers : hw;
  for (std::size_t begin = 0; begin < jobs.size(); begin += workers) {
    const std::size_t end = std::min(jobs.size(), begin + workers);
    std::vector<std::future<RobustnessRun>> batch;
    for (std::size_t i = begin; i < end; ++i) {
      batch.push_back(std::async(std::launch::async, [&job = jobs[i]] {
        const EpisodeReport r = simulate_episode(job.cfg);
        return RobustnessRun{job.label, job.value, r.swingup, r.score};
      }));
    }
    for (std::size_t i = begin; i < end; ++i) results[i] = batch[i - begin].get();
  }

  for (std::size_t i = 0; i < jobs.size(); ++i) rep.axes[jobs[i].axis].runs.push_back(results[i]);
  for (auto& ax : rep.axes) {
    if (ax.runs.empty()) continue;
    long ok = 0;
    for (const auto& r : ax.runs) ok += r.success ? 1 : 0;
    ax.score = static_cast<double>(ok) / static_cast<double>(ax.runs.size());
  }
  auto& ps = rep.axes[0];
  for (const auto& name : axes.parameters) {
    long ok = 0, n = 0;
    for (const auto& r : ps.runs)
      if (r.axis == "param_scaling." + name) {
        ++n;
        ok += r.success ? 1 : 0;
      }
    if (n > 0) ps.parameter_scores.emplace_back(name, static_cast<double>(ok) / n);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CSV output

inline constexpr const char* kEpisodeCsvHeader =
    "t,q1,q2,qd1,qd2,u1_cmd,u2_cmd,u1_applied,u2_applied,tip_height,up,solver_status,solve_time";

inline void write_episode_csv(std::ostream& os, const EpisodeReport& r) {
  os << kEpisodeCsvHeader << '\n';
  os.precision(10);
  for (const auto& s : r.samples) {
    os << s.t << ',' << s.x[0] << ',' << s.x[1] << ',' << s.x[2] << ',' << s.x[3] << ','
       << s.u_cmd[0] << ',' << s.u_cmd[1] << ',' << s.u_applied[0] << ',' << s.u_applied[1]
       << ',' << s.tip_height << ',' << (s.up ? 1 : 0) << ',' << to_string(s.status) << ','
       << s.solve_time << '\n';
  }
}

inline void write_robustness_csv(std::ostream& os, const RobustnessReport& r) {
  os << "axis,value,success,score\n";
  os.precision(10);
  for (const auto& ax : r.axes)
    for (const auto& run : ax.runs)
      os << run.axis << ',' << run.value << ',' << (run.success ? 1 : 0) << ',' << run.score
         << '\n';
}

}  // namespace dpmpc
