// Receding-horizon controller around the multiple-shooting solvers.

#pragma once

#include "dpmpc/dynamics.hpp"
#include "dpmpc/ocp.hpp"
#include "dpmpc/solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpmpc {

struct ControllerOptions {
  int N_horizon = 20;
  double prediction_horizon = 0.5;
  int Nlp_max_iter = 500;
  double max_solve_time = 1.0;
  Backend solver_type = Backend::SQP_RTI;
  bool wrap_angle = true;
  bool warm_start = true;
  std::vector<double> scaling;  // empty: all ones
  bool nonuniform_grid = false;
  bool use_energy_for_terminal_cost = false;
  bool fallback_on_solver_fail = false;
  double friction_compensation_on_inactive_joint = 0.5;
  double mpc_cycle_dt = 0.01;
  bool pd_tracking = false;
  double outer_cycle_dt = 0.001;
  std::optional<double> pd_KP;
  std::optional<double> pd_KD;
  std::optional<double> pd_KI;

  // cost and solver details
  bool embed_angles = false;
  Vec4 Q = Vec4(100.0, 100.0, 10.0, 10.0);
  double R = 1e-6;
  Vec4 Qf = Vec4(10000.0, 10000.0, 100.0, 100.0);
  double energy_weight = 100.0;
  bool energy_terminal_keeps_state = false;
  double qp_solver_tolerance = 1e-3;
  double kkt_tolerance = 1e-6;
  int warm_start_iterations = 50;
  /// Constant active-joint torque of the rollout seeding the first guess.
  double initial_torque = 0.0;
  double integrator_max_step = 0.005;

  /// Throws std::invalid_argument naming the offending option.
  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
    if (N_horizon < 1) fail("N_horizon must be >= 1");
    if (!(prediction_horizon > 0)) fail("prediction_horizon must be positive");
    if (Nlp_max_iter < 1) fail("Nlp_max_iter must be >= 1");
    if (!(max_solve_time > 0)) fail("max_solve_time must be positive");
    if (!(mpc_cycle_dt > 0)) fail("mpc_cycle_dt must be positive");
    if (!(outer_cycle_dt > 0)) fail("outer_cycle_dt must be positive");
    if (friction_compensation_on_inactive_joint < 0)
      fail("friction_compensation_on_inactive_joint must be non-negative");
    if (!scaling.empty() && static_cast<int>(scaling.size()) != N_horizon)
      fail("scaling must have N_horizon entries");
    for (double s : scaling)
      if (!(s > 0)) fail("scaling entries must be positive");
    if (pd_tracking) {
      if (outer_cycle_dt > mpc_cycle_dt) fail("outer_cycle_dt must not exceed mpc_cycle_dt");
      if (!pd_KP || !pd_KD || !pd_KI) fail("pd_tracking requires pd_KP, pd_KD and pd_KI");
    }
    if ((Q.array() < 0).any() || (Qf.array() < 0).any() || R < 0 || energy_weight < 0)
      fail("cost weights must be non-negative");
    if (!(qp_solver_tolerance > 0)) fail("qp_solver_tolerance must be positive");
    if (!(kkt_tolerance > 0)) fail("kkt_tolerance must be positive");
    if (warm_start_iterations < 0) fail("warm_start_iterations must be >= 0");
    if (!(integrator_max_step > 0)) fail("integrator_max_step must be positive");
  }

  /// Control tick at which the host loop should call compute_control.
  [[nodiscard]] double control_dt() const { return pd_tracking ? outer_cycle_dt : mpc_cycle_dt; }
};

/// Tuned setup per robot. Both share the real-time settings (RTI, fallback,
/// 10 ms solve budget, 40 NLP iterations); the Acrobot needs a longer
/// horizon and an energy-shaped terminal cost to leave the hanging state.
inline ControllerOptions default_controller_options(Robot robot) {
  ControllerOptions o;
  o.Nlp_max_iter = 40;
  o.fallback_on_solver_fail = true;
  o.max_solve_time = 0.01;
  o.solver_type = Backend::SQP_RTI;
  o.warm_start = true;
  o.qp_solver_tolerance = 1e-3;
  if (robot == Robot::Pendubot) {
    o.N_horizon = 20;
    o.prediction_horizon = 0.5;
    o.mpc_cycle_dt = 0.001;
  } else {
    o.N_horizon = 40;
    o.prediction_horizon = 1.5;
    o.mpc_cycle_dt = 0.002;
    o.embed_angles = true;
    o.use_energy_for_terminal_cost = true;
    o.energy_terminal_keeps_state = true;
    o.energy_weight = 1e5;
    o.initial_torque = 1.0;
  }
  return o;
}

struct PidGains {
  double kp = 0.0;
  double kd = 0.0;
  double ki = 0.0;
};

struct PidState {
  double integral = 0.0;
};

/// u_ff + KP e + KI int(e) + KD de on the active joint. e is the wrapped
/// position error x_ref - x_meas, de the velocity error. The integrator is
/// clamped so the output stays within +-tau_max.
inline double pid_adjust(const State& x_meas, const State& x_ref, double u_ff,
                         const PidGains& gains, double dt_outer, int active_joint,
                         double tau_max, PidState& state) {
  const double e = wrap_angle(x_ref[active_joint] - x_meas[active_joint]);
  const double de = x_ref[2 + active_joint] - x_meas[2 + active_joint];
  state.integral += e * dt_outer;
  const double rest = u_ff + gains.kp * e + gains.kd * de;
  double i_term = gains.ki * state.integral;
  const double lo = -tau_max - rest;
  const double hi = tau_max - rest;
  if (gains.ki != 0.0 && (i_term < lo || i_term > hi)) {
    i_term = std::clamp(i_term, std::min(lo, 0.0), std::max(hi, 0.0));
    state.integral = i_term / gains.ki;
  }
  return rest + i_term;
}

struct CycleTelemetry {
  double t = 0.0;
  bool mpc_update = false;
  SolveStatus status = SolveStatus::Converged;
  bool failed = false;
  bool used_fallback = false;
  double kkt = 0.0;
  int iterations = 0;
  double prepare_time = 0.0;
  double feedback_time = 0.0;
  double solve_time = 0.0;
  JointTorque torque = JointTorque::Zero();
};

class Controller {
 public:
  Controller(ControllerOptions options, ModelParams model, State target,
             State initial_state = hanging_state())
      : options_(std::move(options)), model_(model), target_(target) {
    options_.validate();
    model_.validate();

    ocp_.model.params = model_;
    ocp_.model.compensation_budget = options_.friction_compensation_on_inactive_joint;
    ocp_.grid = build_grid(options_.N_horizon, options_.prediction_horizon,
                           options_.nonuniform_grid);
    ocp_.cost.Q = options_.Q;
    ocp_.cost.R = options_.R;
    ocp_.cost.Qf = options_.Qf;
    ocp_.cost.target = target_;
    ocp_.cost.energy_weight = options_.energy_weight;
    ocp_.cost.energy_keeps_state = options_.energy_terminal_keeps_state;
    ocp_.cost.node_scaling = options_.scaling;
    if (options_.use_energy_for_terminal_cost)
      ocp_.cost.variant = CostVariant::EnergyTerminal;
    else if (options_.embed_angles)
      ocp_.cost.variant = CostVariant::EmbeddedAngle;
    else
      ocp_.cost.variant = CostVariant::Quadratic;
    ocp_.bounds = Bounds::from_limits(model_.tau_max, model_.v_max);
    ocp_.max_substep = options_.integrator_max_step;
    ocp_.x0 = options_.wrap_angle ? wrap_state(initial_state) : initial_state;
    ocp_.validate();

    settings_.backend = options_.solver_type;
    settings_.max_iter = options_.Nlp_max_iter;
    settings_.max_solve_time = options_.max_solve_time;
    settings_.qp_tol = options_.qp_solver_tolerance;
    settings_.kkt_tol = options_.kkt_tolerance;
    rti_ = RtiSolver(settings_);

    if (options_.pd_tracking)
      gains_ = PidGains{*options_.pd_KP, *options_.pd_KD, *options_.pd_KI};

    reset(initial_state);
  }

  /// Rebuilds the initial guess from `x` and clears all cycle state.
  void reset(const State& initial_state) {
    ocp_.x0 = options_.wrap_angle ? wrap_state(initial_state) : initial_state;
    Solution guess = rollout(
        ocp_, std::vector<double>(ocp_.N(), std::clamp(options_.initial_torque, -model_.tau_max,
                                                       model_.tau_max)));
    guess.status = SolveStatus::Converged;
    const int iters = std::min(options_.warm_start_iterations, options_.Nlp_max_iter);
    if (options_.warm_start && iters > 0) {
      SolverSettings s = settings_;
      s.max_iter = iters;
      s.max_solve_time = 1e9;
      guess = sqp_solve(ocp_, guess, s);
    }
    initial_guess_ = guess;
    stored_ = guess;
    guess_ = guess;
    rti_ = RtiSolver(settings_);
    if (options_.solver_type == Backend::SQP_RTI) rti_.prepare(ocp_, guess_);
    cycle_count_ = 0;
    next_mpc_time_.reset();
    pid_ = PidState{};
    u_mpc_ = guess.us.empty() ? 0.0 : guess.us[0];
    x_ref_ = guess.xs.size() > 1 ? guess.xs[1] : guess.xs[0];
    telemetry_.clear();
  }

  /// Torque command for the measured state at time t. Call at every
  /// options().control_dt() tick; the MPC problem is re-solved every
  /// mpc_cycle_dt and held (or PID-tracked) in between.
  JointTorque compute_control(const State& x_meas, double t) {
    CycleTelemetry tel;
    tel.t = t;
    const bool update =
        !next_mpc_time_ || t >= *next_mpc_time_ - 1e-9 * std::max(1.0, std::abs(t));
    if (update) {
      tel.mpc_update = true;
      mpc_update(x_meas, tel);
      next_mpc_time_ = (next_mpc_time_ ? *next_mpc_time_ : t) + options_.mpc_cycle_dt;
      if (*next_mpc_time_ <= t) next_mpc_time_ = t + options_.mpc_cycle_dt;
      ++cycle_count_;
    }

    const int a = model_.active_joint();
    double u_active = u_mpc_;
    if (options_.pd_tracking)
      u_active = pid_adjust(x_meas, x_ref_, u_mpc_, gains_, options_.outer_cycle_dt, a,
                            model_.tau_max, pid_);
    u_active = std::clamp(u_active, -model_.tau_max, model_.tau_max);

    JointTorque tau = JointTorque::Zero();
    tau[a] = u_active;
    tau[model_.passive_joint()] = passive_torque(x_meas);
    tel.torque = tau;
    telemetry_.push_back(tel);
    return tau;
  }

  /// Replays the stored trajectory: returns its head, shifts left, pads 0.
  double fallback_step() {
    const double u = stored_.us.front();
    stored_ = shift_warm_start(stored_, ocp_.grid);
    return u;
  }

  /// Torque on the inactive joint cancelling its own friction.
  [[nodiscard]] double passive_torque(const State& x) const {
    const int j = model_.passive_joint();
    const double budget = options_.friction_compensation_on_inactive_joint;
    if (budget <= 0.0) return 0.0;
    const Vec2 f = friction_torque(x.tail<2>(), model_);
    return std::clamp(friction_compensation(x[2 + j], f[j], budget, model_.friction_smoothing),
                      -budget, budget);
  }

  /// Test hook: when set and returning true for a cycle index, that
  /// cycle's solve is treated as failed.
  void set_failure_injector(std::function<bool(long)> fn) { inject_failure_ = std::move(fn); }

  [[nodiscard]] const ControllerOptions& options() const { return options_; }
  [[nodiscard]] const ModelParams& model() const { return model_; }
  [[nodiscard]] const OcpProblem& ocp() const { return ocp_; }
  [[nodiscard]] const Solution& stored_solution() const { return stored_; }
  [[nodiscard]] const Solution& initial_guess() const { return initial_guess_; }
  [[nodiscard]] const Solution& last_solution() const { return last_; }
  [[nodiscard]] const std::vector<CycleTelemetry>& telemetry() const { return telemetry_; }
  [[nodiscard]] long cycle_count() const { return cycle_count_; }
  [[nodiscard]] const State& reference_state() const { return x_ref_; }

 private:
  // Shifts angles of x by multiples of 2*pi so they are closest to ref.
  static State align_to(const State& x, const State& ref) {
    State y = x;
    for (int i = 0; i < 2; ++i) y[i] = ref[i] + wrap_angle(x[i] - ref[i]);
    return y;
  }

  // Shifts all trajectory angles so that the first state lies in (-pi, pi].
  static void reframe(Solution& s) {
    if (s.xs.empty()) return;
    for (int i = 0; i < 2; ++i) {
      const double shift = wrap_angle(s.xs[0][i]) - s.xs[0][i];
      if (shift == 0.0) continue;
      for (auto& x : s.xs) x[i] += shift;
    }
  }

  static bool finite(const Solution& s) {
    for (const auto& x : s.xs)
      if (!x.allFinite()) return false;
    for (double u : s.us)
      if (!std::isfinite(u)) return false;
    return true;
  }

  void mpc_update(const State& x_meas, CycleTelemetry& tel) {
    State x0 = x_meas;
    if (options_.wrap_angle) x0 = align_to(wrap_state(x_meas), guess_.xs[0]);
    ocp_.x0 = x0;

    Solution sol;
    switch (options_.solver_type) {
      case Backend::SQP_RTI:
        if (!rti_.prepared()) rti_.prepare(ocp_, guess_);
        sol = rti_.feedback(x0);
        break;
      case Backend::SQP:
        sol = sqp_solve(ocp_, guess_, settings_);
        break;
      case Backend::DDP:
        sol = ddp_solve(ocp_, guess_, settings_);
        break;
    }

    bool failed = sol.status == SolveStatus::Infeasible || !finite(sol);
    if (inject_failure_ && inject_failure_(cycle_count_)) failed = true;

    tel.status = sol.status;
    tel.kkt = sol.kkt_residual;
    tel.iterations = sol.iterations;
    tel.prepare_time = sol.prepare_time;
    tel.feedback_time = sol.feedback_time;
    tel.solve_time = sol.total_time;
    tel.failed = failed;

    if (!failed) {
      if (options_.wrap_angle) reframe(sol);
      stored_ = sol;
      last_ = sol;
      u_mpc_ = sol.us[0];
      x_ref_ = sol.xs.size() > 1 ? sol.xs[1] : sol.xs[0];
    } else if (options_.fallback_on_solver_fail) {
      tel.used_fallback = true;
      x_ref_ = stored_.xs.size() > 1 ? stored_.xs[1] : stored_.xs[0];
      u_mpc_ = fallback_step();
    } else {
      u_mpc_ = 0.0;
    }

    guess_ = time_shift(stored_, ocp_.grid, options_.mpc_cycle_dt);
    if (failed) {
      // a failed linearization is usually caused by large defects; restart
      // from a defect-free rollout of the buffered inputs
      guess_ = rollout(ocp_, guess_.us);
      guess_.status = SolveStatus::Converged;
    }
    if (options_.solver_type == Backend::SQP_RTI) rti_.prepare(ocp_, guess_);
  }

  ControllerOptions options_;
  ModelParams model_;
  State target_;
  OcpProblem ocp_;
  SolverSettings settings_;
  RtiSolver rti_;
  PidGains gains_;
  PidState pid_;

  Solution initial_guess_;
  Solution stored_;
  Solution guess_;
  Solution last_;
  double u_mpc_ = 0.0;
  State x_ref_ = State::Zero();
  long cycle_count_ = 0;
  std::optional<double> next_mpc_time_;
  std::function<bool(long)> inject_failure_;
  std::vector<CycleTelemetry> telemetry_;
};

}  // namespace dpmpc
