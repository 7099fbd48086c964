// Discrete-time optimal control problem for the double pendulum: shooting
// grid, least-squares stage/terminal costs, box bounds, and the RK4
// shooting map with exact sensitivities.

#pragma once

#include "dpmpc/dynamics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace dpmpc {

struct ShootingGrid {
  std::vector<double> dts;
  double T = 0.0;

  [[nodiscard]] int N() const { return static_cast<int>(dts.size()); }
  /// Time of node n relative to node 0.
  [[nodiscard]] double node_time(int n) const {
    double t = 0.0;
    for (int i = 0; i < n; ++i) t += dts[i];
    return t;
  }
};

/// Uniform: dt_n = T/N. Nonuniform: dt_n = c (n + 1), c = 2T / (N (N + 1)).
inline ShootingGrid build_grid(int N, double T, bool nonuniform) {
  if (N < 1) throw std::invalid_argument("build_grid: N must be >= 1");
  if (!(T > 0.0)) throw std::invalid_argument("build_grid: T must be positive");
  ShootingGrid grid;
  grid.T = T;
  grid.dts.resize(N);
  if (!nonuniform) {
    for (auto& dt : grid.dts) dt = T / N;
  } else {
    const double c = 2.0 * T / (static_cast<double>(N) * (N + 1));
    for (int n = 0; n < N; ++n) grid.dts[n] = c * (n + 1);
  }
  return grid;
}

enum class CostVariant {
  Quadratic,
  /// Angles enter through (cos, sin) so the cost is 2*pi periodic.
  EmbeddedAngle,
  /// EmbeddedAngle stages, terminal cost on the energy error plus velocities.
  EnergyTerminal,
};

struct CostConfig {
  Vec4 Q = Vec4(100.0, 100.0, 10.0, 10.0);
  double R = 1e-6;
  Vec4 Qf = Vec4(10000.0, 10000.0, 100.0, 100.0);
  State target = upright_state();
  CostVariant variant = CostVariant::Quadratic;
  /// Weight w of 1/2 w (E(x) - E(target))^2 in the EnergyTerminal variant.
  double energy_weight = 100.0;
  /// EnergyTerminal: keep the full embedded Qf state residual next to the
  /// energy term instead of only the velocity part.
  bool energy_keeps_state = false;
  /// Per-stage multipliers; empty means all ones.
  std::vector<double> node_scaling;

  [[nodiscard]] double scale(int n) const {
    return node_scaling.empty() ? 1.0 : node_scaling.at(n);
  }

  void validate(int N) const {
    if ((Q.array() < 0).any() || (Qf.array() < 0).any() || R < 0 || energy_weight < 0)
      throw std::invalid_argument("cost weights must be non-negative");
    if (!node_scaling.empty()) {
      if (static_cast<int>(node_scaling.size()) != N)
        throw std::invalid_argument("scaling must have N_horizon entries");
      for (double s : node_scaling)
        if (!(s > 0)) throw std::invalid_argument("scaling entries must be positive");
    }
  }
};

struct Bounds {
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  double u_lo = -6.0;
  double u_hi = 6.0;
  Vec4 x_lo = Vec4(-kInf, -kInf, -30.0, -30.0);
  Vec4 x_hi = Vec4(kInf, kInf, 30.0, 30.0);
  Vec4 xf_lo = Vec4::Constant(-kInf);
  Vec4 xf_hi = Vec4::Constant(kInf);

  static Bounds from_limits(double tau_max, double v_max) {
    Bounds b;
    b.u_lo = -tau_max;
    b.u_hi = tau_max;
    b.x_lo = Vec4(-kInf, -kInf, -v_max, -v_max);
    b.x_hi = Vec4(kInf, kInf, v_max, v_max);
    return b;
  }

  static Bounds unbounded() {
    Bounds b;
    b.u_lo = -kInf;
    b.u_hi = kInf;
    b.x_lo = Vec4::Constant(-kInf);
    b.x_hi = Vec4::Constant(kInf);
    return b;
  }

  void validate() const {
    if (u_lo > u_hi || (x_lo.array() > x_hi.array()).any() ||
        (xf_lo.array() > xf_hi.array()).any())
      throw std::invalid_argument("bounds: lower bound exceeds upper bound");
  }
};

/// Torque the inactive joint may exert to cancel its own friction,
/// saturated at `budget` and aligned with the joint velocity.
inline double friction_compensation(double qd, double friction, double budget,
                                    double smoothing) {
  return std::min(budget, std::abs(friction)) * smooth_sign(qd, smoothing);
}

/// Derivative of friction_compensation w.r.t. qd.
inline double friction_compensation_slope(double qd, double friction, double friction_slope,
                                          double budget, double smoothing) {
  const double t = std::tanh(qd / smoothing);
  const double dt = (1.0 - t * t) / smoothing;
  if (std::abs(friction) < budget) {
    const double sgn = friction > 0 ? 1.0 : (friction < 0 ? -1.0 : 0.0);
    return sgn * friction_slope * t + std::abs(friction) * dt;
  }
  return budget * dt;
}

/// The controller's prediction model: nominal plant with one scalar input
/// on the active joint and, optionally, friction compensation on the
/// passive joint.
struct PredictionModel {
  ModelParams params;
  double compensation_budget = 0.0;
  /// If set, xdot = A x + B u replaces the pendulum (LQ test instances).
  struct Linear {
    Mat4 A;
    Vec4 B;
  };
  std::optional<Linear> linear;

  [[nodiscard]] JointTorque torque(const State& x, double u) const {
    JointTorque tau = params.actuation() * u;
    if (compensation_budget > 0.0) {
      const int j = params.passive_joint();
      const Vec2 f = friction_torque(x.tail<2>(), params);
      tau[j] += friction_compensation(x[2 + j], f[j], compensation_budget,
                                      params.friction_smoothing);
    }
    return tau;
  }

  [[nodiscard]] State xdot(const State& x, double u) const {
    if (linear) return linear->A * x + linear->B * u;
    return forward_dynamics(x, torque(x, u), params);
  }

  /// xdot together with d(xdot)/dx and d(xdot)/du.
  void jacobians(const State& x, double u, State& f, Mat4& A, Vec4& B) const {
    if (linear) {
      f = xdot(x, u);
      A = linear->A;
      B = linear->B;
      return;
    }
    const auto J = dynamics_jacobians(x, torque(x, u), params);
    f = J.xdot;
    A = J.A;
    B = J.B * params.actuation();
    if (compensation_budget > 0.0) {
      const int j = params.passive_joint();
      const Vec2 qd = x.tail<2>();
      const Vec2 fr = friction_torque(qd, params);
      const Vec2 fs = friction_slope(qd, params);
      const double dc = friction_compensation_slope(qd[j], fr[j], fs[j], compensation_budget,
                                                    params.friction_smoothing);
      A.col(2 + j) += J.B.col(j) * dc;
    }
  }
};

/// Result of one shooting interval: end state and its sensitivities.
struct ShootingStep {
  State x_next;
  Mat4 A;
  Vec4 B;
};

inline int substeps_for(double dt, double max_step) {
  return std::max(1, static_cast<int>(std::ceil(dt / max_step - 1e-9)));
}

/// RK4 over `dt` split into equal substeps; no sensitivities.
inline State shoot(const PredictionModel& model, const State& x, double u, double dt,
                   int substeps) {
  const double h = dt / substeps;
  State y = x;
  for (int s = 0; s < substeps; ++s) {
    const State k1 = model.xdot(y, u);
    const State k2 = model.xdot(y + 0.5 * h * k1, u);
    const State k3 = model.xdot(y + 0.5 * h * k2, u);
    const State k4 = model.xdot(y + h * k3, u);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

/// RK4 shooting with forward sensitivities differentiated through every stage.
inline ShootingStep shoot_with_sensitivities(const PredictionModel& model, const State& x,
                                             double u, double dt, int substeps) {
  const double h = dt / substeps;
  ShootingStep out;
  out.x_next = x;
  out.A.setIdentity();
  out.B.setZero();
  State f;
  Mat4 Ac;
  Vec4 Bc;
  for (int s = 0; s < substeps; ++s) {
    const State y = out.x_next;
    model.jacobians(y, u, f, Ac, Bc);
    const State k1 = f;
    const Mat4 k1x = Ac;
    const Vec4 k1u = Bc;

    model.jacobians(y + 0.5 * h * k1, u, f, Ac, Bc);
    const State k2 = f;
    const Mat4 k2x = Ac * (Mat4::Identity() + 0.5 * h * k1x);
    const Vec4 k2u = Ac * (0.5 * h * k1u) + Bc;

    model.jacobians(y + 0.5 * h * k2, u, f, Ac, Bc);
    const State k3 = f;
    const Mat4 k3x = Ac * (Mat4::Identity() + 0.5 * h * k2x);
    const Vec4 k3u = Ac * (0.5 * h * k2u) + Bc;

    model.jacobians(y + h * k3, u, f, Ac, Bc);
    const State k4 = f;
    const Mat4 k4x = Ac * (Mat4::Identity() + h * k3x);
    const Vec4 k4u = Ac * (h * k3u) + Bc;

    out.x_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const Mat4 Phi = Mat4::Identity() + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    const Vec4 Gam = (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    out.A = Phi * out.A;
    out.B = Phi * out.B + Gam;
  }
  return out;
}

/// (cos q1, sin q1, cos q2, sin q2, qd1, qd2).
inline Eigen::Matrix<double, 6, 1> embed_angles(const State& x) {
  Eigen::Matrix<double, 6, 1> e;
  e << std::cos(x[kQ1]), std::sin(x[kQ1]), std::cos(x[kQ2]), std::sin(x[kQ2]), x[kQd1],
      x[kQd2];
  return e;
}

/// Value, gradient and Gauss-Newton Hessian of a stage or terminal cost.
struct CostDerivatives {
  double value = 0.0;
  Vec4 gx = Vec4::Zero();
  double gu = 0.0;
  Mat4 Hxx = Mat4::Zero();
  double Huu = 0.0;
};

namespace detail {

// 1/2 sum_i w_i r_i^2 for the state part of the residual, accumulated into d.
inline void add_state_residual(const State& x, const State& target, const Vec4& w,
                               bool embedded, CostDerivatives& d) {
  if (!embedded) {
    const Vec4 e = x - target;
    d.value += 0.5 * e.dot(w.cwiseProduct(e));
    d.gx += w.cwiseProduct(e);
    d.Hxx.diagonal() += w;
    return;
  }
  const auto ex = embed_angles(x);
  const auto et = embed_angles(target);
  const Eigen::Matrix<double, 6, 1> r = ex - et;
  Eigen::Matrix<double, 6, 4> J = Eigen::Matrix<double, 6, 4>::Zero();
  J(0, 0) = -ex[1];
  J(1, 0) = ex[0];
  J(2, 1) = -ex[3];
  J(3, 1) = ex[2];
  J(4, 2) = 1.0;
  J(5, 3) = 1.0;
  Eigen::Matrix<double, 6, 1> W;
  W << w[0], w[0], w[1], w[1], w[2], w[3];
  d.value += 0.5 * r.dot(W.cwiseProduct(r));
  d.gx += J.transpose() * W.cwiseProduct(r);
  d.Hxx += J.transpose() * W.asDiagonal() * J;
}

}  // namespace detail

inline CostDerivatives cost_derivatives(const State& x, double u, int n,
                                        const CostConfig& cfg) {
  CostDerivatives d;
  detail::add_state_residual(x, cfg.target, cfg.Q, cfg.variant != CostVariant::Quadratic, d);
  d.value += 0.5 * cfg.R * u * u;
  d.gu = cfg.R * u;
  d.Huu = cfg.R;
  const double s = cfg.scale(n);
  d.value *= s;
  d.gx *= s;
  d.gu *= s;
  d.Hxx *= s;
  d.Huu *= s;
  return d;
}

inline double stage_cost(const State& x, double u, int n, const CostConfig& cfg) {
  return cost_derivatives(x, u, n, cfg).value;
}

inline CostDerivatives terminal_cost_derivatives(const State& x, const CostConfig& cfg,
                                                 const ModelParams& params) {
  CostDerivatives d;
  if (cfg.variant != CostVariant::EnergyTerminal) {
    detail::add_state_residual(x, cfg.target, cfg.Qf,
                               cfg.variant == CostVariant::EmbeddedAngle, d);
    return d;
  }
  const double re = total_energy(x, params) - total_energy(cfg.target, params);
  const Vec4 gE = energy_gradient(x, params);
  d.value = 0.5 * cfg.energy_weight * re * re;
  d.gx = cfg.energy_weight * re * gE;
  d.Hxx = cfg.energy_weight * gE * gE.transpose();
  if (cfg.energy_keeps_state) {
    detail::add_state_residual(x, cfg.target, cfg.Qf, true, d);
  } else {
    const Vec4 wv(0.0, 0.0, cfg.Qf[2], cfg.Qf[3]);
    detail::add_state_residual(x, cfg.target, wv, false, d);
  }
  return d;
}

inline double terminal_cost(const State& x, const CostConfig& cfg, const ModelParams& params) {
  return terminal_cost_derivatives(x, cfg, params).value;
}

struct OcpProblem {
  PredictionModel model;
  ShootingGrid grid;
  CostConfig cost;
  Bounds bounds;
  State x0 = hanging_state();
  /// Longest RK4 substep inside one shooting interval [s].
  double max_substep = 0.005;

  [[nodiscard]] int N() const { return grid.N(); }
  [[nodiscard]] int substeps(int n) const { return substeps_for(grid.dts[n], max_substep); }

  [[nodiscard]] State step(int n, const State& x, double u) const {
    return shoot(model, x, u, grid.dts[n], substeps(n));
  }
  [[nodiscard]] ShootingStep linearize_step(int n, const State& x, double u) const {
    return shoot_with_sensitivities(model, x, u, grid.dts[n], substeps(n));
  }

  void validate() const {
    model.params.validate();
    if (grid.N() < 1) throw std::invalid_argument("ocp: empty grid");
    cost.validate(grid.N());
    bounds.validate();
    if (!(max_substep > 0)) throw std::invalid_argument("ocp: max_substep must be positive");
  }
};

/// Total objective along a trajectory.
inline double trajectory_cost(const OcpProblem& ocp, const std::vector<State>& xs,
                              const std::vector<double>& us) {
  double c = 0.0;
  for (int n = 0; n < ocp.N(); ++n) c += stage_cost(xs[n], us[n], n, ocp.cost);
  c += terminal_cost(xs[ocp.N()], ocp.cost, ocp.model.params);
  return c;
}

}  // namespace dpmpc
