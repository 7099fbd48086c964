// Planar double pendulum model (Acrobot / Pendubot).
//
// Angle convention: q = [0, 0] is the upright equilibrium, q1 is measured
// from the upward vertical, q2 is relative to link 1. The hanging rest
// configuration is [pi, 0].
//
//   M(q) qdd + C(q, qd) qd = tau_g(q) + tau - friction(qd)
//
// State layout is [q1, q2, qd1, qd2].

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dpmpc {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Mat42 = Eigen::Matrix<double, 4, 2>;

/// x = [q1, q2, qd1, qd2].
using State = Vec4;
/// Motor torques on [joint 1, joint 2].
using JointTorque = Vec2;

enum StateIndex : int { kQ1 = 0, kQ2 = 1, kQd1 = 2, kQd2 = 3 };

enum class Robot { Acrobot, Pendubot };

inline std::string_view to_string(Robot r) {
  return r == Robot::Acrobot ? "acrobot" : "pendubot";
}

inline Robot robot_from_string(std::string_view s) {
  if (s == "acrobot" || s == "Acrobot" || s == "ACROBOT") return Robot::Acrobot;
  if (s == "pendubot" || s == "Pendubot" || s == "PENDUBOT") return Robot::Pendubot;
  throw std::invalid_argument("unknown robot '" + std::string(s) + "'");
}

struct ModelParams {
  double m1 = 0.5;
  double m2 = 0.6;
  double l1 = 0.3;
  double l2 = 0.2;
  double r1 = 0.275;
  double r2 = 0.166;
  double I1 = 0.0475;
  double I2 = 0.0208;
  double b1 = 0.08;
  double b2 = 0.08;
  double cf1 = 0.093;
  double cf2 = 0.093;
  double g = 9.81;
  Robot robot = Robot::Pendubot;
  double tau_max = 6.0;
  double v_max = 30.0;
  /// Width of the tanh used to smooth the Coulomb friction sign [rad/s].
  double friction_smoothing = 1e-2;

  /// Index of the actuated joint (0 for Pendubot, 1 for Acrobot).
  [[nodiscard]] int active_joint() const { return robot == Robot::Pendubot ? 0 : 1; }
  [[nodiscard]] int passive_joint() const { return 1 - active_joint(); }

  /// Actuation selector: torque = actuation() * u.
  [[nodiscard]] Vec2 actuation() const {
    return robot == Robot::Pendubot ? Vec2(1.0, 0.0) : Vec2(0.0, 1.0);
  }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("invalid model parameter: ") + what);
    };
    require(m1 > 0 && m2 > 0, "masses must be positive");
    require(l1 > 0 && l2 > 0, "lengths must be positive");
    require(r1 > 0 && r2 > 0, "centers of mass must be positive");
    require(I1 > 0 && I2 > 0, "inertias must be positive");
    require(r1 <= l1 && r2 <= l2, "center of mass beyond link length");
    require(b1 >= 0 && b2 >= 0 && cf1 >= 0 && cf2 >= 0, "friction must be non-negative");
    require(g >= 0, "gravity must be non-negative");
    require(tau_max > 0, "tau_max must be positive");
    require(v_max > 0, "v_max must be positive");
    require(friction_smoothing > 0, "friction_smoothing must be positive");
  }
};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline State upright_state() { return State::Zero(); }
inline State hanging_state() { return State(kPi, 0.0, 0.0, 0.0); }

inline Mat2 mass_matrix(const Vec2& q, const ModelParams& p) {
  const double c2 = std::cos(q[1]);
  const double m22 = p.I2 + p.m2 * p.r2 * p.r2;
  const double m12 = m22 + p.m2 * p.l1 * p.r2 * c2;
  const double m11 = p.I1 + p.m1 * p.r1 * p.r1 +
                     p.m2 * (p.l1 * p.l1 + 2.0 * p.l1 * p.r2 * c2) + m22;
  Mat2 M;
  M << m11, m12, m12, m22;
  return M;
}

/// Coriolis matrix in the Christoffel form, so that dM/dt - 2C is skew.
inline Mat2 coriolis_matrix(const Vec2& q, const Vec2& qd, const ModelParams& p) {
  const double h = p.m2 * p.l1 * p.r2 * std::sin(q[1]);
  Mat2 C;
  C << -h * qd[1], -h * (qd[0] + qd[1]),
        h * qd[0], 0.0;
  return C;
}

inline Vec2 gravity_vector(const Vec2& q, const ModelParams& p) {
  const double s1 = std::sin(q[0]);
  const double s12 = std::sin(q[0] + q[1]);
  const double a = (p.m1 * p.r1 + p.m2 * p.l1) * p.g;
  const double b = p.m2 * p.r2 * p.g;
  return {a * s1 + b * s12, b * s12};
}

inline double smooth_sign(double v, double width) { return std::tanh(v / width); }

inline Vec2 friction_torque(const Vec2& qd, const ModelParams& p) {
  const double w = p.friction_smoothing;
  return {p.b1 * qd[0] + p.cf1 * smooth_sign(qd[0], w),
          p.b2 * qd[1] + p.cf2 * smooth_sign(qd[1], w)};
}

/// Diagonal of d(friction)/d(qd).
inline Vec2 friction_slope(const Vec2& qd, const ModelParams& p) {
  const double w = p.friction_smoothing;
  const double t1 = std::tanh(qd[0] / w);
  const double t2 = std::tanh(qd[1] / w);
  return {p.b1 + p.cf1 * (1.0 - t1 * t1) / w, p.b2 + p.cf2 * (1.0 - t2 * t2) / w};
}

/// Joint accelerations for a full torque vector on both joints.
inline Vec2 joint_accelerations(const State& x, const JointTorque& tau, const ModelParams& p) {
  const Vec2 q = x.head<2>();
  const Vec2 qd = x.tail<2>();
  const Vec2 rhs = gravity_vector(q, p) + tau - coriolis_matrix(q, qd, p) * qd -
                   friction_torque(qd, p);
  return mass_matrix(q, p).ldlt().solve(rhs);
}

inline State forward_dynamics(const State& x, const JointTorque& tau, const ModelParams& p) {
  State xdot;
  xdot.head<2>() = x.tail<2>();
  xdot.tail<2>() = joint_accelerations(x, tau, p);
  return xdot;
}

/// Continuous-time Jacobians of forward_dynamics w.r.t. the state and the
/// two joint torques.
struct ContinuousJacobians {
  State xdot;
  Mat4 A;
  Mat42 B;
};

inline ContinuousJacobians dynamics_jacobians(const State& x, const JointTorque& tau,
                                              const ModelParams& p) {
  const Vec2 q = x.head<2>();
  const Vec2 qd = x.tail<2>();
  const double s2 = std::sin(q[1]);
  const double c2 = std::cos(q[1]);
  const double c1 = std::cos(q[0]);
  const double c12 = std::cos(q[0] + q[1]);
  const double k = p.m2 * p.l1 * p.r2;
  const double h = k * s2;
  const double dh = k * c2;

  const Mat2 M = mass_matrix(q, p);
  const Eigen::LDLT<Mat2> Mf(M);
  const Vec2 cqd(-h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), h * qd[0] * qd[0]);
  const Vec2 rhs = gravity_vector(q, p) + tau - cqd - friction_torque(qd, p);
  const Vec2 qdd = Mf.solve(rhs);

  // d(rhs)/dq, columns for q1 and q2
  const double ga = (p.m1 * p.r1 + p.m2 * p.l1) * p.g;
  const double gb = p.m2 * p.r2 * p.g;
  Mat2 drhs_dq;
  drhs_dq << ga * c1 + gb * c12, gb * c12 + dh * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]),
             gb * c12,           gb * c12 - dh * qd[0] * qd[0];
  // dM/dq2 * qdd
  Mat2 dM2;
  dM2 << -2.0 * k * s2, -k * s2, -k * s2, 0.0;
  Mat2 dq_term = drhs_dq;
  dq_term.col(1) -= dM2 * qdd;

  Mat2 drhs_dqd;
  drhs_dqd << 2.0 * h * qd[1], 2.0 * h * (qd[0] + qd[1]),
              -2.0 * h * qd[0], 0.0;
  const Vec2 fs = friction_slope(qd, p);
  drhs_dqd(0, 0) -= fs[0];
  drhs_dqd(1, 1) -= fs[1];

  ContinuousJacobians J;
  J.xdot.head<2>() = qd;
  J.xdot.tail<2>() = qdd;
  J.A.setZero();
  J.A.block<2, 2>(0, 2).setIdentity();
  J.A.block<2, 2>(2, 0) = Mf.solve(dq_term);
  J.A.block<2, 2>(2, 2) = Mf.solve(drhs_dqd);
  J.B.setZero();
  J.B.block<2, 2>(2, 0) = Mf.solve(Mat2::Identity());
  return J;
}

/// Kinetic plus potential energy, zero at hanging rest.
inline double total_energy(const State& x, const ModelParams& p) {
  const Vec2 qd = x.tail<2>();
  const double kinetic = 0.5 * qd.dot(mass_matrix(x.head<2>(), p) * qd);
  const double c1 = std::cos(x[kQ1]);
  const double c12 = std::cos(x[kQ1] + x[kQ2]);
  const double potential =
      p.g * (p.m1 * p.r1 * (c1 + 1.0) + p.m2 * (p.l1 * (c1 + 1.0) + p.r2 * (c12 + 1.0)));
  return kinetic + potential;
}

/// Gradient of total_energy w.r.t. the state.
inline Vec4 energy_gradient(const State& x, const ModelParams& p) {
  const Vec2 qd = x.tail<2>();
  const double s1 = std::sin(x[kQ1]);
  const double s12 = std::sin(x[kQ1] + x[kQ2]);
  const double k = p.m2 * p.l1 * p.r2;
  const double s2 = std::sin(x[kQ2]);
  Mat2 dM2;
  dM2 << -2.0 * k * s2, -k * s2, -k * s2, 0.0;
  Vec4 grad;
  grad[kQ1] = -p.g * ((p.m1 * p.r1 + p.m2 * p.l1) * s1 + p.m2 * p.r2 * s12);
  grad[kQ2] = -p.g * p.m2 * p.r2 * s12 + 0.5 * qd.dot(dM2 * qd);
  grad.tail<2>() = mass_matrix(x.head<2>(), p) * qd;
  return grad;
}

/// Height of the end effector above the shoulder pivot.
inline double tip_height(const State& x, const ModelParams& p) {
  return p.l1 * std::cos(x[kQ1]) + p.l2 * std::cos(x[kQ1] + x[kQ2]);
}

/// One explicit RK4 step with zero-order-hold torque.
inline State integrate_step(const State& x, const JointTorque& tau, double dt,
                            const ModelParams& p) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_step: dt must be positive");
  const State k1 = forward_dynamics(x, tau, p);
  const State k2 = forward_dynamics(x + 0.5 * dt * k1, tau, p);
  const State k3 = forward_dynamics(x + 0.5 * dt * k2, tau, p);
  const State k4 = forward_dynamics(x + dt * k3, tau, p);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Maps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, kTwoPi);  // [-pi, pi]
  if (r <= -kPi) r += kTwoPi;
  return r;
}

inline State wrap_state(const State& x) {
  State y = x;
  y[kQ1] = wrap_angle(x[kQ1]);
  y[kQ2] = wrap_angle(x[kQ2]);
  return y;
}

}  // namespace dpmpc
