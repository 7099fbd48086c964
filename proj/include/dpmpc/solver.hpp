// Multiple-shooting NLP solvers: Gauss-Newton SQP, the real-time iteration
// split into preparation and feedback, and an iLQR-style DDP backend.

#pragma once

#include "dpmpc/ocp.hpp"
#include "dpmpc/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dpmpc {

enum class Backend { SQP, SQP_RTI, DDP };

inline std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::SQP: return "SQP";
    case Backend::SQP_RTI: return "SQP_RTI";
    case Backend::DDP: return "DDP";
  }
  return "?";
}

inline Backend backend_from_string(std::string_view s) {
  if (s == "SQP") return Backend::SQP;
  if (s == "SQP_RTI" || s == "SQP-RTI") return Backend::SQP_RTI;
  if (s == "DDP") return Backend::DDP;
  throw std::invalid_argument("unknown solver_type '" + std::string(s) + "'");
}

enum class SolveStatus { Converged, MaxIter, Infeasible, Timeout };

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Timeout: return "timeout";
  }
  return "?";
}

struct Solution {
  std::vector<State> xs;   // N+1
  std::vector<double> us;  // N
  SolveStatus status = SolveStatus::MaxIter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  double prepare_time = 0.0;
  double feedback_time = 0.0;
  double total_time = 0.0;

  [[nodiscard]] int N() const { return static_cast<int>(us.size()); }
};

struct SolverSettings {
  Backend backend = Backend::SQP_RTI;
  int max_iter = 500;
  double kkt_tol = 1e-6;
  double qp_tol = 1e-3;
  double max_solve_time = 1.0;
  /// Levenberg-Marquardt damping added to the input Hessian.
  double lm_reg = 1e-8;
  bool line_search = true;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-6;
  int qp_max_iter = 100;

  void validate() const {
    if (max_iter < 0) throw std::invalid_argument("max_iter must be >= 0");
    if (!(kkt_tol > 0) || !(qp_tol > 0)) throw std::invalid_argument("tolerances must be positive");
    if (!(max_solve_time > 0)) throw std::invalid_argument("max_solve_time must be positive");
  }
};

using QpData = OcpQp<4, 1>;
using OcpQpSolver = RiccatiQpSolver<4, 1>;
using OcpQpSolution = QpSolution<4, 1>;

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline Eigen::Matrix<double, 1, 1> scalar(double v) {
  Eigen::Matrix<double, 1, 1> m;
  m(0, 0) = v;
  return m;
}

}  // namespace detail

/// Zero-input (or given-input) rollout from ocp.x0.
inline Solution rollout(const OcpProblem& ocp, std::vector<double> us) {
  Solution s;
  s.us = std::move(us);
  s.us.resize(ocp.N(), 0.0);
  s.xs.resize(ocp.N() + 1);
  s.xs[0] = ocp.x0;
  for (int n = 0; n < ocp.N(); ++n) s.xs[n + 1] = ocp.step(n, s.xs[n], s.us[n]);
  return s;
}

/// Local quadratic model of the NLP around `guess`, in step coordinates.
/// qp.x0 is x0 - guess.xs[0] for the problem's own x0.
inline QpData linearize(const OcpProblem& ocp, const Solution& guess, double lm_reg = 1e-8) {
  const int N = ocp.N();
  if (guess.N() != N || static_cast<int>(guess.xs.size()) != N + 1)
    throw std::invalid_argument("linearize: guess does not match the grid");
  QpData qp;
  qp.stages.resize(N);
  const auto& bd = ocp.bounds;
  for (int n = 0; n < N; ++n) {
    auto& st = qp.stages[n];
    const ShootingStep step = ocp.linearize_step(n, guess.xs[n], guess.us[n]);
    st.A = step.A;
    st.B = step.B;
    st.b = step.x_next - guess.xs[n + 1];
    const CostDerivatives cd = cost_derivatives(guess.xs[n], guess.us[n], n, ocp.cost);
    st.Q = cd.Hxx;
    st.R = detail::scalar(std::max(cd.Huu, 1e-8) + lm_reg);
    st.q = cd.gx;
    st.r = detail::scalar(cd.gu);
    st.x_lo = bd.x_lo - guess.xs[n];
    st.x_hi = bd.x_hi - guess.xs[n];
    st.u_lo = detail::scalar(bd.u_lo - guess.us[n]);
    st.u_hi = detail::scalar(bd.u_hi - guess.us[n]);
  }
  const CostDerivatives cN = terminal_cost_derivatives(guess.xs[N], ocp.cost, ocp.model.params);
  qp.Q_N = cN.Hxx;
  qp.q_N = cN.gx;
  qp.xN_lo = bd.xf_lo - guess.xs[N];
  qp.xN_hi = bd.xf_hi - guess.xs[N];
  qp.x0 = ocp.x0 - guess.xs[0];
  return qp;
}

namespace detail {

inline Solution apply_step(const Solution& w, const OcpQpSolution& qs, double alpha,
                           const Bounds& bd) {
  Solution out = w;
  for (std::size_t n = 0; n < out.xs.size(); ++n) out.xs[n] += alpha * qs.x[n];
  for (std::size_t n = 0; n < out.us.size(); ++n)
    out.us[n] = std::clamp(out.us[n] + alpha * qs.u[n][0], bd.u_lo, bd.u_hi);
  return out;
}

struct Infeasibility {
  double l1 = 0.0;
  double linf = 0.0;
};

inline Infeasibility infeasibility(const OcpProblem& ocp, const Solution& w) {
  Infeasibility r;
  auto add = [&](double v) {
    v = std::abs(v);
    r.l1 += v;
    r.linf = std::max(r.linf, v);
  };
  for (int i = 0; i < 4; ++i) add(ocp.x0[i] - w.xs[0][i]);
  for (int n = 0; n < ocp.N(); ++n) {
    const State d = ocp.step(n, w.xs[n], w.us[n]) - w.xs[n + 1];
    for (int i = 0; i < 4; ++i) add(d[i]);
  }
  const auto& bd = ocp.bounds;
  for (int n = 1; n <= ocp.N(); ++n) {
    const Vec4& lo = n < ocp.N() ? bd.x_lo : bd.xf_lo;
    const Vec4& hi = n < ocp.N() ? bd.x_hi : bd.xf_hi;
    for (int i = 0; i < 4; ++i) {
      if (w.xs[n][i] < lo[i]) add(lo[i] - w.xs[n][i]);
      if (w.xs[n][i] > hi[i]) add(w.xs[n][i] - hi[i]);
    }
  }
  return r;
}

inline double max_multiplier(const OcpQpSolution& qs) {
  double m = 0.0;
  for (const auto& v : qs.pi) m = std::max(m, v.cwiseAbs().maxCoeff());
  for (const auto& v : qs.lam_x_lo) m = std::max(m, v.cwiseAbs().maxCoeff());
  for (const auto& v : qs.lam_x_hi) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

/// Directional derivative of the objective along the QP step.
inline double cost_slope(const QpData& qp, const OcpQpSolution& qs) {
  double d = 0.0;
  for (int n = 0; n < qp.horizon(); ++n)
    d += qp.stages[n].q.dot(qs.x[n]) + qp.stages[n].r.dot(qs.u[n]);
  d += qp.q_N.dot(qs.x.back());
  return d;
}

/// First-order optimality of the NLP at the linearization point `qp` was
/// built from, with multipliers taken from a QP solve.
inline double nlp_kkt(const OcpProblem& ocp, const Solution& w, const QpData& qp,
                      const OcpQpSolution& mult) {
  const int N = qp.horizon();
  double r = infeasibility(ocp, w).linf;
  for (int n = 0; n < N; ++n) {
    const auto& st = qp.stages[n];
    const double lu = mult.lam_u_lo[n][0] - mult.lam_u_hi[n][0];
    // R includes the Levenberg-Marquardt shift; the gradient does not.
    const double gu = st.r[0] + st.B.col(0).dot(mult.pi[n]) - lu;
    r = std::max(r, std::abs(gu));
    // complementarity against the current bounds
    if (std::isfinite(ocp.bounds.u_lo))
      r = std::max(r, std::abs(mult.lam_u_lo[n][0] * (w.us[n] - ocp.bounds.u_lo)));
    if (std::isfinite(ocp.bounds.u_hi))
      r = std::max(r, std::abs(mult.lam_u_hi[n][0] * (ocp.bounds.u_hi - w.us[n])));
    if (n > 0) {
      const Vec4 gx = st.q + st.A.transpose() * mult.pi[n] - mult.pi[n - 1] -
                      mult.lam_x_lo[n] + mult.lam_x_hi[n];
      r = std::max(r, gx.cwiseAbs().maxCoeff());
    }
  }
  Vec4 gN = qp.q_N - mult.lam_x_lo[N] + mult.lam_x_hi[N];
  if (N > 0) gN -= mult.pi[N - 1];
  return std::max(r, gN.cwiseAbs().maxCoeff());
}

}  // namespace detail

/// Full SQP: linearize, solve the QP, globalize with an L1 merit line
/// search, repeat until the KKT residual drops below kkt_tol.
inline Solution sqp_solve(const OcpProblem& ocp, const Solution& guess,
                          const SolverSettings& settings) {
  const auto t0 = detail::Clock::now();
  Solution w = guess;
  w.iterations = 0;
  w.status = SolveStatus::MaxIter;
  w.prepare_time = w.feedback_time = 0.0;
  if (settings.max_iter == 0) {
    w.total_time = detail::seconds_since(t0);
    return w;
  }

  double reg = settings.lm_reg;
  double merit_weight = 0.0;
  double kkt = std::numeric_limits<double>::infinity();
  QpData qp = linearize(ocp, w, reg);

  for (int it = 0; it < settings.max_iter; ++it) {
    if (it > 0 && detail::seconds_since(t0) > settings.max_solve_time) {
      w.status = SolveStatus::Timeout;
      break;
    }
    QpSettings qs_settings;
    qs_settings.tol = std::max(std::min(settings.qp_tol, 0.1 * kkt), 1e-12);
    qs_settings.max_iter = settings.qp_max_iter;
    OcpQpSolution qs;
    bool ok = false;
    for (int attempt = 0; attempt < 4; ++attempt) {
      qs = OcpQpSolver(qs_settings).solve(qp);
      if (qs.status != QpStatus::Infeasible) {
        ok = true;
        break;
      }
      reg *= 10.0;
      qp = linearize(ocp, w, reg);
    }
    if (!ok) {
      w.status = SolveStatus::Infeasible;
      break;
    }

    double alpha = 1.0;
    if (settings.line_search) {
      merit_weight = std::max(merit_weight, 1.1 * detail::max_multiplier(qs));
      const auto inf0 = detail::infeasibility(ocp, w);
      const double phi0 = trajectory_cost(ocp, w.xs, w.us) + merit_weight * inf0.l1;
      const double slope = std::min(detail::cost_slope(qp, qs) - merit_weight * inf0.l1, 0.0);
      while (true) {
        const Solution trial = detail::apply_step(w, qs, alpha, ocp.bounds);
        const double phi = trajectory_cost(ocp, trial.xs, trial.us) +
                           merit_weight * detail::infeasibility(ocp, trial).l1;
        if (phi <= phi0 + settings.armijo * alpha * slope) break;
        if (alpha * settings.backtrack < settings.min_step) break;
        alpha *= settings.backtrack;
      }
    }
    w = detail::apply_step(w, qs, alpha, ocp.bounds);
    w.iterations = it + 1;
    reg = std::max(settings.lm_reg, reg * 0.1);
    qp = linearize(ocp, w, reg);
    kkt = detail::nlp_kkt(ocp, w, qp, qs);
    w.kkt_residual = kkt;
    if (kkt <= settings.kkt_tol) {
      w.status = SolveStatus::Converged;
      break;
    }
  }
  w.total_time = detail::seconds_since(t0);
  return w;
}

/// Real-time iteration: prepare() linearizes around the guess and
/// factorizes the first QP iterate, feedback() injects the measured state
/// and finishes one full-step SQP iteration.
class RtiSolver {
 public:
  RtiSolver() = default;
  explicit RtiSolver(SolverSettings settings) : settings_(settings) {}

  void prepare(const OcpProblem& ocp, const Solution& guess) {
    const auto t0 = detail::Clock::now();
    guess_ = guess;
    qp_ = linearize(ocp, guess, settings_.lm_reg);
    QpSettings qs;
    qs.tol = settings_.qp_tol;
    qs.max_iter = settings_.qp_max_iter;
    solver_ = OcpQpSolver(qs);
    workspace_ = solver_.prepare(qp_);
    bounds_ = ocp.bounds;
    prepare_time_ = detail::seconds_since(t0);
  }

  [[nodiscard]] bool prepared() const { return workspace_.has_value(); }

  Solution feedback(const State& x0) {
    if (!workspace_) throw std::logic_error("RtiSolver::feedback called before prepare");
    const auto t0 = detail::Clock::now();
    qp_.x0 = x0 - guess_.xs[0];
    const OcpQpSolution qs = solver_.solve(qp_, std::move(*workspace_));
    workspace_.reset();
    Solution out;
    if (qs.status == QpStatus::Infeasible) {
      out = guess_;
      out.status = SolveStatus::Infeasible;
    } else {
      out = detail::apply_step(guess_, qs, 1.0, bounds_);
      out.status = SolveStatus::Converged;
      double step = 0.0;
      for (const auto& v : qs.x) step = std::max(step, v.cwiseAbs().maxCoeff());
      for (const auto& v : qs.u) step = std::max(step, std::abs(v[0]));
      out.kkt_residual = std::max(step, qs.kkt());
    }
    out.iterations = 1;
    out.prepare_time = prepare_time_;
    out.feedback_time = detail::seconds_since(t0);
    out.total_time = out.prepare_time + out.feedback_time;
    last_qp_ = qs;
    return out;
  }

  [[nodiscard]] const OcpQpSolution& last_qp() const { return last_qp_; }
  [[nodiscard]] const SolverSettings& settings() const { return settings_; }

 private:
  SolverSettings settings_;
  Solution guess_;
  QpData qp_;
  Bounds bounds_;
  OcpQpSolver solver_;
  std::optional<OcpQpSolver::Workspace> workspace_;
  OcpQpSolution last_qp_;
  double prepare_time_ = 0.0;
};

struct DdpSettings {
  /// Converged once the largest feedforward correction is below this.
  double step_tol = 1e-9;
  double reg_max = 1e10;
};

/// iLQR: Gauss-Newton backward pass with Levenberg-Marquardt damping,
/// clamped forward rollout with backtracking. Single shooting from ocp.x0;
/// only the guess inputs are used.
inline Solution ddp_solve(const OcpProblem& ocp, const Solution& guess,
                          const SolverSettings& settings, const DdpSettings& ddp = {}) {
  const auto t0 = detail::Clock::now();
  const int N = ocp.N();
  const auto& bd = ocp.bounds;
  std::vector<double> us = guess.us;
  us.resize(N, 0.0);
  for (double& u : us) u = std::clamp(u, bd.u_lo, bd.u_hi);
  Solution w = rollout(ocp, us);
  w.status = SolveStatus::MaxIter;
  double J = trajectory_cost(ocp, w.xs, w.us);
  double reg = settings.lm_reg;

  std::vector<Mat4> A(N);
  std::vector<Vec4> B(N);
  std::vector<CostDerivatives> cd(N);
  std::vector<double> kff(N);
  std::vector<Eigen::RowVector4d> Kfb(N);

  bool need_derivatives = true;
  for (int it = 0; it < settings.max_iter; ++it) {
    if (it > 0 && detail::seconds_since(t0) > settings.max_solve_time) {
      w.status = SolveStatus::Timeout;
      break;
    }
    if (need_derivatives) {
      for (int n = 0; n < N; ++n) {
        const ShootingStep s = ocp.linearize_step(n, w.xs[n], w.us[n]);
        A[n] = s.A;
        B[n] = s.B;
        cd[n] = cost_derivatives(w.xs[n], w.us[n], n, ocp.cost);
      }
      need_derivatives = false;
    }

    // backward pass
    const CostDerivatives cN = terminal_cost_derivatives(w.xs[N], ocp.cost, ocp.model.params);
    Vec4 Vx = cN.gx;
    Mat4 Vxx = cN.Hxx;
    double expected = 0.0;
    double grad = 0.0;
    double max_k = 0.0;
    bool pd = true;
    for (int n = N - 1; n >= 0; --n) {
      const Vec4 Qx = cd[n].gx + A[n].transpose() * Vx;
      const double Qu = cd[n].gu + B[n].dot(Vx);
      const Mat4 Qxx = cd[n].Hxx + A[n].transpose() * Vxx * A[n];
      const double Quu = std::max(cd[n].Huu, 1e-8) + B[n].dot(Vxx * B[n]) + reg;
      const Eigen::RowVector4d Qux = (Vxx * B[n]).transpose() * A[n];
      if (!(Quu > 0.0)) {
        pd = false;
        break;
      }
      kff[n] = -Qu / Quu;
      Kfb[n] = -Qux / Quu;
      grad = std::max(grad, std::abs(Qu));
      max_k = std::max(max_k, std::abs(kff[n]));
      expected += kff[n] * Qu + 0.5 * kff[n] * kff[n] * Quu;
      Vx = Qx + Kfb[n].transpose() * (Quu * kff[n] + Qu) + Qux.transpose() * kff[n];
      Mat4 V = Qxx + Kfb[n].transpose() * Quu * Kfb[n] + Kfb[n].transpose() * Qux +
               Qux.transpose() * Kfb[n];
      Vxx = 0.5 * (V + V.transpose());
    }
    if (!pd) {
      reg *= 10.0;
      if (reg > ddp.reg_max) break;
      continue;
    }
    w.kkt_residual = grad;
    if (max_k <= ddp.step_tol) {
      w.status = SolveStatus::Converged;
      break;
    }

    // forward pass
    bool accepted = false;
    for (double alpha = 1.0; alpha >= settings.min_step; alpha *= settings.backtrack) {
      Solution trial;
      trial.xs.resize(N + 1);
      trial.us.resize(N);
      trial.xs[0] = ocp.x0;
      for (int n = 0; n < N; ++n) {
        const double du = alpha * kff[n] + Kfb[n].dot(trial.xs[n] - w.xs[n]);
        trial.us[n] = std::clamp(w.us[n] + du, bd.u_lo, bd.u_hi);
        trial.xs[n + 1] = ocp.step(n, trial.xs[n], trial.us[n]);
      }
      const double Jt = trajectory_cost(ocp, trial.xs, trial.us);
      const double predicted = alpha * expected;  // <= 0 in the model
      if (Jt < J && J - Jt >= -settings.armijo * predicted) {
        trial.status = w.status;
        trial.kkt_residual = w.kkt_residual;
        w.xs = std::move(trial.xs);
        w.us = std::move(trial.us);
        J = Jt;
        accepted = true;
        break;
      }
    }
    w.iterations = it + 1;
    if (!accepted) {
      reg *= 10.0;
      if (reg > ddp.reg_max) break;
      continue;
    }
    reg = std::max(settings.lm_reg, reg * 0.1);
    need_derivatives = true;
  }
  w.total_time = detail::seconds_since(t0);
  return w;
}

/// Shift one node to the left: last state duplicated, last input zero.
inline Solution shift_warm_start(const Solution& prev, const ShootingGrid& grid) {
  if (prev.N() != grid.N() || prev.xs.size() != prev.us.size() + 1)
    throw std::invalid_argument("shift_warm_start: solution does not match the grid");
  Solution g = prev;
  const int N = prev.N();
  for (int n = 0; n < N; ++n) g.xs[n] = prev.xs[n + 1];
  g.xs[N] = prev.xs[N];
  for (int n = 0; n + 1 < N; ++n) g.us[n] = prev.us[n + 1];
  g.us[N - 1] = 0.0;
  g.iterations = 0;
  g.status = SolveStatus::MaxIter;
  return g;
}

/// Shifts the trajectory forward in time by `delta` seconds: states are
/// linearly interpolated between nodes, inputs are sampled zero-order-hold,
/// anything beyond the horizon holds the last state with zero input. With
/// delta equal to a uniform node spacing this is shift_warm_start.
inline Solution time_shift(const Solution& prev, const ShootingGrid& grid, double delta) {
  const int N = prev.N();
  std::vector<double> t(N + 1, 0.0);
  for (int n = 0; n < N; ++n) t[n + 1] = t[n] + grid.dts[n];
  auto locate = [&](double tau) {
    // interval index i with t[i] <= tau < t[i+1], or N past the end
    int i = static_cast<int>(std::upper_bound(t.begin(), t.end(), tau + 1e-12) - t.begin()) - 1;
    return std::clamp(i, 0, N);
  };
  Solution g = prev;
  for (int n = 0; n <= N; ++n) {
    const double tau = t[n] + delta;
    const int i = locate(tau);
    if (i >= N) {
      g.xs[n] = prev.xs[N];
    } else {
      const double s = std::clamp((tau - t[i]) / grid.dts[i], 0.0, 1.0);
      g.xs[n] = (s < 1e-12) ? prev.xs[i] : State((1.0 - s) * prev.xs[i] + s * prev.xs[i + 1]);
    }
    if (n < N) g.us[n] = i >= N ? 0.0 : prev.us[i];
  }
  g.iterations = 0;
  g.status = SolveStatus::MaxIter;
  return g;
}

}  // namespace dpmpc
