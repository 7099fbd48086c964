// Box-constrained OCP-structured QP solver.
//
//   min  sum_n 1/2 [x;u]' [Q S'; S R] [x;u] + q'x + r'u  +  1/2 x_N' Q_N x_N + q_N' x_N
//   s.t. x_0 = x0,   x_{n+1} = A_n x_n + B_n u_n + b_n,
//        x_lo <= x_n <= x_hi (n >= 1),   u_lo <= u_n <= u_hi.
//
// Mehrotra predictor-corrector interior point. Each iteration factorizes the
// barrier-augmented KKT system with one backward Riccati sweep and reuses it
// for the predictor and the corrector solve. Inputs with lo == hi are fixed
// exactly inside the recursion instead of getting slacks.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dpmpc {

enum class QpStatus { Converged, MaxIter, Infeasible };

struct QpSettings {
  double tol = 1e-3;
  int max_iter = 100;
  /// Fraction-to-boundary factor.
  double step_fraction = 0.995;
  /// Floor for the reduced input Hessian during the Riccati sweep.
  double reg = 1e-8;
  /// Duals above this are taken as a certificate of primal infeasibility.
  double dual_blowup = 1e12;
};

template <int NX, int NU>
struct QpStage {
  using MatXX = Eigen::Matrix<double, NX, NX>;
  using MatXU = Eigen::Matrix<double, NX, NU>;
  using MatUX = Eigen::Matrix<double, NU, NX>;
  using MatUU = Eigen::Matrix<double, NU, NU>;
  using VecX = Eigen::Matrix<double, NX, 1>;
  using VecU = Eigen::Matrix<double, NU, 1>;

  MatXX A = MatXX::Identity();
  MatXU B = MatXU::Zero();
  VecX b = VecX::Zero();
  MatXX Q = MatXX::Zero();
  MatUX S = MatUX::Zero();
  MatUU R = MatUU::Identity();
  VecX q = VecX::Zero();
  VecU r = VecU::Zero();
  VecX x_lo = VecX::Constant(-std::numeric_limits<double>::infinity());
  VecX x_hi = VecX::Constant(std::numeric_limits<double>::infinity());
  VecU u_lo = VecU::Constant(-std::numeric_limits<double>::infinity());
  VecU u_hi = VecU::Constant(std::numeric_limits<double>::infinity());
};

template <int NX, int NU>
struct OcpQp {
  using Stage = QpStage<NX, NU>;
  using VecX = typename Stage::VecX;
  using MatXX = typename Stage::MatXX;

  std::vector<Stage> stages;  // n = 0 .. N-1; stage 0 state bounds ignored
  MatXX Q_N = MatXX::Zero();
  VecX q_N = VecX::Zero();
  VecX xN_lo = VecX::Constant(-std::numeric_limits<double>::infinity());
  VecX xN_hi = VecX::Constant(std::numeric_limits<double>::infinity());
  VecX x0 = VecX::Zero();

  [[nodiscard]] int horizon() const { return static_cast<int>(stages.size()); }
};

template <int NX, int NU>
struct QpSolution {
  using VecX = Eigen::Matrix<double, NX, 1>;
  using VecU = Eigen::Matrix<double, NU, 1>;

  std::vector<VecX> x;       // N+1
  std::vector<VecU> u;       // N
  std::vector<VecX> pi;      // N, dynamics multipliers
  std::vector<VecX> lam_x_lo, lam_x_hi;  // N+1
  std::vector<VecU> lam_u_lo, lam_u_hi;  // N
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double res_stationarity = 0.0;
  double res_equality = 0.0;
  double res_inequality = 0.0;
  double res_complementarity = 0.0;

  [[nodiscard]] double kkt() const {
    return std::max({res_stationarity, res_equality, res_inequality, res_complementarity});
  }
};

template <int NX, int NU>
class RiccatiQpSolver {
 public:
  using Qp = OcpQp<NX, NU>;
  using Stage = QpStage<NX, NU>;
  using Solution = QpSolution<NX, NU>;
  using VecX = typename Stage::VecX;
  using VecU = typename Stage::VecU;
  using MatXX = typename Stage::MatXX;
  using MatUX = typename Stage::MatUX;
  using MatUU = typename Stage::MatUU;

  RiccatiQpSolver() = default;
  explicit RiccatiQpSolver(QpSettings settings) : settings_(settings) {}

  [[nodiscard]] const QpSettings& settings() const { return settings_; }
  QpSettings& settings() { return settings_; }

  struct Workspace;

  /// Setup, initial slacks and the first Riccati factorization. None of
  /// this depends on qp.x0, so it can run before the initial state is known.
  [[nodiscard]] Workspace prepare(const Qp& qp) const {
    const int N = qp.horizon();
    Workspace ws;
    Solution& sol = ws.start;
    sol.x.assign(N + 1, VecX::Zero());
    sol.u.assign(N, VecU::Zero());
    sol.pi.assign(N, VecX::Zero());
    sol.lam_x_lo.assign(N + 1, VecX::Zero());
    sol.lam_x_hi.assign(N + 1, VecX::Zero());
    sol.lam_u_lo.assign(N, VecU::Zero());
    sol.lam_u_hi.assign(N, VecU::Zero());
    ws.feasible = setup(qp, ws.work);
    if (!ws.feasible) return ws;
    for (int n = 0; n < N; ++n) {
      for (int i = 0; i < NU; ++i)
        if (ws.work.u_fixed[n][i]) sol.u[n][i] = qp.stages[n].u_lo[i];
    }
    init_slacks(qp, ws.work, sol);
    factorize(qp, ws.work, sol);
    ws.factorized = true;
    return ws;
  }

  [[nodiscard]] Solution solve(const Qp& qp) const { return solve(qp, prepare(qp)); }

  /// Runs the interior-point iterations from a prepared workspace.
  [[nodiscard]] Solution solve(const Qp& qp, Workspace ws) const {
    Solution sol = std::move(ws.start);
    if (!ws.feasible) {
      sol.status = QpStatus::Infeasible;
      return sol;
    }
    Work& w = ws.work;
    sol.x[0] = qp.x0;

    const int m = w.num_bounds;
    bool factorized = ws.factorized;
    // once mu is tiny the barrier system is badly conditioned and iterates can
    // drift away again, so keep the best one seen
    Solution best;
    double best_kkt = std::numeric_limits<double>::infinity();
    for (int it = 0;; ++it) {
      sol.iterations = it;
      const double mu = m > 0 ? complementarity(w, sol) / m : 0.0;
      residuals(qp, w, sol);
      sol.res_complementarity = max_complementarity(w, sol);
      if (sol.kkt() < best_kkt) {
        best_kkt = sol.kkt();
        best = sol;
      }
      if (sol.res_stationarity <= settings_.tol && sol.res_equality <= settings_.tol &&
          sol.res_inequality <= settings_.tol && sol.res_complementarity <= settings_.tol) {
        sol.status = QpStatus::Converged;
        break;
      }
      if (max_dual(sol) > settings_.dual_blowup) {
        sol.status = QpStatus::Infeasible;
        break;
      }
      if (it >= settings_.max_iter) {
        sol.status = QpStatus::MaxIter;
        break;
      }

      if (!factorized) factorize(qp, w, sol);
      factorized = false;

      // predictor
      Direction aff;
      solve_direction(qp, w, sol, 0.0, nullptr, aff);
      double alpha_aff = max_step(w, sol, aff, 1.0);
      double sigma = 0.0;
      if (m > 0) {
        const double mu_aff = complementarity_after(w, sol, aff, alpha_aff) / m;
        sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3);
        sigma = std::clamp(sigma, 0.0, 1.0);
      }

      // corrector
      Direction dir;
      solve_direction(qp, w, sol, sigma * mu, &aff, dir);
      const double alpha = std::min(1.0, max_step(w, sol, dir, settings_.step_fraction));
      // a degenerate barrier system near the optimum can yield a non-finite
      // step; the current iterate is then the best available
      if (!finite(dir) || !std::isfinite(alpha)) {
        sol.status = QpStatus::MaxIter;
        break;
      }
      apply(w, sol, dir, alpha);
    }
    if (sol.status == QpStatus::MaxIter && best_kkt < sol.kkt()) {
      const int its = sol.iterations;
      sol = std::move(best);
      sol.iterations = its;
      sol.status = QpStatus::MaxIter;
    }
    return sol;
  }

 private:
  struct Work {
    // per-node masks: lower/upper bound present, input fixed
    std::vector<Eigen::Matrix<bool, NX, 1>> x_has_lo, x_has_hi;
    std::vector<Eigen::Matrix<bool, NU, 1>> u_has_lo, u_has_hi, u_fixed;
    std::vector<VecX> x_lo, x_hi;
    std::vector<VecU> u_lo, u_hi;
    // slacks and their duals (only meaningful where the mask is set)
    std::vector<VecX> sx_lo, sx_hi;
    std::vector<VecU> su_lo, su_hi;
    int num_bounds = 0;
    // Riccati factorization
    std::vector<MatXX> P;          // N+1
    std::vector<MatUU> Ruu;        // N
    std::vector<MatUX> Sux, K;     // N
    std::vector<Eigen::PartialPivLU<MatUU>> Mlu;
    std::vector<VecX> sig_x;       // N+1
    std::vector<VecU> sig_u;       // N
  };

  struct Direction {
    std::vector<VecX> dx;
    std::vector<VecU> du;
    std::vector<VecX> pi;  // full new multipliers
    std::vector<VecX> dsx_lo, dsx_hi, dlx_lo, dlx_hi;
    std::vector<VecU> dsu_lo, dsu_hi, dlu_lo, dlu_hi;
  };

 public:
  struct Workspace {
    Work work;
    Solution start;
    bool feasible = true;
    bool factorized = false;
  };

 private:

  static bool finite_lo(double v) { return v > -std::numeric_limits<double>::infinity(); }
  static bool finite_hi(double v) { return v < std::numeric_limits<double>::infinity(); }

  bool setup(const Qp& qp, Work& w) const {
    const int N = qp.horizon();
    w.x_has_lo.assign(N + 1, Eigen::Matrix<bool, NX, 1>::Constant(false));
    w.x_has_hi = w.x_has_lo;
    w.u_has_lo.assign(N, Eigen::Matrix<bool, NU, 1>::Constant(false));
    w.u_has_hi = w.u_has_lo;
    w.u_fixed = w.u_has_lo;
    w.x_lo.assign(N + 1, VecX::Zero());
    w.x_hi.assign(N + 1, VecX::Zero());
    w.u_lo.assign(N, VecU::Zero());
    w.u_hi.assign(N, VecU::Zero());
    w.num_bounds = 0;
    for (int n = 1; n <= N; ++n) {
      const VecX& lo = n < N ? qp.stages[n].x_lo : qp.xN_lo;
      const VecX& hi = n < N ? qp.stages[n].x_hi : qp.xN_hi;
      for (int i = 0; i < NX; ++i) {
        if (lo[i] > hi[i]) return false;
        double l = lo[i];
        double h = hi[i];
        // equal state bounds are treated as a thin interval
        if (l == h) {
          l -= 1e-10;
          h += 1e-10;
        }
        w.x_lo[n][i] = l;
        w.x_hi[n][i] = h;
        w.x_has_lo[n][i] = finite_lo(l);
        w.x_has_hi[n][i] = finite_hi(h);
        w.num_bounds += int(w.x_has_lo[n][i]) + int(w.x_has_hi[n][i]);
      }
    }
    for (int n = 0; n < N; ++n) {
      const auto& st = qp.stages[n];
      for (int i = 0; i < NU; ++i) {
        if (st.u_lo[i] > st.u_hi[i]) return false;
        w.u_lo[n][i] = st.u_lo[i];
        w.u_hi[n][i] = st.u_hi[i];
        if (st.u_lo[i] == st.u_hi[i]) {
          w.u_fixed[n][i] = true;
          continue;
        }
        w.u_has_lo[n][i] = finite_lo(st.u_lo[i]);
        w.u_has_hi[n][i] = finite_hi(st.u_hi[i]);
        w.num_bounds += int(w.u_has_lo[n][i]) + int(w.u_has_hi[n][i]);
      }
    }
    return true;
  }

  void init_slacks(const Qp& qp, Work& w, Solution& sol) const {
    const int N = qp.horizon();
    w.sx_lo.assign(N + 1, VecX::Zero());
    w.sx_hi.assign(N + 1, VecX::Zero());
    w.su_lo.assign(N, VecU::Zero());
    w.su_hi.assign(N, VecU::Zero());
    constexpr double kMin = 1.0;
    for (int n = 1; n <= N; ++n) {
      for (int i = 0; i < NX; ++i) {
        if (w.x_has_lo[n][i]) {
          w.sx_lo[n][i] = std::max(sol.x[n][i] - w.x_lo[n][i], kMin);
          sol.lam_x_lo[n][i] = 1.0;
        }
        if (w.x_has_hi[n][i]) {
          w.sx_hi[n][i] = std::max(w.x_hi[n][i] - sol.x[n][i], kMin);
          sol.lam_x_hi[n][i] = 1.0;
        }
      }
    }
    for (int n = 0; n < N; ++n) {
      for (int i = 0; i < NU; ++i) {
        if (w.u_has_lo[n][i]) {
          w.su_lo[n][i] = std::max(sol.u[n][i] - w.u_lo[n][i], kMin);
          sol.lam_u_lo[n][i] = 1.0;
        }
        if (w.u_has_hi[n][i]) {
          w.su_hi[n][i] = std::max(w.u_hi[n][i] - sol.u[n][i], kMin);
          sol.lam_u_hi[n][i] = 1.0;
        }
      }
    }
  }

  template <typename Fn>
  static void for_each_bound(const Work& w, Fn&& fn) {
    const int N = static_cast<int>(w.u_lo.size());
    for (int n = 1; n <= N; ++n)
      for (int i = 0; i < NX; ++i) {
        if (w.x_has_lo[n][i]) fn(true, n, i, true);
        if (w.x_has_hi[n][i]) fn(true, n, i, false);
      }
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < NU; ++i) {
        if (w.u_has_lo[n][i]) fn(false, n, i, true);
        if (w.u_has_hi[n][i]) fn(false, n, i, false);
      }
  }

  static double slack(const Work& w, bool is_x, int n, int i, bool lo) {
    if (is_x) return lo ? w.sx_lo[n][i] : w.sx_hi[n][i];
    return lo ? w.su_lo[n][i] : w.su_hi[n][i];
  }
  static double dual(const Solution& s, bool is_x, int n, int i, bool lo) {
    if (is_x) return lo ? s.lam_x_lo[n][i] : s.lam_x_hi[n][i];
    return lo ? s.lam_u_lo[n][i] : s.lam_u_hi[n][i];
  }
  static double dslack(const Direction& d, bool is_x, int n, int i, bool lo) {
    if (is_x) return lo ? d.dsx_lo[n][i] : d.dsx_hi[n][i];
    return lo ? d.dsu_lo[n][i] : d.dsu_hi[n][i];
  }
  static double ddual(const Direction& d, bool is_x, int n, int i, bool lo) {
    if (is_x) return lo ? d.dlx_lo[n][i] : d.dlx_hi[n][i];
    return lo ? d.dlu_lo[n][i] : d.dlu_hi[n][i];
  }

  static bool finite_iterate(const Solution& s) {
    for (const auto& v : s.x)
      if (!v.allFinite()) return false;
    for (const auto& v : s.u)
      if (!v.allFinite()) return false;
    for (const auto& v : s.pi)
      if (!v.allFinite()) return false;
    return true;
  }

  static bool finite(const Direction& d) {
    auto ok = [](const auto& vs) {
      for (const auto& v : vs)
        if (!v.allFinite()) return false;
      return true;
    };
    return ok(d.dx) && ok(d.du) && ok(d.pi) && ok(d.dsx_lo) && ok(d.dsx_hi) && ok(d.dlx_lo) &&
           ok(d.dlx_hi) && ok(d.dsu_lo) && ok(d.dsu_hi) && ok(d.dlu_lo) && ok(d.dlu_hi);
  }

  static double complementarity(const Work& w, const Solution& s) {
    double sum = 0.0;
    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      sum += slack(w, is_x, n, i, lo) * dual(s, is_x, n, i, lo);
    });
    return sum;
  }

  static double max_complementarity(const Work& w, const Solution& s) {
    double mx = 0.0;
    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      mx = std::max(mx, slack(w, is_x, n, i, lo) * dual(s, is_x, n, i, lo));
    });
    return mx;
  }

  static double max_dual(const Solution& s) {
    double mx = 0.0;
    for (const auto& v : s.lam_x_lo) mx = std::max(mx, v.cwiseAbs().maxCoeff());
    for (const auto& v : s.lam_x_hi) mx = std::max(mx, v.cwiseAbs().maxCoeff());
    for (const auto& v : s.lam_u_lo) mx = std::max(mx, v.cwiseAbs().maxCoeff());
    for (const auto& v : s.lam_u_hi) mx = std::max(mx, v.cwiseAbs().maxCoeff());
    return mx;
  }

  static double complementarity_after(const Work& w, const Solution& s, const Direction& d,
                                      double alpha) {
    double sum = 0.0;
    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      sum += (slack(w, is_x, n, i, lo) + alpha * dslack(d, is_x, n, i, lo)) *
             (dual(s, is_x, n, i, lo) + alpha * ddual(d, is_x, n, i, lo));
    });
    return sum;
  }

  static double max_step(const Work& w, const Solution& s, const Direction& d, double frac) {
    double alpha = 1.0 / frac;
    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      const double ds = dslack(d, is_x, n, i, lo);
      const double dl = ddual(d, is_x, n, i, lo);
      if (ds < 0.0) alpha = std::min(alpha, -slack(w, is_x, n, i, lo) / ds);
      if (dl < 0.0) alpha = std::min(alpha, -dual(s, is_x, n, i, lo) / dl);
    });
    return frac * alpha;
  }

  // Stationarity, dynamics and bound residuals at the current iterate.
  void residuals(const Qp& qp, const Work& w, Solution& sol) const {
    const int N = qp.horizon();
    double rs = 0.0, re = 0.0, ri = 0.0;
    for (int n = 0; n < N; ++n) {
      const auto& st = qp.stages[n];
      const VecX c = st.A * sol.x[n] + st.B * sol.u[n] + st.b - sol.x[n + 1];
      re = std::max(re, c.cwiseAbs().maxCoeff());
      VecU gu = st.S * sol.x[n] + st.R * sol.u[n] + st.r + st.B.transpose() * sol.pi[n] -
                sol.lam_u_lo[n] + sol.lam_u_hi[n];
      for (int i = 0; i < NU; ++i)
        if (!w.u_fixed[n][i]) rs = std::max(rs, std::abs(gu[i]));
      if (n > 0) {
        const VecX gx = st.Q * sol.x[n] + st.S.transpose() * sol.u[n] + st.q +
                        st.A.transpose() * sol.pi[n] - sol.pi[n - 1] - sol.lam_x_lo[n] +
                        sol.lam_x_hi[n];
        rs = std::max(rs, gx.cwiseAbs().maxCoeff());
      }
    }
    {
      VecX gN = qp.Q_N * sol.x[N] + qp.q_N - sol.lam_x_lo[N] + sol.lam_x_hi[N];
      if (N > 0) gN -= sol.pi[N - 1];
      rs = std::max(rs, gN.cwiseAbs().maxCoeff());
    }
    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      const double z = is_x ? sol.x[n][i] : sol.u[n][i];
      const double bnd = is_x ? (lo ? w.x_lo[n][i] : w.x_hi[n][i])
                              : (lo ? w.u_lo[n][i] : w.u_hi[n][i]);
      const double r = lo ? (z - bnd - slack(w, is_x, n, i, lo))
                          : (bnd - z - slack(w, is_x, n, i, lo));
      ri = std::max(ri, std::abs(r));
    });
    // std::max drops NaN, so a broken iterate must be flagged explicitly
    constexpr double kInf = std::numeric_limits<double>::infinity();
    sol.res_stationarity = std::isfinite(rs) && finite_iterate(sol) ? rs : kInf;
    sol.res_equality = std::isfinite(re) ? re : kInf;
    sol.res_inequality = std::isfinite(ri) ? ri : kInf;
  }

  void factorize(const Qp& qp, Work& w, const Solution& sol) const {
    const int N = qp.horizon();
    w.P.resize(N + 1);
    w.Ruu.resize(N);
    w.Sux.resize(N);
    w.K.resize(N);
    w.Mlu.resize(N);
    w.sig_x.assign(N + 1, VecX::Zero());
    w.sig_u.assign(N, VecU::Zero());
    for (int n = 1; n <= N; ++n)
      for (int i = 0; i < NX; ++i) {
        if (w.x_has_lo[n][i]) w.sig_x[n][i] += sol.lam_x_lo[n][i] / w.sx_lo[n][i];
        if (w.x_has_hi[n][i]) w.sig_x[n][i] += sol.lam_x_hi[n][i] / w.sx_hi[n][i];
      }
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < NU; ++i) {
        if (w.u_has_lo[n][i]) w.sig_u[n][i] += sol.lam_u_lo[n][i] / w.su_lo[n][i];
        if (w.u_has_hi[n][i]) w.sig_u[n][i] += sol.lam_u_hi[n][i] / w.su_hi[n][i];
      }

    w.P[N] = qp.Q_N;
    w.P[N].diagonal() += w.sig_x[N];
    for (int n = N - 1; n >= 0; --n) {
      const auto& st = qp.stages[n];
      const MatXX& P = w.P[n + 1];
      const auto BtP = (st.B.transpose() * P).eval();
      MatUU Ruu = st.R + BtP * st.B;
      Ruu.diagonal() += w.sig_u[n];
      for (int i = 0; i < NU; ++i)
        if (!w.u_fixed[n][i] && Ruu(i, i) < settings_.reg) Ruu(i, i) = settings_.reg;
      const MatUX Sux = st.S + BtP * st.A;
      MatUU M = Ruu;
      MatUX G = Sux;
      for (int i = 0; i < NU; ++i) {
        if (w.u_fixed[n][i]) {
          M.row(i).setZero();
          M(i, i) = 1.0;
          G.row(i).setZero();
        }
      }
      w.Mlu[n].compute(M);
      const MatUX K = -w.Mlu[n].solve(G);
      MatXX Qn = st.Q;
      if (n > 0) Qn.diagonal() += w.sig_x[n];
      MatXX Pn = Qn + st.A.transpose() * P * st.A + K.transpose() * Ruu * K +
                 K.transpose() * Sux + Sux.transpose() * K;
      w.P[n] = 0.5 * (Pn + Pn.transpose());
      w.Ruu[n] = Ruu;
      w.Sux[n] = Sux;
      w.K[n] = K;
    }
  }

  // Solves the Newton system for a given centering target; `aff` adds the
  // Mehrotra second-order term when present.
  void solve_direction(const Qp& qp, const Work& w, const Solution& sol, double sigma_mu,
                       const Direction* aff, Direction& d) const {
    const int N = qp.horizon();
    d.dx.assign(N + 1, VecX::Zero());
    d.du.assign(N, VecU::Zero());
    d.pi.assign(N, VecX::Zero());
    d.dsx_lo.assign(N + 1, VecX::Zero());
    d.dsx_hi.assign(N + 1, VecX::Zero());
    d.dlx_lo.assign(N + 1, VecX::Zero());
    d.dlx_hi.assign(N + 1, VecX::Zero());
    d.dsu_lo.assign(N, VecU::Zero());
    d.dsu_hi.assign(N, VecU::Zero());
    d.dlu_lo.assign(N, VecU::Zero());
    d.dlu_hi.assign(N, VecU::Zero());

    // complementarity residual r_c = s*lam (+ ds_aff*dl_aff) - sigma*mu
    auto rc = [&](bool is_x, int n, int i, bool lo) {
      double v = slack(w, is_x, n, i, lo) * dual(sol, is_x, n, i, lo) - sigma_mu;
      if (aff) v += dslack(*aff, is_x, n, i, lo) * ddual(*aff, is_x, n, i, lo);
      return v;
    };
    auto rp = [&](bool is_x, int n, int i, bool lo) {
      const double z = is_x ? sol.x[n][i] : sol.u[n][i];
      if (is_x)
        return lo ? z - w.x_lo[n][i] - w.sx_lo[n][i] : w.x_hi[n][i] - z - w.sx_hi[n][i];
      return lo ? z - w.u_lo[n][i] - w.su_lo[n][i] : w.u_hi[n][i] - z - w.su_hi[n][i];
    };

    // reduced linear terms of the LQ subproblem in the step variables
    std::vector<VecX> gx(N + 1, VecX::Zero());
    std::vector<VecU> gu(N, VecU::Zero());
    for (int n = 0; n < N; ++n) {
      const auto& st = qp.stages[n];
      gx[n] = st.Q * sol.x[n] + st.S.transpose() * sol.u[n] + st.q;
      gu[n] = st.S * sol.x[n] + st.R * sol.u[n] + st.r;
    }
    gx[N] = qp.Q_N * sol.x[N] + qp.q_N;
    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      const double s = slack(w, is_x, n, i, lo);
      const double l = dual(sol, is_x, n, i, lo);
      const double term = lo ? (-l + (rc(is_x, n, i, lo) + l * rp(is_x, n, i, lo)) / s)
                             : (l - (rc(is_x, n, i, lo) + l * rp(is_x, n, i, lo)) / s);
      if (is_x)
        gx[n][i] += term;
      else
        gu[n][i] += term;
    });

    // backward sweep for the affine terms
    std::vector<VecX> p(N + 1);
    std::vector<VecU> k(N);
    std::vector<VecX> c(N);
    p[N] = gx[N];
    for (int n = N - 1; n >= 0; --n) {
      const auto& st = qp.stages[n];
      c[n] = st.A * sol.x[n] + st.B * sol.u[n] + st.b - sol.x[n + 1];
      const VecX pc = p[n + 1] + w.P[n + 1] * c[n];
      const VecU rho = gu[n] + st.B.transpose() * pc;
      VecU h = rho;
      for (int i = 0; i < NU; ++i)
        if (w.u_fixed[n][i]) h[i] = -(w.u_lo[n][i] - sol.u[n][i]);
      k[n] = -w.Mlu[n].solve(h);
      const auto& K = w.K[n];
      p[n] = gx[n] + st.A.transpose() * pc + K.transpose() * (w.Ruu[n] * k[n]) +
             K.transpose() * rho + w.Sux[n].transpose() * k[n];
    }

    // forward rollout
    d.dx[0] = qp.x0 - sol.x[0];
    for (int n = 0; n < N; ++n) {
      const auto& st = qp.stages[n];
      d.du[n] = w.K[n] * d.dx[n] + k[n];
      d.dx[n + 1] = st.A * d.dx[n] + st.B * d.du[n] + c[n];
      d.pi[n] = w.P[n + 1] * d.dx[n + 1] + p[n + 1];
    }

    for_each_bound(w, [&](bool is_x, int n, int i, bool lo) {
      const double dz = is_x ? d.dx[n][i] : d.du[n][i];
      const double s = slack(w, is_x, n, i, lo);
      const double l = dual(sol, is_x, n, i, lo);
      const double r = rp(is_x, n, i, lo);
      const double ds = lo ? dz + r : r - dz;
      const double dl = (-rc(is_x, n, i, lo) - l * ds) / s;
      if (is_x) {
        (lo ? d.dsx_lo : d.dsx_hi)[n][i] = ds;
        (lo ? d.dlx_lo : d.dlx_hi)[n][i] = dl;
      } else {
        (lo ? d.dsu_lo : d.dsu_hi)[n][i] = ds;
        (lo ? d.dlu_lo : d.dlu_hi)[n][i] = dl;
      }
    });
  }

  static void apply(Work& w, Solution& sol, const Direction& d, double alpha) {
    const int N = static_cast<int>(sol.u.size());
    for (int n = 0; n <= N; ++n) {
      sol.x[n] += alpha * d.dx[n];
      sol.lam_x_lo[n] += alpha * d.dlx_lo[n];
      sol.lam_x_hi[n] += alpha * d.dlx_hi[n];
      w.sx_lo[n] += alpha * d.dsx_lo[n];
      w.sx_hi[n] += alpha * d.dsx_hi[n];
    }
    for (int n = 0; n < N; ++n) {
      sol.u[n] += alpha * d.du[n];
      sol.pi[n] += alpha * (d.pi[n] - sol.pi[n]);
      sol.lam_u_lo[n] += alpha * d.dlu_lo[n];
      sol.lam_u_hi[n] += alpha * d.dlu_hi[n];
      w.su_lo[n] += alpha * d.dsu_lo[n];
      w.su_hi[n] += alpha * d.dsu_hi[n];
    }
  }

  QpSettings settings_;
};

}  // namespace dpmpc
