// Reference solutions the library is checked against: dense active-set
// enumeration and a plain Riccati recursion for OCP-structured QPs, plus a few
// OCP fixtures shared by the unit tests and the acceptance run.

#pragma once

#include "dpmpc/ocp.hpp"
#include "dpmpc/qp.hpp"
#include "dpmpc/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace dpmpc::oracle {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

template <int NX, int NU>
using Qp = OcpQp<NX, NU>;

template <int NX, int NU>
Qp<NX, NU> random_qp(std::mt19937_64& rng, int N) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Qp<NX, NU> qp;
  qp.stages.resize(N);
  using MX = Eigen::Matrix<double, NX, NX>;
  using MU = Eigen::Matrix<double, NU, NU>;
  auto rand_mat = [&](auto m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) m(i, j) = nd(rng);
    return m;
  };
  for (auto& st : qp.stages) {
    st.A = MX::Identity() + 0.3 * rand_mat(MX());
    st.B = rand_mat(typename QpStage<NX, NU>::MatXU());
    st.b = 0.1 * rand_mat(typename QpStage<NX, NU>::VecX());
    const MX L = rand_mat(MX());
    st.Q = 0.5 * L * L.transpose();
    const MU Lr = rand_mat(MU());
    st.R = Lr * Lr.transpose() + 0.5 * MU::Identity();
    // small cross term keeping the stage Hessian convex
    st.S = 0.1 * rand_mat(typename QpStage<NX, NU>::MatUX());
    Eigen::Matrix<double, NX + NU, NX + NU> H;
    H << st.Q, st.S.transpose(), st.S, st.R;
    const double mineig =
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, NX + NU, NX + NU>>(H).eigenvalues().minCoeff();
    if (mineig < 1e-3) st.Q += (1e-3 - mineig) * MX::Identity();
    st.q = rand_mat(typename QpStage<NX, NU>::VecX());
    st.r = rand_mat(typename QpStage<NX, NU>::VecU());
  }
  const MX L = rand_mat(MX());
  qp.Q_N = L * L.transpose() + MX::Identity();
  qp.q_N = rand_mat(typename QpStage<NX, NU>::VecX());
  qp.x0 = rand_mat(typename QpStage<NX, NU>::VecX());
  return qp;
}

/// Adds input boxes on every node and a box on state component 0 for nodes
/// 1..N that contain a random feasible rollout.
template <int NX, int NU>
void add_boxes(Qp<NX, NU>& qp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> un(0.0, 1.0);
  const int N = qp.horizon();
  typename QpStage<NX, NU>::VecX x = qp.x0;
  for (int n = 0; n < N; ++n) {
    auto& st = qp.stages[n];
    typename QpStage<NX, NU>::VecU u;
    for (int i = 0; i < NU; ++i) {
      const double w = 0.2 + un(rng);
      st.u_lo[i] = -w;
      st.u_hi[i] = w * (0.5 + un(rng));
      u[i] = st.u_lo[i] + un(rng) * (st.u_hi[i] - st.u_lo[i]);
    }
    x = st.A * x + st.B * u + st.b;
    const double lo = x[0] - 0.05 - 0.5 * un(rng);
    const double hi = x[0] + 0.05 + 0.5 * un(rng);
    if (n + 1 < N) {
      qp.stages[n + 1].x_lo[0] = lo;
      qp.stages[n + 1].x_hi[0] = hi;
    } else {
      qp.xN_lo[0] = lo;
      qp.xN_hi[0] = hi;
    }
  }
}

/// Condensed dense form: x = Phi x0 + G u + c over all nodes, then
/// 1/2 u'Hu + g'u. Returns H, g and the affine map.
template <int NX, int NU>
struct Dense {
  Eigen::MatrixXd H, G;  // G: (N+1)NX x N NU
  Eigen::VectorXd g, c;  // c includes Phi x0
};

template <int NX, int NU>
Dense<NX, NU> condense(const Qp<NX, NU>& qp) {
  const int N = qp.horizon();
  const int nx = (N + 1) * NX, nu = N * NU;
  Dense<NX, NU> d;
  d.G = Eigen::MatrixXd::Zero(nx, nu);
  d.c = Eigen::VectorXd::Zero(nx);
  d.c.template head<NX>() = qp.x0;
  for (int n = 0; n < N; ++n) {
    const auto& st = qp.stages[n];
    d.G.block(NX * (n + 1), 0, NX, nu) = st.A * d.G.block(NX * n, 0, NX, nu);
    d.G.block(NX * (n + 1), NU * n, NX, NU) += st.B;
    d.c.template segment<NX>(NX * (n + 1)) = st.A * d.c.template segment<NX>(NX * n) + st.b;
  }
  // full quadratic in z = (x, u)
  Eigen::MatrixXd Hxx = Eigen::MatrixXd::Zero(nx, nx), Hux = Eigen::MatrixXd::Zero(nu, nx),
                  Huu = Eigen::MatrixXd::Zero(nu, nu);
  Eigen::VectorXd gx = Eigen::VectorXd::Zero(nx), gu = Eigen::VectorXd::Zero(nu);
  for (int n = 0; n < N; ++n) {
    const auto& st = qp.stages[n];
    Hxx.template block<NX, NX>(NX * n, NX * n) = st.Q;
    Hux.template block<NU, NX>(NU * n, NX * n) = st.S;
    Huu.template block<NU, NU>(NU * n, NU * n) = st.R;
    gx.template segment<NX>(NX * n) = st.q;
    gu.template segment<NU>(NU * n) = st.r;
  }
  Hxx.template block<NX, NX>(NX * N, NX * N) = qp.Q_N;
  gx.template segment<NX>(NX * N) = qp.q_N;
  d.H = d.G.transpose() * Hxx * d.G + Hux * d.G + d.G.transpose() * Hux.transpose() + Huu;
  d.g = d.G.transpose() * (Hxx * d.c + gx) + Hux * d.c + gu;
  return d;
}

/// Exhaustive active-set enumeration on the condensed problem.
/// Empty if no active set gives a feasible KKT point.
template <int NX, int NU>
std::optional<Eigen::VectorXd> active_set_oracle(const Qp<NX, NU>& qp) {
  const auto d = condense(qp);
  const int N = qp.horizon();
  const int nu = N * NU;
  // rows: a'u <= b
  std::vector<Eigen::VectorXd> a;
  std::vector<double> b;
  auto add_box = [&](const Eigen::VectorXd& row, double off, double lo, double hi) {
    if (lo > -kInf && hi < kInf) {
      a.push_back(row);
      b.push_back(hi - off);
      a.push_back(-row);
      b.push_back(-(lo - off));
    }
  };
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < NU; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(nu);
      e[NU * n + i] = 1.0;
      add_box(e, 0.0, qp.stages[n].u_lo[i], qp.stages[n].u_hi[i]);
    }
  for (int n = 1; n <= N; ++n)
    for (int i = 0; i < NX; ++i) {
      const double lo = n < N ? qp.stages[n].x_lo[i] : qp.xN_lo[i];
      const double hi = n < N ? qp.stages[n].x_hi[i] : qp.xN_hi[i];
      add_box(d.G.row(NX * n + i).transpose(), d.c[NX * n + i], lo, hi);
    }
  const int boxes = static_cast<int>(a.size()) / 2;
  long combos = 1;
  for (int k = 0; k < boxes; ++k) combos *= 3;

  std::optional<Eigen::VectorXd> best;
  double best_val = kInf;
  for (long code = 0; code < combos; ++code) {
    std::vector<int> act;
    long c = code;
    for (int k = 0; k < boxes; ++k, c /= 3) {
      if (c % 3 == 1) act.push_back(2 * k);
      if (c % 3 == 2) act.push_back(2 * k + 1);
    }
    const int m = static_cast<int>(act.size());
    if (m > nu) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nu + m, nu + m);
    Eigen::VectorXd rhs(nu + m);
    K.topLeftCorner(nu, nu) = d.H;
    rhs.head(nu) = -d.g;
    for (int j = 0; j < m; ++j) {
      K.block(0, nu + j, nu, 1) = a[act[j]];
      K.block(nu + j, 0, 1, nu) = a[act[j]].transpose();
      rhs[nu + j] = b[act[j]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < nu + m) continue;
    const Eigen::VectorXd z = lu.solve(rhs);
    const Eigen::VectorXd u = z.head(nu);
    bool ok = true;
    for (int j = 0; j < m && ok; ++j) ok = z[nu + j] >= -1e-9;
    for (std::size_t r = 0; r < a.size() && ok; ++r) ok = a[r].dot(u) <= b[r] + 1e-9;
    if (!ok) continue;
    const double val = 0.5 * u.dot(d.H * u) + d.g.dot(u);
    if (val < best_val) {
      best_val = val;
      best = u;
    }
  }
  return best;
}

/// Textbook Riccati recursion for the unconstrained problem, with cross
/// terms and affine parts.
template <int NX, int NU>
std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::VectorXd>> riccati_oracle(
    const Qp<NX, NU>& qp) {
  const int N = qp.horizon();
  using MX = Eigen::MatrixXd;
  using VX = Eigen::VectorXd;
  MX P = qp.Q_N;
  VX p = qp.q_N;
  std::vector<MX> K(N);
  std::vector<VX> k(N);
  for (int n = N - 1; n >= 0; --n) {
    const auto& st = qp.stages[n];
    const MX A = st.A, B = st.B;
    const VX bb = st.b;
    const MX Huu = MX(st.R) + B.transpose() * P * B;
    const MX Hux = MX(st.S) + B.transpose() * P * A;
    const VX hu = VX(st.r) + B.transpose() * (P * bb + p);
    const MX Hxx = MX(st.Q) + A.transpose() * P * A;
    const VX hx = VX(st.q) + A.transpose() * (P * bb + p);
    const Eigen::LLT<MX> llt(Huu);
    K[n] = -llt.solve(Hux);
    k[n] = -llt.solve(hu);
    P = Hxx + Hux.transpose() * K[n];
    P = 0.5 * (P + P.transpose());
    p = hx + Hux.transpose() * k[n];
  }
  std::vector<VX> xs(N + 1), us(N);
  xs[0] = qp.x0;
  for (int n = 0; n < N; ++n) {
    us[n] = K[n] * xs[n] + k[n];
    xs[n + 1] = qp.stages[n].A * xs[n] + qp.stages[n].B * us[n] + qp.stages[n].b;
  }
  return {xs, us};
}

inline double sup_diff(const Solution& a, const Solution& b) {
  double d = 0.0;
  for (std::size_t n = 0; n < a.xs.size(); ++n) d = std::max(d, (a.xs[n] - b.xs[n]).cwiseAbs().maxCoeff());
  for (std::size_t n = 0; n < a.us.size(); ++n) d = std::max(d, std::abs(a.us[n] - b.us[n]));
  return d;
}

// Pendubot swing-up OCP as the controller builds it
inline OcpProblem swingup_ocp(int N = 20, double T = 0.5) {
  OcpProblem ocp;
  ocp.model.params.robot = Robot::Pendubot;
  ocp.grid = build_grid(N, T, false);
  ocp.x0 = hanging_state();
  return ocp;
}

// linear dynamics, quadratic cost, no active bounds
inline OcpProblem lq_ocp() {
  OcpProblem ocp;
  PredictionModel::Linear lin;
  lin.A << 0, 0, 1, 0,  //
      0, 0, 0, 1,       //
      3, -1, -0.1, 0,   //
      -2, 4, 0, -0.1;
  lin.B = Vec4(0, 0, 1.0, -0.5);
  ocp.model.linear = lin;
  ocp.grid = build_grid(15, 0.6, false);
  ocp.cost.Q = Vec4(10, 10, 1, 1);
  ocp.cost.R = 0.01;
  ocp.cost.Qf = Vec4(100, 100, 10, 10);
  ocp.bounds = Bounds::unbounded();
  ocp.x0 = State(0.3, -0.2, 0.1, 0.0);
  return ocp;
}

inline SolverSettings sqp_settings() {
  SolverSettings s;
  s.backend = Backend::SQP;
  s.max_iter = 200;
  s.kkt_tol = 1e-9;
  s.qp_tol = 1e-10;
  s.max_solve_time = 60.0;
  return s;
}

}  // namespace dpmpc::oracle
