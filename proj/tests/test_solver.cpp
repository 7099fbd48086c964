#include "dpmpc/solver.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace dpmpc;
using namespace dpmpc::oracle;

TEST(Sqp, LinearQuadraticConvergesInOneIteration) {
  const OcpProblem ocp = lq_ocp();
  // start far from the optimum and with large defects
  Solution guess = rollout(ocp, std::vector<double>(ocp.N(), 1.0));
  for (auto& x : guess.xs) x += State(1, -1, 2, 0.5);
  SolverSettings st = sqp_settings();
  st.lm_reg = 0.0;  // strictly convex already; any damping would make the step inexact
  const Solution s = sqp_solve(ocp, guess, st);
  EXPECT_EQ(s.status, SolveStatus::Converged);
  EXPECT_EQ(s.iterations, 1);
  EXPECT_LT(s.kkt_residual, 1e-9);
  // the result is dynamically consistent
  for (int n = 0; n < ocp.N(); ++n) EXPECT_LT((ocp.step(n, s.xs[n], s.us[n]) - s.xs[n + 1]).norm(), 1e-9);
}

TEST(Sqp, ZeroIterationsReturnsGuess) {
  const OcpProblem ocp = swingup_ocp();
  const Solution guess = rollout(ocp, std::vector<double>(ocp.N(), 0.5));
  SolverSettings st = sqp_settings();
  st.max_iter = 0;
  const Solution s = sqp_solve(ocp, guess, st);
  EXPECT_EQ(s.status, SolveStatus::MaxIter);
  EXPECT_EQ(s.iterations, 0);
  EXPECT_EQ(sup_diff(s, guess), 0.0);
}

TEST(Sqp, RolloutGuessHasZeroDefects) {
  const OcpProblem ocp = swingup_ocp();
  const Solution g = rollout(ocp, std::vector<double>(ocp.N(), 2.0));
  EXPECT_EQ(detail::infeasibility(ocp, g).linf, 0.0);
}

TEST(Sqp, MeritDecreasesOnAcceptedSteps) {
  const OcpProblem ocp = swingup_ocp();
  Solution w = rollout(ocp, std::vector<double>(ocp.N(), 1.0));
  SolverSettings st = sqp_settings();
  st.max_iter = 1;
  // the merit weight only grows, so check with the final weight afterwards
  std::vector<Solution> iters{w};
  for (int k = 0; k < 15; ++k) {
    w = sqp_solve(ocp, w, st);
    iters.push_back(w);
  }
  const double nu = 1e3;
  auto merit = [&](const Solution& s) {
    return trajectory_cost(ocp, s.xs, s.us) + nu * detail::infeasibility(ocp, s).l1;
  };
  for (std::size_t k = 1; k < iters.size(); ++k) EXPECT_LE(merit(iters[k]), merit(iters[k - 1]) * (1 + 1e-12) + 1e-12);
}

TEST(Rti, PrepareFeedbackEqualsOneSqpIteration) {
  for (Robot r : {Robot::Pendubot, Robot::Acrobot}) {
    OcpProblem ocp = swingup_ocp();
    ocp.model.params.robot = r;
    ocp.cost.variant = CostVariant::EmbeddedAngle;
    ocp.x0 = State(2.9, 0.2, 0.5, -1.0);
    Solution guess = rollout(ocp, std::vector<double>(ocp.N(), 0.7));
    guess.xs[5] += State(0.01, 0, 0, 0.1);  // with defects
    SolverSettings st = sqp_settings();
    st.max_iter = 1;
    st.line_search = false;
    st.qp_tol = 1e-3;
    const Solution a = sqp_solve(ocp, guess, st);
    RtiSolver rti(st);
    rti.prepare(ocp, guess);
    const Solution b = rti.feedback(ocp.x0);
    EXPECT_LE(sup_diff(a, b), 1e-12);
  }
}

TEST(Rti, PrepareIsIdempotent) {
  const OcpProblem ocp = swingup_ocp();
  const Solution guess = rollout(ocp, std::vector<double>(ocp.N(), 0.3));
  RtiSolver a, b;
  a.prepare(ocp, guess);
  b.prepare(ocp, guess);
  b.prepare(ocp, guess);
  EXPECT_EQ(sup_diff(a.feedback(ocp.x0), b.feedback(ocp.x0)), 0.0);
  EXPECT_THROW(a.feedback(ocp.x0), std::logic_error);
}

TEST(Rti, ZeroStepAtKktPoint) {
  OcpProblem ocp = swingup_ocp();
  ocp.x0 = State(0.2, -0.1, 0, 0);
  SolverSettings st = sqp_settings();
  st.kkt_tol = 1e-10;
  const Solution opt = sqp_solve(ocp, rollout(ocp, std::vector<double>(ocp.N(), 0.0)), st);
  ASSERT_EQ(opt.status, SolveStatus::Converged);
  st.qp_tol = 1e-10;
  RtiSolver rti(st);
  rti.prepare(ocp, opt);
  const Solution s = rti.feedback(ocp.x0);
  double du = 0.0;
  for (int n = 0; n < ocp.N(); ++n) du = std::max(du, std::abs(s.us[n] - opt.us[n]));
  EXPECT_LT(du, 1e-8);
}

TEST(Rti, RepeatedIterationsOnFrozenStateReachSqp) {
  OcpProblem ocp = swingup_ocp();
  ocp.cost.variant = CostVariant::EmbeddedAngle;
  // near the upright operating point; far from it the residuals are large
  // and full Gauss-Newton steps need not contract
  ocp.x0 = State(0.2, -0.1, 0.0, 0.0);
  const Solution guess = rollout(ocp, std::vector<double>(ocp.N(), 0.0));
  SolverSettings rs = sqp_settings();
  rs.kkt_tol = 1e-6;
  rs.max_iter = 1000;
  const Solution ref = sqp_solve(ocp, guess, rs);
  ASSERT_EQ(ref.status, SolveStatus::Converged);
  SolverSettings st;
  st.qp_tol = 1e-3;
  RtiSolver rti(st);
  Solution w = guess;
  for (int k = 0; k < 50; ++k) {
    rti.prepare(ocp, w);
    w = rti.feedback(ocp.x0);
  }
  double du = 0.0;
  for (int n = 0; n < ocp.N(); ++n) du = std::max(du, std::abs(w.us[n] - ref.us[n]));
  EXPECT_LE(du, 1e-3);
}

TEST(Rti, FeedbackIsContinuousInInitialState) {
  OcpProblem ocp = swingup_ocp();
  ocp.x0 = State(0.3, 0.1, 0.0, 0.0);
  const Solution guess = sqp_solve(ocp, rollout(ocp, std::vector<double>(ocp.N(), 0.0)), sqp_settings());
  SolverSettings st;
  st.qp_tol = 1e-8;
  RtiSolver rti(st);
  rti.prepare(ocp, guess);
  const double u0 = rti.feedback(ocp.x0).us[0];
  double lip = 0.0;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    State d(g(rng), g(rng), g(rng), g(rng));
    d *= 1e-3 / d.norm();
    rti.prepare(ocp, guess);
    lip = std::max(lip, std::abs(rti.feedback(ocp.x0 + d).us[0] - u0) / 1e-3);
  }
  // a jump would show up as a huge ratio; the LQR gain of this problem is O(100)
  EXPECT_LT(lip, 1e3);
}

TEST(Rti, FeedbackFasterThanPrepare) {
  OcpProblem ocp = swingup_ocp();
  ocp.cost.variant = CostVariant::EmbeddedAngle;
  ocp.x0 = State(0.3, 0.1, 0.0, 0.0);
  RtiSolver rti;
  Solution w = rollout(ocp, std::vector<double>(ocp.N(), 0.0));
  std::vector<double> prep, fb;
  for (int k = 0; k < 100; ++k) {
    rti.prepare(ocp, w);
    w = rti.feedback(ocp.x0);
    prep.push_back(w.prepare_time);
    fb.push_back(w.feedback_time);
  }
  std::nth_element(prep.begin(), prep.begin() + 50, prep.end());
  std::nth_element(fb.begin(), fb.begin() + 50, fb.end());
  EXPECT_LT(fb[50], prep[50]);
}

TEST(Ddp, MatchesSqpOnUnconstrainedSwingup) {
  // swing-up from below the horizontal; the input weight keeps the problem
  // well conditioned enough for a 1e-6 comparison in double precision
  OcpProblem ocp = swingup_ocp();
  ocp.bounds = Bounds::unbounded();
  ocp.cost.R = 1.0;
  ocp.x0 = State(2.0, -1.0, 0.0, 0.0);
  const Solution guess = rollout(ocp, std::vector<double>(ocp.N(), 0.0));
  SolverSettings st = sqp_settings();
  st.kkt_tol = 1e-9;
  st.max_iter = 1000;
  const Solution a = sqp_solve(ocp, guess, st);
  DdpSettings dd;
  dd.step_tol = 1e-11;
  const Solution b = ddp_solve(ocp, guess, st, dd);
  ASSERT_EQ(a.status, SolveStatus::Converged);
  ASSERT_EQ(b.status, SolveStatus::Converged);
  EXPECT_LT(sup_diff(a, b), 1e-6);
}

TEST(Ddp, CostNonIncreasingAndTorqueLimited) {
  OcpProblem ocp = swingup_ocp();
  ocp.cost.variant = CostVariant::EmbeddedAngle;
  SolverSettings st;
  st.max_iter = 1;
  Solution w = rollout(ocp, std::vector<double>(ocp.N(), 5.0));
  double J = trajectory_cost(ocp, w.xs, w.us);
  for (int k = 0; k < 40; ++k) {
    w = ddp_solve(ocp, w, st);
    const double Jn = trajectory_cost(ocp, w.xs, w.us);
    EXPECT_LE(Jn, J);
    J = Jn;
    for (double u : w.us) EXPECT_LE(std::abs(u), 6.0);
  }
}

TEST(WarmStart, ShiftMovesOneNode) {
  const OcpProblem ocp = swingup_ocp(6, 0.3);
  Solution s = rollout(ocp, {1, 2, 3, 4, 5, 6});
  const Solution g = shift_warm_start(s, ocp.grid);
  EXPECT_EQ(g.us, (std::vector<double>{2, 3, 4, 5, 6, 0}));
  for (int n = 0; n < 6; ++n) EXPECT_EQ(g.xs[n], s.xs[n + 1]);
  EXPECT_EQ(g.xs[6], s.xs[6]);
  // time_shift by one uniform interval is the same thing
  EXPECT_EQ(sup_diff(time_shift(s, ocp.grid, 0.05), g), 0.0);
  // zero shift is the identity
  EXPECT_EQ(sup_diff(time_shift(s, ocp.grid, 0.0), s), 0.0);
  EXPECT_THROW(shift_warm_start(s, build_grid(5, 0.3, false)), std::invalid_argument);
}

TEST(WarmStart, TimeShiftInterpolatesStates) {
  const OcpProblem ocp = swingup_ocp(4, 0.4);
  const Solution s = rollout(ocp, {1, -1, 2, -2});
  const Solution g = time_shift(s, ocp.grid, 0.025);
  for (int n = 0; n < 4; ++n) {
    EXPECT_LT((g.xs[n] - 0.75 * s.xs[n] - 0.25 * s.xs[n + 1]).norm(), 1e-14);
    EXPECT_EQ(g.us[n], s.us[n]);
  }
  // beyond the horizon
  const Solution h = time_shift(s, ocp.grid, 1.0);
  for (int n = 0; n <= 4; ++n) EXPECT_EQ(h.xs[n], s.xs[4]);
  for (double u : h.us) EXPECT_EQ(u, 0.0);
}

TEST(Settings, BackendNamesRoundTrip) {
  for (Backend b : {Backend::SQP, Backend::SQP_RTI, Backend::DDP})
    EXPECT_EQ(backend_from_string(to_string(b)), b);
  EXPECT_THROW(backend_from_string("IPOPT"), std::invalid_argument);
}
