#include "dpmpc/qp.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <random>

using namespace dpmpc;
using namespace dpmpc::oracle;

namespace {

QpSettings tight() {
  QpSettings s;
  s.tol = 1e-9;
  s.max_iter = 200;
  return s;
}

}  // namespace

TEST(RiccatiQp, UnconstrainedMatchesRiccatiOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 1 + trial % 20;
    const auto qp = random_qp<4, 1>(rng, N);
    const auto sol = RiccatiQpSolver<4, 1>(tight()).solve(qp);
    ASSERT_EQ(sol.status, QpStatus::Converged);
    const auto [xs, us] = riccati_oracle(qp);
    for (int n = 0; n < N; ++n) EXPECT_LT((sol.u[n] - us[n]).cwiseAbs().maxCoeff(), 1e-8);
    for (int n = 0; n <= N; ++n) EXPECT_LT((sol.x[n] - xs[n]).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(RiccatiQp, UnconstrainedMultiInput) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto qp = random_qp<3, 2>(rng, 1 + trial % 7);
    const auto sol = RiccatiQpSolver<3, 2>(tight()).solve(qp);
    ASSERT_EQ(sol.status, QpStatus::Converged);
    const auto [xs, us] = riccati_oracle(qp);
    for (int n = 0; n < qp.horizon(); ++n)
      EXPECT_LT((sol.u[n] - us[n]).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(RiccatiQp, BoxConstrainedMatchesActiveSetOracle) {
  std::mt19937_64 rng(13);
  int with_active = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 1 + trial % 5;
    auto qp = random_qp<2, 1>(rng, N);
    for (auto& st : qp.stages) st.q *= 4.0;  // push the optimum onto the boxes
    add_boxes(qp, rng);
    const auto sol = RiccatiQpSolver<2, 1>(tight()).solve(qp);
    ASSERT_EQ(sol.status, QpStatus::Converged) << "trial " << trial;
    const auto best = active_set_oracle(qp);
    ASSERT_TRUE(best.has_value()) << "trial " << trial;
    const Eigen::VectorXd& u = *best;
    bool active = false;
    for (int n = 0; n < N; ++n) {
      EXPECT_NEAR(sol.u[n][0], u[n], 1e-6) << "trial " << trial << " node " << n;
      active |= std::abs(u[n] - qp.stages[n].u_lo[0]) < 1e-9 ||
                std::abs(u[n] - qp.stages[n].u_hi[0]) < 1e-9;
    }
    with_active += active ? 1 : 0;
  }
  EXPECT_GT(with_active, 10);  // the sample really exercises the bounds
}

TEST(RiccatiQp, PreparedSolveEqualsDirectSolve) {
  std::mt19937_64 rng(14);
  auto qp = random_qp<4, 1>(rng, 8);
  for (auto& st : qp.stages) {
    st.u_lo[0] = -0.3;
    st.u_hi[0] = 0.3;
  }
  RiccatiQpSolver<4, 1> solver(tight());
  const auto a = solver.solve(qp);
  auto ws = solver.prepare(qp);
  const auto b = solver.solve(qp, std::move(ws));
  for (int n = 0; n < 8; ++n) EXPECT_EQ(a.u[n], b.u[n]);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(RiccatiQp, PrepareIsIndependentOfInitialState) {
  // the workspace is built before x0 is known (real-time feedback split)
  std::mt19937_64 rng(15);
  auto qp = random_qp<4, 1>(rng, 6);
  for (auto& st : qp.stages) {
    st.u_lo[0] = -1.0;
    st.u_hi[0] = 1.0;
  }
  RiccatiQpSolver<4, 1> solver(tight());
  auto ws = solver.prepare(qp);
  auto qp2 = qp;
  qp2.x0 = 0.5 * qp.x0 + Eigen::Vector4d(0.1, -0.2, 0.0, 0.3);
  const auto late = solver.solve(qp2, std::move(ws));
  const auto ref = solver.solve(qp2);
  ASSERT_EQ(late.status, QpStatus::Converged);
  for (int n = 0; n < 6; ++n) EXPECT_NEAR(late.u[n][0], ref.u[n][0], 1e-9);
}

TEST(RiccatiQp, FixedInputsAreExact) {
  std::mt19937_64 rng(16);
  auto qp = random_qp<4, 1>(rng, 5);
  qp.stages[2].u_lo[0] = qp.stages[2].u_hi[0] = 0.25;
  qp.stages[4].u_lo[0] = qp.stages[4].u_hi[0] = -1.5;
  const auto sol = RiccatiQpSolver<4, 1>(tight()).solve(qp);
  ASSERT_EQ(sol.status, QpStatus::Converged);
  EXPECT_EQ(sol.u[2][0], 0.25);
  EXPECT_EQ(sol.u[4][0], -1.5);
  // the remaining inputs are optimal for the reduced problem
  const auto d = condense(qp);
  Eigen::VectorXd u(5);
  for (int n = 0; n < 5; ++n) u[n] = sol.u[n][0];
  const Eigen::VectorXd grad = d.H * u + d.g;
  for (int n : {0, 1, 3}) EXPECT_NEAR(grad[n], 0.0, 1e-8);
}

TEST(RiccatiQp, ReportsInfeasibleBounds) {
  std::mt19937_64 rng(17);
  auto qp = random_qp<4, 1>(rng, 4);
  qp.stages[1].x_lo[2] = 1.0;
  qp.stages[1].x_hi[2] = 0.5;
  const auto s1 = RiccatiQpSolver<4, 1>(tight()).solve(qp);
  EXPECT_EQ(s1.status, QpStatus::Infeasible);

  // consistent boxes that no input can reach
  auto qp2 = random_qp<2, 1>(rng, 2);
  qp2.stages[0].A.setIdentity();
  qp2.stages[0].B << 1.0, 0.0;
  qp2.stages[0].b.setZero();
  qp2.stages[0].u_lo[0] = -0.1;
  qp2.stages[0].u_hi[0] = 0.1;
  qp2.x0.setZero();
  qp2.stages[1].x_lo[0] = 5.0;
  qp2.stages[1].x_hi[0] = 6.0;
  const auto s2 = RiccatiQpSolver<2, 1>(tight()).solve(qp2);
  EXPECT_NE(s2.status, QpStatus::Converged);
}

TEST(RiccatiQp, SolutionSatisfiesKkt) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    auto qp = random_qp<4, 1>(rng, 10);
    for (auto& st : qp.stages) {
      st.u_lo[0] = -0.5;
      st.u_hi[0] = 0.5;
    }
    const auto sol = RiccatiQpSolver<4, 1>(tight()).solve(qp);
    ASSERT_EQ(sol.status, QpStatus::Converged);
    EXPECT_LT(sol.kkt(), 1e-9);
    for (int n = 0; n < 10; ++n) {
      EXPECT_GE(sol.u[n][0], -0.5 - 1e-9);
      EXPECT_LE(sol.u[n][0], 0.5 + 1e-9);
      EXPECT_GE(sol.lam_u_lo[n][0], 0.0);
      EXPECT_GE(sol.lam_u_hi[n][0], 0.0);
      const auto& st = qp.stages[n];
      EXPECT_LT((sol.x[n + 1] - (st.A * sol.x[n] + st.B * sol.u[n] + st.b)).norm(), 1e-9);
    }
  }
}
