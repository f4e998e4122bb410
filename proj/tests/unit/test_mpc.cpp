#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pimltube/mpc/ocp.hpp"
#include "pimltube/quadsim/plant.hpp"

using namespace pimltube;
using namespace pimltube::mpc;

namespace {

using Nominal = quadsim::Rk4Model<quadsim::PhysicsModel>;

Nominal nominal() { return {quadsim::PhysicsModel{}, 0.01}; }

Input4 hover_u() { return {quadsim::QuadParams{}.hover_thrust(), 0, 0, 0}; }

State12 hover_x() {
  State12 x = State12::Zero();
  x[idx::kPz] = 2.0;
  return x;
}

BoxSet state_box() {
  VectorXd lo(12), hi(12);
  lo << -0.5, -0.5, 1.5, -1, -1, -2.5, -1, -1, -0.5, -10, -10, -10;
  hi << 0.5, 0.5, 2.5, 1, 1, 2.5, 1, 1, 0.5, 10, 10, 10;
  return {lo, hi};
}

BoxSet input_box() { return {Vec4(0.0, -0.02, -0.02, -0.02), Vec4(0.4, 0.02, 0.02, 0.02)}; }

TerminalIngredients hover_terminal(const BoxSet& xs, const BoxSet& us) {
  const Linearization l = nominal().linearize(hover_x(), hover_u());
  return terminal_ingredients(l.A, l.B, MpcConfig{}, xs, us, hover_x(), hover_u());
}

OcpProblem hover_problem(const State12& x0) {
  OcpProblem pb;
  pb.x0 = x0;
  pb.ref.assign(16, hover_x());
  pb.u_ref = hover_u();
  pb.xs = state_box();
  pb.us = input_box();
  pb.terminal = hover_terminal(pb.xs, pb.us);
  pb.terminal_center = hover_x();
  return pb;
}

// Discrete double integrator embedded in the 12-state interface: x' = A x + B u
// on (px, vx) driven by u0; all other channels are held.
struct DoubleIntegrator {
  Mat12 a = Mat12::Identity();
  Mat12x4 b = Mat12x4::Zero();
  DoubleIntegrator() {
    for (int i = 0; i < kStateDim; ++i)
      if (i != 0 && i != 3) a(i, i) = 0.0;  // unused channels decay immediately
    a(0, 3) = 0.1;
    b(0, 0) = 0.005;
    b(3, 0) = 0.1;
  }
  State12 step(const State12& x, const Input4& u) const { return a * x + b * u; }
  Linearization linearize(const State12& x, const Input4& u) const { return {step(x, u), a, b}; }
};

}  // namespace

TEST(Terminal, UnconstrainedBoxesHitCap) {
  const VectorXd big = VectorXd::Constant(12, 1e9);
  const BoxSet xs = BoxSet::symmetric(big);
  const BoxSet us = BoxSet::symmetric(Vec4::Constant(1e9));
  const Linearization l = nominal().linearize(State12::Zero(), hover_u());
  const TerminalIngredients t = terminal_ingredients(l.A, l.B, MpcConfig{}, xs, us, State12::Zero(), Vec4::Zero(), 42.0);
  EXPECT_DOUBLE_EQ(t.alpha, 42.0);
}

TEST(Terminal, PointBoxThrows) {
  const BoxSet xs(hover_x(), hover_x());
  const Linearization l = nominal().linearize(hover_x(), hover_u());
  EXPECT_THROW(terminal_ingredients(l.A, l.B, MpcConfig{}, xs, input_box(), hover_x(), hover_u()), EmptySetError);
}

TEST(Terminal, DecreaseConditionOnEllipsoid) {
  const BoxSet xs = state_box(), us = input_box();
  const Linearization l = nominal().linearize(hover_x(), hover_u());
  const TerminalIngredients t = hover_terminal(xs, us);
  ASSERT_GT(t.alpha, 0.0);
  const MpcConfig cfg;
  const Eigen::LLT<Mat12> chol(t.P);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0, 1);
  double worst = -1e300;
  for (int i = 0; i < 1000; ++i) {
    Vec12 z;
    for (int j = 0; j < 12; ++j) z[j] = g(rng);
    z *= std::sqrt(t.alpha) / z.norm();
    // e' P e = alpha on the boundary.
    const Vec12 e = chol.matrixU().solve(z);
    const Input4 du = -t.K * e;
    const Vec12 en = l.A * e + l.B * du;
    const double lhs = en.dot(t.P * en) - e.dot(t.P * e) + e.dot(cfg.q_diag.cwiseProduct(e)) + du.dot(cfg.r_diag.cwiseProduct(du));
    worst = std::max(worst, lhs);
    EXPECT_TRUE(xs.contains(hover_x() + e, 1e-9));
    EXPECT_TRUE(us.contains(hover_u() + du, 1e-9));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Ocp, HoverEquilibriumIsOptimal) {
  const auto sol = solve_ocp(nominal(), MpcConfig{}, hover_problem(hover_x()));
  EXPECT_EQ(sol.status, SolveStatus::kOptimal);
  EXPECT_LE(sol.cost, 1e-6);
  ASSERT_EQ(sol.u.size(), 15u);
  ASSERT_EQ(sol.x.size(), 16u);
  for (const auto& u : sol.u) EXPECT_LT((u - hover_u()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ocp, StateSequenceFollowsModel) {
  State12 x0 = hover_x();
  x0[idx::kPx] = 0.2;
  x0[idx::kVz] = -0.3;
  const Nominal m = nominal();
  const auto sol = solve_ocp(m, MpcConfig{}, hover_problem(x0));
  EXPECT_GE(sol.cost, 0.0);
  EXPECT_EQ(sol.x.front(), x0);
  for (std::size_t j = 0; j < sol.u.size(); ++j) {
    EXPECT_EQ(sol.x[j + 1], m.step(sol.x[j], sol.u[j]));
    EXPECT_TRUE(input_box().contains(sol.u[j], 1e-12));
  }
}

TEST(Ocp, DoubleIntegratorMatchesLqr) {
  MpcConfig cfg;
  cfg.horizon = 200;
  cfg.tol = 1e-10;
  const DoubleIntegrator m;
  const robust::LqrResult l = robust::lqr_gain(m.a, m.b, cfg.Q(), cfg.R());
  OcpProblem pb;
  pb.x0 = State12::Zero();
  pb.x0[0] = 1.0;
  pb.x0[3] = -0.5;
  pb.ref.assign(201, State12::Zero());
  pb.u_ref = Input4::Zero();
  pb.xs = BoxSet::symmetric(VectorXd::Constant(12, 1e6));
  pb.us = BoxSet::symmetric(Vec4::Constant(1e6));
  pb.terminal.P = l.P;
  pb.terminal.K = l.K;
  pb.terminal.constrained = false;
  pb.terminal_center = State12::Zero();
  const auto sol = solve_ocp(m, cfg, pb);
  const Input4 lqr = -l.K * pb.x0;
  EXPECT_LT((sol.u.front() - lqr).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Ocp, ReferenceOutsideBoxSaturates) {
  OcpProblem pb = hover_problem(hover_x());
  BoxSet xs = state_box();
  xs.hi[idx::kPx] = 0.3;  // tightened bound
  pb.xs = xs;
  pb.x0[idx::kPx] = 0.25;
  pb.x0[idx::kVx] = 0.5;
  State12 far = hover_x();
  far[idx::kPx] = 0.45;
  pb.ref.assign(16, far);
  pb.terminal.constrained = false;
  MpcConfig cfg;
  cfg.max_iter = 200;
  const auto sol = solve_ocp(nominal(), cfg, pb);
  EXPECT_EQ(sol.status, SolveStatus::kOptimal);
  double max_px = 0.0;
  for (const auto& x : sol.x) max_px = std::max(max_px, x[idx::kPx]);
  EXPECT_LE(max_px, 0.3 + 1e-4);
  EXPECT_GE(max_px, 0.3 - 1e-3);
}

TEST(Ocp, MirroredProblemGivesMirroredSolution) {
  // Reflection x -> -x maps (px, vx, theta, psi, q, r) to their negatives and
  // flips the pitch and yaw torques; thrust and roll torque are unchanged.
  State12 x0 = hover_x();
  x0[idx::kPx] = 0.15;
  x0[idx::kVx] = -0.1;
  x0[idx::kVy] = 0.2;
  State12 xm = x0;
  for (int i : {idx::kPx, idx::kVx, idx::kTheta, idx::kPsi, idx::kQ, idx::kR}) xm[i] = -xm[i];
  MpcConfig cfg;
  cfg.tol = 1e-8;
  const auto a = solve_ocp(nominal(), cfg, hover_problem(x0));
  const auto b = solve_ocp(nominal(), cfg, hover_problem(xm));
  for (std::size_t j = 0; j < a.u.size(); ++j) {
    EXPECT_NEAR(a.u[j][0], b.u[j][0], 1e-6);
    EXPECT_NEAR(a.u[j][1], b.u[j][1], 1e-7);
    EXPECT_NEAR(a.u[j][2], -b.u[j][2], 1e-7);
    EXPECT_NEAR(a.u[j][3], -b.u[j][3], 1e-7);
  }
  EXPECT_NEAR(a.cost, b.cost, 1e-6 * a.cost);
}

TEST(Ocp, ValueSandwich) {
  State12 x0 = hover_x();
  x0[idx::kPy] = -0.2;
  x0[idx::kVx] = 0.4;
  const auto sol = solve_ocp(nominal(), MpcConfig{}, hover_problem(x0));
  const double c1 = MpcConfig{}.q_diag.minCoeff() / 2.0;
  EXPECT_GE(sol.cost, c1 * (x0 - hover_x()).squaredNorm());
}

TEST(Ocp, RejectsBadInput) {
  OcpProblem pb = hover_problem(hover_x());
  pb.ref.pop_back();
  EXPECT_THROW(solve_ocp(nominal(), MpcConfig{}, pb), std::invalid_argument);
  pb = hover_problem(hover_x());
  pb.x0[0] = std::nan("");
  EXPECT_THROW(solve_ocp(nominal(), MpcConfig{}, pb), std::invalid_argument);
  MpcConfig cfg;
  cfg.horizon = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Tube, ZeroErrorGivesNominalInput) {
  const auto sol = solve_ocp(nominal(), MpcConfig{}, hover_problem(hover_x()));
  const auto t = hover_terminal(state_box(), input_box());
  const TubeControl c = tube_control(sol, sol.x.front(), t.tube_gain(), input_box());
  EXPECT_EQ(c.u, sol.u.front());
  EXPECT_FALSE(c.saturated);
}

TEST(Tube, ZeroGainIsFeedforward) {
  const auto sol = solve_ocp(nominal(), MpcConfig{}, hover_problem(hover_x()));
  State12 x = hover_x();
  x[idx::kPx] = 0.1;
  const TubeControl c = tube_control(sol, x, Mat4x12::Zero(), input_box());
  EXPECT_EQ(c.u, sol.u.front());
}

TEST(Tube, ErrorInsideTubeDoesNotSaturate) {
  const auto t = hover_terminal(state_box(), input_box());
  const VectorXd s = VectorXd::Constant(12, 1e-3);
  const BoxSet us = robust::tighten_input(input_box(), t.K, s);
  MpcSolution sol;
  sol.u.assign(15, us.hi);
  sol.x.assign(16, hover_x());
  State12 x = hover_x();
  x.head<6>() += VectorXd::Constant(6, 1e-3);
  const TubeControl c = tube_control(sol, x, t.tube_gain(), input_box());
  EXPECT_FALSE(c.saturated);
  EXPECT_TRUE(input_box().contains(c.u));
}

TEST(Tube, LargeErrorSaturatesToOriginalBox) {
  const auto t = hover_terminal(state_box(), input_box());
  MpcSolution sol;
  sol.u.assign(15, hover_u());
  sol.x.assign(16, hover_x());
  State12 x = hover_x();
  x[idx::kPz] -= 5.0;
  const TubeControl c = tube_control(sol, x, t.tube_gain(), input_box());
  EXPECT_TRUE(c.saturated);
  EXPECT_DOUBLE_EQ(c.u[0], 0.4);
}

TEST(Shift, EquilibriumIsFixedPoint) {
  const Nominal m = nominal();
  const auto sol = solve_ocp(m, MpcConfig{}, hover_problem(hover_x()));
  const auto t = hover_terminal(state_box(), input_box());
  const auto sh = shift_warm_start(sol, t, m, hover_x(), hover_u());
  ASSERT_EQ(sh.u.size(), 15u);
  ASSERT_EQ(sh.x.size(), 16u);
  for (std::size_t j = 0; j < sh.u.size(); ++j) EXPECT_LT((sh.u[j] - sol.u[j]).cwiseAbs().maxCoeff(), 1e-9);
  for (std::size_t j = 0; j < sh.x.size(); ++j) EXPECT_LT((sh.x[j] - sol.x[j]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Shift, RollsStatesConsistently) {
  const Nominal m = nominal();
  State12 x0 = hover_x();
  x0[idx::kPx] = 0.1;
  const auto sol = solve_ocp(m, MpcConfig{}, hover_problem(x0));
  const auto t = hover_terminal(state_box(), input_box());
  const auto sh = shift_warm_start(sol, t, m, hover_x(), hover_u());
  EXPECT_EQ(sh.x.front(), sol.x[1]);
  EXPECT_EQ(sh.u.front(), sol.u[1]);
  EXPECT_EQ(sh.x.back(), m.step(sol.x.back(), sh.u.back()));
}

TEST(Disturbance, NominalPlantGivesZero) {
  const Nominal m = nominal();
  State12 x = hover_x();
  x[idx::kVx] = 0.3;
  const Input4 u(0.27, 1e-4, 0, 0);
  const Vec12 d = realized_disturbance(m.step(x, u), x, u, m);
  EXPECT_TRUE(d.isZero(0.0));
}

TEST(Disturbance, ConstantVelocityBias) {
  // Constant acceleration bias b on the velocity channels.
  const Vec3 bias(0.3, -0.2, 0.1);
  struct Biased {
    quadsim::PhysicsModel base;
    Vec3 b;
    Vec12 derivative(const State12& x, const Input4& u) const {
      Vec12 d = base.derivative(x, u);
      d.segment<3>(idx::kVel) += b;
      return d;
    }
    Vec12 jacobian(const State12& x, const Input4& u, Mat12& fx, Mat12x4& fu) const {
      Vec12 d = base.jacobian(x, u, fx, fu);
      d.segment<3>(idx::kVel) += b;
      return d;
    }
  };
  const quadsim::Rk4Model<Biased> plant({quadsim::PhysicsModel{}, bias}, 0.01);
  const Nominal m = nominal();
  const State12 x = hover_x();
  const Input4 u = hover_u();
  const Vec12 d = realized_disturbance(plant.step(x, u), x, u, m);
  EXPECT_LT((d.segment<3>(idx::kVel) - 0.01 * bias).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((d.segment<3>(idx::kPos) - 0.5 * 1e-4 * bias).cwiseAbs().maxCoeff(), 1e-12);
}
