#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pimltube/piml/learned_model.hpp"
#include "pimltube/quadsim/plant.hpp"
#include "pimltube/robust/disturbance_set.hpp"
#include "pimltube/robust/lipschitz.hpp"
#include "pimltube/robust/lqr.hpp"
#include "pimltube/robust/rpi.hpp"
#include "pimltube/robust/sets.hpp"

using namespace pimltube;
using namespace pimltube::robust;

namespace {

struct LinearModel {
  Mat12 a;
  Mat12x4 b;
  State12 step(const State12& x, const Input4& u) const { return a * x + b * u; }
  Linearization linearize(const State12& x, const Input4& u) const { return {step(x, u), a, b}; }
};

quadsim::Rk4Model<quadsim::PhysicsModel> nominal() { return {quadsim::PhysicsModel{}, 0.01}; }

Linearization hover_lin() {
  return nominal().linearize(State12::Zero(), Input4(quadsim::QuadParams{}.hover_thrust(), 0, 0, 0));
}

MatrixXd bench_q() {
  Eigen::VectorXd d(12);
  d << 10, 10, 10, 5, 5, 5, 2, 2, 2, 1, 1, 1;
  return d.asDiagonal();
}

MatrixXd bench_r() { return 0.1 * MatrixXd::Identity(4, 4); }

}  // namespace

TEST(Jacobian, LinearModelIsExact) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  LinearModel m;
  for (int i = 0; i < m.a.size(); ++i) m.a.data()[i] = g(rng);
  for (int i = 0; i < m.b.size(); ++i) m.b.data()[i] = g(rng);
  const auto [a, b] = fd_jacobian(m, State12::Ones(), Input4::Ones());
  EXPECT_LT((a - m.a).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((b - m.b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Jacobian, HoverPositionRows) {
  const auto [a, b] = fd_jacobian(nominal(), State12::Zero(), Input4(quadsim::QuadParams{}.hover_thrust(), 0, 0, 0));
  EXPECT_LT((a.block<3, 3>(0, 3) - 0.01 * Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT((a - hover_lin().A).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Jacobian, RichardsonAgrees) {
  State12 x = State12::Zero();
  x[idx::kPhi] = 0.2;
  x[idx::kTheta] = -0.1;
  x[idx::kQ] = 0.5;
  const Input4 u(0.3, 0.001, -0.001, 0.0005);
  const auto [a1, b1] = fd_jacobian(nominal(), x, u);
  const auto [a2, b2] = richardson_jacobian(nominal(), x, u);
  EXPECT_LT((a1 - a2).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT((b1 - b2).cwiseAbs().maxCoeff(), 1e-5 * (1 + b2.cwiseAbs().maxCoeff()));
}

TEST(Lqr, ScalarClosedForm) {
  MatrixXd one = MatrixXd::Ones(1, 1);
  const LqrResult r = lqr_gain(one, one, one, one);
  // p^2 - p - 1 = 0
  EXPECT_NEAR(r.P(0, 0), (1 + std::sqrt(5.0)) / 2, 1e-9);
  EXPECT_LT(r.residual, 1e-8);
  EXPECT_NEAR(r.K(0, 0), r.P(0, 0) / (1 + r.P(0, 0)), 1e-12);
}

TEST(Lqr, ZeroDynamics) {
  const MatrixXd a = MatrixXd::Zero(3, 3), b = MatrixXd::Identity(3, 2), q = MatrixXd::Identity(3, 3) * 2;
  const LqrResult r = lqr_gain(a, b, q, MatrixXd::Identity(2, 2));
  EXPECT_LT((r.P - q).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(r.K.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Lqr, HoverLoopIsStable) {
  const Linearization lin = hover_lin();
  const LqrResult r = lqr_gain(lin.A, lin.B, bench_q(), bench_r());
  EXPECT_LT(r.residual, 1e-8);
  EXPECT_LT(r.spectral_radius, 1.0);
  EXPECT_NEAR(spectral_radius(lin.A - lin.B * r.K), r.spectral_radius, 1e-12);
}

TEST(Lqr, UnstabilizableThrows) {
  MatrixXd a(2, 2), b(2, 1);
  a << 1.2, 0, 0, 0.5;
  b << 0, 1;
  EXPECT_ANY_THROW(lqr_gain(a, b, MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1)));
}

TEST(Lqr, LyapunovMatchesSeries) {
  MatrixXd a(2, 2);
  a << 0.5, 0.2, -0.1, 0.3;
  const MatrixXd w = MatrixXd::Identity(2, 2);
  const MatrixXd p = solve_dlyap(a, w);
  EXPECT_LT((a.transpose() * p * a + w - p).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(DisturbanceSetUpdate, CenterHandValue) {
  DisturbanceSet d;
  d.center.setZero();
  d = update_center(d, Vec12::Constant(0.1));
  EXPECT_LT((d.center - Vec12::Constant(0.01)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DisturbanceSetUpdate, CenterFixedPointAndGeometricConvergence) {
  DisturbanceSet d;
  d.center = Vec12::Constant(0.03);
  EXPECT_EQ(update_center(d, d.center).center, d.center);
  d.center.setZero();
  const Vec12 s = Vec12::LinSpaced(12, -0.05, 0.05);
  for (int k = 1; k <= 30; ++k) {
    d = update_center(d, s);
    EXPECT_LT((d.center - (1 - std::pow(0.9, k)) * s).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(DisturbanceSetUpdate, BoundsFixedPointCapAndDecay) {
  DisturbanceSet d;
  d.bar = Vec12::Constant(0.05);
  d.center.setZero();
  Vec12 s = Vec12::Zero();
  s[4] = 0.05;
  d = update_bounds(d, s);
  EXPECT_LT((d.bar - Vec12::Constant(0.05)).cwiseAbs().maxCoeff(), 1e-16);

  d.bar = Vec12::Constant(0.2);
  d = update_bounds(d, Vec12::Constant(0.3));
  EXPECT_EQ(d.bar, Vec12::Constant(0.1));

  d.bar = Vec12::Constant(0.08);
  for (int k = 1; k <= 200; ++k) {
    d = update_bounds(d, Vec12::Zero());
    const double expected = std::max(0.08 * std::pow(0.95, k), 1e-4);
    EXPECT_NEAR(d.bar[0], expected, 1e-15);
  }
  EXPECT_EQ(d.bar, Vec12::Constant(1e-4));
}

TEST(DisturbanceSetUpdate, AlwaysWithinCapProperty) {
  std::mt19937_64 rng(2);
  std::cauchy_distribution<double> heavy(0.0, 0.5);
  DisturbanceSet d;
  for (int k = 0; k < 10000; ++k) {
    Vec12 s;
    for (int i = 0; i < 12; ++i) s[i] = heavy(rng);
    d = update(d, s);
    ASSERT_TRUE((d.bar.array() <= 0.1).all());
    ASSERT_TRUE((d.bar.array() >= 1e-4).all());
  }
  EXPECT_GT(d.running_max.maxCoeff(), 0.1);
}

TEST(DisturbanceSetUpdate, PerComponentMode) {
  DisturbanceSet d;
  d.per_component = true;
  d.bar = Vec12::Constant(0.01);
  d.center.setZero();
  Vec12 s = Vec12::Zero();
  s[3] = 0.05;
  d = update_bounds(d, s);
  EXPECT_NEAR(d.bar[3], 0.95 * 0.01 + 0.05 * 0.05, 1e-16);
  EXPECT_NEAR(d.bar[0], 0.95 * 0.01, 1e-16);
}

TEST(LearningUncertainty, Cases) {
  EXPECT_EQ(learning_uncertainty(2.0, 0.0), VectorXd::Zero(12));
  EXPECT_EQ(learning_uncertainty(2.0, 0.5), VectorXd::Constant(12, 1.0));
  for (double n : {0.0, 0.3, 1.0, 4.0}) EXPECT_LE(learning_uncertainty(3.0, std::min(n, 2.0)).maxCoeff(), 3.0 * 2.0);
  EXPECT_THROW(learning_uncertainty(0.0, 1.0), std::invalid_argument);
}

TEST(Rpi, ScalarGeometricSeries) {
  const MatrixXd a = MatrixXd::Constant(1, 1, 0.5);
  const auto r = compute_rpi(a, VectorXd::Constant(1, 0.1));
  EXPECT_NEAR(r.s[0], 0.2, 1e-9);
}

TEST(Rpi, ZeroDynamicsGivesDisturbanceBox) {
  VectorXd w(3);
  w << 0.1, 0.0, 0.3;
  const auto r = compute_rpi(MatrixXd::Zero(3, 3), w);
  EXPECT_EQ(r.s, w);
}

TEST(Rpi, UnstableThrows) {
  MatrixXd a(2, 2);
  a << 1.0, 0.1, 0.0, 1.0;
  EXPECT_THROW(compute_rpi(a, VectorXd::Constant(2, 0.1)), ContractionError);
  try {
    compute_rpi(MatrixXd::Constant(1, 1, 1.5), VectorXd::Constant(1, 0.1));
  } catch (const ContractionError& e) {
    EXPECT_NEAR(e.spectral_radius(), 1.5, 1e-12);
  }
}

TEST(Rpi, AbsoluteIterationWouldDivergeButSeriesConverges) {
  // Stabilized double integrator: rho(A) < 1 while rho(|A|) > 1.
  MatrixXd a(2, 2);
  a << 1.0, 0.01, -0.05, 0.97;
  EXPECT_LT(spectral_radius(a), 1.0);
  EXPECT_GT(spectral_radius(a.cwiseAbs()), 1.0);
  const auto r = compute_rpi(a, VectorXd::Constant(2, 1e-3));
  EXPECT_TRUE(r.s.allFinite());
  EXPECT_LE(r.alpha, 1e-4);
}

TEST(Rpi, OperatorMatchesOneShotAndCertifies) {
  const Linearization lin = hover_lin();
  const LqrResult l = lqr_gain(lin.A, lin.B, bench_q(), bench_r());
  const MatrixXd acl = lin.A - lin.B * l.K;
  const VectorXd wmin = VectorXd::Constant(12, 1e-6), wmax = VectorXd::Constant(12, 1e-3);
  const RpiOperator op(acl, wmin, wmax);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-6, 1e-3);
  for (int t = 0; t < 10; ++t) {
    VectorXd w(12);
    for (int i = 0; i < 12; ++i) w[i] = u(rng);
    const auto a = op.apply(w);
    const RpiCertificate c = certify(op, w);
    EXPECT_TRUE(c.holds);
    EXPECT_GE(c.margin, 0.0);
    const auto b = compute_rpi(acl, w);
    // The one-shot form stops at the first admissible M; both are valid and
    // agree to the tolerance.
    EXPECT_LT(((a.s - b.s).array() / b.s.array()).abs().maxCoeff(), 2e-4);
  }
}

TEST(Rpi, MonteCarloContainment) {
  const Linearization lin = hover_lin();
  const LqrResult l = lqr_gain(lin.A, lin.B, bench_q(), bench_r());
  const MatrixXd acl = lin.A - lin.B * l.K;
  VectorXd w = VectorXd::Constant(12, 1e-6);
  w.segment<3>(3).setConstant(1e-3);
  const auto r = compute_rpi(acl, w);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> uni(-1, 1);
  int inside = 0;
  const int trials = 2000, steps = 300;
  for (int t = 0; t < trials; ++t) {
    VectorXd e = VectorXd::Zero(12);
    bool ok = true;
    for (int k = 0; k < steps; ++k) {
      VectorXd d(12);
      // Vertices stress the bound; uniform draws cover the interior.
      for (int i = 0; i < 12; ++i) d[i] = w[i] * (t % 2 ? (coin(rng) ? 1.0 : -1.0) : uni(rng));
      e = acl * e + d;
      ok = ok && (e.cwiseAbs().array() <= r.s.array() * (1 + 1e-12)).all();
    }
    inside += ok;
  }
  EXPECT_EQ(inside, trials);
}

TEST(Tighten, Cases) {
  const BoxSet x(VectorXd::Constant(1, -0.5), VectorXd::Constant(1, 0.5));
  const BoxSet t = tighten(x, VectorXd::Constant(1, 0.2));
  EXPECT_NEAR(t.lo[0], -0.3, 1e-15);
  EXPECT_NEAR(t.hi[0], 0.3, 1e-15);
  EXPECT_EQ(tighten(x, VectorXd::Zero(1)).lo, x.lo);
  EXPECT_THROW(tighten(x, VectorXd::Constant(1, 0.6)), EmptySetError);
  EXPECT_FALSE(try_tighten(x, VectorXd::Constant(1, 0.6)).has_value());
}

TEST(Tighten, InputImage) {
  const BoxSet u(VectorXd::Constant(2, -1.0), VectorXd::Constant(2, 1.0));
  MatrixXd k(2, 3);
  k << 1, -2, 0, 0, 0.5, 0.5;
  VectorXd s(3);
  s << 0.1, 0.1, 0.2;
  const BoxSet t = tighten_input(u, k, s);
  EXPECT_NEAR(t.hi[0], 0.7, 1e-15);
  EXPECT_NEAR(t.hi[1], 0.85, 1e-15);
}

TEST(Tighten, PontryaginMinkowskiProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    VectorXd lo(4), hi(4), s(4);
    for (int i = 0; i < 4; ++i) {
      lo[i] = -u(rng);
      hi[i] = u(rng);
      s[i] = 0.5 * u(rng);
    }
    const BoxSet x(lo, hi);
    const auto tx = try_tighten(x, s);
    if (!tx) continue;
    const BoxSet back = tx->inflate(s);
    EXPECT_TRUE((back.lo.array() >= x.lo.array() - 1e-15).all());
    EXPECT_TRUE((back.hi.array() <= x.hi.array() + 1e-15).all());
  }
}

TEST(LipschitzCost, ScalarHandValue) {
  const MatrixXd q = MatrixXd::Constant(1, 1, 3.0);
  const BoxSet x(VectorXd::Constant(1, -2.0), VectorXd::Constant(1, 2.0));
  const CostLipschitz c = lipschitz_cost(q, q, x, x, VectorXd::Zero(1), VectorXd::Zero(1));
  EXPECT_NEAR(c.l_x, 2 * 3.0 * 2.0, 1e-14);
}

TEST(LipschitzCost, SingletonGivesZero) {
  const VectorXd p = VectorXd::Constant(2, 0.3);
  const BoxSet x(p, p);
  EXPECT_EQ(lipschitz_cost(MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), x, x, p, p).l_x, 0.0);
}

TEST(LipschitzCost, CertificateOnRandomPairs) {
  const MatrixXd q = bench_q(), r = bench_r();
  VectorXd xl(12), xh(12);
  xl << -0.5, -0.5, 1.5, -1, -1, -2.5, -1, -1, -0.5, -10, -10, -10;
  xh << 0.5, 0.5, 2.5, 1, 1, 2.5, 1, 1, 0.5, 10, 10, 10;
  const BoxSet xb(xl, xh), ub(Eigen::Vector4d(0, -0.02, -0.02, -0.02), Eigen::Vector4d(0.4, 0.02, 0.02, 0.02));
  VectorXd xr = VectorXd::Zero(12);
  xr[2] = 2.0;
  const VectorXd ur = Eigen::Vector4d(0.26487, 0, 0, 0);
  const CostLipschitz c = lipschitz_cost(q, r, xb, ub, xr, ur);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uni(0, 1);
  auto draw = [&](const BoxSet& b) {
    VectorXd v(b.size());
    for (Eigen::Index i = 0; i < b.size(); ++i) v[i] = b.lo[i] + uni(rng) * (b.hi[i] - b.lo[i]);
    return v;
  };
  auto cost = [&](const VectorXd& x, const VectorXd& u) {
    return (x - xr).dot(q * (x - xr)) + (u - ur).dot(r * (u - ur));
  };
  int violations = 0;
  for (int t = 0; t < 100000; ++t) {
    const VectorXd x1 = draw(xb), x2 = draw(xb), u1 = draw(ub), u2 = draw(ub);
    const double lhs = std::abs(cost(x1, u1) - cost(x2, u2));
    const double rhs = c.l_x * (x1 - x2).norm() + c.l_u * (u1 - u2).norm();
    violations += lhs > rhs * (1 + 1e-12);
  }
  EXPECT_EQ(violations, 0);
}

TEST(LipschitzCost, NonDiagonalUsesVertices) {
  MatrixXd q(2, 2);
  q << 2, 1, 1, 2;
  const VectorXd lo = -VectorXd::Ones(2), hi = VectorXd::Ones(2);
  // v = (1, 1) maximizes |Q v| = |(3, 3)|.
  EXPECT_NEAR(box_sup_norm(q, lo, hi), std::sqrt(18.0), 1e-14);
}

TEST(LXi, ConstantLibraryAndMonotone) {
  std::vector<std::pair<State12, Input4>> samples;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    State12 x;
    Input4 v;
    for (int j = 0; j < 12; ++j) x[j] = u(rng);
    for (int j = 0; j < 4; ++j) v[j] = u(rng);
    samples.emplace_back(x, v);
  }
  piml::LibrarySpec s;
  EXPECT_NEAR(estimate_L_xi(s.terms, samples), 1.5, 1e-15);
  double prev = 0.0;
  for (const piml::Term& t : piml::base_library().terms) {
    s.add(t);
    const double l = estimate_L_xi(s.terms, samples);
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(LXi, InequalityOnRandomDraws) {
  const piml::LibrarySpec spec = piml::maybe_expand(piml::base_library(), 1000);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> g(0, 1);
  std::vector<std::pair<State12, Input4>> samples;
  for (int i = 0; i < 2000; ++i) {
    State12 x;
    Input4 v;
    for (int j = 0; j < 12; ++j) x[j] = u(rng);
    for (int j = 0; j < 4; ++j) v[j] = 0.3 * u(rng);
    samples.emplace_back(x, v);
  }
  const double l = estimate_L_xi(spec.terms, samples);
  int violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto& [x, v] = samples[static_cast<std::size_t>(t) % samples.size()];
    MatrixXd xi1(static_cast<Eigen::Index>(spec.size()), 12), xi2(static_cast<Eigen::Index>(spec.size()), 12);
    for (Eigen::Index i = 0; i < xi1.size(); ++i) xi1.data()[i] = g(rng), xi2.data()[i] = g(rng);
    const VectorXd row = piml::library_row(spec.terms, x, v);
    const double lhs = (xi1.transpose() * row - xi2.transpose() * row).norm();
    violations += lhs > l * (xi1 - xi2).norm();
  }
  EXPECT_EQ(violations, 0);
}
