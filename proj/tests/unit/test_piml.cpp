#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pimltube/piml/dataset.hpp"
#include "pimltube/piml/learned_model.hpp"
#include "pimltube/piml/library.hpp"
#include "pimltube/piml/model_io.hpp"
#include "pimltube/piml/sparse_regression.hpp"
#include "pimltube/quadsim/plant.hpp"

using namespace pimltube;
using namespace pimltube::piml;

namespace {

Dataset ramp_dataset(int n, double dt) {
  Dataset d;
  d.dt = dt;
  d.states.resize(n, 12);
  d.inputs = MatrixXd::Zero(n, 4);
  for (int i = 0; i < n; ++i) d.states.row(i).setConstant(i * dt);
  return d;
}

Dataset random_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d;
  d.states.resize(n, 12);
  d.inputs.resize(n, 4);
  d.derivatives.resize(n, 12);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 12; ++j) d.states(i, j) = g(rng), d.derivatives(i, j) = g(rng);
    for (int j = 0; j < 4; ++j) d.inputs(i, j) = g(rng);
  }
  return d;
}

// Scalar system xdot = -2x + u packed into column 0 of a 12-state dataset.
struct ScalarProblem {
  MatrixXd psi;
  VectorXd y;
};

ScalarProblem scalar_problem(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> g(-1.0, 1.0);
  ScalarProblem p;
  p.psi.resize(n, 5);
  p.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x = g(rng), u = g(rng);
    p.psi.row(i) << 1.0, x, u, x * x, x * u;
    p.y[i] = -2.0 * x + u;
  }
  return p;
}

}  // namespace

TEST(Preprocess, CleanDataUnchanged) {
  Dataset d = random_dataset(200, 1);
  // Bounded uniform data never exceeds 3 sigma.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 12; ++j) d.states(i, j) = u(rng), d.derivatives(i, j) = u(rng);
    for (int j = 0; j < 4; ++j) d.inputs(i, j) = u(rng);
  }
  const PreprocessResult r = preprocess(d);
  EXPECT_EQ(r.removed, 0);
  EXPECT_EQ(r.data.states, d.states);
}

TEST(Preprocess, OutlierRowRemoved) {
  Dataset d;
  d.states = MatrixXd::Zero(1000, 12);
  d.inputs = MatrixXd::Zero(1000, 4);
  for (int i = 0; i < 1000; ++i) d.states(i, 3) = (i % 2 == 0) ? 1.0 : -1.0;
  // Direct sigma computation: with one spike at v the sample std is about 1,
  // so v = 10 sits near 10 sigma.
  d.states(500, 3) = 10.0;
  const PreprocessResult r = preprocess(d);
  EXPECT_EQ(r.removed, 1);
  EXPECT_EQ(r.data.rows(), 999);
  EXPECT_LT(r.data.states.col(3).cwiseAbs().maxCoeff(), 1.0 + 1e-15);
}

TEST(Preprocess, ZeroVarianceKeepsRows) {
  Dataset d;
  d.states = MatrixXd::Constant(50, 12, 0.3);
  d.inputs = MatrixXd::Constant(50, 4, 0.1);
  EXPECT_EQ(preprocess(d).removed, 0);
}

TEST(Preprocess, TooFewSurvivorsThrows) {
  Dataset d;
  d.states = MatrixXd::Zero(3, 12);
  d.inputs = MatrixXd::Zero(3, 4);
  EXPECT_THROW(preprocess(d, 3.0, 4), std::runtime_error);
  d.states.resize(2, 12);
  d.inputs.resize(2, 4);
  EXPECT_THROW(preprocess(d), std::invalid_argument);
}

TEST(Differentiate, RampIsExact) {
  const Dataset d = differentiate(ramp_dataset(50, 0.01));
  EXPECT_LT((d.derivatives.array() - 1.0).abs().maxCoeff(), 1e-10);
}

TEST(Differentiate, SineWithinTolerance) {
  const int n = 1000;
  const double dt = 0.01;
  Dataset d = ramp_dataset(n, dt);
  for (int i = 0; i < n; ++i) d.states.row(i).setConstant(std::sin(i * dt));
  d = differentiate(d);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(d.derivatives(i, 5) - std::cos(i * dt)));
  EXPECT_LT(worst, 1e-4);
}

TEST(Differentiate, ConstantGivesZero) {
  Dataset d = ramp_dataset(10, 0.01);
  d.states.setConstant(2.5);
  EXPECT_EQ(differentiate(d).derivatives, MatrixXd::Zero(10, 12));
}

TEST(Library, RowEvaluation) {
  LibrarySpec s;
  s.add({Term::Kind::kState, 0, 0});
  s.add({Term::Kind::kInput, 0, 0});
  s.add({Term::Kind::kStateInput, 0, 0});
  s.add({Term::Kind::kSin, 6, 0});
  Dataset d;
  d.states = MatrixXd::Zero(1, 12);
  d.inputs = MatrixXd::Zero(1, 4);
  d.states(0, 0) = 2.0;
  d.inputs(0, 0) = 3.0;
  d.states(0, 6) = std::numbers::pi / 2;
  const MatrixXd psi = build_library(d, s);
  ASSERT_EQ(psi.cols(), 5);
  EXPECT_EQ(psi(0, 0), 1.0);
  EXPECT_EQ(psi(0, 1), 2.0);
  EXPECT_EQ(psi(0, 2), 3.0);
  EXPECT_EQ(psi(0, 3), 6.0);
  EXPECT_EQ(psi(0, 4), 1.0);
}

TEST(Library, BaseLibraryShape) {
  const LibrarySpec s = base_library();
  EXPECT_EQ(s.size(), 1u + 12 + 4 + 78 + 48);
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.terms[0], Term{});
}

TEST(Library, ExpansionThresholdAndIdempotence) {
  const LibrarySpec s = base_library(500);
  EXPECT_EQ(maybe_expand(s, 400).size(), s.size());
  const LibrarySpec e = maybe_expand(s, 600);
  EXPECT_TRUE(e.expanded);
  EXPECT_EQ(e.size(), s.size() + expansion_family().size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(e.terms[i], s.terms[i]);
  const LibrarySpec again = maybe_expand(e, 700);
  EXPECT_EQ(again.size(), e.size());
  EXPECT_NO_THROW(again.validate());
  EXPECT_EQ(maybe_expand(s, 500).size(), s.size());
}

TEST(Library, NamesRoundTrip) {
  LibrarySpec s = maybe_expand(base_library(), 1000);
  for (const Term& t : s.terms) EXPECT_EQ(Term::parse(t.name()), t) << t.name();
  EXPECT_THROW(Term::parse("x12"), std::invalid_argument);
  EXPECT_THROW(Term::parse("x1*u4"), std::invalid_argument);
  EXPECT_THROW(Term::parse("tan(x6)"), std::invalid_argument);
}

TEST(Library, DuplicateRejected) {
  LibrarySpec s;
  EXPECT_TRUE(s.add({Term::Kind::kState, 1, 0}));
  EXPECT_FALSE(s.add({Term::Kind::kState, 1, 0}));
  s.terms.push_back({Term::Kind::kState, 1, 0});
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Lasso, UnregularizedIsLeastSquares) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  MatrixXd psi(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) psi(i, j) = (i == j ? 3.0 : 0.0) + 0.3 * g(rng);
  VectorXd y(6);
  for (int i = 0; i < 6; ++i) y[i] = g(rng);
  const VectorXd ls = psi.colPivHouseholderQr().solve(y);
  LassoOptions opt;
  opt.tol = 1e-14;
  opt.kkt_tol = 1e-12;
  opt.max_sweeps = 100000;
  const LassoResult r = sparse_regress(psi, y, 0.0, std::nullopt, opt);
  EXPECT_LT((r.coeffs - ls).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Lasso, RecoversSparseTruth) {
  const ScalarProblem p = scalar_problem(2000, 12);
  const LassoResult r = sparse_regress(p.psi, p.y, 1e-4);
  Eigen::Matrix<double, 5, 1> truth;
  truth << 0, -2, 1, 0, 0;
  EXPECT_LT((r.coeffs - truth).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Lasso, ZeroAboveHmax) {
  const ScalarProblem p = scalar_problem(500, 13);
  const LassoProblem lp(p.psi);
  const double hmax = lp.h_max(p.y);
  const LassoResult r = lp.solve(p.y, hmax * (1 + 1e-9));
  EXPECT_TRUE((r.coeffs.tail(4).array() == 0.0).all());
  EXPECT_NEAR(r.coeffs[0], p.y.mean(), 1e-12);
  const LassoResult below = lp.solve(p.y, hmax * 0.9);
  EXPECT_GT((below.coeffs.tail(4).array() != 0.0).count(), 0);
}

TEST(Lasso, KktConditionsHold) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0, 1);
  const int n = 300, p = 20;
  MatrixXd psi(n, p);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    psi(i, 0) = 1.0;
    for (int j = 1; j < p; ++j) psi(i, j) = g(rng) * (1 + j % 3);
    y[i] = 0.5 + 2 * psi(i, 1) - psi(i, 4) + 0.3 * g(rng);
  }
  for (double h : {0.0, 0.01, 0.05, 0.2}) {
    const LassoResult r = sparse_regress(psi, y, h);
    // Raw-unit subgradient check: |psi_i^T r| / n <= h * sigma_i on every column.
    const VectorXd resid = y - psi * r.coeffs;
    const LassoProblem lp(psi);
    for (int j = 1; j < p; ++j) {
      const VectorXd col = psi.col(j).array() - psi.col(j).mean();
      const double grad = col.dot(resid) / n;
      const double bound = h * lp.column_scale()[j];
      EXPECT_LE(std::abs(grad), bound + 1e-5) << "h=" << h << " col=" << j;
      if (r.coeffs[j] != 0.0) {
        EXPECT_NEAR(std::abs(grad), bound, 1e-5);
      }
    }
    EXPECT_NEAR(resid.mean(), 0.0, 1e-9);
  }
}

TEST(Lasso, SparsityMonotoneInH) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> g(0, 1);
  const int n = 400, p = 15;
  MatrixXd psi(n, p);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    psi(i, 0) = 1.0;
    for (int j = 1; j < p; ++j) psi(i, j) = g(rng);
    y[i] = 0;
    for (int j = 1; j < p; ++j) y[i] += psi(i, j) / j;
    y[i] += 0.1 * g(rng);
  }
  const LassoProblem lp(psi);
  long prev = p + 1;
  for (double h : {0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0}) {
    const long nz = (lp.solve(y, h).coeffs.tail(p - 1).array() != 0.0).count();
    EXPECT_LE(nz, prev) << "h=" << h;
    prev = nz;
  }
}

TEST(Lasso, WarmStartGivesSameAnswer) {
  const ScalarProblem p = scalar_problem(500, 16);
  const LassoProblem lp(p.psi);
  const LassoResult cold = lp.solve(p.y, 0.01);
  const LassoResult warm = lp.solve(p.y, 0.01, cold.coeffs);
  EXPECT_LT((cold.coeffs - warm.coeffs).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LE(warm.sweeps, cold.sweeps);
}

TEST(Lasso, NonConvergenceThrows) {
  const ScalarProblem p = scalar_problem(200, 17);
  LassoOptions opt;
  opt.max_sweeps = 0;
  try {
    sparse_regress(p.psi, p.y, 0.0, std::nullopt, opt);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GE(e.residual(), 0.0);
  }
}

TEST(Lasso, StatisticsFormMatchesRows) {
  const ScalarProblem p = scalar_problem(800, 31);
  GramAccumulator acc(5, 1);
  for (Eigen::Index i = 0; i < p.psi.rows(); ++i) acc.add(p.psi.row(i).transpose(), VectorXd::Constant(1, p.y[i]));
  const LassoProblem rows(p.psi), stats(acc);
  EXPECT_EQ(stats.intercept_column(), 0);
  EXPECT_NEAR(rows.h_max(p.y), stats.h_max_target(0), 1e-12);
  for (double h : {1e-4, 1e-2, 0.3}) {
    const LassoResult a = rows.solve(p.y, h), b = stats.solve_target(0, h);
    EXPECT_LT((a.coeffs - b.coeffs).cwiseAbs().maxCoeff(), 1e-6) << "h = " << h;
    const double rms = std::sqrt((p.y - p.psi * b.coeffs).squaredNorm() / 800.0);
    EXPECT_NEAR(stats.residual_rms_target(0, b.coeffs), rms, 1e-9);
  }
  EXPECT_THROW(rows.solve_target(0, 0.1), std::logic_error);
  EXPECT_THROW(stats.solve(p.y, 0.1), std::logic_error);
}

TEST(Fit, StatisticsFormMatchesDataset) {
  const Dataset d = random_dataset(400, 32);
  LibrarySpec s;
  for (int i = 0; i < 12; ++i) s.add({Term::Kind::kState, i, 0});
  s.add({Term::Kind::kInput, 0, 0});
  const MatrixXd psi = build_library(d, s);
  GramAccumulator acc(psi.cols(), 12);
  acc.add_rows(psi, d.derivatives);
  const std::vector<double> h(12, 0.02);
  const FitResult a = fit(d, s, h), b = fit(acc, s, h);
  EXPECT_LT((a.report.xi_full - b.report.xi_full).cwiseAbs().maxCoeff(), 1e-6);
  for (int j = 0; j < 12; ++j) EXPECT_NEAR(a.report.residual_rms[j], b.report.residual_rms[j], 1e-9);
}

TEST(Fit, ZeroDynamicsGivesZeroCoefficients) {
  Dataset d = random_dataset(300, 18);
  d.derivatives.setZero();
  const FitResult r = fit(d, base_library());
  EXPECT_EQ(r.model.xi, MatrixXd::Zero(1, 12));
  EXPECT_EQ(r.model.terms.size(), 1u);
}

TEST(Fit, Deterministic) {
  const Dataset d = random_dataset(300, 19);
  LibrarySpec s;
  for (int i = 0; i < 12; ++i) s.add({Term::Kind::kState, i, 0});
  const FitResult a = fit(d, s, 0.02), b = fit(d, s, 0.02);
  EXPECT_EQ(a.model.xi, b.model.xi);
  EXPECT_EQ(a.report.xi_full, b.report.xi_full);
}

TEST(Fit, LearnsNominalQuadrotor) {
  // Rich excitation around hover; data from the nominal model plus wind.
  const quadsim::QuadParams q;
  std::mt19937_64 rng(20);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> uni(-1, 1);
  auto draw = [&](int n) {
    Dataset d;
    d.states.resize(n, 12);
    d.inputs.resize(n, 4);
    d.derivatives.resize(n, 12);
    for (int i = 0; i < n; ++i) {
      State12 x;
      for (int j = 0; j < 12; ++j) x[j] = 0.3 * uni(rng);
      Input4 u(q.hover_thrust() * (1 + 0.3 * uni(rng)), 2e-4 * uni(rng), 2e-4 * uni(rng), 2e-4 * uni(rng));
      Vec12 f = quadsim::continuous_dynamics(x, u, q);
      for (int j = 3; j < 6; ++j) f[j] += 0.03 * g(rng);
      d.states.row(i) = x.transpose();
      d.inputs.row(i) = u.transpose();
      d.derivatives.row(i) = f.transpose();
    }
    return d;
  };
  const Dataset train = draw(3000), test = draw(1000);
  const FitResult r = fit(train, maybe_expand(base_library(), 3000), 1e-3);
  double err_model = 0.0, err_true = 0.0;
  for (int i = 0; i < test.rows(); ++i) {
    const State12 x = test.states.row(i).transpose();
    const Input4 u = test.inputs.row(i).transpose();
    const Vec12 y = test.derivatives.row(i).transpose();
    err_model += (r.model.evaluate(x, u) - y).squaredNorm();
    err_true += (quadsim::continuous_dynamics(x, u, q) - y).squaredNorm();
  }
  EXPECT_LE(std::sqrt(err_model), 2.0 * std::sqrt(err_true));
  EXPECT_LT(r.model.terms.size(), maybe_expand(base_library(), 3000).size());
  // Near-hover derivative is small.
  EXPECT_LT(r.model.evaluate(State12::Zero(), Input4(q.hover_thrust(), 0, 0, 0)).norm(), 1e-1);
}

TEST(ClipUpdate, Cases) {
  MatrixXd d = MatrixXd::Zero(3, 12);
  d(0, 0) = 0.5;
  EXPECT_EQ(clip_update(d, 1.0), d);
  d(0, 0) = 2.0;
  const MatrixXd c = clip_update(d, 1.0);
  EXPECT_NEAR(c.norm(), 1.0, 1e-15);
  EXPECT_NEAR(c(0, 0), 1.0, 1e-15);
  EXPECT_EQ(clip_update(MatrixXd::Zero(3, 12), 1.0), MatrixXd::Zero(3, 12));
  EXPECT_THROW(clip_update(d, 0.0), std::invalid_argument);
}

TEST(ClipUpdate, NormBoundAndDirectionProperty) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    MatrixXd d(4, 12);
    for (int i = 0; i < d.size(); ++i) d.data()[i] = g(rng) * (trial % 5);
    const double bound = 0.1 + (trial % 7);
    const MatrixXd c = clip_update(d, bound);
    EXPECT_LE(c.norm(), bound * (1 + 1e-14));
    if (d.norm() > 0) {
      EXPECT_NEAR((c.normalized() - d.normalized()).norm(), 0.0, 1e-12);
    }
  }
}

TEST(Model, EvaluateAndJacobian) {
  LearnedModel m;
  EXPECT_EQ(m.evaluate(State12::Ones(), Input4::Ones()), Vec12::Zero());
  // xdot_0 = -2 x0 + u0 + 0.5 sin(x6) u1 + x1 x2
  LibrarySpec s;
  s.add({Term::Kind::kState, 0, 0});
  s.add({Term::Kind::kInput, 0, 0});
  s.add({Term::Kind::kSinInput, 6, 1});
  s.add({Term::Kind::kStateState, 1, 2});
  MatrixXd xi = MatrixXd::Zero(5, 12);
  xi(1, 0) = -2;
  xi(2, 0) = 1;
  xi(3, 0) = 0.5;
  xi(4, 0) = 1;
  m = prune(s, xi, 3);
  EXPECT_EQ(m.terms.size(), 5u);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 20; ++t) {
    State12 x;
    Input4 v;
    for (int i = 0; i < 12; ++i) x[i] = u(rng);
    for (int i = 0; i < 4; ++i) v[i] = u(rng);
    const double truth = -2 * x[0] + v[0] + 0.5 * std::sin(x[6]) * v[1] + x[1] * x[2];
    EXPECT_NEAR(m.evaluate(x, v)[0], truth, 1e-14);
    Mat12 fx = Mat12::Zero();
    Mat12x4 fu = Mat12x4::Zero();
    m.accumulate_jacobian(x, v, fx, fu);
    EXPECT_NEAR(fx(0, 0), -2, 1e-14);
    EXPECT_NEAR(fx(0, 6), 0.5 * std::cos(x[6]) * v[1], 1e-14);
    EXPECT_NEAR(fx(0, 1), x[2], 1e-14);
    EXPECT_NEAR(fu(0, 1), 0.5 * std::sin(x[6]), 1e-14);
  }
}

TEST(Model, PruneKeepsConstantAndAligns) {
  const LibrarySpec s = base_library();
  MatrixXd xi = MatrixXd::Zero(static_cast<Eigen::Index>(s.size()), 12);
  xi(7, 3) = 1.5;
  const LearnedModel m = prune(s, xi, 1);
  EXPECT_EQ(m.terms.size(), 2u);
  EXPECT_EQ(m.aligned(s), xi);
}

TEST(Model, PimlModelReducesToPhysics) {
  PimlModel m;
  const State12 x = State12::LinSpaced(12, -0.2, 0.2);
  const Input4 u(0.3, 0.001, 0, 0);
  EXPECT_EQ(m.derivative(x, u), quadsim::continuous_dynamics(x, u, m.prior));
}

TEST(ModelIo, RoundTripIsExact) {
  LibrarySpec s = maybe_expand(base_library(), 1000);
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g(0, 1);
  MatrixXd xi = MatrixXd::Zero(static_cast<Eigen::Index>(s.size()), 12);
  for (int i = 0; i < 40; ++i) xi(static_cast<Eigen::Index>(rng() % s.size()), static_cast<Eigen::Index>(rng() % 12)) = g(rng) * 1e-3;
  const LearnedModel m = prune(s, xi, 7);
  quadsim::QuadParams prior;
  prior.mass = 0.0312345678901234;
  std::stringstream ss;
  write_model(ss, m, &prior);
  const ModelFile f = read_model(ss);
  EXPECT_EQ(f.model.version, 7);
  EXPECT_EQ(f.model.terms, m.terms);
  EXPECT_EQ(f.model.xi, m.xi);
  EXPECT_TRUE(f.has_prior);
  EXPECT_EQ(f.prior.mass, prior.mass);
}

TEST(ModelIo, RejectsGarbage) {
  std::stringstream ss("not-a-model 1\n");
  EXPECT_THROW(read_model(ss), std::runtime_error);
  std::stringstream truncated("pimltube-model 1\nversion 1\nprior none\nterms 2\n1 0 0 0 0 0 0 0 0 0 0 0 0\nx0 1\n");
  EXPECT_THROW(read_model(truncated), std::runtime_error);
}
