#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimltube/core/types.hpp"
#include "pimltube/quadsim/rk4.hpp"
#include "pimltube/robust/lqr.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::mpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using robust::BoxSet;

struct MpcConfig {
  int horizon = 15;
  Vec12 q_diag = (Vec12() << 10, 10, 10, 5, 5, 5, 2, 2, 2, 1, 1, 1).finished();
  Vec4 r_diag = Vec4::Constant(0.1);
  double dt = 0.01;
  double tol = 1e-4;       // relative cost decrease / step size
  int max_iter = 100;
  double slack_weight = 1e6;
  double slack_zero = 1e-4;  // normalized slack treated as zero
  double slack_hard = 5e-2;  // normalized slack above which the solve is infeasible-hard

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("MpcConfig: horizon must be >= 1");
    if ((q_diag.array() < 0).any() || !(r_diag.array() > 0).all()) {
      throw std::invalid_argument("MpcConfig: need Q >= 0 and R > 0");
    }
    if (!(dt > 0) || !(tol > 0) || max_iter < 1 || !(slack_weight > 0)) {
      throw std::invalid_argument("MpcConfig: dt, tol, max_iter, slack_weight must be positive");
    }
  }
  MatrixXd Q() const { return q_diag.asDiagonal(); }
  MatrixXd R() const { return r_diag.asDiagonal(); }
};

/// V_f(x) = (x - c)' P (x - c), X_f = {V_f <= alpha}, kappa_f(x) = u_ref - K (x - c).
struct TerminalIngredients {
  Mat12 P = Mat12::Zero();
  Mat4x12 K = Mat4x12::Zero();
  double alpha = std::numeric_limits<double>::infinity();
  bool constrained = true;  // false: terminal cost only, no terminal set

  Input4 kappa(const State12& x, const State12& center, const Input4& u_ref) const {
    return u_ref - K * (x - center);
  }
  /// Gain in the u = u* + K_t (x - x*) convention of tube_control.
  Mat4x12 tube_gain() const { return -K; }
};

/// Largest alpha such that the ellipsoid {e' P e <= alpha} around `center`
/// lies in X_S and its kappa_f image lies in U_S. Exact ellipsoid support:
/// max_{e'Pe<=a} |g'e| = sqrt(a g' P^-1 g).
inline double terminal_level(const Mat12& p, const Mat4x12& k, const BoxSet& xs, const BoxSet& us,
                             const State12& center, const Input4& u_ref, double cap = 1e6) {
  const Mat12 pinv = p.ldlt().solve(Mat12::Identity());
  double alpha = cap;
  for (int i = 0; i < kStateDim; ++i) {
    const double m = std::min(center[i] - xs.lo[i], xs.hi[i] - center[i]);
    if (m <= 0.0) return 0.0;
    alpha = std::min(alpha, m * m / pinv(i, i));
  }
  const Mat4 kpk = k * pinv * k.transpose();
  for (int i = 0; i < kInputDim; ++i) {
    const double m = std::min(u_ref[i] - us.lo[i], us.hi[i] - u_ref[i]);
    if (m <= 0.0) return 0.0;
    if (kpk(i, i) > 0.0) alpha = std::min(alpha, m * m / kpk(i, i));
  }
  return alpha;
}

/// Terminal weight from the Riccati solution of the hover linearization and
/// the level from terminal_level. Throws EmptySetError when no positive level
/// exists.
inline TerminalIngredients terminal_ingredients(const Mat12& a, const Mat12x4& b, const MpcConfig& cfg,
                                                const BoxSet& xs, const BoxSet& us, const State12& center,
                                                const Input4& u_ref, double cap = 1e6) {
  const robust::LqrResult l = robust::lqr_gain(a, b, cfg.Q(), cfg.R());
  TerminalIngredients t;
  t.P = l.P;
  t.K = l.K;
  t.alpha = terminal_level(t.P, t.K, xs, us, center, u_ref, cap);
  if (!(t.alpha > 0.0)) throw EmptySetError("terminal_ingredients: terminal set is empty", kStateDim);
  return t;
}

enum class SolveStatus { kOptimal, kMaxIter, kInfeasibleHard, kFeasibleWithSlack };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kMaxIter: return "max-iter";
    case SolveStatus::kInfeasibleHard: return "infeasible-hard";
    case SolveStatus::kFeasibleWithSlack: return "feasible-with-slack";
  }
  return "?";
}

struct MpcSolution {
  std::vector<Input4> u;   // N inputs
  std::vector<State12> x;  // N + 1 states
  double cost = 0.0;       // V_N without penalty terms
  double slack = 0.0;      // normalized max constraint violation
  SolveStatus status = SolveStatus::kOptimal;
  int iterations = 0;
  double solve_ms = 0.0;
  double kkt = 0.0;  // projected-gradient residual at exit
};

/// Everything the solver needs besides the model.
struct OcpProblem {
  State12 x0;
  std::vector<State12> ref;  // N + 1 reference states
  Input4 u_ref;
  BoxSet xs;  // state box applied on stages 1..N
  BoxSet us;  // input box
  TerminalIngredients terminal;
  State12 terminal_center;
  bool state_constraints = true;
};

namespace detail {

/// min 1/2 d'Hd + g'd  s.t.  lo <= d <= hi, H positive definite.
/// Primal active-set method.
inline VectorXd box_qp(const MatrixXd& h, const VectorXd& g, const VectorXd& lo, const VectorXd& hi,
                       int max_iter = 200) {
  const auto n = g.size();
  VectorXd d = VectorXd::Zero(n).cwiseMax(lo).cwiseMin(hi);
  // 0: free, -1: at lower, +1: at upper
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d[i] <= lo[i] && g[i] > 0) state[static_cast<std::size_t>(i)] = -1, d[i] = lo[i];
    if (d[i] >= hi[i] && g[i] < 0) state[static_cast<std::size_t>(i)] = 1, d[i] = hi[i];
  }
  for (int it = 0; it < max_iter; ++it) {
    std::vector<Eigen::Index> fr;
    for (Eigen::Index i = 0; i < n; ++i)
      if (state[static_cast<std::size_t>(i)] == 0) fr.push_back(i);
    const auto nf = static_cast<Eigen::Index>(fr.size());
    VectorXd target = d;
    if (nf > 0) {
      // Solve for the free block with the bound variables fixed.
      MatrixXd hf(nf, nf);
      VectorXd rhs(nf);
      const VectorXd grad = h * d + g;
      for (Eigen::Index a = 0; a < nf; ++a) {
        rhs[a] = -grad[fr[a]];
        for (Eigen::Index b = 0; b < nf; ++b) hf(a, b) = h(fr[a], fr[b]);
      }
      const VectorXd step = hf.llt().solve(rhs);
      for (Eigen::Index a = 0; a < nf; ++a) target[fr[a]] = d[fr[a]] + step[a];
    }
    // Longest feasible fraction of the step.
    double t = 1.0;
    Eigen::Index block = -1;
    int block_side = 0;
    for (Eigen::Index a = 0; a < nf; ++a) {
      const Eigen::Index i = fr[a];
      const double delta = target[i] - d[i];
      if (delta < 0 && target[i] < lo[i]) {
        const double ti = (lo[i] - d[i]) / delta;
        if (ti < t) t = ti, block = i, block_side = -1;
      } else if (delta > 0 && target[i] > hi[i]) {
        const double ti = (hi[i] - d[i]) / delta;
        if (ti < t) t = ti, block = i, block_side = 1;
      }
    }
    for (Eigen::Index a = 0; a < nf; ++a) d[fr[a]] += t * (target[fr[a]] - d[fr[a]]);
    if (block >= 0) {
      d[block] = block_side < 0 ? lo[block] : hi[block];
      state[static_cast<std::size_t>(block)] = block_side;
      continue;
    }
    // Release the bound with the most wrong-signed multiplier.
    const VectorXd grad = h * d + g;
    Eigen::Index worst = -1;
    double worst_val = 1e-14 * (1.0 + grad.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < n; ++i) {
      const int s = state[static_cast<std::size_t>(i)];
      const double wrong = s < 0 ? -grad[i] : (s > 0 ? grad[i] : 0.0);
      if (wrong > worst_val) worst_val = wrong, worst = i;
    }
    if (worst < 0) break;
    state[static_cast<std::size_t>(worst)] = 0;
  }
  return d.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace detail

/// Single-shooting Gauss-Newton SQP for Problem 1. State and terminal
/// constraints enter through a quadratic slack penalty with multiplier
/// shifts; input bounds are kept exactly by the box QP.
template <quadsim::DiscreteModel M>
class OcpSolver {
 public:
  explicit OcpSolver(MpcConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const MpcConfig& config() const { return cfg_; }

  MpcSolution solve(const M& model, const OcpProblem& pb, const std::vector<Input4>& warm) const {
    const auto t0 = std::chrono::steady_clock::now();
    const int n = cfg_.horizon;
    const int nu = n * kInputDim;
    if (static_cast<int>(pb.ref.size()) != n + 1) throw std::invalid_argument("solve_ocp: reference window must hold N+1 states");
    if (!pb.x0.allFinite()) throw std::invalid_argument("solve_ocp: non-finite initial state");

    VectorXd lo(nu), hi(nu);
    for (int j = 0; j < n; ++j) {
      lo.segment<kInputDim>(j * kInputDim) = pb.us.lo;
      hi.segment<kInputDim>(j * kInputDim) = pb.us.hi;
    }
    VectorXd uvec(nu);
    for (int j = 0; j < n; ++j) {
      const Input4 w = j < static_cast<int>(warm.size()) ? warm[static_cast<std::size_t>(j)] : pb.u_ref;
      uvec.segment<kInputDim>(j * kInputDim) = w;
    }
    uvec = uvec.cwiseMax(lo).cwiseMin(hi);

    const Vec12 q = cfg_.q_diag;
    const Vec4 r = cfg_.r_diag;
    double rho = cfg_.slack_weight;
    const bool terminal_set = pb.terminal.constrained && std::isfinite(pb.terminal.alpha);

    std::vector<State12> xs(static_cast<std::size_t>(n + 1));
    // false when the trial leaves the model's domain (Euler singularity, overflow).
    auto rollout = [&](const VectorXd& uv, std::vector<State12>& traj) {
      traj[0] = pb.x0;
      try {
        for (int j = 0; j < n; ++j) {
          const State12 nx = model.step(traj[static_cast<std::size_t>(j)], uv.segment<kInputDim>(j * kInputDim));
          if (!nx.allFinite()) return false;
          traj[static_cast<std::size_t>(j + 1)] = nx;
        }
      } catch (const SingularityError&) {
        return false;
      }
      return true;
    };
    // Augmented-Lagrangian form of the slack penalty: rho max(0, g + mu/(2 rho))^2
    // per constraint g <= 0, with first-order multiplier updates between inner
    // Gauss-Newton solves so the violation is driven to zero at finite rho.
    MatrixXd mu_lo = MatrixXd::Zero(n + 1, kStateDim), mu_hi = MatrixXd::Zero(n + 1, kStateDim);
    double mu_t = 0.0;
    struct Merit {
      double cost = 0.0, penalty = 0.0, slack = 0.0;
      double total() const { return cost + penalty; }
    };
    auto shifted = [&](double gval, double mu) { return std::max(0.0, gval + mu / (2.0 * rho)); };
    auto terminal_g = [&](const State12& xn) {
      const Vec12 ec = xn - pb.terminal_center;
      return ec.dot(pb.terminal.P * ec) - pb.terminal.alpha;
    };
    auto merit = [&](const VectorXd& uv, const std::vector<State12>& traj) {
      Merit m;
      for (int j = 0; j <= n; ++j) {
        const Vec12 e = traj[static_cast<std::size_t>(j)] - pb.ref[static_cast<std::size_t>(j)];
        if (j < n) {
          m.cost += e.dot(q.cwiseProduct(e));
          const Vec4 du = uv.segment<kInputDim>(j * kInputDim) - pb.u_ref;
          m.cost += du.dot(r.cwiseProduct(du));
        } else {
          m.cost += e.dot(pb.terminal.P * e);
        }
        if (j >= 1 && pb.state_constraints) {
          const Vec12& xj = traj[static_cast<std::size_t>(j)];
          for (int i = 0; i < kStateDim; ++i) {
            const double glo = pb.xs.lo[i] - xj[i], ghi = xj[i] - pb.xs.hi[i];
            const double slo = shifted(glo, mu_lo(j, i)), shi = shifted(ghi, mu_hi(j, i));
            m.penalty += rho * (slo * slo + shi * shi);
            const double v = std::max(glo, ghi);
            if (v > 0.0) {
              const double width = std::max(1e-9, 0.5 * (pb.xs.hi[i] - pb.xs.lo[i]));
              m.slack = std::max(m.slack, v / width);
            }
          }
        }
      }
      if (terminal_set) {
        const double gval = terminal_g(traj[static_cast<std::size_t>(n)]);
        const double st = shifted(gval, mu_t);
        m.penalty += rho * st * st;
        // Radial overshoot of the ellipsoid, a length ratio like the state slacks.
        if (gval > 0.0) m.slack = std::max(m.slack, std::sqrt(1.0 + gval / pb.terminal.alpha) - 1.0);
      }
      return m;
    };

    if (!rollout(uvec, xs)) {
      uvec = VectorXd::NullaryExpr(nu, [&](Eigen::Index i) { return pb.u_ref[i % kInputDim]; }).cwiseMax(lo).cwiseMin(hi);
      if (!rollout(uvec, xs)) throw SingularityError(pb.x0[idx::kTheta]);
    }
    Merit cur = merit(uvec, xs);
    MpcSolution sol;
    std::vector<Linearization> lin(static_cast<std::size_t>(n));
    MatrixXd sens(kStateDim, nu);
    MatrixXd h(nu, nu);
    VectorXd g(nu);
    std::vector<State12> trial(static_cast<std::size_t>(n + 1));
    bool converged = false;
    int outer = 0;
    double last_slack = std::numeric_limits<double>::infinity();

    for (sol.iterations = 0; sol.iterations < cfg_.max_iter;) {
      ++sol.iterations;
      for (int j = 0; j < n; ++j) {
        lin[static_cast<std::size_t>(j)] =
            model.linearize(xs[static_cast<std::size_t>(j)], uvec.segment<kInputDim>(j * kInputDim));
      }
      // Gauss-Newton model of cost + penalty in the input increments.
      h.setZero();
      g.setZero();
      for (int j = 0; j < n; ++j) {
        const Vec4 du = uvec.segment<kInputDim>(j * kInputDim) - pb.u_ref;
        for (int i = 0; i < kInputDim; ++i) {
          h(j * kInputDim + i, j * kInputDim + i) += 2.0 * r[i];
          g[j * kInputDim + i] += 2.0 * r[i] * du[i];
        }
      }
      sens.setZero();
      for (int j = 1; j <= n; ++j) {
        const Linearization& l = lin[static_cast<std::size_t>(j - 1)];
        const int cols = j * kInputDim;
        // S_j = A_{j-1} S_{j-1} + B_{j-1} on block j-1.
        sens.leftCols(cols - kInputDim) = l.A * sens.leftCols(cols - kInputDim);
        sens.block<kStateDim, kInputDim>(0, cols - kInputDim) = l.B;
        const auto s = sens.leftCols(cols);
        const Vec12 xj = xs[static_cast<std::size_t>(j)];
        const Vec12 e = xj - pb.ref[static_cast<std::size_t>(j)];
        Mat12 w;
        Vec12 wg;
        if (j < n) {
          w = (2.0 * q).asDiagonal();
          wg = 2.0 * q.cwiseProduct(e);
        } else {
          w = 2.0 * pb.terminal.P;
          wg = 2.0 * (pb.terminal.P * e);
        }
        if (pb.state_constraints) {
          for (int i = 0; i < kStateDim; ++i) {
            const double slo = shifted(pb.xs.lo[i] - xj[i], mu_lo(j, i));
            const double shi = shifted(xj[i] - pb.xs.hi[i], mu_hi(j, i));
            if (slo > 0.0) {
              w(i, i) += 2.0 * rho;
              wg[i] -= 2.0 * rho * slo;
            }
            if (shi > 0.0) {
              w(i, i) += 2.0 * rho;
              wg[i] += 2.0 * rho * shi;
            }
          }
        }
        h.topLeftCorner(cols, cols).noalias() += s.transpose() * w * s;
        g.head(cols).noalias() += s.transpose() * wg;
        if (j == n && terminal_set) {
          const double st = shifted(terminal_g(xj), mu_t);
          if (st > 0.0) {
            const VectorXd grad = s.transpose() * (2.0 * (pb.terminal.P * (xj - pb.terminal_center)));
            h.topLeftCorner(cols, cols).noalias() += 2.0 * rho * grad * grad.transpose();
            // Curvature of the quadratic constraint itself, PSD since P is.
            h.topLeftCorner(cols, cols).noalias() += (4.0 * rho * st) * (s.transpose() * pb.terminal.P * s);
            g.head(cols).noalias() += 2.0 * rho * st * grad;
          }
        }
      }
      h.diagonal().array() += 1e-9 * (1.0 + h.diagonal().cwiseAbs().maxCoeff());

      const VectorXd d = detail::box_qp(h, g, lo - uvec, hi - uvec);
      const double slope = g.dot(d);
      // Projected-gradient optimality measure.
      const VectorXd pg = (uvec - g).cwiseMax(lo).cwiseMin(hi) - uvec;
      sol.kkt = pg.cwiseAbs().maxCoeff();
      bool inner_done = slope > -1e-14 * (1.0 + std::abs(cur.total()));
      if (!inner_done) {
        double t = 1.0;
        Merit next;
        VectorXd cand;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
          cand = uvec + t * d;
          if (!rollout(cand, trial)) continue;
          next = merit(cand, trial);
          if (next.total() <= cur.total() + 1e-4 * t * slope) {
            accepted = true;
            break;
          }
        }
        if (!accepted) {
          inner_done = true;  // no further descent available at machine precision
        } else {
          const double decrease = cur.total() - next.total();
          const double step = t * d.cwiseAbs().maxCoeff();
          uvec = cand;
          xs.swap(trial);
          cur = next;
          inner_done = (decrease <= cfg_.tol * 1e-2 * (1.0 + cur.total()) && step <= cfg_.tol * 1e-2) ||
                       decrease <= 1e-12 * (1.0 + cur.total());
        }
      }
      if (!inner_done) continue;
      if (cur.slack <= cfg_.slack_zero * 1e-2 || outer >= kMaxOuter) {
        converged = true;
        break;
      }
      // Multiplier update (and a heavier weight when the violation stalls),
      // then re-solve from the current inputs.
      ++outer;
      const bool stalled = cur.slack > 0.25 * last_slack;
      last_slack = cur.slack;
      for (int j = 1; j <= n && pb.state_constraints; ++j) {
        const Vec12& xj = xs[static_cast<std::size_t>(j)];
        for (int i = 0; i < kStateDim; ++i) {
          mu_lo(j, i) = std::max(0.0, mu_lo(j, i) + 2.0 * rho * (pb.xs.lo[i] - xj[i]));
          mu_hi(j, i) = std::max(0.0, mu_hi(j, i) + 2.0 * rho * (xj[i] - pb.xs.hi[i]));
        }
      }
      if (terminal_set) mu_t = std::max(0.0, mu_t + 2.0 * rho * terminal_g(xs[static_cast<std::size_t>(n)]));
      if (stalled) rho = std::min(rho * 10.0, kMaxWeight);
      cur = merit(uvec, xs);
    }

    sol.u.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) sol.u[static_cast<std::size_t>(j)] = uvec.segment<kInputDim>(j * kInputDim);
    sol.x = xs;
    sol.cost = cur.cost;
    sol.slack = cur.slack;
    if (sol.slack > cfg_.slack_hard) sol.status = SolveStatus::kInfeasibleHard;
    else if (sol.slack > cfg_.slack_zero) sol.status = SolveStatus::kFeasibleWithSlack;
    else if (!converged) sol.status = SolveStatus::kMaxIter;
    else sol.status = SolveStatus::kOptimal;
    sol.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return sol;
  }

 private:
  static constexpr int kMaxOuter = 8;
  static constexpr double kMaxWeight = 1e12;
  MpcConfig cfg_;
};

template <quadsim::DiscreteModel M>
MpcSolution solve_ocp(const M& model, const MpcConfig& cfg, const OcpProblem& pb,
                      const std::optional<std::vector<Input4>>& warm = std::nullopt) {
  return OcpSolver<M>(cfg).solve(model, pb, warm ? *warm : std::vector<Input4>{});
}

/// u = u*(0) + K (x - x*(0)) with K in the tube convention (see
/// TerminalIngredients::tube_gain), saturated to the original input box.
struct TubeControl {
  Input4 u;
  bool saturated = false;
};

inline TubeControl tube_control(const MpcSolution& sol, const State12& x, const Mat4x12& k, const BoxSet& u_box) {
  TubeControl out;
  const Input4 raw = sol.u.front() + k * (x - sol.x.front());
  out.u = u_box.clamp(raw);
  out.saturated = (out.u - raw).cwiseAbs().maxCoeff() > 0.0;
  return out;
}

/// Drops u*(0), appends kappa_f(x*(N)) and rolls the states one step.
template <quadsim::DiscreteModel M>
MpcSolution shift_warm_start(const MpcSolution& sol, const TerminalIngredients& term, const M& model,
                             const State12& terminal_center, const Input4& u_ref) {
  MpcSolution out = sol;
  const State12 xn = sol.x.back();
  const Input4 uf = term.kappa(xn, terminal_center, u_ref);
  out.u.erase(out.u.begin());
  out.u.push_back(uf);
  out.x.erase(out.x.begin());
  out.x.push_back(model.step(xn, uf));
  return out;
}

/// Normalized constraint violation of a fixed input sequence on `pb`, using
/// the solver's scaling (state and input: violation / half-width, terminal:
/// radial overshoot sqrt(V_f / alpha) - 1). Infinite when the rollout fails.
template <quadsim::DiscreteModel M>
double candidate_slack(const M& model, const OcpProblem& pb, const std::vector<Input4>& u) {
  const auto n = pb.ref.size() - 1;
  if (u.size() != n) throw std::invalid_argument("candidate_slack: need N inputs");
  double slack = 0.0;
  State12 x = pb.x0;
  auto box_violation = [](const VectorXd& v, const BoxSet& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double e = std::max(b.lo[i] - v[i], v[i] - b.hi[i]);
      if (e > 0.0) worst = std::max(worst, e / std::max(1e-9, 0.5 * (b.hi[i] - b.lo[i])));
    }
    return worst;
  };
  try {
    for (std::size_t j = 0; j < n; ++j) {
      slack = std::max(slack, box_violation(u[j], pb.us));
      x = model.step(x, u[j]);
      if (!x.allFinite()) return std::numeric_limits<double>::infinity();
      if (pb.state_constraints) slack = std::max(slack, box_violation(x, pb.xs));
    }
  } catch (const SingularityError&) {
    return std::numeric_limits<double>::infinity();
  }
  if (pb.terminal.constrained && std::isfinite(pb.terminal.alpha)) {
    const Vec12 ec = x - pb.terminal_center;
    slack = std::max(slack, std::sqrt(std::max(1.0, ec.dot(pb.terminal.P * ec) / pb.terminal.alpha)) - 1.0);
  }
  return slack;
}

/// Realized disturbance x(k+1) - f_d(x(k), u(k)).
template <quadsim::DiscreteModel M>
Vec12 realized_disturbance(const State12& x_next, const State12& x, const Input4& u, const M& model) {
  return x_next - model.step(x, u);
}

}  // namespace pimltube::mpc
