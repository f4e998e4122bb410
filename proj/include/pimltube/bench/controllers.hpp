#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimltube/baselines/mlp.hpp"
#include "pimltube/baselines/pid.hpp"
#include "pimltube/bench/config.hpp"
#include "pimltube/core/types.hpp"
#include "pimltube/mpc/ocp.hpp"
#include "pimltube/piml/learned_model.hpp"
#include "pimltube/piml/library.hpp"
#include "pimltube/piml/sparse_regression.hpp"
#include "pimltube/quadsim/plant.hpp"
#include "pimltube/quadsim/rk4.hpp"
#include "pimltube/robust/disturbance_set.hpp"
#include "pimltube/robust/lipschitz.hpp"
#include "pimltube/robust/lqr.hpp"
#include "pimltube/robust/rpi.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::bench {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Conservatism and fallback events, OR-ed into ObserveInfo::events.
enum Event : int {
  kEventNone = 0,
  kEventEmptyTightening = 1,  // S too large for X or U; previous tightening kept
  kEventRpiFailed = 2,        // closed loop at the new Jacobian not contractive
  kEventTerminalFallback = 4, // terminal level <= 0; terminal cost only
  kEventFitFailed = 8,
  kEventInputSaturated = 16,
};

struct ControlOutput {
  Input4 u = Input4::Zero();
  bool saturated = false;
  bool solved = false;
  mpc::SolveStatus status = mpc::SolveStatus::kOptimal;
  int iterations = 0;
  double solve_ms = 0.0;
  double cost = 0.0;  // V*_N
  double slack = 0.0;
  double kkt = 0.0;
  State12 nominal = State12::Zero();  // x*(0|k)
  double candidate_slack = std::numeric_limits<double>::quiet_NaN();  // shifted warm start on this problem
  int events = 0;
};

struct ObserveInfo {
  Vec12 disturbance = Vec12::Zero();  // (x_next - f_d(x, u)) / dt for the controller's model
  bool contained = true;               // against D(k) before the update
  Vec12 center = Vec12::Zero();
  Vec12 bar = Vec12::Zero();
  Vec12 tube = Vec12::Zero();  // RPI half-widths in force for the next step
  long model_version = 0;
  bool learned = false;
  double dxi_norm = 0.0;
  double u_xi = 0.0;  // largest component of the learning-uncertainty box
  int events = 0;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// `ref` holds the N + 1 reference states starting at time k.
  virtual ControlOutput control(int k, const State12& x, const std::vector<State12>& ref) = 0;
  virtual ObserveInfo observe(int /*k*/, const State12& /*x*/, const Input4& /*u*/, const State12& /*x_next*/) {
    return {};
  }
};

/// x+ = F(x, u) + bias.
template <quadsim::DiscreteModel M>
struct BiasedModel {
  M inner;
  Vec12 bias = Vec12::Zero();
  State12 step(const State12& x, const Input4& u) const { return inner.step(x, u) + bias; }
  Linearization linearize(const State12& x, const Input4& u) const {
    Linearization l = inner.linearize(x, u);
    l.next += bias;
    return l;
  }
};

/// Hover operating point shared by every model-based controller.
struct HoverDesign {
  Input4 u_ref;
  Mat12 A;
  Mat12x4 B;
  Mat4x12 K;  // u = u_ref - K (x - x_ref)
  Mat12 P;
};

inline HoverDesign hover_design(const quadsim::QuadParams& nominal, const mpc::MpcConfig& cfg) {
  HoverDesign h;
  h.u_ref = Input4(nominal.hover_thrust(), 0, 0, 0);
  State12 x = State12::Zero();
  x[idx::kPz] = 2.0;
  const Linearization lin = quadsim::Rk4Model<quadsim::PhysicsModel>({nominal}, cfg.dt).linearize(x, h.u_ref);
  h.A = lin.A;
  h.B = lin.B;
  const robust::LqrResult l = robust::lqr_gain(lin.A, lin.B, cfg.Q(), cfg.R());
  h.K = l.K;
  h.P = l.P;
  return h;
}

class PidController final : public Controller {
 public:
  PidController(double dt, robust::BoxSet u_box, baselines::PidGains g = {}) : g_(g), u_box_(std::move(u_box)), dt_(dt) {}
  std::string name() const override { return "pid"; }

  ControlOutput control(int, const State12& x, const std::vector<State12>& ref) override {
    const baselines::PidOutput o = baselines::pid_step(g_, st_, x, ref.front(), dt_, nominal_, u_box_);
    st_ = o.state;
    ControlOutput out;
    out.u = o.u;
    out.saturated = o.saturated;
    out.nominal = x;
    return out;
  }

 private:
  baselines::PidGains g_;
  baselines::PidState st_;
  quadsim::QuadParams nominal_;
  robust::BoxSet u_box_;
  double dt_;
};

/// Certainty-equivalence MPC on a fixed model: untightened boxes, terminal
/// cost only, u = u*(0) (no tube feedback). SMPC and NN-MPC.
template <quadsim::DiscreteModel M>
class NominalMpcController final : public Controller {
 public:
  NominalMpcController(std::string name, M model, const mpc::MpcConfig& cfg, robust::BoxSet x_box, robust::BoxSet u_box)
      : name_(std::move(name)), model_(std::move(model)), solver_(cfg), x_box_(std::move(x_box)), u_box_(std::move(u_box)) {
    const HoverDesign h = hover_design(nominal_, cfg);
    u_ref_ = h.u_ref;
    term_.P = h.P;
    term_.K = h.K;
    term_.constrained = false;
  }
  std::string name() const override { return name_; }

  ControlOutput control(int, const State12& x, const std::vector<State12>& ref) override {
    mpc::OcpProblem pb{x, ref, u_ref_, x_box_, u_box_, term_, ref.back()};
    ControlOutput out;
    std::vector<Input4> warm;
    if (shifted_) {
      warm = shifted_->u;
      out.candidate_slack = mpc::candidate_slack(model_, pb, warm);
    }
    const mpc::MpcSolution sol = solver_.solve(model_, pb, warm);
    fill(out, sol);
    out.u = u_box_.clamp(sol.u.front());
    if (sol.status == mpc::SolveStatus::kInfeasibleHard) {
      shifted_.reset();
    } else {
      shifted_ = mpc::shift_warm_start(sol, term_, model_, ref.back(), u_ref_);
    }
    return out;
  }

  ObserveInfo observe(int, const State12& x, const Input4& u, const State12& x_next) override {
    ObserveInfo info;
    info.disturbance = (x_next - model_.step(x, u)) / solver_.config().dt;
    return info;
  }

  static void fill(ControlOutput& out, const mpc::MpcSolution& sol) {
    out.solved = true;
    out.status = sol.status;
    out.iterations = sol.iterations;
    out.solve_ms = sol.solve_ms;
    out.cost = sol.cost;
    out.slack = sol.slack;
    out.kkt = sol.kkt;
    out.nominal = sol.x.front();
  }

 private:
  std::string name_;
  M model_;
  quadsim::QuadParams nominal_;
  mpc::OcpSolver<M> solver_;
  robust::BoxSet x_box_, u_box_;
  Input4 u_ref_;
  mpc::TerminalIngredients term_;
  std::optional<mpc::MpcSolution> shifted_;
};

/// Tube MPC over the physics prior plus a sparse learned residual.
///
/// adaptive = true: disturbance set, RPI set and tightening are updated every
/// step, the set center is used as a known bias in prediction, and the
/// residual is refit every t_learn steps. adaptive = false: D frozen at the
/// initial hypercube, one RPI set and tightening for the whole run.
class TubeMpcController final : public Controller {
 public:
  using Model = quadsim::Rk4Model<piml::PimlModel>;

  TubeMpcController(const ExperimentConfig& cfg, robust::BoxSet x_box, bool adaptive,
                    const piml::Dataset* offline = nullptr)
      : cfg_(cfg),
        mcfg_(cfg.mpc()),
        adaptive_(adaptive),
        learning_(adaptive && cfg.learning),
        solver_(mcfg_),
        x_box_(std::move(x_box)),
        u_box_(default_input_box()),
        phys_({nominal_}, cfg.dt),
        model_(piml::PimlModel{nominal_, {}}, cfg.dt),
        pred_{model_, Vec12::Zero()} {
    const HoverDesign h = hover_design(nominal_, mcfg_);
    u_ref_ = h.u_ref;
    k_ = h.K;
    p_ = h.P;
    dset_.bar = Vec12::Constant(cfg.dbar_init);
    dset_.cap = Vec12::Constant(cfg.adaptation ? cfg.dbar_max : cfg.dbar_init);
    dset_.lambda = cfg.lambda;
    dset_.gamma = cfg.gamma;
    dset_.validate();

    spec_ = piml::maybe_expand(piml::base_library(static_cast<std::size_t>(cfg.n_min)), ~std::size_t{0});
    acc_ = piml::GramAccumulator(static_cast<Eigen::Index>(spec_.size()), kStateDim);
    xi_ = MatrixXd::Zero(static_cast<Eigen::Index>(spec_.size()), kStateDim);
    if (learning_ && offline && cfg.offline_warm_start && offline->rows() > 0) {
      acc_.add_rows(piml::build_library(*offline, spec_), offline->derivatives);
      const Eigen::Index stride = std::max<Eigen::Index>(1, offline->rows() / kOfflineSamples);
      for (Eigen::Index i = 0; i < offline->rows(); i += stride) {
        offline_samples_.emplace_back(offline->states.row(i).transpose(), offline->inputs.row(i).transpose());
      }
    }

    // S(0) from D(0) at the hover linearization, then tightening.
    rebuild_operator(h.A - h.B * h.K);
    const VectorXd w = cfg.dt * VectorXd(dset_.bar);
    const robust::RpiOperator::Result r = op_.apply(w);
    s_ = r.s;
    xs_ = robust::tighten(x_box_, s_);
    us_ = robust::tighten(u_box_, k_sum_ * w / (1.0 - r.alpha));
  }

  std::string name() const override { return adaptive_ ? "proposed" : "ftmpc"; }

  ControlOutput control(int, const State12& x, const std::vector<State12>& ref) override {
    ControlOutput out;
    State12 x0 = x;
    if (cfg_.nominal_init && shifted_ && ((x - shifted_->x.front()).cwiseAbs().array() <= s_.array()).all()) {
      x0 = shifted_->x.front();
    }
    mpc::TerminalIngredients term;
    term.P = p_;
    term.K = k_;
    term.alpha = mpc::terminal_level(p_, k_, xs_, us_, ref.back(), u_ref_);
    if (!(term.alpha > 0.0)) {
      term.constrained = false;
      out.events |= kEventTerminalFallback;
    }
    const mpc::OcpProblem pb{x0, ref, u_ref_, xs_, us_, term, ref.back()};
    std::vector<Input4> warm;
    if (shifted_) {
      warm = shifted_->u;
      out.candidate_slack = mpc::candidate_slack(pred_, pb, warm);
    }
    const mpc::MpcSolution sol = solver_.solve(pred_, pb, warm);
    NominalMpcController<Model>::fill(out, sol);
    const mpc::TubeControl tc = mpc::tube_control(sol, x, term.tube_gain(), u_box_);
    out.u = tc.u;
    out.saturated = tc.saturated;
    if (tc.saturated) out.events |= kEventInputSaturated;
    if (sol.status == mpc::SolveStatus::kInfeasibleHard) {
      shifted_.reset();
    } else {
      shifted_ = mpc::shift_warm_start(sol, term, pred_, ref.back(), u_ref_);
    }
    return out;
  }

  ObserveInfo observe(int k, const State12& x, const Input4& u, const State12& x_next) override {
    ObserveInfo info;
    const double dt = cfg_.dt;
    // Line 9: realized disturbance against the unbiased learned model.
    info.disturbance = (x_next - model_.step(x, u)) / dt;
    info.contained = dset_.contains(info.disturbance, 1e-12);

    VectorXd u_xi = VectorXd::Zero(kStateDim);
    if (learning_) {
      // Lines 10-18: append, and refit on schedule.
      acc_.add(piml::library_row(spec_.terms, x, u), (x_next - phys_.step(x, u)) / dt);
      online_samples_.emplace_back(x, u);
      if (online_samples_.size() > kOnlineSamples) online_samples_.erase(online_samples_.begin());
      if (k % cfg_.t_learn == 0 && acc_.rows() > cfg_.n_min) {
        try {
          const piml::FitResult fr = piml::fit(acc_, spec_, std::vector<double>(kStateDim, cfg_.lasso_h), xi_, version_ + 1);
          const MatrixXd delta = piml::clip_update(fr.report.xi_full - xi_, cfg_.dxi_max);
          xi_ += delta;
          ++version_;
          model_ = Model(piml::PimlModel{nominal_, piml::prune(spec_, xi_, version_)}, dt);
          pred_.inner = model_;
          info.learned = true;
          info.dxi_norm = delta.norm();
          u_xi = coefficient_uncertainty(delta);
        } catch (const ConvergenceError&) {
          info.events |= kEventFitFailed;
        }
      }
    }

    if (adaptive_) {
      // Lines 19-27.
      if (cfg_.adaptation) dset_ = robust::update(dset_, info.disturbance);
      pred_.bias = dt * dset_.center;
      try {
        // The closed-loop operator follows the model: rebuilt only when it changes.
        if (info.learned) {
          const Linearization lin = model_.linearize(x, u);
          rebuild_operator(lin.A - lin.B * k_);
        }
        const VectorXd w = dt * (VectorXd(dset_.bar) + u_xi);
        const robust::RpiOperator::Result r = op_.apply(w);
        const auto xs = robust::try_tighten(x_box_, r.s);
        const auto us = robust::try_tighten(u_box_, k_sum_ * w / (1.0 - r.alpha));
        if (xs && us) {
          s_ = r.s;
          xs_ = *xs;
          us_ = *us;
        } else {
          info.events |= kEventEmptyTightening;
        }
      } catch (const ContractionError&) {
        info.events |= kEventRpiFailed;
      } catch (const ConvergenceError&) {
        info.events |= kEventRpiFailed;
      }
    }

    info.center = dset_.center;
    info.bar = dset_.bar;
    info.tube = s_;
    info.model_version = version_;
    info.u_xi = u_xi.maxCoeff();
    return info;
  }

  const VectorXd& tube() const { return s_; }
  const robust::BoxSet& tightened_states() const { return xs_; }
  const robust::BoxSet& tightened_inputs() const { return us_; }
  const robust::DisturbanceSet& disturbance_set() const { return dset_; }
  const Mat4x12& gain() const { return k_; }
  const Model& model() const { return model_; }
  long model_version() const { return version_; }

 private:
  static constexpr std::size_t kOnlineSamples = 500;
  static constexpr Eigen::Index kOfflineSamples = 500;

  /// Partial sums for A_cl over the admissible range of D, plus sum |K A^i|
  /// for the exact input support of K F. On failure the old operator stays.
  void rebuild_operator(const MatrixXd& a_cl) {
    const VectorXd w_min = VectorXd::Constant(kStateDim, cfg_.dt * robust::DisturbanceSet{}.floor);
    const VectorXd w_max = cfg_.dt * VectorXd(dset_.cap).cwiseMax(w_min / cfg_.dt);
    robust::RpiOperator op(a_cl, w_min, w_max, cfg_.rpi_eps);
    k_sum_ = op.input_sum(k_);
    op_ = std::move(op);
  }

  /// Box over the change of the learned rate, Psi(x, u) dxi, on the stored
  /// operating samples (1.5x the sampled sup per axis), capped by the
  /// coefficient-Lipschitz ball L_xi |dxi|.
  VectorXd coefficient_uncertainty(const MatrixXd& delta) const {
    std::vector<std::pair<State12, Input4>> samples = offline_samples_;
    samples.insert(samples.end(), online_samples_.begin(), online_samples_.end());
    if (samples.empty() || delta.norm() == 0.0) return VectorXd::Zero(kStateDim);
    const double ball = robust::estimate_L_xi(spec_.terms, samples) * delta.norm();
    VectorXd sup = VectorXd::Zero(kStateDim);
    for (const auto& [sx, su] : samples) {
      sup = sup.cwiseMax((delta.transpose() * piml::library_row(spec_.terms, sx, su)).cwiseAbs());
    }
    return (1.5 * sup).cwiseMin(ball);
  }

  ExperimentConfig cfg_;
  mpc::MpcConfig mcfg_;
  bool adaptive_;
  bool learning_;
  quadsim::QuadParams nominal_;
  mpc::OcpSolver<BiasedModel<Model>> solver_;
  robust::BoxSet x_box_, u_box_;
  quadsim::Rk4Model<quadsim::PhysicsModel> phys_;
  Model model_;
  BiasedModel<Model> pred_;
  Input4 u_ref_;
  Mat4x12 k_;
  Mat12 p_;
  robust::DisturbanceSet dset_;
  robust::RpiOperator op_;
  MatrixXd k_sum_;
  VectorXd s_;
  robust::BoxSet xs_, us_;
  piml::LibrarySpec spec_;
  piml::GramAccumulator acc_{1, kStateDim};
  MatrixXd xi_;
  long version_ = 0;
  std::vector<std::pair<State12, Input4>> offline_samples_, online_samples_;
  std::optional<mpc::MpcSolution> shifted_;
};

/// Data shared by every run of a bench: offline identification rows and the
/// trained network.
struct SharedResources {
  std::optional<piml::Dataset> residual_data;
  std::optional<baselines::MlpModel> mlp;
};

inline std::unique_ptr<Controller> make_controller(ControllerKind kind, const ExperimentConfig& cfg,
                                                   const robust::BoxSet& x_box, const SharedResources& res) {
  const robust::BoxSet u_box = default_input_box();
  switch (kind) {
    case ControllerKind::kPid: return std::make_unique<PidController>(cfg.dt, u_box);
    case ControllerKind::kSmpc:
      return std::make_unique<NominalMpcController<quadsim::Rk4Model<quadsim::PhysicsModel>>>(
          "smpc", quadsim::Rk4Model<quadsim::PhysicsModel>({}, cfg.dt), cfg.mpc(), x_box, u_box);
    case ControllerKind::kNnMpc:
      if (!res.mlp) throw std::invalid_argument("make_controller: nnmpc needs a trained network");
      return std::make_unique<NominalMpcController<baselines::MlpDiscreteModel>>(
          "nnmpc", baselines::MlpDiscreteModel{*res.mlp}, cfg.mpc(), x_box, u_box);
    case ControllerKind::kFtMpc: {
      ExperimentConfig c = cfg;
      c.dbar_init = 0.1;
      c.dbar_max = 0.1;
      return std::make_unique<TubeMpcController>(c, x_box, false);
    }
    case ControllerKind::kProposed:
      return std::make_unique<TubeMpcController>(cfg, x_box, true, res.residual_data ? &*res.residual_data : nullptr);
  }
  throw std::invalid_argument("make_controller: unknown kind");
}

}  // namespace pimltube::bench
