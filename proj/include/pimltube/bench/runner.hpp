#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimltube/baselines/mlp.hpp"
#include "pimltube/bench/config.hpp"
#include "pimltube/bench/controllers.hpp"
#include "pimltube/bench/offline.hpp"
#include "pimltube/bench/trajectory.hpp"
#include "pimltube/quadsim/plant.hpp"
#include "pimltube/robust/lipschitz.hpp"

namespace pimltube::bench {

/// One control step.
struct StepRecord {
  double t = 0.0;
  int k = 0;
  State12 x = State12::Zero();
  State12 nominal = State12::Zero();
  State12 ref = State12::Zero();
  Input4 u = Input4::Zero();
  Vec12 disturbance = Vec12::Zero();
  double value = 0.0;       // V*_N
  double stage_cost = 0.0;  // l_c(x(k), u(k)) against ref(k)
  int status = -1;          // SolveStatus, -1 when no OCP was solved
  int iterations = 0;
  double solve_ms = 0.0;
  double step_ms = 0.0;  // controller wall time for control + observe
  double slack = 0.0;
  double candidate_slack = std::numeric_limits<double>::quiet_NaN();
  Vec12 tube = Vec12::Zero();  // S in force at step k
  Vec12 bar = Vec12::Zero();   // D(k) half-widths used for the containment check
  int contained = 1;
  long model_version = 0;
  int learned = 0;
  double dxi_norm = 0.0;
  double u_xi = 0.0;
  int events = 0;
  int state_violation = 0;  // x(k) outside the original state box
  int saturated = 0;
};

struct RunLog {
  std::string controller;
  std::string trajectory;
  std::uint64_t seed = 0;
  double dt = 0.01;
  int burn_in_steps = 0;
  double l_x = 0.0, l_u = 0.0, k_norm = 0.0;  // ISS monitor constants
  std::vector<StepRecord> records;
};

/// Stage cost |x - r|_Q^2 + |u - u_ref|_R^2.
inline double stage_cost(const mpc::MpcConfig& c, const State12& x, const State12& r, const Input4& u,
                         const Input4& u_ref) {
  const Vec12 e = x - r;
  const Vec4 du = u - u_ref;
  return e.dot(c.q_diag.cwiseProduct(e)) + du.dot(c.r_diag.cwiseProduct(du));
}

/// Offline transitions, the residual dataset and (when NN-MPC runs) the
/// trained network. Transitions are split train | holdout.
struct PreparedData {
  SharedResources shared;
  Transitions train, holdout;
  double mlp_holdout_rmse = std::numeric_limits<double>::quiet_NaN();
  baselines::TrainReport mlp_report;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg, bool need_residual, bool need_mlp) {
  PreparedData p;
  const int n = cfg.offline_train + cfg.offline_test;
  if (n == 0 || (!need_residual && !need_mlp)) return p;
  OfflineOptions o;
  o.samples = n;
  o.dt = cfg.dt;
  o.plant = cfg.plant();
  o.wind = cfg.wind(cfg.offline_seed);
  o.x_box = default_state_box();
  o.u_box = default_input_box();
  o.seed = cfg.offline_seed;
  const Transitions all = generate_transitions(o);
  p.train = all.slice(0, cfg.offline_train);
  p.holdout = all.slice(cfg.offline_train, cfg.offline_test);
  if (need_residual && cfg.offline_train > 0) p.shared.residual_data = residual_dataset(p.train, quadsim::QuadParams{}, cfg.dt);
  if (need_mlp) {
    if (!cfg.mlp_file.empty()) {
      p.shared.mlp = baselines::load_mlp(cfg.mlp_file);
    } else {
      baselines::TrainConfig tc;
      tc.max_epochs = cfg.mlp_epochs;
      tc.seed = cfg.offline_seed;
      tc.normalization = cfg.mlp_normalization == "fixed" ? baselines::MlpNormalization::kFixed
                                                          : baselines::MlpNormalization::kData;
      p.shared.mlp = baselines::mlp_train(increment_dataset(p.train, cfg.dt), tc, &p.mlp_report);
    }
    if (cfg.offline_test > 0) p.mlp_holdout_rmse = baselines::mlp_holdout_rmse(*p.shared.mlp, increment_dataset(p.holdout, cfg.dt));
  }
  return p;
}

/// Algorithm 1 closed loop for one (controller, trajectory, seed) cell. The
/// controller's control() covers lines 6-8 and its observe() lines 9-27, so
/// the model swap of a step always precedes that step's set updates.
inline RunLog run_closed_loop(const ExperimentConfig& cfg, ControllerKind ck, TrajectoryKind tk, std::uint64_t seed,
                              const SharedResources& res) {
  cfg.validate();
  const auto [traj, x_box] = cfg.reference(tk);
  std::unique_ptr<Controller> ctrl = make_controller(ck, cfg, x_box, res);
  const mpc::MpcConfig mc = cfg.mpc();
  const robust::BoxSet u_box = default_input_box();
  const HoverDesign hd = hover_design(quadsim::QuadParams{}, mc);

  RunLog log;
  log.controller = to_string(ck);
  log.trajectory = to_string(tk);
  log.seed = seed;
  log.dt = cfg.dt;
  log.burn_in_steps = cfg.burn_in_steps();
  const robust::CostLipschitz lc = robust::lipschitz_cost(mc.Q(), mc.R(), x_box, u_box, x_box.center(), hd.u_ref);
  log.l_x = lc.l_x;
  log.l_u = lc.l_u;
  log.k_norm = Eigen::JacobiSVD<MatrixXd>(hd.K).singularValues()[0];

  quadsim::Plant plant(cfg.plant(), cfg.wind(seed), cfg.dt);
  const int steps = cfg.steps();
  const double g = quadsim::QuadParams{}.gravity;
  State12 x = traj.flat_state(0.0, g);
  Vec12 tube = Vec12::Zero(), bar = Vec12::Zero();
  if (auto* t = dynamic_cast<TubeMpcController*>(ctrl.get())) {
    tube = t->tube();
    bar = t->disturbance_set().bar;
  }
  log.records.reserve(static_cast<std::size_t>(steps));
  std::vector<State12> window(static_cast<std::size_t>(mc.horizon + 1));
  for (int k = 0; k < steps; ++k) {
    const double t = k * cfg.dt;
    for (int j = 0; j <= mc.horizon; ++j) window[static_cast<std::size_t>(j)] = traj.flat_state(t + j * cfg.dt, g);
    StepRecord rec;
    rec.t = t;
    rec.k = k;
    rec.x = x;
    rec.ref = window.front();
    rec.tube = tube;
    rec.bar = bar;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const ControlOutput co = ctrl->control(k, x, window);
      const auto t1 = std::chrono::steady_clock::now();
      const quadsim::PlantStep ps = plant.step(x, co.u);
      const auto t2 = std::chrono::steady_clock::now();
      const ObserveInfo oi = ctrl->observe(k, x, co.u, ps.x);
      const auto t3 = std::chrono::steady_clock::now();
      rec.step_ms = std::chrono::duration<double, std::milli>((t1 - t0) + (t3 - t2)).count();
      rec.nominal = co.nominal;
      rec.u = co.u;
      rec.value = co.cost;
      rec.status = co.solved ? static_cast<int>(co.status) : -1;
      rec.iterations = co.iterations;
      rec.solve_ms = co.solve_ms;
      rec.slack = co.slack;
      rec.candidate_slack = co.candidate_slack;
      rec.saturated = co.saturated ? 1 : 0;
      rec.disturbance = oi.disturbance;
      rec.contained = oi.contained ? 1 : 0;
      rec.model_version = oi.model_version;
      rec.learned = oi.learned ? 1 : 0;
      rec.dxi_norm = oi.dxi_norm;
      rec.u_xi = oi.u_xi;
      rec.events = co.events | oi.events;
      if (dynamic_cast<TubeMpcController*>(ctrl.get())) {
        tube = oi.tube;
        bar = oi.bar;
      }
      x = ps.x;
    } catch (const std::exception& e) {
      throw std::runtime_error(log.controller + "/" + log.trajectory + "/seed " + std::to_string(seed) + " step " +
                               std::to_string(k) + ": " + e.what());
    }
    rec.stage_cost = stage_cost(mc, rec.x, rec.ref, rec.u, hd.u_ref);
    rec.state_violation = x_box.contains(rec.x) ? 0 : 1;
    log.records.push_back(rec);
  }
  return log;
}

struct Metrics {
  std::string controller, trajectory;
  int runs = 0;
  double pos_rmse = 0.0;
  double att_rmse = 0.0;
  double max_alt_err = 0.0;
  double avg_solve_ms = 0.0;
  double worst_solve_ms = 0.0;
  double avg_step_ms = 0.0;
  double infeasible_hard = 0.0;
  double feasible_with_slack = 0.0;
  double max_iter = 0.0;
  double containment = 1.0;
  double iss_violation_rate = 0.0;
  double shift_feasible_rate = 1.0;
  double state_violations = 0.0;
  double bar_max = 0.0;
};

/// Post-burn-in metrics of one run.
inline Metrics compute_metrics(const RunLog& log) {
  if (log.records.empty()) throw std::invalid_argument("compute_metrics: empty log");
  Metrics m;
  m.controller = log.controller;
  m.trajectory = log.trajectory;
  m.runs = 1;
  const auto n = log.records.size();
  const std::size_t begin = std::min(static_cast<std::size_t>(std::max(0, log.burn_in_steps)), n - 1);
  double pos = 0.0, att = 0.0;
  std::size_t count = 0, contained = 0, shift_total = 0, shift_ok = 0, iss_total = 0, iss_bad = 0;
  for (std::size_t i = begin; i < n; ++i) {
    const StepRecord& r = log.records[i];
    pos += (r.x.segment<3>(idx::kPos) - r.ref.segment<3>(idx::kPos)).squaredNorm();
    att += (r.x.segment<3>(idx::kAtt) - r.ref.segment<3>(idx::kAtt)).squaredNorm();
    m.max_alt_err = std::max(m.max_alt_err, std::abs(r.x[idx::kPz] - r.ref[idx::kPz]));
    m.avg_solve_ms += r.solve_ms;
    m.worst_solve_ms = std::max(m.worst_solve_ms, r.solve_ms);
    m.avg_step_ms += r.step_ms;
    if (r.status == static_cast<int>(mpc::SolveStatus::kInfeasibleHard)) m.infeasible_hard += 1;
    if (r.status == static_cast<int>(mpc::SolveStatus::kFeasibleWithSlack)) m.feasible_with_slack += 1;
    if (r.status == static_cast<int>(mpc::SolveStatus::kMaxIter)) m.max_iter += 1;
    contained += r.contained ? 1 : 0;
    if (!std::isnan(r.candidate_slack)) {
      ++shift_total;
      if (r.candidate_slack <= 1e-4) ++shift_ok;
    }
    m.state_violations += r.state_violation;
    m.bar_max = std::max(m.bar_max, r.bar.maxCoeff());
    if (i + 1 < n && r.status >= 0 && log.records[i + 1].status >= 0) {
      const double s_max = r.tube.maxCoeff();
      const double bound = -r.stage_cost + log.l_x * s_max + log.l_u * log.k_norm * s_max;
      ++iss_total;
      if (log.records[i + 1].value - r.value > bound) ++iss_bad;
    }
    ++count;
  }
  m.pos_rmse = std::sqrt(pos / static_cast<double>(count));
  m.att_rmse = std::sqrt(att / static_cast<double>(count));
  m.avg_solve_ms /= static_cast<double>(count);
  m.avg_step_ms /= static_cast<double>(count);
  m.containment = static_cast<double>(contained) / static_cast<double>(count);
  m.shift_feasible_rate = shift_total ? static_cast<double>(shift_ok) / static_cast<double>(shift_total) : 1.0;
  m.iss_violation_rate = iss_total ? static_cast<double>(iss_bad) / static_cast<double>(iss_total) : 0.0;
  // Whole-run audits: the D cap and the feasibility counters cover every step.
  for (std::size_t i = 0; i < begin; ++i) {
    const StepRecord& r = log.records[i];
    m.bar_max = std::max(m.bar_max, r.bar.maxCoeff());
    if (r.status == static_cast<int>(mpc::SolveStatus::kInfeasibleHard)) m.infeasible_hard += 1;
  }
  return m;
}

/// Mean over runs of the same (controller, trajectory) cell; counters are
/// summed, worst-case fields take the max.
inline Metrics aggregate(const std::vector<Metrics>& runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  Metrics m;
  m.controller = runs.front().controller;
  m.trajectory = runs.front().trajectory;
  m.containment = m.shift_feasible_rate = 0.0;
  for (const Metrics& r : runs) {
    m.runs += r.runs;
    m.pos_rmse += r.pos_rmse;
    m.att_rmse += r.att_rmse;
    m.max_alt_err = std::max(m.max_alt_err, r.max_alt_err);
    m.avg_solve_ms += r.avg_solve_ms;
    m.worst_solve_ms = std::max(m.worst_solve_ms, r.worst_solve_ms);
    m.avg_step_ms += r.avg_step_ms;
    m.infeasible_hard += r.infeasible_hard;
    m.feasible_with_slack += r.feasible_with_slack;
    m.max_iter += r.max_iter;
    m.containment += r.containment;
    m.iss_violation_rate += r.iss_violation_rate;
    m.shift_feasible_rate += r.shift_feasible_rate;
    m.state_violations += r.state_violations;
    m.bar_max = std::max(m.bar_max, r.bar_max);
  }
  const double k = static_cast<double>(runs.size());
  for (double* f : {&m.pos_rmse, &m.att_rmse, &m.avg_solve_ms, &m.avg_step_ms, &m.containment,
                    &m.iss_violation_rate, &m.shift_feasible_rate}) {
    *f /= k;
  }
  return m;
}

struct BenchResult {
  std::vector<Metrics> runs;   // one per (controller, trajectory, seed)
  std::vector<Metrics> table;  // one per (controller, trajectory), mean over seeds
  double wall_s = 0.0;
  double mlp_holdout_rmse = std::numeric_limits<double>::quiet_NaN();

  const Metrics& cell(const std::string& controller, const std::string& trajectory) const {
    for (const Metrics& m : table)
      if (m.controller == controller && m.trajectory == trajectory) return m;
    throw std::out_of_range("BenchResult: no cell " + controller + "/" + trajectory);
  }
};

/// Every (controller, trajectory, seed) cell of the config, sequentially.
/// `on_run` sees each log before it is dropped (export hook).
inline BenchResult run_bench(const ExperimentConfig& cfg, const std::function<void(const RunLog&)>& on_run = {},
                             const std::function<void(const std::string&)>& progress = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  bool need_res = false, need_mlp = false;
  for (const auto& c : cfg.controllers) {
    need_res |= parse_controller(c) == ControllerKind::kProposed;
    need_mlp |= parse_controller(c) == ControllerKind::kNnMpc;
  }
  const PreparedData data = prepare_data(cfg, need_res && cfg.learning && cfg.offline_warm_start, need_mlp);
  BenchResult out;
  out.mlp_holdout_rmse = data.mlp_holdout_rmse;
  for (const auto& c : cfg.controllers) {
    for (const auto& tr : cfg.trajectories) {
      std::vector<Metrics> cell;
      for (std::uint64_t seed : cfg.seeds) {
        const RunLog log = run_closed_loop(cfg, parse_controller(c), parse_trajectory(tr), seed, data.shared);
        cell.push_back(compute_metrics(log));
        out.runs.push_back(cell.back());
        if (on_run) on_run(log);
        if (progress) {
          progress(c + " " + tr + " seed " + std::to_string(seed) + " rmse " + std::to_string(cell.back().pos_rmse));
        }
      }
      out.table.push_back(aggregate(cell));
    }
  }
  out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace pimltube::bench
