// pimltube command-line tool: simulate, identify, rpi, bench.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pimltube/bench/config.hpp"
#include "pimltube/bench/controllers.hpp"
#include "pimltube/bench/offline.hpp"
#include "pimltube/bench/report.hpp"
#include "pimltube/bench/runner.hpp"
#include "pimltube/piml/dataset.hpp"
#include "pimltube/piml/learned_model.hpp"
#include "pimltube/piml/model_io.hpp"
#include "pimltube/robust/rpi.hpp"

namespace fs = std::filesystem;
using namespace pimltube;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// "key=value" with value parsed as JSON when possible, else as a string.
void apply_override(nlohmann::json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
  try {
    j[key] = nlohmann::json::parse(val);
  } catch (const nlohmann::json::exception&) {
    j[key] = val;
  }
}

bench::ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& required,
                                     const nlohmann::json& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: malformed '" + path + "': " + e.what());
    }
    for (const auto& r : required) {
      if (!j.contains(r)) throw std::invalid_argument("config: missing required field '" + r + "'");
    }
  }
  for (auto it = overrides.begin(); it != overrides.end(); ++it) j[it.key()] = it.value();
  return bench::from_json(j);
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  double duration = 5.0;
  double dt = 0.01;
  std::uint64_t seed = 1;
  double thrust_dither = 0.01;
  double torque_dither = 1e-4;
  bool regulated = false;
  double wind = 0.03;
  std::string out = "-";
};

int run_simulate(const SimulateArgs& a) {
  const quadsim::QuadParams nominal;
  quadsim::DrydenParams wp;
  wp.intensity = a.wind;
  wp.seed = a.seed;
  quadsim::Plant plant({}, wp, a.dt);
  const robust::BoxSet u_box = bench::default_input_box();
  mpc::MpcConfig mc;
  mc.dt = a.dt;
  const bench::HoverDesign h = bench::hover_design(nominal, mc);
  State12 hover = State12::Zero();
  hover[idx::kPz] = 2.0;

  std::mt19937_64 rng(a.seed + 7);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (a.out != "-") {
    file.open(a.out);
    if (!file) throw std::runtime_error("simulate: cannot open " + a.out);
    os = &file;
  }
  *os << "t";
  for (const char* n : {"px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r", "u_thrust", "u_tau_x",
                        "u_tau_y", "u_tau_z"}) {
    *os << "," << n;
  }
  *os << "\n";
  State12 x = hover;
  const int steps = static_cast<int>(std::lround(a.duration / a.dt));
  for (int k = 0; k < steps; ++k) {
    Input4 u = h.u_ref;
    if (a.regulated) u -= h.K * (x - hover);
    u[0] += a.thrust_dither * uni(rng);
    for (int j = 1; j < 4; ++j) u[j] += a.torque_dither * uni(rng);
    u = u_box.clamp(u);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", k * a.dt);
    *os << buf;
    for (int i = 0; i < kStateDim; ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", x[i]);
      *os << buf;
    }
    for (int i = 0; i < kInputDim; ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", u[i]);
      *os << buf;
    }
    *os << "\n";
    const quadsim::PlantStep s = plant.step(x, u);
    x = s.x;
    if (s.left_envelope || !x.allFinite()) {
      std::cerr << "simulate: vehicle left the operating envelope at t = " << (k + 1) * a.dt << " s, stopping\n";
      break;
    }
  }
  return 0;
}

// ---------------------------------------------------------------- identify

struct IdentifyArgs {
  std::string data;
  std::string model_out = "model.txt";
  std::string report_out;
  double h = 1e-2;
  bool prior = true;
  double sigmas = 3.0;
};

piml::Dataset read_flight_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("identify: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("identify: empty file " + path);
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
    if (r.size() != 17) {
      throw std::invalid_argument("identify: line " + std::to_string(lineno) + " has " + std::to_string(r.size()) +
                                  " columns, expected 17 (t, 12 states, 4 inputs)");
    }
    rows.push_back(std::move(r));
  }
  if (rows.size() < 3) throw std::invalid_argument("identify: need at least 3 samples");
  piml::Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  d.states.resize(n, kStateDim);
  d.inputs.resize(n, kInputDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < kStateDim; ++c) d.states(i, c) = rows[static_cast<std::size_t>(i)][1 + c];
    for (int c = 0; c < kInputDim; ++c) d.inputs(i, c) = rows[static_cast<std::size_t>(i)][13 + c];
  }
  d.dt = rows[1][0] - rows[0][0];
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (std::abs(rows[i][0] - rows[i - 1][0] - d.dt) > 1e-6 * std::max(1.0, d.dt)) {
      throw std::invalid_argument("identify: non-uniform sampling at row " + std::to_string(i));
    }
  }
  if (!(d.dt > 0.0)) throw std::invalid_argument("identify: time column must increase");
  return d;
}

int run_identify(const IdentifyArgs& a) {
  const quadsim::QuadParams prior;
  const piml::Dataset raw = read_flight_csv(a.data);
  // Inputs are held over each sample, so the targets are one-step increments
  // (minus the prior's RK4 step) rather than central differences, which
  // would mix the inputs of neighbouring samples.
  const Eigen::Index n = raw.rows() - 1;
  const bench::Transitions tr{raw.states.topRows(n), raw.inputs.topRows(n), raw.states.bottomRows(n)};
  const piml::Dataset d = a.prior ? bench::residual_dataset(tr, prior, raw.dt) : bench::increment_dataset(tr, raw.dt);
  const piml::PreprocessResult pre = piml::preprocess(d, a.sigmas);
  const piml::LibrarySpec spec = piml::maybe_expand(piml::base_library(), pre.data);
  const piml::FitResult fr = piml::fit(pre.data, spec, std::vector<double>(kStateDim, a.h));
  piml::save_model(a.model_out, fr.model, a.prior ? &prior : nullptr);

  nlohmann::json rep;
  rep["samples"] = d.rows();
  rep["removed_outliers"] = pre.removed;
  rep["dt"] = d.dt;
  rep["h"] = a.h;
  rep["library_terms"] = spec.size();
  rep["physics_prior"] = a.prior;
  rep["residual_rms"] = fr.report.residual_rms;
  rep["nonzeros"] = fr.report.nonzeros;
  rep["kkt"] = fr.report.kkt;
  const std::string text = rep.dump(2);
  if (a.report_out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream os(a.report_out);
    if (!os) throw std::runtime_error("identify: cannot open " + a.report_out);
    os << text << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- rpi

struct RpiArgs {
  std::string model;
  std::string config;
  std::vector<std::string> sets;
  double dbar = -1.0;
};

int run_rpi(const RpiArgs& a) {
  nlohmann::json ov = nlohmann::json::object();
  for (const auto& s : a.sets) apply_override(ov, s);
  const bench::ExperimentConfig cfg = build_config(a.config, {}, ov);
  piml::PimlModel pm;
  if (!a.model.empty()) {
    const piml::ModelFile f = piml::load_model(a.model);
    if (f.has_prior) pm.prior = f.prior;
    pm.residual = f.model;
  }
  const mpc::MpcConfig mc = cfg.mpc();
  State12 hover = State12::Zero();
  hover[idx::kPz] = 2.0;
  const Input4 u_hover(pm.prior.hover_thrust(), 0, 0, 0);
  const Linearization lin = quadsim::Rk4Model<piml::PimlModel>(pm, cfg.dt).linearize(hover, u_hover);
  const robust::LqrResult lqr = robust::lqr_gain(lin.A, lin.B, mc.Q(), mc.R());
  const Eigen::MatrixXd a_cl = lin.A - lin.B * lqr.K;
  const double bar = a.dbar > 0.0 ? a.dbar : cfg.dbar_init;
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(kStateDim, cfg.dt * bar);
  const robust::RpiOperator op(a_cl, w, w, cfg.rpi_eps);
  const robust::RpiOperator::Result r = op.apply(w);
  const robust::RpiCertificate cert = robust::certify(op, w);
  const robust::BoxSet x_box = bench::default_state_box();
  const robust::BoxSet u_box = bench::default_input_box();
  const Eigen::VectorXd ksup = op.input_support(lqr.K, w);
  const auto xs = robust::try_tighten(x_box, r.s);
  const auto us = robust::try_tighten(u_box, ksup);

  auto row = [](const std::string& key, const Eigen::VectorXd& v) {
    std::cout << key;
    char buf[40];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", v[i]);
      std::cout << buf;
    }
    std::cout << "\n";
  };
  auto scalar = [&](const std::string& key, double v) { row(key, Eigen::VectorXd::Constant(1, v)); };
  row("half_width", r.s);
  row("input_support", ksup);
  if (xs) {
    row("x_tightened_lo", xs->lo);
    row("x_tightened_hi", xs->hi);
  } else {
    std::cout << "x_tightened,empty\n";
  }
  if (us) {
    row("u_tightened_lo", us->lo);
    row("u_tightened_hi", us->hi);
  } else {
    std::cout << "u_tightened,empty\n";
  }
  scalar("spectral_radius", op.spectral_radius_value());
  scalar("alpha", r.alpha);
  scalar("terms", r.terms);
  scalar("certificate_margin", cert.margin);
  scalar("certificate_holds", cert.holds ? 1.0 : 0.0);
  return xs && us ? 0 : 3;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string config;
  std::string controllers;
  std::string trajectories;
  int seeds = 0;
  double duration = 0.0;
  double burn_in = -1.0;
  bool raw_reference = false;
  bool plots = false;
  bool no_runs = false;
  std::string out;
  std::vector<std::string> sets;
};

int run_bench_cmd(const BenchArgs& a) {
  nlohmann::json ov = nlohmann::json::object();
  for (const auto& s : a.sets) apply_override(ov, s);
  if (!a.controllers.empty()) {
    ov["controllers"] = a.controllers == "all" ? bench::all_controllers() : split_list(a.controllers);
  }
  if (!a.trajectories.empty()) {
    ov["trajectories"] = a.trajectories == "all" ? std::vector<std::string>{"helical", "spline", "lemniscate"}
                                                 : split_list(a.trajectories);
  }
  if (a.seeds > 0) {
    std::vector<std::uint64_t> s;
    for (int i = 1; i <= a.seeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
    ov["seeds"] = s;
  }
  if (a.duration > 0.0) ov["duration"] = a.duration;
  if (a.burn_in >= 0.0) {
    ov["burn_in"] = a.burn_in;
  } else if (a.config.empty() && !ov.contains("burn_in") && a.duration > 0.0 &&
             a.duration <= bench::ExperimentConfig{}.burn_in) {
    ov["burn_in"] = 0.2 * a.duration;
    std::cerr << "note: burn-in set to " << 0.2 * a.duration << " s for the short run\n";
  }
  if (a.raw_reference) ov["raw_reference"] = true;
  if (a.plots) ov["plots"] = true;
  if (!a.out.empty()) ov["out_dir"] = a.out;
  const bench::ExperimentConfig cfg = build_config(a.config, bench::required_bench_fields(), ov);

  const fs::path dir = bench::output_dir(cfg);
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "config_used.json");
    os << bench::to_json(cfg).dump(2) << "\n";
  }
  auto on_run = [&](const bench::RunLog& log) { bench::export_run(dir, log, cfg.plots, !a.no_runs); };
  auto progress = [](const std::string& s) { std::cerr << s << "\n"; };
  const bench::BenchResult res = bench::run_bench(cfg, on_run, progress);
  {
    std::ofstream os(dir / "metrics.csv");
    bench::write_metrics_csv(os, res.table);
  }
  bench::write_metrics_csv(std::cout, res.table);
  std::cerr << "wall time " << res.wall_s << " s, output in " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pimltube: learned-model tube MPC for quadrotors"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "open-loop plant run, writes t, 12 states, 4 inputs as CSV");
  s->add_option("--duration", sim.duration, "seconds")->check(CLI::PositiveNumber);
  s->add_option("--dt", sim.dt, "sampling time [s]")->check(CLI::PositiveNumber);
  s->add_option("--seed", sim.seed, "wind and dither seed");
  s->add_option("--thrust-dither", sim.thrust_dither, "uniform thrust dither [N]");
  s->add_option("--torque-dither", sim.torque_dither, "uniform torque dither [N m]");
  s->add_option("--wind", sim.wind, "Dryden intensity");
  s->add_flag("--regulated", sim.regulated, "close a hover LQR around the plant (keeps long runs in the envelope)");
  s->add_option("-o,--out", sim.out, "output CSV, '-' for stdout");

  IdentifyArgs id;
  auto* i = app.add_subcommand("identify", "fit a sparse model from a flight CSV");
  i->add_option("data", id.data, "CSV with columns t, 12 states, 4 inputs")->required();
  i->add_option("-m,--model", id.model_out, "model file to write");
  i->add_option("-r,--report", id.report_out, "fit report (JSON); stdout when omitted");
  i->add_option("--lasso-h", id.h, "lasso weight")->check(CLI::PositiveNumber);
  i->add_option("--sigmas", id.sigmas, "outlier rejection threshold")->check(CLI::PositiveNumber);
  bool no_prior = false;
  i->add_flag("--no-prior", no_prior, "fit the full vector field instead of the residual of the rigid-body model");

  RpiArgs rp;
  auto* r = app.add_subcommand("rpi", "RPI set and tightened constraints at hover, as CSV");
  r->add_option("--model", rp.model, "model file (omit for the first-principles model)");
  r->add_option("--config", rp.config, "JSON config");
  r->add_option("--dbar", rp.dbar, "disturbance half-width (rate units); default dbar_init");
  r->add_option("--set", rp.sets, "override a config field, key=value");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "controllers x trajectories x seeds comparison");
  b->add_option("--config", bn.config, "JSON config (must state controllers, trajectories, seeds)");
  b->add_option("--controllers", bn.controllers, "comma list or 'all'");
  b->add_option("--trajectories", bn.trajectories, "comma list or 'all'");
  b->add_option("--seeds", bn.seeds, "run seeds 1..N")->check(CLI::PositiveNumber);
  b->add_option("--duration", bn.duration, "seconds per run")->check(CLI::PositiveNumber);
  b->add_option("--burn-in", bn.burn_in, "seconds excluded from the metrics (default 2, or 20% of a short --duration)")
      ->check(CLI::NonNegativeNumber);
  b->add_flag("--raw-reference", bn.raw_reference, "unscaled reference formulas with a widened state box");
  b->add_flag("--plots", bn.plots, "write SVG plots per run");
  b->add_flag("--no-run-csv", bn.no_runs, "skip the per-run CSV logs");
  b->add_option("--out", bn.out, "output directory (PIMLTUBE_OUT_DIR wins when set)");
  b->add_option("--set", bn.sets, "override a config field, key=value");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return run_simulate(sim);
    if (*i) {
      id.prior = !no_prior;
      return run_identify(id);
    }
    if (*r) return run_rpi(rp);
    if (*b) return run_bench_cmd(bn);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
