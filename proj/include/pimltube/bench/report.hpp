#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimltube/bench/runner.hpp"

namespace pimltube::bench {

namespace detail {

inline const std::array<const char*, 12>& state_names() {
  static const std::array<const char*, 12> n{"px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r"};
  return n;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::invalid_argument("csv: bad number '" + s + "'");
  return v;
}

}  // namespace detail

/// RunLog CSV columns, in order. Vector fields expand to one column per
/// component with the state names as suffix.
inline std::vector<std::string> run_csv_header() {
  std::vector<std::string> h{"t", "k"};
  for (const char* prefix : {"x_", "nom_", "ref_"}) {
    for (const char* n : detail::state_names()) h.push_back(std::string(prefix) + n);
  }
  for (const char* n : {"u_thrust", "u_tau_x", "u_tau_y", "u_tau_z"}) h.emplace_back(n);
  for (const char* n : detail::state_names()) h.push_back(std::string("d_") + n);
  for (const char* n : {"value", "stage_cost", "status", "iterations", "solve_ms", "step_ms", "slack",
                        "candidate_slack"}) {
    h.emplace_back(n);
  }
  for (const char* prefix : {"tube_", "bar_"}) {
    for (const char* n : detail::state_names()) h.push_back(std::string(prefix) + n);
  }
  for (const char* n : {"contained", "model_version", "learned", "dxi_norm", "u_xi", "events", "state_violation",
                        "saturated"}) {
    h.emplace_back(n);
  }
  return h;
}

/// First line: "# key=value ..." run metadata; second: the header; then one
/// row per step at full precision.
inline void write_run_csv(std::ostream& os, const RunLog& log) {
  os << "# controller=" << log.controller << " trajectory=" << log.trajectory << " seed=" << log.seed
     << " dt=" << detail::fmt(log.dt) << " burn_in_steps=" << log.burn_in_steps << " l_x=" << detail::fmt(log.l_x)
     << " l_u=" << detail::fmt(log.l_u) << " k_norm=" << detail::fmt(log.k_norm) << "\n";
  const auto header = run_csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  std::string row;
  auto put = [&row](double v) {
    if (!row.empty()) row += ',';
    row += detail::fmt(v);
  };
  for (const StepRecord& r : log.records) {
    row.clear();
    put(r.t);
    put(r.k);
    for (const State12* v : {&r.x, &r.nominal, &r.ref})
      for (int i = 0; i < kStateDim; ++i) put((*v)[i]);
    for (int i = 0; i < kInputDim; ++i) put(r.u[i]);
    for (int i = 0; i < kStateDim; ++i) put(r.disturbance[i]);
    for (double v : {r.value, r.stage_cost, static_cast<double>(r.status), static_cast<double>(r.iterations),
                     r.solve_ms, r.step_ms, r.slack, r.candidate_slack}) {
      put(v);
    }
    for (const Vec12* v : {&r.tube, &r.bar})
      for (int i = 0; i < kStateDim; ++i) put((*v)[i]);
    for (double v : {static_cast<double>(r.contained), static_cast<double>(r.model_version),
                     static_cast<double>(r.learned), r.dxi_norm, r.u_xi, static_cast<double>(r.events),
                     static_cast<double>(r.state_violation), static_cast<double>(r.saturated)}) {
      put(v);
    }
    os << row << "\n";
  }
}

inline RunLog read_run_csv(std::istream& is) {
  RunLog log;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw std::invalid_argument("run csv: missing metadata line");
  std::istringstream meta(line.substr(2));
  std::string kv;
  while (meta >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("run csv: bad metadata '" + kv + "'");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "controller") log.controller = val;
    else if (key == "trajectory") log.trajectory = val;
    else if (key == "seed") log.seed = std::stoull(val);
    else if (key == "dt") log.dt = detail::to_double(val);
    else if (key == "burn_in_steps") log.burn_in_steps = std::stoi(val);
    else if (key == "l_x") log.l_x = detail::to_double(val);
    else if (key == "l_u") log.l_u = detail::to_double(val);
    else if (key == "k_norm") log.k_norm = detail::to_double(val);
    else throw std::invalid_argument("run csv: unknown metadata key '" + key + "'");
  }
  const auto header = run_csv_header();
  if (!std::getline(is, line) || detail::split(line) != header) throw std::invalid_argument("run csv: header mismatch");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("run csv: row " + std::to_string(log.records.size()) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
    }
    std::size_t c = 0;
    auto next = [&] { return detail::to_double(cells[c++]); };
    StepRecord r;
    r.t = next();
    r.k = static_cast<int>(next());
    for (State12* v : {&r.x, &r.nominal, &r.ref})
      for (int i = 0; i < kStateDim; ++i) (*v)[i] = next();
    for (int i = 0; i < kInputDim; ++i) r.u[i] = next();
    for (int i = 0; i < kStateDim; ++i) r.disturbance[i] = next();
    r.value = next();
    r.stage_cost = next();
    r.status = static_cast<int>(next());
    r.iterations = static_cast<int>(next());
    r.solve_ms = next();
    r.step_ms = next();
    r.slack = next();
    r.candidate_slack = next();
    for (Vec12* v : {&r.tube, &r.bar})
      for (int i = 0; i < kStateDim; ++i) (*v)[i] = next();
    r.contained = static_cast<int>(next());
    r.model_version = static_cast<long>(next());
    r.learned = static_cast<int>(next());
    r.dxi_norm = next();
    r.u_xi = next();
    r.events = static_cast<int>(next());
    r.state_violation = static_cast<int>(next());
    r.saturated = static_cast<int>(next());
    log.records.push_back(r);
  }
  return log;
}

inline std::vector<std::string> metrics_csv_header() {
  return {"controller",    "trajectory",      "runs",           "pos_rmse_m",       "att_rmse_rad",
          "max_alt_err_m", "avg_solve_ms",    "worst_solve_ms", "avg_step_ms",      "infeasible_hard",
          "feasible_with_slack", "max_iter",  "containment",    "iss_violation_rate", "shift_feasible_rate",
          "state_violations", "bar_max"};
}

/// One row per (controller, trajectory) cell.
inline void write_metrics_csv(std::ostream& os, const std::vector<Metrics>& table) {
  const auto h = metrics_csv_header();
  for (std::size_t i = 0; i < h.size(); ++i) os << (i ? "," : "") << h[i];
  os << "\n";
  for (const Metrics& m : table) {
    os << m.controller << "," << m.trajectory << "," << m.runs;
    for (double v : {m.pos_rmse, m.att_rmse, m.max_alt_err, m.avg_solve_ms, m.worst_solve_ms, m.avg_step_ms,
                     m.infeasible_hard, m.feasible_with_slack, m.max_iter, m.containment, m.iss_violation_rate,
                     m.shift_feasible_rate, m.state_violations, m.bar_max}) {
      os << "," << detail::fmt(v);
    }
    os << "\n";
  }
}

inline std::string run_stem(const RunLog& log) {
  return log.controller + "_" + log.trajectory + "_seed" + std::to_string(log.seed);
}

namespace detail {

/// Minimal line chart: shared x axis, one polyline per series.
class SvgChart {
 public:
  SvgChart(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void add(std::string name, std::vector<double> x, std::vector<double> y) {
    series_.push_back({std::move(name), std::move(x), std::move(y)});
  }

  void set_equal_axes(bool on) { equal_ = on; }

  std::string str() const {
    constexpr double w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series_) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, s.y[i]);
        y1 = std::max(y1, s.y[i]);
      }
    }
    if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double pw = w - ml - mr, ph = h - mt - mb;
    if (equal_) {
      const double scale = std::max((x1 - x0) / pw, (y1 - y0) / ph);
      const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
      x0 = cx - 0.5 * scale * pw, x1 = cx + 0.5 * scale * pw;
      y0 = cy - 0.5 * scale * ph, y1 = cy + 0.5 * scale * ph;
    }
    auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return mt + (1.0 - (v - y0) / (y1 - y0)) * ph; };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << title_ << "</text>\n";
    o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">" << xlabel_ << "</text>\n";
    o << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << mt + ph / 2
      << ")\">" << ylabel_ << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
      o << "<text x=\"" << px(xv) << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">" << fmt_short(xv) << "</text>\n";
      o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt_short(yv) << "</text>\n";
    }
    for (std::size_t k = 0; k < series_.size(); ++k) {
      const auto& s = series_[k];
      const char* c = colors[k % 6];
      o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.2\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o << px(s.x[i]) << "," << py(s.y[i]) << " ";
      }
      o << "\"/>\n";
      o << "<text x=\"" << ml + 8 << "\" y=\"" << mt + 16 + 14 * static_cast<double>(k) << "\" fill=\"" << c << "\">"
        << s.name << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
  }

 private:
  static std::string fmt_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }

  struct Series {
    std::string name;
    std::vector<double> x, y;
  };
  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
  bool equal_ = false;
};

}  // namespace detail

/// XY projection, per-axis tracking, inputs and tube width of one run, as
/// <stem>_{xy,tracking,inputs,tube}.svg. Returns the written paths.
inline std::vector<std::filesystem::path> write_plots(const std::filesystem::path& dir, const RunLog& log) {
  std::filesystem::create_directories(dir);
  std::vector<double> t;
  for (const auto& r : log.records) t.push_back(r.t);
  auto column = [&](auto f) {
    std::vector<double> v;
    v.reserve(log.records.size());
    for (const auto& r : log.records) v.push_back(f(r));
    return v;
  };
  const std::string stem = run_stem(log);
  std::vector<std::filesystem::path> out;
  auto save = [&](const std::string& suffix, const detail::SvgChart& c) {
    const auto p = dir / (stem + "_" + suffix + ".svg");
    std::ofstream os(p);
    if (!os) throw std::runtime_error("write_plots: cannot open " + p.string());
    os << c.str();
    out.push_back(p);
  };

  detail::SvgChart xy(stem + ": XY projection", "x [m]", "y [m]");
  xy.set_equal_axes(true);
  xy.add("reference", column([](const StepRecord& r) { return r.ref[idx::kPx]; }),
         column([](const StepRecord& r) { return r.ref[idx::kPy]; }));
  xy.add("flown", column([](const StepRecord& r) { return r.x[idx::kPx]; }),
         column([](const StepRecord& r) { return r.x[idx::kPy]; }));
  save("xy", xy);

  detail::SvgChart tr(stem + ": tracking error", "t [s]", "error [m]");
  const char* axes[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    tr.add(std::string("e_") + axes[a], t, column([a](const StepRecord& r) { return r.x[a] - r.ref[a]; }));
  }
  save("tracking", tr);

  detail::SvgChart in(stem + ": inputs", "t [s]", "thrust [N] / torque x10 [N m]");
  in.add("thrust", t, column([](const StepRecord& r) { return r.u[0]; }));
  const char* tn[] = {"tau_x x10", "tau_y x10", "tau_z x10"};
  for (int j = 1; j < 4; ++j) in.add(tn[j - 1], t, column([j](const StepRecord& r) { return 10.0 * r.u[j]; }));
  save("inputs", in);

  detail::SvgChart tube(stem + ": tube half-widths", "t [s]", "half-width");
  tube.add("position (max)", t, column([](const StepRecord& r) { return r.tube.segment<3>(idx::kPos).maxCoeff(); }));
  tube.add("velocity (max)", t, column([](const StepRecord& r) { return r.tube.segment<3>(idx::kVel).maxCoeff(); }));
  tube.add("attitude (max)", t, column([](const StepRecord& r) { return r.tube.segment<3>(idx::kAtt).maxCoeff(); }));
  save("tube", tube);
  return out;
}

/// Writes runs/<stem>.csv under `dir` (unless `run_csv` is off) and, when
/// `plots` is set, the SVG set under plots/. Returns every written path.
inline std::vector<std::filesystem::path> export_run(const std::filesystem::path& dir, const RunLog& log, bool plots,
                                                     bool run_csv = true) {
  std::vector<std::filesystem::path> out;
  if (run_csv) {
    std::filesystem::create_directories(dir / "runs");
    const auto p = dir / "runs" / (run_stem(log) + ".csv");
    std::ofstream os(p);
    if (!os) throw std::runtime_error("export_run: cannot open " + p.string());
    write_run_csv(os, log);
    out.push_back(p);
  }
  if (plots) {
    for (auto& p : write_plots(dir / "plots", log)) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pimltube::bench
