#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pimltube/bench/trajectory.hpp"
#include "pimltube/core/types.hpp"
#include "pimltube/mpc/ocp.hpp"
#include "pimltube/quadsim/dryden.hpp"
#include "pimltube/quadsim/plant.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::bench {

enum class ControllerKind { kProposed, kFtMpc, kSmpc, kNnMpc, kPid };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kProposed: return "proposed";
    case ControllerKind::kFtMpc: return "ftmpc";
    case ControllerKind::kSmpc: return "smpc";
    case ControllerKind::kNnMpc: return "nnmpc";
    case ControllerKind::kPid: return "pid";
  }
  return "?";
}

inline ControllerKind parse_controller(const std::string& s) {
  for (ControllerKind k : {ControllerKind::kProposed, ControllerKind::kFtMpc, ControllerKind::kSmpc,
                           ControllerKind::kNnMpc, ControllerKind::kPid}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown controller '" + s + "'");
}

inline std::vector<std::string> all_controllers() { return {"proposed", "ftmpc", "smpc", "nnmpc", "pid"}; }

/// Default state box: |Px|,|Py| < 0.5, 1.5 < Pz < 2.5, |vx|,|vy| < 1,
/// |vz| < 2.5, |phi|,|theta| < 1, |psi| < 0.5, |omega| < 10.
inline robust::BoxSet default_state_box() {
  Vec12 hi, lo;
  hi << 0.5, 0.5, 2.5, 1.0, 1.0, 2.5, 1.0, 1.0, 0.5, 10.0, 10.0, 10.0;
  lo = -hi;
  lo[idx::kPz] = 1.5;
  return {lo, hi};
}

/// 0 <= u1 <= 0.4 N, |tau| <= 0.02 N m.
inline robust::BoxSet default_input_box() { return {Vec4(0.0, -0.02, -0.02, -0.02), Vec4(0.4, 0.02, 0.02, 0.02)}; }

struct ExperimentConfig {
  std::vector<std::string> controllers = all_controllers();
  std::vector<std::string> trajectories{"helical", "spline", "lemniscate"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  double dt = 0.01;
  double duration = 10.0;
  double burn_in = 2.0;
  bool raw_reference = false;
  double fill = 0.6;  // fraction of the position box used by fitted references

  // truth plant and wind
  double plant_mass = 0.027;
  double plant_drag = 0.0;
  double wind_intensity = 0.03;
  double wind_ceiling = 0.1;
  double wind_airspeed = 8.0;

  // MPC
  int horizon = 15;
  double tol = 1e-4;
  int max_iter = 100;

  // learning and adaptation
  bool learning = true;
  bool adaptation = true;
  int t_learn = 50;
  int n_min = 500;
  double lambda = 0.9;
  double gamma = 0.95;
  double dbar_max = 0.1;
  double dbar_init = 0.1;
  double dxi_max = 10.0;  // Frobenius clip on each coefficient update
  double lasso_h = 1e-2;
  double rpi_eps = 1e-4;
  bool nominal_init = false;  // tube MPC variant: x0 of the OCP is the previous nominal state

  // offline data (shared by the identification warm start and the MLP)
  bool offline_warm_start = true;
  int offline_train = 10000;
  int offline_test = 2000;
  std::uint64_t offline_seed = 1000;

  // NN baseline
  int mlp_epochs = 300;
  std::string mlp_normalization = "data";  // data | fixed
  std::string mlp_file;                    // load instead of training when set

  bool plots = false;
  std::string out_dir = "out";

  void validate() const {
    auto need = [](bool ok, const char* field) {
      if (!ok) throw std::invalid_argument(std::string("config field '") + field + "' is out of range");
    };
    need(!controllers.empty(), "controllers");
    for (const auto& c : controllers) parse_controller(c);
    need(!trajectories.empty(), "trajectories");
    for (const auto& t : trajectories) parse_trajectory(t);
    need(!seeds.empty(), "seeds");
    need(dt > 0, "dt");
    need(duration > 0, "duration");
    need(burn_in >= 0 && burn_in < duration, "burn_in");
    need(fill > 0 && fill <= 1, "fill");
    need(plant_mass > 0, "plant_mass");
    need(plant_drag >= 0, "plant_drag");
    need(wind_intensity >= 0, "wind_intensity");
    need(wind_ceiling >= 0, "wind_ceiling");
    need(wind_airspeed > 0, "wind_airspeed");
    need(horizon >= 1, "horizon");
    need(tol > 0, "tol");
    need(max_iter >= 1, "max_iter");
    need(t_learn >= 1, "t_learn");
    need(n_min >= 1, "n_min");
    need(lambda > 0 && lambda < 1, "lambda");
    need(gamma > 0 && gamma < 1, "gamma");
    need(dbar_max > 0, "dbar_max");
    need(dbar_init > 0 && dbar_init <= dbar_max, "dbar_init");
    need(dxi_max > 0, "dxi_max");
    need(lasso_h > 0, "lasso_h");
    need(rpi_eps > 0 && rpi_eps < 1, "rpi_eps");
    need(offline_train >= 0, "offline_train");
    need(offline_test >= 0, "offline_test");
    need(mlp_epochs >= 1, "mlp_epochs");
    need(mlp_normalization == "data" || mlp_normalization == "fixed", "mlp_normalization");
  }

  int steps() const { return static_cast<int>(std::lround(duration / dt)); }
  int burn_in_steps() const { return static_cast<int>(std::lround(burn_in / dt)); }

  mpc::MpcConfig mpc() const {
    mpc::MpcConfig m;
    m.horizon = horizon;
    m.dt = dt;
    m.tol = tol;
    m.max_iter = max_iter;
    return m;
  }

  quadsim::PlantParams plant() const {
    quadsim::PlantParams p;
    p.body.mass = plant_mass;
    p.linear_drag = plant_drag;
    return p;
  }

  quadsim::DrydenParams wind(std::uint64_t seed) const {
    quadsim::DrydenParams w;
    w.intensity = wind_intensity;
    w.ceiling = wind_ceiling;
    w.airspeed = wind_airspeed;
    w.seed = seed;
    return w;
  }

  /// Reference and the state box it is tracked in. The curve runs one
  /// horizon past the end of the run so the last predictions see it too.
  /// Its scale comes from the 10 s window (or the whole run if longer), so
  /// short runs fly the start of the same curve.
  std::pair<TrajectoryRef, robust::BoxSet> reference(TrajectoryKind k) const {
    const robust::BoxSet box = default_state_box();
    const double t_end = duration + horizon * dt;
    if (!raw_reference) return {fitted_trajectory(k, box, fill, t_end, std::max(duration, 10.0)), box};
    const TrajectoryRef r = raw_trajectory(k, t_end);
    return {r, widened_box(box, r)};
  }
};

#define PIMLTUBE_CONFIG_FIELDS(X)                                                                                \
  X(controllers) X(trajectories) X(seeds) X(dt) X(duration) X(burn_in) X(raw_reference) X(fill) X(plant_mass)        \
  X(plant_drag) X(wind_intensity) X(wind_ceiling) X(wind_airspeed) X(horizon) X(tol) X(max_iter) X(learning)     \
  X(adaptation) X(t_learn) X(n_min) X(lambda) X(gamma) X(dbar_max) X(dbar_init) X(dxi_max) X(lasso_h) X(rpi_eps) \
  X(nominal_init) X(offline_warm_start) X(offline_train) X(offline_test) X(offline_seed) X(mlp_epochs)           \
  X(mlp_normalization) X(mlp_file) X(plots) X(out_dir)

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
#define X(f) j[#f] = c.f;
  PIMLTUBE_CONFIG_FIELDS(X)
#undef X
  return j;
}

/// Overlays the keys present in `j` onto `base`. Unknown keys and wrong types
/// are errors that name the field; `required` keys must be present.
inline ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base = {},
                                  const std::vector<std::string>& required = {}) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& r : required) {
    if (!j.contains(r)) throw std::invalid_argument("config: missing required field '" + r + "'");
  }
  const nlohmann::json known = to_json(base);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw std::invalid_argument("config: unknown field '" + it.key() + "'");
  }
#define X(f)                                                                                     \
  if (j.contains(#f)) {                                                                          \
    try {                                                                                        \
      j.at(#f).get_to(base.f);                                                                   \
    } catch (const nlohmann::json::exception& e) {                                               \
      throw std::invalid_argument(std::string("config: field '" #f "' has the wrong type: ") + e.what()); \
    }                                                                                            \
  }
  PIMLTUBE_CONFIG_FIELDS(X)
#undef X
  base.validate();
  return base;
}

/// Fields a bench config file must state explicitly.
inline std::vector<std::string> required_bench_fields() { return {"controllers", "trajectories", "seeds"}; }

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& required = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: malformed '" + path + "': " + e.what());
  }
  return from_json(j, {}, required);
}

/// PIMLTUBE_OUT_DIR overrides the configured output directory.
inline std::string output_dir(const ExperimentConfig& c) {
  if (const char* env = std::getenv("PIMLTUBE_OUT_DIR"); env && *env) return env;
  return c.out_dir;
}

}  // namespace pimltube::bench
