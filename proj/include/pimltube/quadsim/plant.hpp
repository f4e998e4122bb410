#pragma once

#include <cmath>
#include <numbers>

#include "pimltube/quadsim/dryden.hpp"
#include "pimltube/quadsim/dynamics.hpp"
#include "pimltube/quadsim/rk4.hpp"

namespace pimltube::quadsim {

/// Ground-truth vehicle. `body` may differ from the parameters the
/// controllers assume; `linear_drag` (N per m/s) is an aerodynamic effect the
/// first-principles model does not contain. Both default to the nominal
/// vehicle with no unmodeled effects.
struct PlantParams {
  QuadParams body{};
  double linear_drag = 0.0;
  double max_pitch = std::numbers::pi / 4.0;  // operating envelope, flagged when exceeded
};

/// Continuous truth dynamics including the unmodeled effects.
inline StateDerivative12 plant_dynamics(const State12& x, const Input4& u, const PlantParams& p) {
  StateDerivative12 dx = continuous_dynamics(x, u, p.body);
  if (p.linear_drag != 0.0) dx.segment<3>(idx::kVel) -= (p.linear_drag / p.body.mass) * x.segment<3>(idx::kVel);
  return dx;
}

struct PlantStep {
  State12 x;
  DrydenState wind;
  Disturbance12 disturbance = Disturbance12::Zero();
  bool left_envelope = false;
};

/// One sampling interval of the true plant. The wind sample is held over the
/// interval and integrated together with the rigid-body dynamics.
inline PlantStep plant_step(const State12& x, const Input4& u, DrydenState wind, double dt,
                            const PlantParams& p = {}) {
  PlantStep out{x, std::move(wind)};
  out.disturbance = out.wind.advance(dt);
  if (out.disturbance.isZero(0.0)) {
    out.x = rk4_step([&p](const State12& s, const Input4& v) { return plant_dynamics(s, v, p); }, x, u, dt);
  } else {
    const Disturbance12& d = out.disturbance;
    out.x = rk4_step([&p, &d](const State12& s, const Input4& v) -> Vec12 { return plant_dynamics(s, v, p) + d; },
                     x, u, dt);
  }
  out.left_envelope = std::abs(out.x[idx::kTheta]) > p.max_pitch;
  return out;
}

/// Stateful wrapper used by the closed-loop runner.
class Plant {
 public:
  Plant(PlantParams params, DrydenParams wind, double dt) : params_(params), wind_(wind, dt), dt_(dt) {}

  PlantStep step(const State12& x, const Input4& u) {
    PlantStep s = plant_step(x, u, std::move(wind_), dt_, params_);
    wind_ = s.wind;
    return s;
  }

  const PlantParams& params() const { return params_; }
  double dt() const { return dt_; }

 private:
  PlantParams params_;
  DrydenState wind_;
  double dt_;
};

/// The first-principles model as a ContinuousModel (used by RK4 wrappers).
struct PhysicsModel {
  QuadParams params{};
  StateDerivative12 derivative(const State12& x, const Input4& u) const { return continuous_dynamics(x, u, params); }
  StateDerivative12 jacobian(const State12& x, const Input4& u, Mat12& fx, Mat12x4& fu) const {
    return continuous_jacobian(x, u, params, fx, fu);
  }
};

}  // namespace pimltube::quadsim
