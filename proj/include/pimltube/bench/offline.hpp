#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "pimltube/core/types.hpp"
#include "pimltube/piml/dataset.hpp"
#include "pimltube/quadsim/plant.hpp"
#include "pimltube/quadsim/rk4.hpp"
#include "pimltube/robust/lqr.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::bench {

using Eigen::MatrixXd;

/// Raw one-step transitions (x, u) -> x_next, one per row.
struct Transitions {
  MatrixXd x, u, x_next;
  Eigen::Index rows() const { return x.rows(); }

  Transitions slice(Eigen::Index begin, Eigen::Index n) const {
    return {x.middleRows(begin, n), u.middleRows(begin, n), x_next.middleRows(begin, n)};
  }
};

struct OfflineOptions {
  int samples = 12000;
  double dt = 0.01;
  quadsim::PlantParams plant{};
  quadsim::DrydenParams wind{};
  robust::BoxSet x_box;
  robust::BoxSet u_box;
  double fill = 0.8;           // waypoints are drawn from this fraction of the position box
  double hold = 1.0;           // s between waypoint changes
  double max_error = 0.15;     // m, position error fed to the regulator is clipped to this
  double thrust_dither = 0.02; // N, uniform
  double torque_dither = 2e-4; // N m, uniform
  std::uint64_t seed = 1000;
};

/// Flies the truth plant under a hover LQR (designed on the nominal model)
/// between random waypoints, with input dither for excitation. Episodes that
/// leave the state box restart at a fresh waypoint.
inline Transitions generate_transitions(const OfflineOptions& o) {
  if (o.samples < 1 || !(o.dt > 0.0)) throw std::invalid_argument("generate_transitions: need samples >= 1, dt > 0");
  const quadsim::QuadParams nominal;
  State12 hover = State12::Zero();
  hover[idx::kPz] = 0.5 * (o.x_box.lo[idx::kPz] + o.x_box.hi[idx::kPz]);
  const Input4 u_hover(nominal.hover_thrust(), 0, 0, 0);
  const Linearization lin = quadsim::Rk4Model<quadsim::PhysicsModel>({nominal}, o.dt).linearize(hover, u_hover);
  const Vec12 q = (Vec12() << 10, 10, 10, 5, 5, 5, 2, 2, 2, 1, 1, 1).finished();
  const Mat4x12 k = robust::lqr_gain(lin.A, lin.B, q.asDiagonal().toDenseMatrix(), 0.1 * Mat4::Identity()).K;

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  quadsim::DrydenParams wp = o.wind;
  wp.seed = o.seed + 1;
  quadsim::Plant plant(o.plant, wp, o.dt);

  auto waypoint = [&] {
    State12 r = State12::Zero();
    for (int a = 0; a < 3; ++a) {
      const double c = 0.5 * (o.x_box.lo[a] + o.x_box.hi[a]), h = 0.5 * (o.x_box.hi[a] - o.x_box.lo[a]);
      r[a] = c + o.fill * h * uni(rng);
    }
    return r;
  };

  Transitions t{MatrixXd(o.samples, kStateDim), MatrixXd(o.samples, kInputDim), MatrixXd(o.samples, kStateDim)};
  const int hold_steps = std::max(1, static_cast<int>(o.hold / o.dt));
  State12 ref = waypoint();
  State12 x = ref;
  for (int i = 0; i < o.samples; ++i) {
    if (i % hold_steps == 0) ref = waypoint();
    State12 e = x - ref;
    for (int a = 0; a < 3; ++a) e[a] = std::clamp(e[a], -o.max_error, o.max_error);
    Input4 u = u_hover - k * e;
    u[0] += o.thrust_dither * uni(rng);
    for (int j = 1; j < 4; ++j) u[j] += o.torque_dither * uni(rng);
    u = o.u_box.clamp(u);
    const quadsim::PlantStep s = plant.step(x, u);
    t.x.row(i) = x.transpose();
    t.u.row(i) = u.transpose();
    t.x_next.row(i) = s.x.transpose();
    x = s.x;
    if (!o.x_box.contains(x) || !x.allFinite()) {
      ref = waypoint();
      x = ref;
    }
  }
  return t;
}

/// Dataset whose target is the part of (x_next - x) / dt the first-principles
/// RK4 step does not explain.
inline piml::Dataset residual_dataset(const Transitions& t, const quadsim::QuadParams& prior, double dt) {
  const quadsim::Rk4Model<quadsim::PhysicsModel> phys({prior}, dt);
  piml::Dataset d;
  d.states = t.x;
  d.inputs = t.u;
  d.dt = dt;
  d.derivatives.resize(t.rows(), kStateDim);
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const State12 x = t.x.row(i).transpose();
    const Input4 u = t.u.row(i).transpose();
    const State12 xn = t.x_next.row(i).transpose();
    d.derivatives.row(i) = ((xn - phys.step(x, u)) / dt).transpose();
  }
  return d;
}

/// Dataset with the finite-difference rate (x_next - x) / dt as target.
inline piml::Dataset increment_dataset(const Transitions& t, double dt) {
  piml::Dataset d;
  d.states = t.x;
  d.inputs = t.u;
  d.derivatives = (t.x_next - t.x) / dt;
  d.dt = dt;
  return d;
}

}  // namespace pimltube::bench
