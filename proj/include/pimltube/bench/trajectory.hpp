#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pimltube/core/types.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::bench {

enum class TrajectoryKind { kHelical, kSpline, kLemniscate, kHover };

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kHelical: return "helical";
    case TrajectoryKind::kSpline: return "spline";
    case TrajectoryKind::kLemniscate: return "lemniscate";
    case TrajectoryKind::kHover: return "hover";
  }
  return "?";
}

inline TrajectoryKind parse_trajectory(const std::string& s) {
  if (s == "helical") return TrajectoryKind::kHelical;
  if (s == "spline") return TrajectoryKind::kSpline;
  if (s == "lemniscate") return TrajectoryKind::kLemniscate;
  if (s == "hover") return TrajectoryKind::kHover;
  throw std::invalid_argument("unknown trajectory '" + s + "'");
}

/// Printed curves, before any scaling.
inline Vec3 raw_position(TrajectoryKind k, double t) {
  switch (k) {
    case TrajectoryKind::kHelical: return {t, std::sin(t) + 0.1 * std::sin(3 * t), std::cos(2 * t)};
    case TrajectoryKind::kSpline: return {2 * std::sin(t), 2 * std::cos(2 * t), 0.5 * t};
    case TrajectoryKind::kLemniscate:
      return {std::sin(t) * std::cos(t), std::sin(t) * std::sin(t), std::sin(t) * std::cos(t)};
    case TrajectoryKind::kHover: return Vec3::Zero();
  }
  return Vec3::Zero();
}

inline Vec3 raw_velocity(TrajectoryKind k, double t) {
  switch (k) {
    case TrajectoryKind::kHelical: return {1.0, std::cos(t) + 0.3 * std::cos(3 * t), -2 * std::sin(2 * t)};
    case TrajectoryKind::kSpline: return {2 * std::cos(t), -4 * std::sin(2 * t), 0.5};
    case TrajectoryKind::kLemniscate: return {std::cos(2 * t), std::sin(2 * t), std::cos(2 * t)};
    case TrajectoryKind::kHover: return Vec3::Zero();
  }
  return Vec3::Zero();
}

inline Vec3 raw_acceleration(TrajectoryKind k, double t) {
  switch (k) {
    case TrajectoryKind::kHelical: return {0.0, -std::sin(t) - 0.9 * std::sin(3 * t), -4 * std::cos(2 * t)};
    case TrajectoryKind::kSpline: return {-2 * std::sin(t), -8 * std::cos(2 * t), 0.0};
    case TrajectoryKind::kLemniscate: return {-2 * std::sin(2 * t), 2 * std::cos(2 * t), -2 * std::sin(2 * t)};
    case TrajectoryKind::kHover: return Vec3::Zero();
  }
  return Vec3::Zero();
}

struct RefPoint {
  Vec3 position;
  Vec3 velocity;
  double yaw = 0.0;
};

/// p(t) = offset + gain .* raw(t) on [0, t_end]; t outside the window is
/// clamped to the nearest endpoint (velocity included).
struct TrajectoryRef {
  TrajectoryKind kind = TrajectoryKind::kHover;
  double t_end = 10.0;
  Vec3 gain = Vec3::Ones();
  Vec3 offset = Vec3::Zero();

  RefPoint at(double t) const {
    const double tc = std::clamp(t, 0.0, t_end);
    return {offset + gain.cwiseProduct(raw_position(kind, tc)), gain.cwiseProduct(raw_velocity(kind, tc)), 0.0};
  }

  Vec3 acceleration(double t) const { return gain.cwiseProduct(raw_acceleration(kind, std::clamp(t, 0.0, t_end))); }

  State12 state(double t) const {
    const RefPoint r = at(t);
    State12 x = State12::Zero();
    x.segment<3>(idx::kPos) = r.position;
    x.segment<3>(idx::kVel) = r.velocity;
    x[idx::kPsi] = r.yaw;
    return x;
  }

  /// Roll and pitch that point the thrust along a + g e3 at zero yaw.
  Eigen::Vector2d tilt(double t, double gravity) const {
    const Vec3 f = acceleration(t) + Vec3(0.0, 0.0, gravity);
    return {std::atan2(-f.y(), std::hypot(f.x(), f.z())), std::atan2(f.x(), f.z())};
  }

  /// state(t) plus the attitude and body rates a rigid body needs to follow
  /// the curve (flat-output map at zero yaw; rates by central difference).
  State12 flat_state(double t, double gravity) const {
    State12 x = state(t);
    const Eigen::Vector2d a = tilt(t, gravity);
    constexpr double h = 1e-4;
    const Eigen::Vector2d rate = (tilt(t + h, gravity) - tilt(t - h, gravity)) / (2 * h);
    x[idx::kPhi] = a[0];
    x[idx::kTheta] = a[1];
    // psi = 0 and psi_dot = 0 give p = phi_dot, q = cos(phi) theta_dot, r = -sin(phi) theta_dot.
    x[idx::kP] = rate[0];
    x[idx::kQ] = std::cos(a[0]) * rate[1];
    x[idx::kR] = -std::sin(a[0]) * rate[1];
    return x;
  }
};

/// Range of the raw curve per axis, by dense sampling.
inline std::array<Vec3, 2> raw_extent(TrajectoryKind k, double t_end, int samples = 20001) {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (int i = 0; i < samples; ++i) {
    const Vec3 p = raw_position(k, t_end * i / (samples - 1));
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

/// Fits each axis of the curve, as traced over [0, fit_end], affinely into
/// the central `fill` fraction of the position box. Constant axes sit at the
/// box center. fit_end <= 0 means t_end.
inline TrajectoryRef fitted_trajectory(TrajectoryKind k, const robust::BoxSet& x_box, double fill = 0.8,
                                       double t_end = 10.0, double fit_end = 0.0) {
  if (!(fill > 0.0 && fill <= 1.0)) throw std::invalid_argument("fitted_trajectory: fill must lie in (0, 1]");
  TrajectoryRef r{k, t_end};
  const auto [lo, hi] = raw_extent(k, fit_end > 0.0 ? fit_end : t_end);
  for (int i = 0; i < 3; ++i) {
    const double c = 0.5 * (x_box.lo[i] + x_box.hi[i]);
    const double half = 0.5 * (x_box.hi[i] - x_box.lo[i]);
    const double span = 0.5 * (hi[i] - lo[i]);
    r.gain[i] = span > 1e-12 ? fill * half / span : 0.0;
    r.offset[i] = c - r.gain[i] * 0.5 * (lo[i] + hi[i]);
  }
  return r;
}

/// The printed formulas, unscaled.
inline TrajectoryRef raw_trajectory(TrajectoryKind k, double t_end = 10.0) { return {k, t_end}; }

/// State box widened so the raw curve and its velocity fit with `margin`.
inline robust::BoxSet widened_box(const robust::BoxSet& x_box, const TrajectoryRef& r, double margin = 0.5,
                                  int samples = 20001) {
  robust::BoxSet out = x_box;
  for (int i = 0; i < samples; ++i) {
    const RefPoint p = r.at(r.t_end * i / (samples - 1));
    for (int a = 0; a < 3; ++a) {
      out.lo[idx::kPos + a] = std::min(out.lo[idx::kPos + a], p.position[a] - margin);
      out.hi[idx::kPos + a] = std::max(out.hi[idx::kPos + a], p.position[a] + margin);
      out.lo[idx::kVel + a] = std::min(out.lo[idx::kVel + a], p.velocity[a] - margin);
      out.hi[idx::kVel + a] = std::max(out.hi[idx::kVel + a], p.velocity[a] + margin);
    }
  }
  return out;
}

}  // namespace pimltube::bench
