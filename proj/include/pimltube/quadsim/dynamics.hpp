#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pimltube/core/types.hpp"

namespace pimltube::quadsim {

/// Rigid-body parameters of the vehicle. Defaults are the Crazyflie 2.1 values.
struct QuadParams {
  double mass = 0.027;              // kg
  double gravity = 9.81;            // m/s^2
  Vec3 inertia{1.4e-5, 1.4e-5, 2.17e-5};  // diagonal, kg m^2
  double arm_length = 0.046;        // m
  double torque_ratio = 3.15e-3;    // N m / N

  void validate() const {
    if (!(mass > 0 && gravity > 0 && arm_length > 0 && torque_ratio > 0) ||
        !(inertia.array() > 0).all()) {
      throw std::invalid_argument("QuadParams: all fields must be strictly positive");
    }
  }

  double hover_thrust() const { return mass * gravity; }
};

/// Margin to the Euler-rate singularity at |theta| = pi/2.
inline constexpr double kSingularityTolerance = 1e-6;

/// Standard ZYX (yaw-pitch-roll) body-to-inertial rotation.
inline Mat3 rotation(double phi, double theta, double psi) {
  const double cf = std::cos(phi), sf = std::sin(phi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cp = std::cos(psi), sp = std::sin(psi);
  Mat3 r;
  r << ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp,
       ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp,
       -st, sf * ct, cf * ct;
  return r;
}

/// Maps body rates to Euler-angle rates.
inline Mat3 euler_rate_matrix(double phi, double theta) {
  const double cf = std::cos(phi), sf = std::sin(phi);
  const double ct = std::cos(theta), tt = std::tan(theta);
  Mat3 w;
  w << 1.0, sf * tt, cf * tt,
       0.0, cf, -sf,
       0.0, sf / ct, cf / ct;
  return w;
}

inline void check_pitch(double theta) {
  if (!std::isfinite(theta) ||
      std::abs(theta) >= std::numbers::pi / 2.0 - kSingularityTolerance) {
    throw SingularityError(std::abs(theta));
  }
}

/// Continuous rigid-body dynamics, z-up inertial frame:
///   P' = v,  v' = R(Theta) e3 u1/m - g e3,  Theta' = W(Theta) omega,
///   omega' = J^-1 (tau - omega x J omega).
inline StateDerivative12 continuous_dynamics(const State12& x, const Input4& u, const QuadParams& p) {
  const double phi = x[idx::kPhi], theta = x[idx::kTheta], psi = x[idx::kPsi];
  check_pitch(theta);
  const double cf = std::cos(phi), sf = std::sin(phi);
  const double ct = std::cos(theta), st = std::sin(theta), tt = st / ct;
  const double cp = std::cos(psi), sp = std::sin(psi);
  const double wx = x[idx::kP], wy = x[idx::kQ], wz = x[idx::kR];
  const double jx = p.inertia[0], jy = p.inertia[1], jz = p.inertia[2];
  const double a = u[0] / p.mass;

  StateDerivative12 dx;
  dx.segment<3>(idx::kPos) = x.segment<3>(idx::kVel);
  dx[idx::kVx] = a * (cf * st * cp + sf * sp);
  dx[idx::kVy] = a * (cf * st * sp - sf * cp);
  dx[idx::kVz] = a * (cf * ct) - p.gravity;
  dx[idx::kPhi] = wx + sf * tt * wy + cf * tt * wz;
  dx[idx::kTheta] = cf * wy - sf * wz;
  dx[idx::kPsi] = (sf * wy + cf * wz) / ct;
  dx[idx::kP] = (u[1] - wy * wz * (jz - jy)) / jx;
  dx[idx::kQ] = (u[2] - wz * wx * (jx - jz)) / jy;
  dx[idx::kR] = (u[3] - wx * wy * (jy - jx)) / jz;
  return dx;
}

/// Analytic Jacobians of continuous_dynamics. Returns the derivative.
inline StateDerivative12 continuous_jacobian(const State12& x, const Input4& u, const QuadParams& p,
                                             Mat12& fx, Mat12x4& fu) {
  const double phi = x[idx::kPhi], theta = x[idx::kTheta], psi = x[idx::kPsi];
  check_pitch(theta);
  const double cf = std::cos(phi), sf = std::sin(phi);
  const double ct = std::cos(theta), st = std::sin(theta), tt = st / ct;
  const double sec2 = 1.0 / (ct * ct);
  const double cp = std::cos(psi), sp = std::sin(psi);
  const double wx = x[idx::kP], wy = x[idx::kQ], wz = x[idx::kR];
  const double jx = p.inertia[0], jy = p.inertia[1], jz = p.inertia[2];
  const double inv_m = 1.0 / p.mass;
  const double a = u[0] * inv_m;

  const double rx = cf * st * cp + sf * sp;
  const double ry = cf * st * sp - sf * cp;
  const double rz = cf * ct;

  fx.setZero();
  fu.setZero();
  for (int i = 0; i < 3; ++i) fx(idx::kPos + i, idx::kVel + i) = 1.0;

  fx(idx::kVx, idx::kPhi) = a * (-sf * st * cp + cf * sp);
  fx(idx::kVx, idx::kTheta) = a * (cf * ct * cp);
  fx(idx::kVx, idx::kPsi) = a * (-cf * st * sp + sf * cp);
  fx(idx::kVy, idx::kPhi) = a * (-sf * st * sp - cf * cp);
  fx(idx::kVy, idx::kTheta) = a * (cf * ct * sp);
  fx(idx::kVy, idx::kPsi) = a * (cf * st * cp + sf * sp);
  fx(idx::kVz, idx::kPhi) = a * (-sf * ct);
  fx(idx::kVz, idx::kTheta) = a * (-cf * st);
  fu(idx::kVx, 0) = rx * inv_m;
  fu(idx::kVy, 0) = ry * inv_m;
  fu(idx::kVz, 0) = rz * inv_m;

  fx(idx::kPhi, idx::kPhi) = cf * tt * wy - sf * tt * wz;
  fx(idx::kPhi, idx::kTheta) = (sf * wy + cf * wz) * sec2;
  fx(idx::kPhi, idx::kP) = 1.0;
  fx(idx::kPhi, idx::kQ) = sf * tt;
  fx(idx::kPhi, idx::kR) = cf * tt;
  fx(idx::kTheta, idx::kPhi) = -sf * wy - cf * wz;
  fx(idx::kTheta, idx::kQ) = cf;
  fx(idx::kTheta, idx::kR) = -sf;
  fx(idx::kPsi, idx::kPhi) = (cf * wy - sf * wz) / ct;
  fx(idx::kPsi, idx::kTheta) = (sf * wy + cf * wz) * st * sec2;
  fx(idx::kPsi, idx::kQ) = sf / ct;
  fx(idx::kPsi, idx::kR) = cf / ct;

  fx(idx::kP, idx::kQ) = -wz * (jz - jy) / jx;
  fx(idx::kP, idx::kR) = -wy * (jz - jy) / jx;
  fx(idx::kQ, idx::kP) = -wz * (jx - jz) / jy;
  fx(idx::kQ, idx::kR) = -wx * (jx - jz) / jy;
  fx(idx::kR, idx::kP) = -wy * (jy - jx) / jz;
  fx(idx::kR, idx::kQ) = -wx * (jy - jx) / jz;
  fu(idx::kP, 1) = 1.0 / jx;
  fu(idx::kQ, 2) = 1.0 / jy;
  fu(idx::kR, 3) = 1.0 / jz;

  StateDerivative12 dx;
  dx.segment<3>(idx::kPos) = x.segment<3>(idx::kVel);
  dx[idx::kVx] = a * rx;
  dx[idx::kVy] = a * ry;
  dx[idx::kVz] = a * rz - p.gravity;
  dx[idx::kPhi] = wx + sf * tt * wy + cf * tt * wz;
  dx[idx::kTheta] = cf * wy - sf * wz;
  dx[idx::kPsi] = (sf * wy + cf * wz) / ct;
  dx[idx::kP] = (u[1] - wy * wz * (jz - jy)) / jx;
  dx[idx::kQ] = (u[2] - wz * wx * (jx - jz)) / jy;
  dx[idx::kR] = (u[3] - wx * wy * (jy - jx)) / jz;
  return dx;
}

/// Motor forces F1..F4 to (thrust, torques).
inline Input4 mix_forces(const Vec4& forces, const QuadParams& p) {
  Input4 u;
  u[0] = forces.sum();
  u[1] = p.arm_length * (forces[1] - forces[3]);
  u[2] = p.arm_length * (forces[2] - forces[0]);
  u[3] = p.torque_ratio * (forces[0] - forces[1] + forces[2] - forces[3]);
  return u;
}

}  // namespace pimltube::quadsim
