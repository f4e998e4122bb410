#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pimltube/core/types.hpp"
#include "pimltube/quadsim/dynamics.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::baselines {

using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Cascaded PID gains. Outer loop channels are (x, y, z, phi, theta, psi),
/// inner loop channels are (vx, vy, vz, p, q, r).
struct PidGains {
  Vec6 outer_kp = (Vec6() << 4.0, 4.0, 6.0, 150.0, 150.0, 80.0).finished();
  Vec6 outer_ki = (Vec6() << 0.5, 0.5, 1.0, 20.0, 20.0, 10.0).finished();
  Vec6 outer_kd = (Vec6() << 0.8, 0.8, 1.2, 2.0, 2.0, 1.5).finished();
  Vec6 inner_kp = (Vec6() << 20.0, 20.0, 15.0, 30.0, 30.0, 25.0).finished();
  Vec6 inner_ki = (Vec6() << 5.0, 5.0, 3.0, 5.0, 5.0, 4.0).finished();
  Vec6 inner_kd = (Vec6() << 2.0, 2.0, 1.5, 0.5, 0.5, 0.3).finished();
  double max_tilt = 0.5;  // rad, clamp on commanded roll/pitch
};

struct PidState {
  Vec6 outer_integral = Vec6::Zero();
  Vec6 outer_prev = Vec6::Zero();
  Vec6 inner_integral = Vec6::Zero();
  Vec6 inner_prev = Vec6::Zero();
};

/// Kp e + Ki (I + e dt) + Kd (e - e_prev) / dt.
inline double pid_term(double kp, double ki, double kd, double e, double integral, double e_prev, double dt) {
  return kp * e + ki * (integral + e * dt) + kd * (e - e_prev) / dt;
}

struct PidOutput {
  Input4 u;
  PidState state;
  bool saturated = false;
};

/// One step of the cascade. Position error gives a velocity setpoint (plus the
/// reference velocity), the velocity loop gives an acceleration command that
/// sets thrust and the roll/pitch setpoints, and the attitude loop gives body
/// rate setpoints whose errors become torques through J.
inline PidOutput pid_step(const PidGains& g, const PidState& st, const State12& x, const State12& ref, double dt,
                          const quadsim::QuadParams& p, const robust::BoxSet& u_box) {
  if (!(dt > 0.0)) throw std::invalid_argument("pid_step: dt must be positive");
  PidOutput out;
  PidState next = st;
  Vec6 outer_e, inner_e, outer_cmd, inner_cmd;

  for (int i = 0; i < 3; ++i) outer_e[i] = ref[idx::kPos + i] - x[idx::kPos + i];
  Vec3 v_sp;
  for (int i = 0; i < 3; ++i) {
    v_sp[i] = ref[idx::kVel + i] +
              pid_term(g.outer_kp[i], g.outer_ki[i], g.outer_kd[i], outer_e[i], st.outer_integral[i], st.outer_prev[i], dt);
  }
  for (int i = 0; i < 3; ++i) inner_e[i] = v_sp[i] - x[idx::kVel + i];
  Vec3 acc;
  for (int i = 0; i < 3; ++i) {
    acc[i] = pid_term(g.inner_kp[i], g.inner_ki[i], g.inner_kd[i], inner_e[i], st.inner_integral[i], st.inner_prev[i], dt);
  }

  // Small-angle inversion of the thrust direction for the current yaw.
  const double psi = x[idx::kPsi];
  const double cps = std::cos(psi), sps = std::sin(psi);
  double theta_d = (acc[0] * cps + acc[1] * sps) / p.gravity;
  double phi_d = (acc[0] * sps - acc[1] * cps) / p.gravity;
  const bool tilt_sat = std::abs(theta_d) > g.max_tilt || std::abs(phi_d) > g.max_tilt;
  theta_d = std::clamp(theta_d, -g.max_tilt, g.max_tilt);
  phi_d = std::clamp(phi_d, -g.max_tilt, g.max_tilt);
  const Vec3 att_sp(phi_d, theta_d, ref[idx::kPsi]);

  for (int i = 0; i < 3; ++i) outer_e[3 + i] = att_sp[i] - x[idx::kAtt + i];
  Vec3 rate_sp;
  for (int i = 0; i < 3; ++i) {
    rate_sp[i] = pid_term(g.outer_kp[3 + i], g.outer_ki[3 + i], g.outer_kd[3 + i], outer_e[3 + i],
                          st.outer_integral[3 + i], st.outer_prev[3 + i], dt);
  }
  for (int i = 0; i < 3; ++i) inner_e[3 + i] = rate_sp[i] - x[idx::kRate + i];
  Vec3 ang_acc;
  for (int i = 0; i < 3; ++i) {
    ang_acc[i] = pid_term(g.inner_kp[3 + i], g.inner_ki[3 + i], g.inner_kd[3 + i], inner_e[3 + i],
                          st.inner_integral[3 + i], st.inner_prev[3 + i], dt);
  }

  const double tilt = std::max(0.2, std::cos(x[idx::kPhi]) * std::cos(x[idx::kTheta]));
  Input4 raw;
  raw[0] = p.mass * (p.gravity + acc[2]) / tilt;
  raw.tail<3>() = p.inertia.cwiseProduct(ang_acc);
  out.u = u_box.clamp(raw);
  const Input4 clipped = (out.u - raw).cwiseAbs();
  out.saturated = clipped.maxCoeff() > 0.0 || tilt_sat;

  // Conditional integration: channels feeding a saturated output hold their integrators.
  const bool thrust_sat = clipped[0] > 0.0;
  for (int i = 0; i < 6; ++i) {
    bool hold = false;
    if (i == 2) hold = thrust_sat;
    else if (i < 2) hold = tilt_sat;
    else hold = clipped[1 + (i - 3)] > 0.0;
    if (!hold) {
      next.outer_integral[i] += outer_e[i] * dt;
      next.inner_integral[i] += inner_e[i] * dt;
    }
  }
  next.outer_prev = outer_e;
  next.inner_prev = inner_e;
  out.state = next;
  return out;
}

}  // namespace pimltube::baselines
