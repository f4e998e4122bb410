#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>

#include "pimltube/core/types.hpp"

namespace pimltube::quadsim {

/// Low-altitude Dryden turbulence settings (MIL-HDBK-1797B form).
/// The shaped gust velocities are mapped to an acceleration disturbance on the
/// translational dynamics whose stationary standard deviation is `intensity`
/// and whose magnitude is clipped at `ceiling`.
struct DrydenParams {
  double intensity = 0.03;   // m/s^2, per-axis stationary std
  double ceiling = 0.1;      // m/s^2, hard clip per axis
  double altitude = 2.0;     // m
  double airspeed = 8.0;     // m/s, mean wind over the vehicle
  double rate_intensity = 0.0;  // rad/s^2, optional body-rate excitation
  std::uint64_t seed = 1;
};

/// Scale lengths (m) of the longitudinal/lateral and vertical filters.
inline std::pair<double, double> dryden_scale_lengths(double altitude_m) {
  constexpr double kFt = 3.28084;
  const double h = std::max(altitude_m * kFt, 1.0);
  const double l_w = h;
  const double l_uv = h / std::pow(0.177 + 0.000823 * h, 1.2);
  return {l_uv / kFt, l_w / kFt};
}

namespace detail {

/// One shaping filter: first-order (longitudinal) or the second-order
/// (1 + sqrt(3) T s) / (1 + T s)^2 form (lateral, vertical), driven by
/// discrete unit white noise and normalized to unit stationary variance.
struct ShapingFilter {
  int order = 1;
  double time_constant = 1.0;  // s
  double s1 = 0.0, s2 = 0.0;

  struct Coeffs {
    double a = 0.0, b = 0.0;     // s1+ = a s1 + n ; s2+ = a s2 + b s1
    double out1 = 1.0, out2 = 0.0;
    double gain = 1.0;           // normalization of the output
    Eigen::Matrix2d chol = Eigen::Matrix2d::Identity();  // stationary covariance factor
  };

  Coeffs coeffs(double dt) const {
    Coeffs c;
    c.a = std::exp(-dt / time_constant);
    if (order == 1) {
      // Stationary variance of s1+ = a s1 + n is 1 / (1 - a^2).
      const double var = 1.0 / (1.0 - c.a * c.a);
      c.out1 = 1.0;
      c.out2 = 0.0;
      c.gain = 1.0 / std::sqrt(var);
      c.chol << std::sqrt(var), 0.0, 0.0, 0.0;
      return c;
    }
    c.b = c.a * dt / time_constant;
    c.out1 = std::sqrt(3.0);
    c.out2 = 1.0 - std::sqrt(3.0);
    Eigen::Matrix2d phi;
    phi << c.a, 0.0, c.b, c.a;
    Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
    g(0, 0) = 1.0;
    // vec(S) = (I - phi (x) phi)^-1 vec(G G^T)
    Eigen::Matrix4d kron;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) kron.block<2, 2>(2 * i, 2 * j) = phi(i, j) * phi;
    const Eigen::Vector4d rhs(1.0, 0.0, 0.0, 0.0);
    const Eigen::Vector4d vs = (Eigen::Matrix4d::Identity() - kron).fullPivLu().solve(rhs);
    Eigen::Matrix2d cov;
    cov << vs[0], vs[2], vs[1], vs[3];
    cov = 0.5 * (cov + cov.transpose());
    const Eigen::Vector2d out(c.out1, c.out2);
    c.gain = 1.0 / std::sqrt(out.dot(cov * out));
    c.chol = cov.llt().matrixL();
    return c;
  }
};

}  // namespace detail

/// Turbulence generator state. The RNG lives here, so a copy replays the same
/// sample path.
struct DrydenState {
  DrydenParams params;
  std::array<detail::ShapingFilter, 3> gust{};
  std::array<detail::ShapingFilter, 3> rate{};
  std::mt19937_64 rng;
  double cached_dt = -1.0;
  std::array<detail::ShapingFilter::Coeffs, 3> gust_coeffs{};
  std::array<detail::ShapingFilter::Coeffs, 3> rate_coeffs{};

  DrydenState() : DrydenState(DrydenParams{}) {}

  explicit DrydenState(const DrydenParams& p, double dt = 0.01) : params(p), rng(p.seed) {
    if (p.intensity < 0 || p.ceiling < 0 || p.rate_intensity < 0 || !(p.airspeed > 0)) {
      throw std::invalid_argument("DrydenParams: intensities must be >= 0 and airspeed > 0");
    }
    const auto [l_uv, l_w] = dryden_scale_lengths(p.altitude);
    gust[0] = {1, l_uv / p.airspeed};
    gust[1] = {2, l_uv / p.airspeed};
    gust[2] = {2, l_w / p.airspeed};
    for (auto& r : rate) r = {1, l_w / p.airspeed};
    prepare(dt);
    // Start from the stationary distribution so there is no warm-up transient.
    std::normal_distribution<double> n01(0.0, 1.0);
    auto draw = [&](detail::ShapingFilter& f, const detail::ShapingFilter::Coeffs& c) {
      const Eigen::Vector2d z(n01(rng), n01(rng));
      const Eigen::Vector2d s = c.chol * z;
      f.s1 = s[0];
      f.s2 = f.order == 2 ? s[1] : 0.0;
    };
    for (int i = 0; i < 3; ++i) draw(gust[i], gust_coeffs[i]);
    for (int i = 0; i < 3; ++i) draw(rate[i], rate_coeffs[i]);
  }

  void prepare(double dt) {
    if (dt == cached_dt) return;
    for (int i = 0; i < 3; ++i) gust_coeffs[i] = gust[i].coeffs(dt);
    for (int i = 0; i < 3; ++i) rate_coeffs[i] = rate[i].coeffs(dt);
    cached_dt = dt;
  }

  /// Advances in place and returns the 12-D disturbance (velocity block, and
  /// body-rate block when rate_intensity > 0).
  Disturbance12 advance(double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("dryden_step: dt must be positive");
    prepare(dt);
    std::normal_distribution<double> n01(0.0, 1.0);
    Disturbance12 d = Disturbance12::Zero();
    auto step = [&](detail::ShapingFilter& f, const detail::ShapingFilter::Coeffs& c) {
      const double n = n01(rng);
      const double s1 = c.a * f.s1 + n;
      const double s2 = c.a * f.s2 + c.b * f.s1;
      f.s1 = s1;
      f.s2 = f.order == 2 ? s2 : 0.0;
      return c.gain * (c.out1 * f.s1 + c.out2 * f.s2);
    };
    for (int i = 0; i < 3; ++i) {
      const double g = params.intensity * step(gust[i], gust_coeffs[i]);
      d[idx::kVel + i] = std::clamp(g, -params.ceiling, params.ceiling);
    }
    if (params.rate_intensity > 0.0) {
      for (int i = 0; i < 3; ++i) d[idx::kRate + i] = params.rate_intensity * step(rate[i], rate_coeffs[i]);
    }
    return d;
  }
};

/// Pure form: returns the advanced generator and the disturbance sample.
inline std::pair<DrydenState, Disturbance12> dryden_step(DrydenState w, double dt) {
  Disturbance12 d = w.advance(dt);
  return {std::move(w), d};
}

}  // namespace pimltube::quadsim
