#pragma once

#include <concepts>
#include <stdexcept>

#include "pimltube/core/types.hpp"

namespace pimltube::quadsim {

/// Classical fourth-order Runge-Kutta step with the input held over the step.
/// Works for any vector-like type closed under +, scalar *, including double.
template <class F, class X, class U>
X rk4_step(F&& f, const X& x, const U& u, double dt) {
  if (dt < 0.0) throw std::invalid_argument("rk4_step: dt must be non-negative");
  const X k1 = f(x, u);
  const X k2 = f(X(x + (0.5 * dt) * k1), u);
  const X k3 = f(X(x + (0.5 * dt) * k2), u);
  const X k4 = f(X(x + dt * k3), u);
  return X(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

/// A continuous-time model with an analytic Jacobian.
template <class M>
concept ContinuousModel = requires(const M& m, const State12& x, const Input4& u, Mat12& fx, Mat12x4& fu) {
  { m.derivative(x, u) } -> std::convertible_to<StateDerivative12>;
  { m.jacobian(x, u, fx, fu) } -> std::convertible_to<StateDerivative12>;
};

/// A discrete-time prediction model x+ = F(x, u) with its Jacobians.
template <class M>
concept DiscreteModel = requires(const M& m, const State12& x, const Input4& u) {
  { m.step(x, u) } -> std::convertible_to<State12>;
  { m.linearize(x, u) } -> std::convertible_to<Linearization>;
};

/// RK4 step together with the exact Jacobians of the RK4 map (chain rule
/// through the four stages).
template <ContinuousModel M>
Linearization rk4_linearize(const M& model, const State12& x, const Input4& u, double dt) {
  const double h = dt;
  Mat12 f1x, f2x, f3x, f4x;
  Mat12x4 f1u, f2u, f3u, f4u;

  const Vec12 k1 = model.jacobian(x, u, f1x, f1u);
  const Vec12 x2 = x + 0.5 * h * k1;
  const Vec12 k2 = model.jacobian(x2, u, f2x, f2u);
  const Mat12 k2x = f2x + (0.5 * h) * (f2x * f1x);
  const Mat12x4 k2u = (0.5 * h) * (f2x * f1u) + f2u;

  const Vec12 x3 = x + 0.5 * h * k2;
  const Vec12 k3 = model.jacobian(x3, u, f3x, f3u);
  const Mat12 k3x = f3x + (0.5 * h) * (f3x * k2x);
  const Mat12x4 k3u = (0.5 * h) * (f3x * k2u) + f3u;

  const Vec12 x4 = x + h * k3;
  const Vec12 k4 = model.jacobian(x4, u, f4x, f4u);
  const Mat12 k4x = f4x + h * (f4x * k3x);
  const Mat12x4 k4u = h * (f4x * k3u) + f4u;

  Linearization lin;
  lin.next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  lin.A = Mat12::Identity() + (h / 6.0) * (f1x + 2.0 * k2x + 2.0 * k3x + k4x);
  lin.B = (h / 6.0) * (f1u + 2.0 * k2u + 2.0 * k3u + k4u);
  return lin;
}

/// Discretizes a continuous model with RK4 at a fixed sampling time.
template <ContinuousModel M>
class Rk4Model {
 public:
  Rk4Model(M model, double dt) : model_(std::move(model)), dt_(dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("Rk4Model: dt must be positive");
  }

  State12 step(const State12& x, const Input4& u) const {
    return rk4_step([this](const State12& s, const Input4& v) -> Vec12 { return model_.derivative(s, v); },
                    x, u, dt_);
  }

  Linearization linearize(const State12& x, const Input4& u) const { return rk4_linearize(model_, x, u, dt_); }

  const M& continuous() const { return model_; }
  double dt() const { return dt_; }

 private:
  M model_;
  double dt_;
};

}  // namespace pimltube::quadsim
