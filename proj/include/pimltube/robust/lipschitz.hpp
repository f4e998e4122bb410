#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pimltube/core/types.hpp"
#include "pimltube/piml/library.hpp"
#include "pimltube/quadsim/rk4.hpp"
#include "pimltube/robust/sets.hpp"

namespace pimltube::robust {

/// Central finite-difference Jacobians of a discrete model.
template <quadsim::DiscreteModel M>
std::pair<Mat12, Mat12x4> fd_jacobian(const M& model, const State12& x, const Input4& u, double step = 1e-6) {
  Mat12 a;
  Mat12x4 b;
  for (int j = 0; j < kStateDim; ++j) {
    State12 p = x, m = x;
    p[j] += step;
    m[j] -= step;
    a.col(j) = (model.step(p, u) - model.step(m, u)) / (2.0 * step);
  }
  for (int j = 0; j < kInputDim; ++j) {
    Input4 p = u, m = u;
    p[j] += step;
    m[j] -= step;
    b.col(j) = (model.step(x, p) - model.step(x, m)) / (2.0 * step);
  }
  return {a, b};
}

/// Richardson extrapolation of two central differences (h and h/2).
template <quadsim::DiscreteModel M>
std::pair<Mat12, Mat12x4> richardson_jacobian(const M& model, const State12& x, const Input4& u,
                                              double step = 1e-4) {
  const auto [a1, b1] = fd_jacobian(model, x, u, step);
  const auto [a2, b2] = fd_jacobian(model, x, u, 0.5 * step);
  return {(4.0 * a2 - a1) / 3.0, (4.0 * b2 - b1) / 3.0};
}

/// sup |W v| over v in the box [lo, hi]: per-axis extremes when W is
/// diagonal, vertex enumeration otherwise.
inline double box_sup_norm(const MatrixXd& w, const VectorXd& lo, const VectorXd& hi) {
  const auto n = lo.size();
  const MatrixXd off = w - MatrixXd(w.diagonal().asDiagonal());
  if (off.isZero(0.0)) {
    const VectorXd ext = lo.cwiseAbs().cwiseMax(hi.cwiseAbs());
    return (w.diagonal().cwiseAbs().cwiseProduct(ext)).norm();
  }
  if (n > 20) throw std::invalid_argument("box_sup_norm: vertex enumeration limited to 20 dimensions");
  double best = 0.0;
  for (long mask = 0; mask < (1L << n); ++mask) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = (mask >> i) & 1 ? hi[i] : lo[i];
    best = std::max(best, (w * v).norm());
  }
  return best;
}

struct CostLipschitz {
  double l_x = 0.0;
  double l_u = 0.0;
};

/// Lipschitz constants of l(x, u) = |x - xr|_Q^2 + |u - ur|_R^2 on X x U:
/// |l(a) - l(b)| <= |a - b| sup |Q (a + b - 2 xr)|, a + b ranging over 2X.
inline CostLipschitz lipschitz_cost(const MatrixXd& q, const MatrixXd& r, const BoxSet& x, const BoxSet& u,
                                    const VectorXd& x_ref, const VectorXd& u_ref) {
  CostLipschitz out;
  out.l_x = box_sup_norm(q, 2.0 * (x.lo - x_ref), 2.0 * (x.hi - x_ref));
  out.l_u = box_sup_norm(r, 2.0 * (u.lo - u_ref), 2.0 * (u.hi - u_ref));
  return out;
}

/// Coefficient-Lipschitz constant of Psi(x, u) xi on a sample set:
/// 1.5 max |Psi-row|, exact up to the safety factor since the model is linear
/// in xi (|Psi (xi1 - xi2)| <= |Psi-row| |xi1 - xi2|_F).
inline double estimate_L_xi(const std::vector<piml::Term>& terms, const std::vector<std::pair<State12, Input4>>& samples,
                            double safety = 1.5) {
  if (samples.empty()) throw std::invalid_argument("estimate_L_xi: empty sample set");
  double best = 0.0;
  for (const auto& [x, u] : samples) best = std::max(best, piml::library_row(terms, x, u).norm());
  return safety * best;
}

}  // namespace pimltube::robust
