#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "pimltube/core/types.hpp"

namespace pimltube::robust {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Axis-aligned box [lo, hi].
struct BoxSet {
  VectorXd lo;
  VectorXd hi;

  BoxSet() = default;
  BoxSet(VectorXd l, VectorXd h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("BoxSet: bound sizes differ");
    if ((lo.array() > hi.array()).any()) throw EmptySetError("BoxSet: lower bound above upper bound", lo.size());
  }

  static BoxSet symmetric(const VectorXd& half) { return BoxSet(-half, half); }

  Eigen::Index size() const { return lo.size(); }
  VectorXd center() const { return 0.5 * (lo + hi); }
  VectorXd half_width() const { return 0.5 * (hi - lo); }

  bool contains(const VectorXd& x, double tol = 0.0) const {
    return (x.array() >= lo.array() - tol).all() && (x.array() <= hi.array() + tol).all();
  }

  VectorXd clamp(const VectorXd& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  /// Minkowski sum with an origin-centered box of half-widths s.
  BoxSet inflate(const VectorXd& s) const { return BoxSet(lo - s, hi + s); }
};

/// Pontryagin difference X - S for origin-centered S; std::nullopt if empty.
inline std::optional<BoxSet> try_tighten(const BoxSet& x, const VectorXd& s) {
  if (s.size() != x.size()) throw std::invalid_argument("tighten: dimension mismatch");
  if ((s.array() < 0.0).any()) throw std::invalid_argument("tighten: negative half-width");
  const VectorXd lo = x.lo + s, hi = x.hi - s;
  if ((lo.array() > hi.array()).any()) return std::nullopt;
  BoxSet out;
  out.lo = lo;
  out.hi = hi;
  return out;
}

inline BoxSet tighten(const BoxSet& x, const VectorXd& s) {
  auto r = try_tighten(x, s);
  if (!r) {
    Eigen::Index worst = 0;
    ((x.lo + s) - (x.hi - s)).maxCoeff(&worst);
    throw EmptySetError("tighten: tightened set is empty in dimension " + std::to_string(worst), worst);
  }
  return *r;
}

/// U - K S, using the row-wise image |K| s.
inline BoxSet tighten_input(const BoxSet& u, const MatrixXd& k, const VectorXd& s) {
  if (k.rows() != u.size() || k.cols() != s.size()) throw std::invalid_argument("tighten_input: dimension mismatch");
  return tighten(u, k.cwiseAbs() * s);
}

/// Origin-centered box over-approximating the ball L_xi |dxi| B.
inline VectorXd learning_uncertainty(double l_xi, double dxi_norm, Eigen::Index dim = kStateDim) {
  if (!(l_xi > 0.0) || dxi_norm < 0.0) throw std::invalid_argument("learning_uncertainty: need L > 0, |dxi| >= 0");
  return VectorXd::Constant(dim, l_xi * dxi_norm);
}

}  // namespace pimltube::robust
