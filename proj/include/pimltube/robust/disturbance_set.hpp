#pragma once

#include <algorithm>
#include <stdexcept>

#include "pimltube/core/types.hpp"

namespace pimltube::robust {

/// Adaptive hypercube {c + d : |d_i| <= bar_i}. Quantities are in the units
/// of the samples fed to it.
struct DisturbanceSet {
  Vec12 center = Vec12::Zero();
  Vec12 bar = Vec12::Constant(0.1);
  Vec12 cap = Vec12::Constant(0.1);
  double lambda = 0.9;
  double gamma = 0.95;
  double floor = 1e-4;
  bool per_component = false;  // default applies the scalar inf-norm to all axes
  Vec12 running_max = Vec12::Zero();  // diagnostic: max |sample - c| seen per axis

  void validate() const {
    if (!(lambda > 0.0 && lambda < 1.0 && gamma > 0.0 && gamma < 1.0)) {
      throw std::invalid_argument("DisturbanceSet: lambda and gamma must lie in (0, 1)");
    }
    if (!(floor > 0.0) || !(cap.array() >= floor).all()) {
      throw std::invalid_argument("DisturbanceSet: need 0 < floor <= cap");
    }
  }

  bool contains(const Vec12& sample, double tol = 0.0) const {
    return ((sample - center).cwiseAbs().array() <= bar.array() + tol).all();
  }

  /// Origin-centered half-widths of a box holding the whole set.
  Vec12 hull_half_width() const { return center.cwiseAbs() + bar; }
};

/// c <- lambda c + (1 - lambda) sample.
inline DisturbanceSet update_center(DisturbanceSet d, const Vec12& sample) {
  d.center = d.lambda * d.center + (1.0 - d.lambda) * sample;
  return d;
}

/// bar <- gamma bar + (1 - gamma) |sample - c|_inf, then clipped to
/// [floor, cap]. Call after update_center.
inline DisturbanceSet update_bounds(DisturbanceSet d, const Vec12& sample) {
  const Vec12 dev = (sample - d.center).cwiseAbs();
  d.running_max = d.running_max.cwiseMax(dev);
  const Vec12 drive = d.per_component ? dev : Vec12::Constant(dev.maxCoeff());
  d.bar = (d.gamma * d.bar + (1.0 - d.gamma) * drive).cwiseMin(d.cap).cwiseMax(Vec12::Constant(d.floor));
  return d;
}

inline DisturbanceSet update(DisturbanceSet d, const Vec12& sample) { return update_bounds(update_center(d, sample), sample); }

}  // namespace pimltube::robust
