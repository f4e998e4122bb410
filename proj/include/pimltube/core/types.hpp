#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace pimltube {

inline constexpr int kStateDim = 12;
inline constexpr int kInputDim = 4;

using Vec3 = Eigen::Matrix<double, 3, 1>;
using Vec4 = Eigen::Matrix<double, kInputDim, 1>;
using Vec12 = Eigen::Matrix<double, kStateDim, 1>;
using Mat3 = Eigen::Matrix<double, 3, 3>;
using Mat4 = Eigen::Matrix<double, kInputDim, kInputDim>;
using Mat12 = Eigen::Matrix<double, kStateDim, kStateDim>;
using Mat12x4 = Eigen::Matrix<double, kStateDim, kInputDim>;
using Mat4x12 = Eigen::Matrix<double, kInputDim, kStateDim>;

/// State layout: [P(3), v(3), Theta = (phi, theta, psi)(3), omega(3)].
using State12 = Vec12;
using StateDerivative12 = Vec12;
/// Input layout: [total thrust u1 (N), torques u2..u4 (N m)].
using Input4 = Vec4;
/// Per-step additive disturbance on the state.
using Disturbance12 = Vec12;

namespace idx {
inline constexpr int kPx = 0, kPy = 1, kPz = 2;
inline constexpr int kVx = 3, kVy = 4, kVz = 5;
inline constexpr int kPhi = 6, kTheta = 7, kPsi = 8;
inline constexpr int kP = 9, kQ = 10, kR = 11;
inline constexpr int kPos = 0, kVel = 3, kAtt = 6, kRate = 9;
}  // namespace idx

/// Linearization of a discrete map x+ = F(x, u).
struct Linearization {
  Vec12 next = Vec12::Zero();
  Mat12 A = Mat12::Zero();
  Mat12x4 B = Mat12x4::Zero();
};

class SingularityError : public std::runtime_error {
 public:
  explicit SingularityError(double pitch)
      : std::runtime_error("Euler-rate matrix singular: |theta| = " + std::to_string(pitch)),
        pitch_(pitch) {}
  double pitch() const noexcept { return pitch_; }

 private:
  double pitch_;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class EmptySetError : public std::runtime_error {
 public:
  EmptySetError(const std::string& what, int dimension)
      : std::runtime_error(what + " (dimension " + std::to_string(dimension) + ")"), dimension_(dimension) {}
  int dimension() const noexcept { return dimension_; }

 private:
  int dimension_;
};

class ContractionError : public std::runtime_error {
 public:
  explicit ContractionError(double spectral_radius)
      : std::runtime_error("closed loop is not contractive: spectral radius " +
                           std::to_string(spectral_radius)),
        spectral_radius_(spectral_radius) {}
  double spectral_radius() const noexcept { return spectral_radius_; }

 private:
  double spectral_radius_;
};

}  // namespace pimltube
