#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "pimltube/core/types.hpp"

namespace pimltube::robust {

using Eigen::MatrixXd;

inline double spectral_radius(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return Eigen::EigenSolver<MatrixXd>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

struct LqrResult {
  MatrixXd K;  // u = -K x
  MatrixXd P;
  double residual = 0.0;         // max-abs Riccati residual relative to max(1, |P|)
  double spectral_radius = 0.0;  // of A - B K
  int iterations = 0;
};

/// Riccati residual A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q, max-abs entry.
inline double dare_residual(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r,
                            const MatrixXd& p) {
  const MatrixXd bp = b.transpose() * p;
  const MatrixXd s = r + bp * b;
  const MatrixXd res = a.transpose() * p * a - p - (bp * a).transpose() * s.ldlt().solve(bp * a) + q;
  return res.cwiseAbs().maxCoeff();
}

/// Discrete LQR by fixed-point iteration on the Riccati map from P = Q.
/// Throws ConvergenceError when the iteration diverges or stalls (pair not
/// stabilizable) and ContractionError if the resulting loop is not stable.
inline LqrResult lqr_gain(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r,
                          double tol = 1e-10, int max_iter = 1000000) {
  const auto n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != b.cols() ||
      r.cols() != b.cols()) {
    throw std::invalid_argument("lqr_gain: dimension mismatch");
  }
  if (r.llt().info() != Eigen::Success) throw std::invalid_argument("lqr_gain: R must be positive definite");

  MatrixXd p = q;
  LqrResult out;
  for (out.iterations = 1; out.iterations <= max_iter; ++out.iterations) {
    const MatrixXd bp = b.transpose() * p;
    const MatrixXd bpa = bp * a;
    const MatrixXd gain = (r + bp * b).ldlt().solve(bpa);
    MatrixXd next = q + a.transpose() * p * a - bpa.transpose() * gain;
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > 1e30) {
      throw ConvergenceError("lqr_gain: Riccati iteration diverged (pair not stabilizable)", INFINITY);
    }
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (change < tol) break;
  }
  if (out.iterations > max_iter) {
    throw ConvergenceError("lqr_gain: Riccati iteration did not converge", dare_residual(a, b, q, r, p));
  }
  const MatrixXd bp = b.transpose() * p;
  out.K = (r + bp * b).ldlt().solve(bp * a);
  out.P = p;
  out.residual = dare_residual(a, b, q, r, p) / std::max(1.0, p.cwiseAbs().maxCoeff());
  out.spectral_radius = spectral_radius(a - b * out.K);
  if (!(out.spectral_radius < 1.0)) throw ContractionError(out.spectral_radius);
  return out;
}

/// Solves P = A' P A + W for Schur-stable A by squaring (Smith iteration).
inline MatrixXd solve_dlyap(const MatrixXd& a, const MatrixXd& w, double tol = 1e-14, int max_doublings = 60) {
  const double rho = spectral_radius(a);
  if (!(rho < 1.0)) throw ContractionError(rho);
  MatrixXd p = w;
  MatrixXd ak = a;
  for (int i = 0; i < max_doublings; ++i) {
    const MatrixXd inc = ak.transpose() * p * ak;
    p += inc;
    ak = ak * ak;
    if (inc.cwiseAbs().maxCoeff() <= tol * std::max(1.0, p.cwiseAbs().maxCoeff())) break;
  }
  return 0.5 * (p + p.transpose());
}

}  // namespace pimltube::robust
