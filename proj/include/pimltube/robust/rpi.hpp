#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pimltube/core/types.hpp"
#include "pimltube/robust/lqr.hpp"

namespace pimltube::robust {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Box over-approximation of a robust positively invariant set for
/// e+ = A e + w, |w| <= w_bar (element-wise).
///
/// The set F = (1 - alpha)^-1 (W + A W + ... + A^{M-1} W) is RPI whenever
/// A^M W is contained in alpha W (Rakovic et al. outer approximation). We
/// publish its interval hull
///   s = (1 - alpha)^-1 sum_{i<M} |A^i| w_bar,
/// with alpha = max_i (|A^M| w_bar)_i / w_bar_i. The partial sums are built
/// once per A so that every disturbance update costs two mat-vecs.
class RpiOperator {
 public:
  RpiOperator() = default;

  /// Picks the smallest M with |A^M| w_ref <= eps w_ref for every w in
  /// [w_min, w_max] (checked through the worst ratio of the two extremes).
  RpiOperator(const MatrixXd& a_cl, const VectorXd& w_min, const VectorXd& w_max, double eps = 1e-4,
              int max_terms = 200000)
      : a_(a_cl), eps_(eps) {
    const auto n = a_cl.rows();
    if (a_cl.cols() != n || w_min.size() != n || w_max.size() != n) {
      throw std::invalid_argument("RpiOperator: dimension mismatch");
    }
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("RpiOperator: eps must lie in (0, 1)");
    if (!((w_min.array() > 0.0).all() && (w_max.array() >= w_min.array()).all())) {
      throw std::invalid_argument("RpiOperator: need 0 < w_min <= w_max");
    }
    rho_ = spectral_radius(a_cl);
    if (!(rho_ < 1.0)) throw ContractionError(rho_);

    sum_ = MatrixXd::Zero(n, n);
    MatrixXd power = MatrixXd::Identity(n, n);
    for (terms_ = 0; terms_ < max_terms; ++terms_) {
      const MatrixXd ap = power.cwiseAbs();
      // Worst case of (|A^M| w)_i / w_i over the box of admissible w.
      const VectorXd worst = (ap * w_max).cwiseQuotient(w_min);
      if (terms_ > 0 && worst.maxCoeff() <= eps) {
        tail_ = ap;
        break;
      }
      sum_ += ap;
      power = a_cl * power;
      if (!power.allFinite()) throw ContractionError(rho_);
    }
    if (terms_ >= max_terms) {
      throw ConvergenceError("RpiOperator: power series did not reach tolerance", rho_);
    }
  }

  struct Result {
    VectorXd s;          // half-widths of the published box
    double alpha = 0.0;  // contraction level actually certified
    int terms = 0;
  };

  Result apply(const VectorXd& w) const {
    if (w.size() != a_.rows()) throw std::invalid_argument("RpiOperator::apply: size mismatch");
    if ((w.array() < 0.0).any()) throw std::invalid_argument("RpiOperator::apply: negative half-width");
    Result r;
    r.terms = terms_;
    const VectorXd tw = tail_ * w;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (tw[i] == 0.0) continue;
      r.alpha = std::max(r.alpha, w[i] > 0.0 ? tw[i] / w[i] : std::numeric_limits<double>::infinity());
    }
    if (!(r.alpha < 1.0)) throw ContractionError(r.alpha);
    r.s = (sum_ * w) / (1.0 - r.alpha);
    return r;
  }

  /// Exact support of K F along each row of K: sum_i |K A^i| w / (1 - alpha).
  VectorXd input_support(const MatrixXd& k, const VectorXd& w) const {
    const Result r = apply(w);
    return input_sum(k) * w / (1.0 - r.alpha);
  }

  /// sum_{i<M} |K A^i|, so that input_support is one mat-vec once cached.
  MatrixXd input_sum(const MatrixXd& k) const {
    if (k.cols() != a_.rows()) throw std::invalid_argument("RpiOperator::input_sum: size mismatch");
    MatrixXd out = MatrixXd::Zero(k.rows(), k.cols());
    MatrixXd ka = k;
    for (int i = 0; i < terms_; ++i) {
      out += ka.cwiseAbs();
      ka = ka * a_;
    }
    return out;
  }

  const MatrixXd& a() const { return a_; }
  const MatrixXd& partial_sum() const { return sum_; }
  const MatrixXd& tail() const { return tail_; }
  double spectral_radius_value() const { return rho_; }
  int terms() const { return terms_; }
  double eps() const { return eps_; }

 private:
  MatrixXd a_;
  MatrixXd sum_;
  MatrixXd tail_;
  double eps_ = 1e-4;
  double rho_ = 0.0;
  int terms_ = 0;
};

struct RpiCertificate {
  bool holds = false;
  double alpha = 0.0;   // certified contraction of the generating set
  double margin = 0.0;  // min_i (eps w_i - (|A^M| w)_i), >= 0 when alpha <= eps
};

/// Re-checks the invariance certificate |A^M| w <= alpha w with alpha <= eps.
inline RpiCertificate certify(const RpiOperator& op, const VectorXd& w) {
  RpiCertificate c;
  const VectorXd tw = op.tail() * w;
  c.margin = (op.eps() * w - tw).minCoeff();
  c.alpha = op.apply(w).alpha;
  c.holds = c.alpha <= op.eps() * (1.0 + 1e-12) && c.margin >= -1e-15;
  return c;
}

/// One-shot form: RPI box for a fixed disturbance bound w. Components with
/// w_i = 0 are allowed as long as no disturbance reaches them through A^M.
inline RpiOperator::Result compute_rpi(const MatrixXd& a_cl, const VectorXd& w, double eps = 1e-4,
                                       int max_terms = 200000) {
  const auto n = a_cl.rows();
  if (a_cl.cols() != n || w.size() != n) throw std::invalid_argument("compute_rpi: dimension mismatch");
  if ((w.array() < 0.0).any()) throw std::invalid_argument("compute_rpi: negative half-width");
  const double rho = spectral_radius(a_cl);
  if (!(rho < 1.0)) throw ContractionError(rho);
  RpiOperator::Result r;
  VectorXd acc = VectorXd::Zero(n);
  MatrixXd power = MatrixXd::Identity(n, n);
  for (r.terms = 0; r.terms < max_terms; ++r.terms) {
    const VectorXd tw = power.cwiseAbs() * w;
    if (r.terms > 0) {
      double alpha = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (tw[i] == 0.0) continue;
        alpha = std::max(alpha, w[i] > 0.0 ? tw[i] / w[i] : std::numeric_limits<double>::infinity());
      }
      if (alpha <= eps) {
        r.alpha = alpha;
        r.s = acc / (1.0 - alpha);
        return r;
      }
    }
    acc += tw;
    power = a_cl * power;
  }
  throw ConvergenceError("compute_rpi: power series did not reach tolerance", rho);
}

}  // namespace pimltube::robust
