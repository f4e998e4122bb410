#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pimltube/core/types.hpp"

namespace pimltube::piml {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LassoOptions {
  int max_sweeps = 10000;
  double tol = 1e-8;      // max coefficient change (standardized units)
  double kkt_tol = 1e-6;  // subgradient residual (standardized units)
};

struct LassoResult {
  VectorXd coeffs;  // raw-column coefficients
  int sweeps = 0;
  double kkt_residual = 0.0;
};

/// Running sufficient statistics of (Psi row, target row) pairs: enough to
/// pose the lasso without keeping the rows.
class GramAccumulator {
 public:
  GramAccumulator(Eigen::Index p, Eigen::Index q)
      : sum_psi_(VectorXd::Zero(p)), sum_pp_(MatrixXd::Zero(p, p)), sum_py_(MatrixXd::Zero(p, q)),
        sum_y_(VectorXd::Zero(q)), sum_yy_(VectorXd::Zero(q)),
        col_min_(VectorXd::Constant(p, std::numeric_limits<double>::infinity())),
        col_max_(VectorXd::Constant(p, -std::numeric_limits<double>::infinity())) {
    if (p < 1 || q < 1) throw std::invalid_argument("GramAccumulator: empty dimensions");
  }

  void add(const VectorXd& psi, const VectorXd& y) {
    if (psi.size() != cols() || y.size() != targets()) throw std::invalid_argument("GramAccumulator::add: size mismatch");
    ++n_;
    sum_psi_ += psi;
    sum_pp_.selfadjointView<Eigen::Lower>().rankUpdate(psi);
    sum_py_.noalias() += psi * y.transpose();
    sum_y_ += y;
    sum_yy_ += y.cwiseAbs2();
    col_min_ = col_min_.cwiseMin(psi);
    col_max_ = col_max_.cwiseMax(psi);
  }

  void add_rows(const MatrixXd& psi, const MatrixXd& y) {
    if (psi.rows() != y.rows()) throw std::invalid_argument("GramAccumulator::add_rows: row mismatch");
    for (Eigen::Index i = 0; i < psi.rows(); ++i) add(psi.row(i).transpose(), y.row(i).transpose());
  }

  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return sum_psi_.size(); }
  Eigen::Index targets() const { return sum_y_.size(); }
  const VectorXd& sum_psi() const { return sum_psi_; }
  MatrixXd sum_pp() const { return sum_pp_.selfadjointView<Eigen::Lower>(); }
  const MatrixXd& sum_py() const { return sum_py_; }
  const VectorXd& sum_y() const { return sum_y_; }
  const VectorXd& sum_yy() const { return sum_yy_; }
  bool constant_column(Eigen::Index i) const { return n_ > 0 && col_min_[i] == col_max_[i]; }

 private:
  Eigen::Index n_ = 0;
  VectorXd sum_psi_;
  MatrixXd sum_pp_;  // lower triangle
  MatrixXd sum_py_;
  VectorXd sum_y_, sum_yy_;
  VectorXd col_min_, col_max_;
};

/// Lasso over a fixed library,
///   min (1/2n) |y - Psi s|^2 + h sum_i sigma_i |s_i|,
/// i.e. the standard penalty on standardized columns. A constant column, if
/// present, is an unpenalized intercept and the other columns are centered.
/// The Gram matrix is formed once and shared by every right-hand side.
class LassoProblem {
 public:
  explicit LassoProblem(const MatrixXd& psi) : n_(psi.rows()), p_(psi.cols()) {
    if (n_ < 1 || p_ < 1) throw std::invalid_argument("LassoProblem: empty library");
    mean_ = VectorXd::Zero(p_);
    scale_ = VectorXd::Zero(p_);
    for (Eigen::Index i = 0; i < p_; ++i) {
      const auto c = psi.col(i).array();
      if ((c == c(0)).all() && c(0) != 0.0 && intercept_col_ < 0) intercept_col_ = i;
    }
    const double nn = static_cast<double>(n_);
    if (intercept_col_ >= 0) mean_ = psi.colwise().mean().transpose();
    for (Eigen::Index i = 0; i < p_; ++i) {
      if (i == intercept_col_) continue;
      const double s = std::sqrt((psi.col(i).array() - mean_[i]).square().sum() / nn);
      scale_[i] = s > 1e-12 * (1.0 + std::abs(mean_[i])) ? s : 0.0;
    }
    z_ = psi;
    for (Eigen::Index i = 0; i < p_; ++i) {
      if (scale_[i] > 0.0) z_.col(i) = (psi.col(i).array() - mean_[i]) / scale_[i];
      else z_.col(i).setZero();
    }
    gram_.noalias() = z_.transpose() * z_ / nn;
  }

  /// Same problem posed from sufficient statistics; solve with solve_target().
  explicit LassoProblem(const GramAccumulator& acc) : n_(acc.rows()), p_(acc.cols()), acc_(&acc) {
    if (n_ < 1) throw std::invalid_argument("LassoProblem: no rows accumulated");
    const double nn = static_cast<double>(n_);
    mean_ = VectorXd::Zero(p_);
    scale_ = VectorXd::Zero(p_);
    for (Eigen::Index i = 0; i < p_ && intercept_col_ < 0; ++i) {
      if (acc.constant_column(i) && acc.sum_psi()[i] != 0.0) intercept_col_ = i;
    }
    if (intercept_col_ >= 0) mean_ = acc.sum_psi() / nn;
    const MatrixXd spp = acc.sum_pp();
    MatrixXd cov = spp / nn - mean_ * mean_.transpose();
    for (Eigen::Index i = 0; i < p_; ++i) {
      if (i == intercept_col_) continue;
      const double s = std::sqrt(std::max(0.0, cov(i, i)));
      scale_[i] = s > 1e-7 * (1.0 + std::abs(mean_[i])) ? s : 0.0;
    }
    gram_ = MatrixXd::Zero(p_, p_);
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (scale_[j] <= 0.0) continue;
      for (Eigen::Index i = 0; i < p_; ++i) {
        if (scale_[i] > 0.0) gram_(i, j) = cov(i, j) / (scale_[i] * scale_[j]);
      }
    }
  }

  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return p_; }
  Eigen::Index intercept_column() const { return intercept_col_; }
  const VectorXd& column_scale() const { return scale_; }

  /// Smallest h for which the solution is identically zero (apart from the
  /// intercept).
  double h_max(const VectorXd& y) const { return rhs(y).c.cwiseAbs().maxCoeff(); }
  double h_max_target(Eigen::Index j) const { return rhs_target(j).c.cwiseAbs().maxCoeff(); }

  LassoResult solve(const VectorXd& y, double h, const std::optional<VectorXd>& warm = std::nullopt,
                    const LassoOptions& opt = {}) const {
    if (acc_) throw std::logic_error("LassoProblem::solve: problem was built from statistics; use solve_target");
    if (y.size() != n_) throw std::invalid_argument("LassoProblem::solve: target length mismatch");
    return solve_core(rhs(y), h, warm, opt);
  }

  /// Target column j of the accumulator this problem was built from.
  LassoResult solve_target(Eigen::Index j, double h, const std::optional<VectorXd>& warm = std::nullopt,
                           const LassoOptions& opt = {}) const {
    if (!acc_) throw std::logic_error("LassoProblem::solve_target: problem was built from rows; use solve");
    if (j < 0 || j >= acc_->targets()) throw std::invalid_argument("LassoProblem::solve_target: bad target index");
    return solve_core(rhs_target(j), h, warm, opt);
  }

  /// Residual RMS of raw-column coefficients against target j (statistics form).
  double residual_rms_target(Eigen::Index j, const VectorXd& coeffs) const {
    const double nn = n();
    const VectorXd spy = acc_->sum_py().col(j);
    const double rss = acc_->sum_yy()[j] - 2.0 * coeffs.dot(spy) + coeffs.dot(acc_->sum_pp() * coeffs);
    return std::sqrt(std::max(0.0, rss / nn));
  }

 private:
  // Standardized correlation c = Z' (y - ybar) / n, mean target and the
  // centered second moment.
  struct Rhs {
    VectorXd c;
    double ybar = 0.0;
    double yy = 0.0;
  };

  Rhs rhs(const VectorXd& y) const {
    Rhs r;
    const VectorXd yc = centered(y);
    r.c = z_.transpose() * yc / n();
    r.ybar = intercept_col_ >= 0 ? y.mean() : 0.0;
    r.yy = yc.squaredNorm() / n();
    return r;
  }

  Rhs rhs_target(Eigen::Index j) const {
    Rhs r;
    const double nn = n();
    r.ybar = intercept_col_ >= 0 ? acc_->sum_y()[j] / nn : 0.0;
    r.c = VectorXd::Zero(p_);
    for (Eigen::Index i = 0; i < p_; ++i) {
      if (scale_[i] > 0.0) r.c[i] = (acc_->sum_py()(i, j) / nn - mean_[i] * r.ybar) / scale_[i];
    }
    r.yy = std::max(0.0, acc_->sum_yy()[j] / nn - r.ybar * r.ybar);
    return r;
  }

  LassoResult solve_core(const Rhs& rh, double h, const std::optional<VectorXd>& warm, const LassoOptions& opt) const {
    if (!(h >= 0.0)) throw std::invalid_argument("LassoProblem::solve: h must be >= 0");
    const VectorXd& c = rh.c;

    VectorXd beta = VectorXd::Zero(p_);
    if (warm && warm->size() == p_) {
      for (Eigen::Index i = 0; i < p_; ++i) beta[i] = scale_[i] > 0.0 ? (*warm)[i] * scale_[i] : 0.0;
    }
    // q = c - G beta is the negative gradient of the smooth part.
    VectorXd q = c - gram_ * beta;

    auto sweep = [&](bool active_only) {
      double max_delta = 0.0;
      for (Eigen::Index i = 0; i < p_; ++i) {
        const double gii = gram_(i, i);
        if (gii <= 0.0) continue;
        if (active_only && beta[i] == 0.0) continue;
        const double rho = q[i] + gii * beta[i];
        const double nb = soft(rho, h) / gii;
        const double d = nb - beta[i];
        if (d != 0.0) {
          q.noalias() -= gram_.col(i) * d;
          beta[i] = nb;
          max_delta = std::max(max_delta, std::abs(d));
        }
      }
      return max_delta;
    };

    // Newton step on the current sign pattern: solve G_AA b = c_A - h sign(b_A).
    // The objective restricted to the current orthant is a convex quadratic
    // minimized by that solution, so moving toward it never increases the
    // objective. The step stops at the first sign change, which drops that
    // coordinate. Returns true when the full step was taken.
    auto polish = [&]() {
      std::vector<Eigen::Index> act;
      for (Eigen::Index i = 0; i < p_; ++i)
        if (beta[i] != 0.0) act.push_back(i);
      if (act.empty()) return false;
      const auto na = static_cast<Eigen::Index>(act.size());
      MatrixXd g(na, na);
      VectorXd rhs(na);
      for (Eigen::Index a = 0; a < na; ++a) {
        rhs[a] = c[act[a]] - h * (beta[act[a]] > 0.0 ? 1.0 : -1.0);
        for (Eigen::Index b = 0; b < na; ++b) g(a, b) = gram_(act[a], act[b]);
      }
      const Eigen::LDLT<MatrixXd> ldlt(g);
      if (ldlt.info() != Eigen::Success) return false;
      const VectorXd sol = ldlt.solve(rhs);
      if (!sol.allFinite() || (g * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) return false;
      double t = 1.0;
      Eigen::Index hit = -1;
      for (Eigen::Index a = 0; a < na; ++a) {
        const double b0 = beta[act[a]];
        if ((sol[a] > 0.0) != (b0 > 0.0) || sol[a] == 0.0) {
          const double ta = b0 / (b0 - sol[a]);
          if (ta < t) t = ta, hit = a;
        }
      }
      for (Eigen::Index a = 0; a < na; ++a) {
        const Eigen::Index i = act[a];
        const double nb = a == hit ? 0.0 : beta[i] + t * (sol[a] - beta[i]);
        q.noalias() -= gram_.col(i) * (nb - beta[i]);
        beta[i] = nb;
      }
      return hit < 0;
    };

    LassoResult res;
    double kkt = kkt_of(beta, q, h);
    int full_sweeps = 0;
    while (full_sweeps < opt.max_sweeps) {
      const double full = sweep(false);
      ++full_sweeps;
      kkt = kkt_of(beta, q, h);
      if (full < opt.tol && kkt <= opt.kkt_tol) break;
      if (polish()) {
        kkt = kkt_of(beta, q, h);
        if (kkt <= opt.kkt_tol) {
          // One more full pass confirms no inactive coordinate wants in.
          if (sweep(false) < opt.tol) break;
          ++full_sweeps;
          continue;
        }
      }
      // Settle the active set before the next full pass.
      for (int inner = 0; inner < 20; ++inner) {
        if (sweep(true) < opt.tol) break;
      }
    }
    res.sweeps = full_sweeps;
    // Refresh q to remove accumulated drift before the final check.
    q = c - gram_ * beta;
    kkt = kkt_of(beta, q, h);
    if (kkt > opt.kkt_tol) {
      const double rss = rh.yy - 2.0 * beta.dot(c) + beta.dot(gram_ * beta);
      throw ConvergenceError("sparse regression did not reach KKT tolerance", std::sqrt(std::max(0.0, rss * n())));
    }

    res.kkt_residual = kkt;
    res.coeffs = VectorXd::Zero(p_);
    double intercept = rh.ybar;
    for (Eigen::Index i = 0; i < p_; ++i) {
      if (scale_[i] <= 0.0) continue;
      res.coeffs[i] = beta[i] / scale_[i];
      intercept -= res.coeffs[i] * mean_[i];
    }
    if (intercept_col_ >= 0) res.coeffs[intercept_col_] = intercept / mean_[intercept_col_];
    return res;
  }

  double n() const { return static_cast<double>(n_); }

  VectorXd centered(const VectorXd& y) const {
    if (intercept_col_ < 0) return y;
    return (y.array() - y.mean()).matrix();
  }

  static double soft(double v, double h) {
    if (v > h) return v - h;
    if (v < -h) return v + h;
    return 0.0;
  }

  double kkt_of(const VectorXd& beta, const VectorXd& q, double h) const {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p_; ++i) {
      if (gram_(i, i) <= 0.0) continue;
      const double r = beta[i] == 0.0 ? std::max(0.0, std::abs(q[i]) - h)
                                      : std::abs(q[i] - h * (beta[i] > 0.0 ? 1.0 : -1.0));
      worst = std::max(worst, r);
    }
    return worst;
  }

  Eigen::Index n_, p_;
  const GramAccumulator* acc_ = nullptr;
  Eigen::Index intercept_col_ = -1;
  VectorXd mean_, scale_;
  MatrixXd z_;
  MatrixXd gram_;
};

/// Single right-hand-side convenience wrapper.
inline LassoResult sparse_regress(const MatrixXd& psi, const VectorXd& y, double h,
                                  const std::optional<VectorXd>& warm = std::nullopt,
                                  const LassoOptions& opt = {}) {
  if (psi.rows() != y.size()) throw std::invalid_argument("sparse_regress: row mismatch");
  return LassoProblem(psi).solve(y, h, warm, opt);
}

}  // namespace pimltube::piml
