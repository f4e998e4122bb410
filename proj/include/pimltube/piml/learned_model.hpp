#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pimltube/core/types.hpp"
#include "pimltube/piml/dataset.hpp"
#include "pimltube/piml/library.hpp"
#include "pimltube/piml/sparse_regression.hpp"
#include "pimltube/quadsim/dynamics.hpp"

namespace pimltube::piml {

/// Sparse model xdot = Psi(x, u) xi over the surviving library terms.
struct LearnedModel {
  std::vector<Term> terms{Term{}};
  MatrixXd xi = MatrixXd::Zero(1, kStateDim);  // terms x 12
  long version = 0;

  std::size_t size() const { return terms.size(); }

  Vec12 evaluate(const State12& x, const Input4& u) const {
    Vec12 out = Vec12::Zero();
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const double v = terms[t].eval(x, u);
      if (v != 0.0) out.noalias() += v * xi.row(static_cast<Eigen::Index>(t)).transpose();
    }
    return out;
  }

  /// Adds the Jacobians of evaluate() into fx, fu. Returns evaluate(x, u).
  Vec12 accumulate_jacobian(const State12& x, const Input4& u, Mat12& fx, Mat12x4& fu) const {
    Vec12 out = Vec12::Zero();
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(t);
      const Vec12 c = xi.row(r).transpose();
      out.noalias() += terms[t].eval(x, u) * c;
      terms[t].accumulate_jacobian(x, u, c, fx, fu);
    }
    return out;
  }

  /// Coefficients laid out on `spec` order (zero for absent terms).
  MatrixXd aligned(const LibrarySpec& spec) const {
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(spec.size()), kStateDim);
    for (std::size_t t = 0; t < terms.size(); ++t) {
      bool found = false;
      for (std::size_t s = 0; s < spec.size(); ++s) {
        if (spec.terms[s] == terms[t]) {
          out.row(static_cast<Eigen::Index>(s)) = xi.row(static_cast<Eigen::Index>(t));
          found = true;
          break;
        }
      }
      if (!found) throw std::invalid_argument("LearnedModel::aligned: term " + terms[t].name() + " not in spec");
    }
    return out;
  }
};

/// Keeps the constant and every term with a nonzero coefficient in some
/// dimension.
inline LearnedModel prune(const LibrarySpec& spec, const MatrixXd& xi_full, long version) {
  if (xi_full.rows() != static_cast<Eigen::Index>(spec.size()) || xi_full.cols() != kStateDim) {
    throw std::invalid_argument("prune: coefficient shape does not match library");
  }
  LearnedModel m;
  m.version = version;
  m.terms.clear();
  std::vector<Eigen::Index> keep;
  for (std::size_t t = 0; t < spec.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    if (t == 0 || (xi_full.row(r).array() != 0.0).any()) {
      m.terms.push_back(spec.terms[t]);
      keep.push_back(r);
    }
  }
  m.xi.resize(static_cast<Eigen::Index>(keep.size()), kStateDim);
  for (std::size_t i = 0; i < keep.size(); ++i) m.xi.row(static_cast<Eigen::Index>(i)) = xi_full.row(keep[i]);
  return m;
}

struct FitReport {
  std::vector<double> residual_rms;  // per dimension, on the training data
  std::vector<int> nonzeros;         // per dimension
  std::vector<double> kkt;           // per dimension
  MatrixXd xi_full;                  // coefficients on the full spec
};

struct FitResult {
  LearnedModel model;
  FitReport report;
};

/// Per-dimension lasso on a differentiated dataset. `h` holds one weight per
/// state dimension; `warm` (on the spec layout) seeds coordinate descent.
inline FitResult fit(const Dataset& d, const LibrarySpec& spec, const std::vector<double>& h,
                     const std::optional<MatrixXd>& warm = std::nullopt, long version = 1,
                     const LassoOptions& opt = {}) {
  d.validate();
  spec.validate();
  if (h.size() != static_cast<std::size_t>(kStateDim)) throw std::invalid_argument("fit: need 12 weights");
  if (d.derivatives.rows() != d.rows()) throw std::invalid_argument("fit: dataset has no derivatives");
  const MatrixXd psi = build_library(d, spec);
  const LassoProblem problem(psi);
  FitResult out;
  out.report.xi_full = MatrixXd::Zero(psi.cols(), kStateDim);
  for (int j = 0; j < kStateDim; ++j) {
    const VectorXd y = d.derivatives.col(j);
    std::optional<VectorXd> w;
    if (warm && warm->rows() == psi.cols()) w = warm->col(j);
    const LassoResult r = problem.solve(y, h[static_cast<std::size_t>(j)], w, opt);
    out.report.xi_full.col(j) = r.coeffs;
    out.report.kkt.push_back(r.kkt_residual);
    out.report.nonzeros.push_back(static_cast<int>((r.coeffs.array() != 0.0).count()));
    out.report.residual_rms.push_back(std::sqrt((y - psi * r.coeffs).squaredNorm() / static_cast<double>(y.size())));
  }
  out.model = prune(spec, out.report.xi_full, version);
  return out;
}

/// Same fit from accumulated statistics of (library row, target) pairs laid
/// out on `spec`. Used by the online loop, where rows arrive one at a time.
inline FitResult fit(const GramAccumulator& acc, const LibrarySpec& spec, const std::vector<double>& h,
                     const std::optional<MatrixXd>& warm = std::nullopt, long version = 1,
                     const LassoOptions& opt = {}) {
  spec.validate();
  if (h.size() != static_cast<std::size_t>(kStateDim)) throw std::invalid_argument("fit: need 12 weights");
  if (acc.cols() != static_cast<Eigen::Index>(spec.size()) || acc.targets() != kStateDim) {
    throw std::invalid_argument("fit: accumulator does not match the library");
  }
  const LassoProblem problem(acc);
  FitResult out;
  out.report.xi_full = MatrixXd::Zero(acc.cols(), kStateDim);
  for (int j = 0; j < kStateDim; ++j) {
    std::optional<VectorXd> w;
    if (warm && warm->rows() == acc.cols()) w = warm->col(j);
    const LassoResult r = problem.solve_target(j, h[static_cast<std::size_t>(j)], w, opt);
    out.report.xi_full.col(j) = r.coeffs;
    out.report.kkt.push_back(r.kkt_residual);
    out.report.nonzeros.push_back(static_cast<int>((r.coeffs.array() != 0.0).count()));
    out.report.residual_rms.push_back(problem.residual_rms_target(j, r.coeffs));
  }
  out.model = prune(spec, out.report.xi_full, version);
  return out;
}

inline FitResult fit(const Dataset& d, const LibrarySpec& spec, double h = 0.05) {
  return fit(d, spec, std::vector<double>(kStateDim, h));
}

/// Projects an update onto the Frobenius ball of radius `bound`.
inline MatrixXd clip_update(const MatrixXd& delta, double bound) {
  if (!(bound > 0.0)) throw std::invalid_argument("clip_update: bound must be positive");
  const double n = delta.norm();
  if (n <= bound) return delta;
  return (bound / n) * delta;
}

/// Physics prior plus a sparse residual: xdot = f_phys(x, u) + Psi(x, u) xi.
/// With an empty residual this is the first-principles model.
struct PimlModel {
  quadsim::QuadParams prior{};
  LearnedModel residual{};

  StateDerivative12 derivative(const State12& x, const Input4& u) const {
    return quadsim::continuous_dynamics(x, u, prior) + residual.evaluate(x, u);
  }

  StateDerivative12 jacobian(const State12& x, const Input4& u, Mat12& fx, Mat12x4& fu) const {
    Vec12 f = quadsim::continuous_jacobian(x, u, prior, fx, fu);
    return f + residual.accumulate_jacobian(x, u, fx, fu);
  }
};

/// Purely data-driven model as a ContinuousModel.
struct SparseModel {
  LearnedModel model{};
  StateDerivative12 derivative(const State12& x, const Input4& u) const { return model.evaluate(x, u); }
  StateDerivative12 jacobian(const State12& x, const Input4& u, Mat12& fx, Mat12x4& fu) const {
    fx.setZero();
    fu.setZero();
    return model.accumulate_jacobian(x, u, fx, fu);
  }
};

}  // namespace pimltube::piml
