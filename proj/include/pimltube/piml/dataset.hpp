#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pimltube/core/types.hpp"

namespace pimltube::piml {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Snapshot matrices of a flight record: one row per sample.
struct Dataset {
  MatrixXd states;       // n x 12
  MatrixXd inputs;       // n x 4
  MatrixXd derivatives;  // n x 12 (regression targets)
  double dt = 0.01;

  Eigen::Index rows() const { return states.rows(); }

  void validate() const {
    if (states.cols() != kStateDim || inputs.cols() != kInputDim) {
      throw std::invalid_argument("Dataset: expected 12 state and 4 input columns");
    }
    if (inputs.rows() != states.rows() || (derivatives.size() != 0 && derivatives.rows() != states.rows())) {
      throw std::invalid_argument("Dataset: inconsistent row counts");
    }
  }
};

/// Row-wise accumulator used by the online loop.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(double dt) : dt_(dt) {}

  void append(const State12& x, const Input4& u, const Vec12& target) {
    x_.push_back(x);
    u_.push_back(u);
    y_.push_back(target);
  }

  void append(const Dataset& d) {
    d.validate();
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      append(d.states.row(i).transpose(), d.inputs.row(i).transpose(), d.derivatives.row(i).transpose());
    }
  }

  std::size_t size() const { return x_.size(); }

  Dataset build() const {
    Dataset d;
    const auto n = static_cast<Eigen::Index>(x_.size());
    d.states.resize(n, kStateDim);
    d.inputs.resize(n, kInputDim);
    d.derivatives.resize(n, kStateDim);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.states.row(i) = x_[i].transpose();
      d.inputs.row(i) = u_[i].transpose();
      d.derivatives.row(i) = y_[i].transpose();
    }
    d.dt = dt_;
    return d;
  }

 private:
  double dt_;
  std::vector<Vec12> x_;
  std::vector<Vec4> u_;
  std::vector<Vec12> y_;
};

struct PreprocessResult {
  Dataset data;
  Eigen::Index removed = 0;
};

/// Drops every row in which any channel (state, input, or target) lies more
/// than `sigmas` sample standard deviations from the channel mean.
/// Zero-variance channels never reject.
inline PreprocessResult preprocess(const Dataset& raw, double sigmas = 3.0, Eigen::Index min_rows = 3) {
  raw.validate();
  const Eigen::Index n = raw.rows();
  if (n < 3) throw std::invalid_argument("preprocess: need at least 3 rows");
  const bool has_targets = raw.derivatives.size() != 0;

  std::vector<bool> keep(static_cast<std::size_t>(n), true);
  auto screen = [&](const MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double mean = m.col(c).mean();
      const double var = (m.col(c).array() - mean).square().sum() / static_cast<double>(n - 1);
      const double sd = std::sqrt(var);
      if (!(sd > 0.0)) continue;
      for (Eigen::Index r = 0; r < n; ++r) {
        if (!std::isfinite(m(r, c)) || std::abs(m(r, c) - mean) > sigmas * sd) keep[static_cast<std::size_t>(r)] = false;
      }
    }
  };
  screen(raw.states);
  screen(raw.inputs);
  if (has_targets) screen(raw.derivatives);

  Eigen::Index kept = 0;
  for (bool k : keep) kept += k ? 1 : 0;
  if (kept < min_rows) {
    throw std::runtime_error("preprocess: only " + std::to_string(kept) + " rows survive outlier rejection");
  }

  PreprocessResult out;
  out.removed = n - kept;
  out.data.dt = raw.dt;
  out.data.states.resize(kept, kStateDim);
  out.data.inputs.resize(kept, kInputDim);
  if (has_targets) out.data.derivatives.resize(kept, kStateDim);
  Eigen::Index j = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    if (!keep[static_cast<std::size_t>(r)]) continue;
    out.data.states.row(j) = raw.states.row(r);
    out.data.inputs.row(j) = raw.inputs.row(r);
    if (has_targets) out.data.derivatives.row(j) = raw.derivatives.row(r);
    ++j;
  }
  return out;
}

/// Second-order finite differences of the state snapshots: central in the
/// interior, one-sided three-point at both ends. Fills `derivatives`.
inline Dataset differentiate(const Dataset& d) {
  d.validate();
  const Eigen::Index n = d.rows();
  if (n < 3) throw std::invalid_argument("differentiate: need at least 3 rows");
  if (!(d.dt > 0.0)) throw std::invalid_argument("differentiate: dt must be positive");
  Dataset out = d;
  out.derivatives.resize(n, kStateDim);
  const double h = d.dt;
  out.derivatives.row(0) = (-3.0 * d.states.row(0) + 4.0 * d.states.row(1) - d.states.row(2)) / (2.0 * h);
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    out.derivatives.row(i) = (d.states.row(i + 1) - d.states.row(i - 1)) / (2.0 * h);
  }
  out.derivatives.row(n - 1) =
      (3.0 * d.states.row(n - 1) - 4.0 * d.states.row(n - 2) + d.states.row(n - 3)) / (2.0 * h);
  return out;
}

}  // namespace pimltube::piml
