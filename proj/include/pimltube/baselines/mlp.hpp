#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimltube/core/types.hpp"
#include "pimltube/piml/dataset.hpp"

namespace pimltube::baselines {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr int kMlpIn = kStateDim + kInputDim;

enum class MlpNormalization {
  kData,   // z-score inputs and one-step rates from the training set
  kFixed,  // mean = hover point, std = 0.1 everywhere, next-state output
};

/// 16 -> h1 -> h2 -> 12 ReLU network. params = {W1, b1, W2, b2, W3, b3}.
struct MlpModel {
  std::array<MatrixXd, 6> params;
  VectorXd in_mean = VectorXd::Zero(kMlpIn);
  VectorXd in_scale = VectorXd::Ones(kMlpIn);
  VectorXd out_mean = VectorXd::Zero(kStateDim);
  VectorXd out_scale = VectorXd::Ones(kStateDim);
  bool rate_output = true;  // true: x+ = x + dt (mean + scale y); false: x+ = mean + scale y
  double dt = 0.01;

  static MlpModel zeros(int h1 = 64, int h2 = 32) {
    MlpModel m;
    m.params = {MatrixXd::Zero(h1, kMlpIn), MatrixXd::Zero(h1, 1), MatrixXd::Zero(h2, h1),
                MatrixXd::Zero(h2, 1),      MatrixXd::Zero(kStateDim, h2), MatrixXd::Zero(kStateDim, 1)};
    return m;
  }

  /// He-initialized weights, zero biases.
  static MlpModel random(std::uint64_t seed, int h1 = 64, int h2 = 32) {
    MlpModel m = zeros(h1, h2);
    std::mt19937_64 rng(seed);
    for (int l : {0, 2, 4}) {
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(m.params[l].cols())));
      for (Eigen::Index i = 0; i < m.params[l].size(); ++i) m.params[l].data()[i] = g(rng);
    }
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += static_cast<std::size_t>(p.size());
    return n;
  }

  bool finite() const {
    return std::all_of(params.begin(), params.end(), [](const MatrixXd& p) { return p.allFinite(); });
  }

  /// Network output for one normalized input.
  VectorXd net(const VectorXd& z) const {
    const VectorXd h1 = (params[0] * z + params[1]).cwiseMax(0.0);
    const VectorXd h2 = (params[2] * h1 + params[3]).cwiseMax(0.0);
    return params[4] * h2 + params[5];
  }

  /// d net / d z.
  MatrixXd net_jacobian(const VectorXd& z) const {
    const VectorXd a1 = params[0] * z + params[1];
    const VectorXd h1 = a1.cwiseMax(0.0);
    const VectorXd a2 = params[2] * h1 + params[3];
    MatrixXd j2 = params[2] * (a1.array() > 0.0).cast<double>().matrix().asDiagonal() * params[0];
    j2 = (a2.array() > 0.0).cast<double>().matrix().asDiagonal() * j2;
    return params[4] * j2;
  }

  VectorXd normalize(const State12& x, const Input4& u) const {
    VectorXd xu(kMlpIn);
    xu << x, u;
    return (xu - in_mean).cwiseQuotient(in_scale);
  }

  State12 predict(const State12& x, const Input4& u) const {
    const VectorXd y = out_mean + out_scale.cwiseProduct(net(normalize(x, u)));
    return rate_output ? State12(x + dt * y) : State12(y);
  }

  Linearization linearize(const State12& x, const Input4& u) const {
    const VectorXd z = normalize(x, u);
    MatrixXd j = out_scale.asDiagonal() * net_jacobian(z) * in_scale.cwiseInverse().asDiagonal();
    Linearization l;
    if (rate_output) j *= dt;
    l.A = j.leftCols(kStateDim);
    l.B = j.rightCols(kInputDim);
    if (rate_output) l.A += Mat12::Identity();
    l.next = predict(x, u);
    return l;
  }

  /// Product of layer spectral norms (a Lipschitz bound of net()).
  double lipschitz_bound() const {
    double l = 1.0;
    for (int i : {0, 2, 4}) {
      l *= Eigen::JacobiSVD<MatrixXd>(params[i]).singularValues()(0);
    }
    return l;
  }
};

/// Discrete prediction model wrapper for the MPC solver.
struct MlpDiscreteModel {
  MlpModel mlp;
  State12 step(const State12& x, const Input4& u) const { return mlp.predict(x, u); }
  Linearization linearize(const State12& x, const Input4& u) const { return mlp.linearize(x, u); }
};

struct MlpGradient {
  std::array<MatrixXd, 6> g;
  double loss = 0.0;
};

/// Mean squared error of net(Z) against T (columns are samples) and its
/// gradient with respect to every parameter.
inline MlpGradient mlp_loss_gradient(const MlpModel& m, const MatrixXd& z, const MatrixXd& t) {
  const auto& p = m.params;
  const double denom = static_cast<double>(t.size());
  const MatrixXd a1 = (p[0] * z).colwise() + p[1].col(0);
  const MatrixXd h1 = a1.cwiseMax(0.0);
  const MatrixXd a2 = (p[2] * h1).colwise() + p[3].col(0);
  const MatrixXd h2 = a2.cwiseMax(0.0);
  const MatrixXd y = (p[4] * h2).colwise() + p[5].col(0);
  const MatrixXd r = y - t;
  MlpGradient out;
  out.loss = r.squaredNorm() / denom;
  const MatrixXd dy = (2.0 / denom) * r;
  out.g[4] = dy * h2.transpose();
  out.g[5] = dy.rowwise().sum();
  const MatrixXd dh2 = (p[4].transpose() * dy).cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
  out.g[2] = dh2 * h1.transpose();
  out.g[3] = dh2.rowwise().sum();
  const MatrixXd dh1 = (p[2].transpose() * dh2).cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
  out.g[0] = dh1 * z.transpose();
  out.g[1] = dh1.rowwise().sum();
  return out;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch = 256;
  int max_epochs = 2000;
  double early_stop = 1e-4;  // validation loss threshold
  double validation_fraction = 0.2;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int hidden1 = 64, hidden2 = 32;
  MlpNormalization normalization = MlpNormalization::kData;
  std::uint64_t seed = 1;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;
  int epochs = 0;
  bool early_stopped = false;
};

namespace detail {

/// Per-channel scales with a floor so constant channels stay finite.
inline VectorXd safe_std(const MatrixXd& cols, const VectorXd& mean) {
  VectorXd s(cols.rows());
  for (Eigen::Index i = 0; i < cols.rows(); ++i) {
    const double v = (cols.row(i).transpose().array() - mean[i]).square().mean();
    s[i] = std::sqrt(v) > 1e-12 ? std::sqrt(v) : 1.0;
  }
  return s;
}

}  // namespace detail

/// Trains on one-step transitions: d.derivatives holds (x(k+1) - x(k)) / dt.
inline MlpModel mlp_train(const piml::Dataset& d, const TrainConfig& cfg, TrainReport* report = nullptr) {
  d.validate();
  const Eigen::Index n = d.rows();
  if (n < cfg.batch) throw std::invalid_argument("mlp_train: training set smaller than one batch");
  if (!(cfg.learning_rate > 0.0) || cfg.batch < 1 || cfg.max_epochs < 0) {
    throw std::invalid_argument("mlp_train: invalid configuration");
  }
  MlpModel m = MlpModel::random(cfg.seed, cfg.hidden1, cfg.hidden2);
  m.dt = d.dt;

  MatrixXd raw_in(kMlpIn, n);
  raw_in.topRows(kStateDim) = d.states.transpose();
  raw_in.bottomRows(kInputDim) = d.inputs.transpose();
  MatrixXd raw_out;
  if (cfg.normalization == MlpNormalization::kData) {
    m.rate_output = true;
    raw_out = d.derivatives.transpose();
    m.in_mean = raw_in.rowwise().mean();
    m.in_scale = detail::safe_std(raw_in, m.in_mean);
    m.out_mean = raw_out.rowwise().mean();
    m.out_scale = detail::safe_std(raw_out, m.out_mean);
  } else {
    m.rate_output = false;
    raw_out = (d.states + d.dt * d.derivatives).transpose();
    // Hover reference: mean position kept, everything else zero except thrust.
    m.in_mean.setZero();
    m.in_mean.head<3>() = d.states.colwise().mean().head<3>().transpose();
    m.in_mean[kStateDim] = d.inputs.col(0).mean();
    m.in_scale.setConstant(0.1);
    m.out_mean = m.in_mean.head(kStateDim);
    m.out_scale.setConstant(0.1);
  }
  const MatrixXd z = (raw_in.colwise() - m.in_mean).array().colwise() / m.in_scale.array();
  const MatrixXd t = (raw_out.colwise() - m.out_mean).array().colwise() / m.out_scale.array();

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(cfg.validation_fraction * static_cast<double>(n)));
  const Eigen::Index n_train = n - n_val;
  if (n_train < 1) throw std::invalid_argument("mlp_train: validation split leaves no training data");
  auto gather = [&](const MatrixXd& src, Eigen::Index from, Eigen::Index count) {
    MatrixXd out(src.rows(), count);
    for (Eigen::Index i = 0; i < count; ++i) out.col(i) = src.col(order[static_cast<std::size_t>(from + i)]);
    return out;
  };
  const MatrixXd z_tr = gather(z, 0, n_train), t_tr = gather(t, 0, n_train);
  const MatrixXd z_va = gather(z, n_train, n_val), t_va = gather(t, n_train, n_val);

  std::array<MatrixXd, 6> mom, vel;
  for (std::size_t i = 0; i < 6; ++i) {
    mom[i] = MatrixXd::Zero(m.params[i].rows(), m.params[i].cols());
    vel[i] = mom[i];
  }
  TrainReport rep;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_train));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  long step = 0;
  MatrixXd zb, tb;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch) {
      const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch, n_train - start);
      zb.resize(kMlpIn, bs);
      tb.resize(kStateDim, bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        zb.col(i) = z_tr.col(idx[static_cast<std::size_t>(start + i)]);
        tb.col(i) = t_tr.col(idx[static_cast<std::size_t>(start + i)]);
      }
      const MlpGradient gr = mlp_loss_gradient(m, zb, tb);
      if (!std::isfinite(gr.loss)) throw ConvergenceError("mlp_train: loss diverged", gr.loss);
      epoch_loss += gr.loss * static_cast<double>(bs);
      seen += bs;
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < 6; ++i) {
        mom[i] = cfg.beta1 * mom[i] + (1.0 - cfg.beta1) * gr.g[i];
        vel[i] = cfg.beta2 * vel[i] + (1.0 - cfg.beta2) * gr.g[i].cwiseAbs2();
        m.params[i].array() -=
            cfg.learning_rate * (mom[i].array() / c1) / ((vel[i].array() / c2).sqrt() + cfg.adam_eps);
      }
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    const double vl = mlp_loss_gradient(m, z_va, t_va).loss;
    rep.val_loss.push_back(vl);
    rep.epochs = epoch + 1;
    if (vl < cfg.early_stop) {
      rep.early_stopped = true;
      break;
    }
  }
  if (report) *report = std::move(rep);
  return m;
}

/// One-step prediction RMSE over a held-out set (same layout as mlp_train).
inline double mlp_holdout_rmse(const MlpModel& m, const piml::Dataset& d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const State12 x = d.states.row(i).transpose();
    const State12 truth = x + d.dt * d.derivatives.row(i).transpose();
    s += (m.predict(x, d.inputs.row(i).transpose()) - truth).squaredNorm();
  }
  return std::sqrt(s / static_cast<double>(std::max<Eigen::Index>(1, d.rows())));
}

// Text format: header, scalars, then tagged matrices "<tag> rows cols" with
// one row per line.
inline void write_mlp(std::ostream& os, const MlpModel& m) {
  os << "pimltube-mlp 1\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "output " << (m.rate_output ? "rate" : "state") << "\n";
  os << "dt " << num(m.dt) << "\n";
  auto mat = [&](const char* tag, const MatrixXd& a) {
    os << tag << ' ' << a.rows() << ' ' << a.cols() << '\n';
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) os << (j ? " " : "") << num(a(i, j));
      os << '\n';
    }
  };
  static const char* tags[6] = {"W1", "b1", "W2", "b2", "W3", "b3"};
  for (int i = 0; i < 6; ++i) mat(tags[i], m.params[static_cast<std::size_t>(i)]);
  mat("in_mean", m.in_mean);
  mat("in_scale", m.in_scale);
  mat("out_mean", m.out_mean);
  mat("out_scale", m.out_scale);
}

inline MlpModel read_mlp(std::istream& is) {
  auto fail = [](const std::string& why) -> MlpModel { throw std::runtime_error("read_mlp: " + why); };
  std::string word;
  int version = 0;
  if (!(is >> word >> version) || word != "pimltube-mlp" || version != 1) return fail("bad header");
  MlpModel m;
  std::string mode;
  if (!(is >> word >> mode) || word != "output" || (mode != "rate" && mode != "state")) return fail("bad output line");
  m.rate_output = mode == "rate";
  if (!(is >> word >> m.dt) || word != "dt") return fail("bad dt line");
  auto mat = [&](const char* tag) {
    Eigen::Index r = 0, c = 0;
    if (!(is >> word >> r >> c) || word != tag || r < 1 || c < 1) fail(std::string("expected matrix ") + tag);
    MatrixXd a(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j)
        if (!(is >> a(i, j))) fail(std::string("truncated matrix ") + tag);
    return a;
  };
  static const char* tags[6] = {"W1", "b1", "W2", "b2", "W3", "b3"};
  for (int i = 0; i < 6; ++i) m.params[static_cast<std::size_t>(i)] = mat(tags[i]);
  m.in_mean = mat("in_mean");
  m.in_scale = mat("in_scale");
  m.out_mean = mat("out_mean");
  m.out_scale = mat("out_scale");
  const auto& p = m.params;
  if (p[0].cols() != kMlpIn || p[4].rows() != kStateDim || p[1].rows() != p[0].rows() || p[2].cols() != p[0].rows() ||
      p[3].rows() != p[2].rows() || p[4].cols() != p[2].rows() || p[5].rows() != kStateDim ||
      m.in_mean.size() != kMlpIn || m.in_scale.size() != kMlpIn || m.out_mean.size() != kStateDim ||
      m.out_scale.size() != kStateDim) {
    return fail("inconsistent layer shapes");
  }
  if (!m.finite()) return fail("non-finite weights");
  return m;
}

inline void save_mlp(const std::string& path, const MlpModel& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_mlp: cannot open " + path);
  write_mlp(f, m);
  if (!f) throw std::runtime_error("save_mlp: write failed for " + path);
}

inline MlpModel load_mlp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_mlp: cannot open " + path);
  return read_mlp(f);
}

}  // namespace pimltube::baselines
