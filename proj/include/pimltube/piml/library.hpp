#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimltube/core/types.hpp"
#include "pimltube/piml/dataset.hpp"

namespace pimltube::piml {

/// One candidate function of the library. Indices are 0-based.
struct Term {
  enum class Kind { kConstant, kState, kInput, kStateState, kStateInput, kSin, kCos, kSinInput };
  Kind kind = Kind::kConstant;
  int a = 0;  // state index (or input index for kInput)
  int b = 0;  // second state index, or input index for the *Input kinds

  bool operator==(const Term&) const = default;

  double eval(const State12& x, const Input4& u) const {
    switch (kind) {
      case Kind::kConstant: return 1.0;
      case Kind::kState: return x[a];
      case Kind::kInput: return u[a];
      case Kind::kStateState: return x[a] * x[b];
      case Kind::kStateInput: return x[a] * u[b];
      case Kind::kSin: return std::sin(x[a]);
      case Kind::kCos: return std::cos(x[a]);
      case Kind::kSinInput: return std::sin(x[a]) * u[b];
    }
    return 0.0;
  }

  /// Adds coeff * d(term)/dx and coeff * d(term)/du into the given rows.
  /// `coeff` is the 12-vector of coefficients this term carries.
  void accumulate_jacobian(const State12& x, const Input4& u, const Eigen::Ref<const Vec12>& coeff, Mat12& fx,
                           Mat12x4& fu) const {
    switch (kind) {
      case Kind::kConstant: return;
      case Kind::kState: fx.col(a) += coeff; return;
      case Kind::kInput: fu.col(a) += coeff; return;
      case Kind::kStateState:
        fx.col(a) += x[b] * coeff;
        fx.col(b) += x[a] * coeff;
        return;
      case Kind::kStateInput:
        fx.col(a) += u[b] * coeff;
        fu.col(b) += x[a] * coeff;
        return;
      case Kind::kSin: fx.col(a) += std::cos(x[a]) * coeff; return;
      case Kind::kCos: fx.col(a) -= std::sin(x[a]) * coeff; return;
      case Kind::kSinInput:
        fx.col(a) += std::cos(x[a]) * u[b] * coeff;
        fu.col(b) += std::sin(x[a]) * coeff;
        return;
    }
  }

  std::string name() const {
    const std::string xa = "x" + std::to_string(a), xb = "x" + std::to_string(b);
    const std::string ua = "u" + std::to_string(a), ub = "u" + std::to_string(b);
    switch (kind) {
      case Kind::kConstant: return "1";
      case Kind::kState: return xa;
      case Kind::kInput: return ua;
      case Kind::kStateState: return xa + "*" + xb;
      case Kind::kStateInput: return xa + "*" + ub;
      case Kind::kSin: return "sin(" + xa + ")";
      case Kind::kCos: return "cos(" + xa + ")";
      case Kind::kSinInput: return "sin(" + xa + ")*" + ub;
    }
    return "?";
  }

  static Term parse(const std::string& s) {
    auto bad = [&s]() { return std::invalid_argument("Term::parse: cannot parse '" + s + "'"); };
    auto check = [&](Term t) {
      const bool a_input = t.kind == Kind::kInput;
      const bool b_input = t.kind == Kind::kStateInput || t.kind == Kind::kSinInput;
      const bool has_b = t.kind == Kind::kStateState || b_input;
      if (t.a < 0 || t.a >= (a_input ? kInputDim : kStateDim)) throw bad();
      if (has_b && (t.b < 0 || t.b >= (b_input ? kInputDim : kStateDim))) throw bad();
      return t;
    };
    if (s == "1") return Term{};
    int a = -1, b = -1, n = 0;
    if (std::sscanf(s.c_str(), "sin(x%d)*u%d%n", &a, &b, &n) == 2 && n == static_cast<int>(s.size()))
      return check({Kind::kSinInput, a, b});
    if (std::sscanf(s.c_str(), "sin(x%d)%n", &a, &n) == 1 && n == static_cast<int>(s.size()))
      return check({Kind::kSin, a, 0});
    if (std::sscanf(s.c_str(), "cos(x%d)%n", &a, &n) == 1 && n == static_cast<int>(s.size()))
      return check({Kind::kCos, a, 0});
    if (std::sscanf(s.c_str(), "x%d*x%d%n", &a, &b, &n) == 2 && n == static_cast<int>(s.size()))
      return check({Kind::kStateState, a, b});
    if (std::sscanf(s.c_str(), "x%d*u%d%n", &a, &b, &n) == 2 && n == static_cast<int>(s.size()))
      return check({Kind::kStateInput, a, b});
    if (std::sscanf(s.c_str(), "x%d%n", &a, &n) == 1 && n == static_cast<int>(s.size()))
      return check({Kind::kState, a, 0});
    if (std::sscanf(s.c_str(), "u%d%n", &a, &n) == 1 && n == static_cast<int>(s.size()))
      return check({Kind::kInput, a, 0});
    throw bad();
  }
};

/// Ordered, duplicate-free candidate list. The constant sits at index 0.
struct LibrarySpec {
  std::vector<Term> terms{Term{}};
  std::size_t n_min = 500;
  bool expanded = false;

  std::size_t size() const { return terms.size(); }

  /// Appends `t` unless already present. Returns true when appended.
  bool add(const Term& t) {
    for (const Term& s : terms)
      if (s == t) return false;
    terms.push_back(t);
    return true;
  }

  void validate() const {
    if (terms.empty() || !(terms.front() == Term{})) {
      throw std::invalid_argument("LibrarySpec: constant term must be at index 0");
    }
    for (std::size_t i = 0; i < terms.size(); ++i)
      for (std::size_t j = i + 1; j < terms.size(); ++j)
        if (terms[i] == terms[j]) throw std::invalid_argument("LibrarySpec: duplicate term " + terms[i].name());
  }
};

/// {1} + states + inputs + all state*state (with squares) and state*input products.
inline LibrarySpec base_library(std::size_t n_min = 500) {
  LibrarySpec s;
  s.n_min = n_min;
  for (int i = 0; i < kStateDim; ++i) s.add({Term::Kind::kState, i, 0});
  for (int i = 0; i < kInputDim; ++i) s.add({Term::Kind::kInput, i, 0});
  for (int i = 0; i < kStateDim; ++i)
    for (int j = i; j < kStateDim; ++j) s.add({Term::Kind::kStateState, i, j});
  for (int i = 0; i < kStateDim; ++i)
    for (int j = 0; j < kInputDim; ++j) s.add({Term::Kind::kStateInput, i, j});
  return s;
}

/// Trig family: sin, cos of the Euler angles and sin(angle) * input.
inline std::vector<Term> expansion_family() {
  std::vector<Term> out;
  for (int i = idx::kAtt; i < idx::kAtt + 3; ++i) {
    out.push_back({Term::Kind::kSin, i, 0});
    out.push_back({Term::Kind::kCos, i, 0});
  }
  for (int i = idx::kAtt; i < idx::kAtt + 3; ++i)
    for (int j = 0; j < kInputDim; ++j) out.push_back({Term::Kind::kSinInput, i, j});
  return out;
}

/// Appends the expansion family once the dataset exceeds n_min rows.
inline LibrarySpec maybe_expand(LibrarySpec spec, std::size_t n_samples) {
  if (spec.expanded || n_samples <= spec.n_min) return spec;
  for (const Term& t : expansion_family()) spec.add(t);
  spec.expanded = true;
  return spec;
}

inline LibrarySpec maybe_expand(const LibrarySpec& spec, const Dataset& d) {
  return maybe_expand(spec, static_cast<std::size_t>(d.rows()));
}

inline VectorXd library_row(const std::vector<Term>& terms, const State12& x, const Input4& u) {
  VectorXd r(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) r[static_cast<Eigen::Index>(t)] = terms[t].eval(x, u);
  return r;
}

/// Library matrix: column l is term l evaluated on every row.
inline MatrixXd build_library(const Dataset& d, const LibrarySpec& spec) {
  if (spec.terms.empty()) throw std::invalid_argument("build_library: empty spec");
  d.validate();
  const Eigen::Index n = d.rows();
  MatrixXd psi(n, static_cast<Eigen::Index>(spec.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const State12 x = d.states.row(r).transpose();
    const Input4 u = d.inputs.row(r).transpose();
    for (std::size_t t = 0; t < spec.size(); ++t) psi(r, static_cast<Eigen::Index>(t)) = spec.terms[t].eval(x, u);
  }
  return psi;
}

}  // namespace pimltube::piml
