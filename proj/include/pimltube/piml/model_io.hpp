#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pimltube/piml/learned_model.hpp"

namespace pimltube::piml {

namespace detail {
inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

/// Plain-text model file:
///   pimltube-model 1
///   version <n>
///   prior <mass> <gravity> <jx> <jy> <jz> <arm> <kappa>   | prior none
///   terms <count>
///   <term> <12 coefficients>
inline void write_model(std::ostream& os, const LearnedModel& m, const quadsim::QuadParams* prior = nullptr) {
  os << "pimltube-model 1\n";
  os << "version " << m.version << "\n";
  if (prior) {
    os << "prior " << detail::exact(prior->mass) << ' ' << detail::exact(prior->gravity);
    for (int i = 0; i < 3; ++i) os << ' ' << detail::exact(prior->inertia[i]);
    os << ' ' << detail::exact(prior->arm_length) << ' ' << detail::exact(prior->torque_ratio) << "\n";
  } else {
    os << "prior none\n";
  }
  os << "terms " << m.terms.size() << "\n";
  for (std::size_t t = 0; t < m.terms.size(); ++t) {
    os << m.terms[t].name();
    for (int j = 0; j < kStateDim; ++j) os << ' ' << detail::exact(m.xi(static_cast<Eigen::Index>(t), j));
    os << "\n";
  }
}

struct ModelFile {
  LearnedModel model;
  bool has_prior = false;
  quadsim::QuadParams prior{};
};

inline ModelFile read_model(std::istream& is) {
  auto fail = [](const std::string& what) { return std::runtime_error("read_model: " + what); };
  std::string tag;
  int fmt = 0;
  if (!(is >> tag >> fmt) || tag != "pimltube-model" || fmt != 1) throw fail("bad header");
  ModelFile f;
  if (!(is >> tag >> f.model.version) || tag != "version") throw fail("missing version");
  if (!(is >> tag) || tag != "prior") throw fail("missing prior line");
  std::string first;
  is >> first;
  if (first != "none") {
    f.has_prior = true;
    f.prior.mass = std::stod(first);
    if (!(is >> f.prior.gravity >> f.prior.inertia[0] >> f.prior.inertia[1] >> f.prior.inertia[2] >>
          f.prior.arm_length >> f.prior.torque_ratio)) {
      throw fail("bad prior line");
    }
    f.prior.validate();
  }
  std::size_t n = 0;
  if (!(is >> tag >> n) || tag != "terms" || n == 0) throw fail("missing term count");
  f.model.terms.clear();
  f.model.xi.resize(static_cast<Eigen::Index>(n), kStateDim);
  for (std::size_t t = 0; t < n; ++t) {
    std::string name;
    if (!(is >> name)) throw fail("truncated term list");
    f.model.terms.push_back(Term::parse(name));
    for (int j = 0; j < kStateDim; ++j) {
      if (!(is >> f.model.xi(static_cast<Eigen::Index>(t), j))) throw fail("truncated coefficients");
    }
  }
  return f;
}

inline void save_model(const std::string& path, const LearnedModel& m, const quadsim::QuadParams* prior = nullptr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  write_model(os, m, prior);
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  return read_model(is);
}

}  // namespace pimltube::piml
