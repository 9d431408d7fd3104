#pragma once

// The bundle of dynamics, networks and hyperparameters that the loss and the
// certificate are evaluated on, plus the LQR warm start that seeds it.

#include "ncc/linalg.hpp"
#include "ncc/nets.hpp"
#include "ncc/systems.hpp"

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

struct ContractionProblem {
  std::shared_ptr<const ControlAffineSystem> system;
  MetricNet metric;
  PolicyNet policy;
  double a = 0.01;  // metric lower bound
  double b = 100.0;  // metric upper bound
  double c = 0.0;  // contraction rate

  Eigen::Index state_dim() const { return system->state_dim(); }

  void validate() const {
    if (!system) throw std::invalid_argument("ContractionProblem: no system");
    const Eigen::Index n = system->state_dim();
    const Eigen::Index m = system->input_dim();
    if (!(a > 0.0) || !(b > a)) throw std::invalid_argument("ContractionProblem: need 0 < a < b");
    if (!(c >= 0.0)) throw std::invalid_argument("ContractionProblem: need c >= 0");
    if (policy.gain.rows() != m || policy.gain.cols() != n || policy.x_eq.size() != n || policy.u_eq.size() != m) {
      throw std::invalid_argument("ContractionProblem: policy dimensions do not match the system");
    }
    policy.residual.validate();
    if (policy.residual.input_dim() != n || policy.residual.output_dim() != m) {
      throw std::invalid_argument("ContractionProblem: policy residual has the wrong shape");
    }
    if (metric.warm_start.rows() != n || metric.warm_start.cols() != n || metric.projection.cols() != n) {
      throw std::invalid_argument("ContractionProblem: metric dimensions do not match the system");
    }
    metric.residual.validate();
    if (metric.residual.input_dim() != metric.projection.rows() || metric.residual.output_dim() != packed_size(n)) {
      throw std::invalid_argument("ContractionProblem: metric residual has the wrong shape");
    }
  }
};

struct WarmStartOptions {
  std::vector<double> q_diag;  // empty: identity
  std::vector<double> r_diag;  // empty: identity
  std::vector<int> policy_hidden{128, 128};
  std::vector<int> metric_hidden{128, 128};
};

struct WarmStart {
  Matrix gain;      // u = gain (x - x_eq) + u_eq
  Matrix riccati;   // S
  Matrix cholesky;  // U with U^T U = S
};

/// LQR about the system's equilibrium.
inline WarmStart lqr_warm_start(const ControlAffineSystem& sys, const WarmStartOptions& opt) {
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  Matrix q = Matrix::Identity(n, n);
  Matrix r = Matrix::Identity(m, m);
  if (!opt.q_diag.empty()) {
    if (static_cast<Eigen::Index>(opt.q_diag.size()) != n) throw std::invalid_argument("lqr: q has wrong length");
    for (Eigen::Index i = 0; i < n; ++i) q(i, i) = opt.q_diag[static_cast<std::size_t>(i)];
  }
  if (!opt.r_diag.empty()) {
    if (static_cast<Eigen::Index>(opt.r_diag.size()) != m) throw std::invalid_argument("lqr: r has wrong length");
    for (Eigen::Index i = 0; i < m; ++i) r(i, i) = opt.r_diag[static_cast<std::size_t>(i)];
  }
  const Matrix a = sys.drift_jacobian(sys.x_eq());
  const CareSolution care = solve_care(a, sys.input_matrix(), q, r);
  return {-care.gain, care.solution, cholesky_upper(care.solution)};
}

inline ContractionProblem make_problem(std::shared_ptr<const ControlAffineSystem> sys, const WarmStartOptions& opt,
                                       double a, double b, double c, std::mt19937_64& rng) {
  const WarmStart ws = lqr_warm_start(*sys, opt);
  const Eigen::Index n = sys->state_dim();
  const Eigen::Index m = sys->input_dim();
  ContractionProblem p;
  p.policy.gain = ws.gain;
  p.policy.x_eq = sys->x_eq();
  p.policy.u_eq = sys->u_eq();
  p.policy.residual = make_residual_mlp(n, opt.policy_hidden, m, rng);
  p.metric.warm_start = ws.cholesky;
  p.metric.projection = killing_projection(sys->input_matrix());
  p.metric.residual = make_residual_mlp(p.metric.projection.rows(), opt.metric_hidden, packed_size(n), rng);
  p.system = std::move(sys);
  p.a = a;
  p.b = b;
  p.c = c;
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Flat parameter vector.  Order: policy gain, policy residual layers
// (weight, bias), metric warm start, metric residual layers.  Matrices are
// flattened column-major.

struct ParameterBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool residual = false;     // weight decay applies
  bool upper_only = false;   // strictly-lower entries are frozen at zero
  Eigen::Index size() const { return rows * cols; }
};

namespace detail {

template <class Problem, class Visitor>
void visit_parameters(Problem& p, Visitor&& visit) {
  visit(ParameterBlock{"policy.gain", p.policy.gain.rows(), p.policy.gain.cols(), false, false}, p.policy.gain);
  for (std::size_t k = 0; k < p.policy.residual.layers.size(); ++k) {
    auto& l = p.policy.residual.layers[k];
    const std::string tag = "policy.residual." + std::to_string(k);
    visit(ParameterBlock{tag + ".weight", l.weight.rows(), l.weight.cols(), true, false}, l.weight);
    visit(ParameterBlock{tag + ".bias", l.bias.rows(), 1, true, false}, l.bias);
  }
  visit(ParameterBlock{"metric.warm_start", p.metric.warm_start.rows(), p.metric.warm_start.cols(), false, true},
        p.metric.warm_start);
  for (std::size_t k = 0; k < p.metric.residual.layers.size(); ++k) {
    auto& l = p.metric.residual.layers[k];
    const std::string tag = "metric.residual." + std::to_string(k);
    visit(ParameterBlock{tag + ".weight", l.weight.rows(), l.weight.cols(), true, false}, l.weight);
    visit(ParameterBlock{tag + ".bias", l.bias.rows(), 1, true, false}, l.bias);
  }
}

}  // namespace detail

inline std::vector<ParameterBlock> parameter_layout(const ContractionProblem& p) {
  std::vector<ParameterBlock> out;
  detail::visit_parameters(p, [&](const ParameterBlock& blk, const auto&) { out.push_back(blk); });
  return out;
}

inline Vector flatten_parameters(const ContractionProblem& p) {
  std::vector<double> flat;
  detail::visit_parameters(p, [&](const ParameterBlock&, const auto& m) {
    flat.insert(flat.end(), m.data(), m.data() + m.size());
  });
  return Eigen::Map<Vector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

inline void assign_parameters(ContractionProblem& p, const Vector& flat) {
  Eigen::Index offset = 0;
  detail::visit_parameters(p, [&](const ParameterBlock& blk, auto& m) {
    if (offset + blk.size() > flat.size()) throw std::invalid_argument("assign_parameters: vector too short");
    std::copy(flat.data() + offset, flat.data() + offset + blk.size(), m.data());
    offset += blk.size();
  });
  if (offset != flat.size()) throw std::invalid_argument("assign_parameters: vector too long");
}

}  // namespace ncc
