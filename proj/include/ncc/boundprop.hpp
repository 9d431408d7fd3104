#pragma once

// Interval hulls of the asymmetric contraction matrix
//   G(x) = Theta(x)^T [ d_{f_pi(x)} Theta(x) + Theta(x) (df_pi/dx(x) + c I) ]
// and of the metric M(x) = Theta(x)^T Theta(x) over boxes of state space.
// All hulls are built on a Tape so that the same graph serves certification
// (no gradients) and training (reverse sweep).

#include "ncc/interval.hpp"
#include "ncc/nets.hpp"
#include "ncc/parallel.hpp"
#include "ncc/problem.hpp"
#include "ncc/tape.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ncc {

inline constexpr const char* kPropagatorIbp = "ibp";

struct PropagationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Regions

/// Axis-aligned box split into a uniform grid of cells. Cell multi-indices
/// run with coordinate 0 fastest; neighbouring cells share face coordinates
/// bit-for-bit.
class Region {
 public:
  Region() = default;
  Region(IntervalVector box, std::vector<int> partition) : box_(std::move(box)), partition_(std::move(partition)) {
    if (partition_.empty()) partition_.assign(box_.size(), 1);
    if (partition_.size() != box_.size()) throw std::invalid_argument("Region: partition length differs from box");
    for (int p : partition_)
      if (p < 1) throw std::invalid_argument("Region: partition counts must be >= 1");
  }

  std::size_t dim() const { return box_.size(); }
  const IntervalVector& box() const { return box_; }
  const std::vector<int>& partition() const { return partition_; }

  std::size_t num_cells() const {
    std::size_t count = 1;
    for (int p : partition_) count *= static_cast<std::size_t>(p);
    return count;
  }

  std::vector<int> multi_index(std::size_t index) const {
    std::vector<int> out(dim());
    for (std::size_t k = 0; k < dim(); ++k) {
      out[k] = static_cast<int>(index % static_cast<std::size_t>(partition_[k]));
      index /= static_cast<std::size_t>(partition_[k]);
    }
    return out;
  }

  double edge(std::size_t coord, int k) const {
    const Interval& iv = box_[coord];
    const int count = partition_[coord];
    if (k <= 0) return iv.lo();
    if (k >= count) return iv.hi();
    return iv.lo() + iv.width() * (static_cast<double>(k) / static_cast<double>(count));
  }

  IntervalVector cell(std::size_t index) const {
    if (index >= num_cells()) throw std::out_of_range("Region::cell: index out of range");
    const auto mi = multi_index(index);
    IntervalVector out;
    out.reserve(dim());
    for (std::size_t k = 0; k < dim(); ++k) out.emplace_back(edge(k, mi[k]), edge(k, mi[k] + 1));
    return out;
  }

  /// Index of a cell containing x (the lowest one when x lies on a face).
  std::size_t locate(const Vector& x) const {
    std::size_t index = 0;
    std::size_t stride = 1;
    for (std::size_t k = 0; k < dim(); ++k) {
      int j = 0;
      while (j + 1 < partition_[k] && x(static_cast<Eigen::Index>(k)) > edge(k, j + 1)) ++j;
      index += stride * static_cast<std::size_t>(j);
      stride *= static_cast<std::size_t>(partition_[k]);
    }
    return index;
  }

  bool contains(const Vector& x) const {
    for (std::size_t k = 0; k < dim(); ++k)
      if (!box_[k].contains(x(static_cast<Eigen::Index>(k)))) return false;
    return true;
  }

  /// Box radii scaled by factor about the box center; same partition.
  Region scaled(double factor) const {
    IntervalVector out;
    out.reserve(dim());
    for (const auto& iv : box_) {
      const double c = iv.center();
      const double r = factor * iv.radius();
      out.emplace_back(c - r, c + r);
    }
    return {std::move(out), partition_};
  }

  Region with_partition(std::vector<int> partition) const { return {box_, std::move(partition)}; }

 private:
  IntervalVector box_;
  std::vector<int> partition_;
};

// ---------------------------------------------------------------------------
// Graph builders

struct MlpVars {
  std::vector<std::pair<Tape::Var, Tape::Var>> layers;  // (weight, bias)
};

struct MlpHull {
  Tape::Var output;
  Tape::Var jacobian;
  bool has_jacobian = false;
};

inline MlpVars mlp_leaves(Tape& tape, const MlpParams& net, bool trainable) {
  MlpVars out;
  for (const auto& l : net.layers) {
    if (trainable) {
      out.layers.emplace_back(tape.parameter(l.weight), tape.parameter(l.bias));
    } else {
      out.layers.emplace_back(tape.constant(l.weight), tape.constant(Matrix(l.bias)));
    }
  }
  return out;
}

/// Layerwise interval propagation. The Jacobian hull is the interval chain
/// W_L diag(sigmoid[z_{L-1}]) ... diag(sigmoid[z_1]) W_1 formed right to left
/// from the pre-activation hulls.
inline MlpHull mlp_hull(Tape& tape, const MlpVars& net, Tape::Var input, bool want_jacobian) {
  std::vector<Tape::Var> pre;
  Tape::Var h = input;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& [w, b] = net.layers[k];
    Tape::Var z = tape.add(tape.matmul(w, h), b);
    if (k + 1 < net.layers.size()) {
      pre.push_back(z);
      h = tape.softplus(z);
    } else {
      h = z;
    }
  }
  MlpHull out{h, h, false};
  if (want_jacobian) {
    Tape::Var acc = net.layers.front().first;
    for (std::size_t k = 0; k + 1 < net.layers.size(); ++k) {
      acc = tape.scale_rows(tape.sigmoid(pre[k]), acc);
      acc = tape.matmul(net.layers[k + 1].first, acc);
    }
    out.jacobian = acc;
    out.has_jacobian = true;
  }
  return out;
}

/// G = Theta^T [ dTheta + Theta (J + c I) ], bracket summed before the
/// left multiplication.
inline Tape::Var compose_g(Tape& tape, Tape::Var theta, Tape::Var dtheta, Tape::Var jac, double c) {
  const Tape::Var inner = tape.add(dtheta, tape.matmul(theta, tape.add_scaled_identity(jac, c)));
  return tape.matmul(tape.transpose(theta), inner);
}

/// S = M J + J^T M + dTheta^T Theta + Theta^T dTheta + 2c M, M = Theta^T Theta.
inline Tape::Var compose_s(Tape& tape, Tape::Var theta, Tape::Var dtheta, Tape::Var jac, double c) {
  const Tape::Var theta_t = tape.transpose(theta);
  const Tape::Var m = tape.matmul(theta_t, theta);
  Tape::Var s = tape.add(tape.matmul(m, jac), tape.matmul(tape.transpose(jac), m));
  s = tape.add(s, tape.matmul(tape.transpose(dtheta), theta));
  s = tape.add(s, tape.matmul(theta_t, dtheta));
  return tape.add(s, tape.scale(m, 2.0 * c));
}

inline IntervalMatrix g_form_hull(const IntervalMatrix& theta, const IntervalMatrix& dtheta, const IntervalMatrix& jac,
                                  double c) {
  Tape tape;
  return tape.value(compose_g(tape, tape.constant(theta), tape.constant(dtheta), tape.constant(jac), c));
}

inline IntervalMatrix s_form_hull(const IntervalMatrix& theta, const IntervalMatrix& dtheta, const IntervalMatrix& jac,
                                  double c) {
  Tape tape;
  return tape.value(compose_s(tape, tape.constant(theta), tape.constant(dtheta), tape.constant(jac), c));
}

/// Per-cell graph of G and M.  When trainable, `parameters` holds one leaf
/// per parameter block in parameter_layout() order.
struct CellGraph {
  Tape tape;
  std::vector<Tape::Var> parameters;
  Tape::Var g;
  Tape::Var m;
  Tape::Var f_pi;
  Tape::Var theta;
};

inline CellGraph build_cell_graph(const ContractionProblem& p, const IntervalVector& cell, bool trainable) {
  const ControlAffineSystem& sys = *p.system;
  const Eigen::Index n = sys.state_dim();
  if (static_cast<Eigen::Index>(cell.size()) != n) throw std::invalid_argument("build_cell_graph: cell dimension");

  CellGraph cg;
  Tape& t = cg.tape;
  auto leaf = [&](const Matrix& m) {
    Tape::Var v = trainable ? t.parameter(m) : t.constant(m);
    cg.parameters.push_back(v);
    return v;
  };
  auto mlp = [&](const MlpParams& net) {
    MlpVars vars;
    for (const auto& l : net.layers) {
      const Tape::Var w = leaf(l.weight);
      const Tape::Var b = leaf(Matrix(l.bias));
      vars.layers.emplace_back(w, b);
    }
    return vars;
  };
  // Leaf creation order must match parameter_layout().
  const Tape::Var gain = leaf(p.policy.gain);
  const MlpVars policy_res = mlp(p.policy.residual);
  const Tape::Var warm = leaf(p.metric.warm_start);
  const MlpVars metric_res = mlp(p.metric.residual);

  const Tape::Var x = t.constant(cell);

  // Policy hull and policy Jacobian hull.
  const MlpHull pol = mlp_hull(t, policy_res, x, true);
  const Tape::Var dx = t.sub(x, t.constant(Matrix(p.policy.x_eq)));
  const Tape::Var pi = t.add(t.add(t.matmul(gain, dx), t.constant(Matrix(p.policy.u_eq))), pol.output);
  const Tape::Var pi_jac = t.add(gain, pol.jacobian);

  // Closed loop f_pi = f_d + B pi, df_pi/dx = df_d/dx + B dpi/dx with B exact.
  const Tape::Var bmat = t.constant(sys.input_matrix());
  cg.f_pi = t.add(t.constant(sys.drift(cell)), t.matmul(bmat, pi));
  const Tape::Var jac = t.add(t.constant(sys.drift_jacobian(cell)), t.matmul(bmat, pi_jac));

  // Metric factor and its directional derivative along f_pi.
  const Tape::Var proj = t.constant(p.metric.projection);
  const MlpHull met = mlp_hull(t, metric_res, t.matmul(proj, x), true);
  cg.theta = t.add(warm, t.unpack_upper(met.output, n));
  const Tape::Var dtheta = t.unpack_upper(t.matmul(met.jacobian, t.matmul(proj, cg.f_pi)), n);

  cg.g = compose_g(t, cg.theta, dtheta, jac, p.c);
  cg.m = t.matmul(t.transpose(cg.theta), cg.theta);
  return cg;
}

// ---------------------------------------------------------------------------
// Hull operations

inline IntervalVector hull_mlp_output(const MlpParams& net, const IntervalVector& cell) {
  if (static_cast<Eigen::Index>(cell.size()) != net.input_dim()) throw std::invalid_argument("hull_mlp_output: dimension");
  Tape t;
  const MlpHull h = mlp_hull(t, mlp_leaves(t, net, false), t.constant(cell), false);
  return t.value(h.output).column(0);
}

inline IntervalMatrix hull_mlp_jacobian(const MlpParams& net, const IntervalVector& cell) {
  if (static_cast<Eigen::Index>(cell.size()) != net.input_dim()) {
    throw std::invalid_argument("hull_mlp_jacobian: dimension");
  }
  Tape t;
  const MlpHull h = mlp_hull(t, mlp_leaves(t, net, false), t.constant(cell), true);
  return t.value(h.jacobian);
}

/// Hull of sum_i dTheta/dx_i(x) v_i over x in cell, v in v_hull: the hull of
/// the residual Jacobian is formed first and then contracted with P v_hull.
inline IntervalMatrix hull_directional_derivative(const MetricNet& metric, const IntervalVector& cell,
                                                  const IntervalVector& v_hull) {
  const Eigen::Index n = metric.state_dim();
  if (static_cast<Eigen::Index>(cell.size()) != n || static_cast<Eigen::Index>(v_hull.size()) != n) {
    throw std::invalid_argument("hull_directional_derivative: dimension");
  }
  Tape t;
  const Tape::Var proj = t.constant(metric.projection);
  const MlpHull h = mlp_hull(t, mlp_leaves(t, metric.residual, false), t.matmul(proj, t.constant(cell)), true);
  return t.value(t.unpack_upper(t.matmul(h.jacobian, t.matmul(proj, t.constant(v_hull))), n));
}

namespace detail {
inline void require_finite(const IntervalMatrix& m, const char* what) {
  if (!m.finite()) throw PropagationError(std::string(what) + ": non-finite hull");
}
}  // namespace detail

inline IntervalMatrix hull_G(const ContractionProblem& p, const IntervalVector& cell) {
  CellGraph cg = build_cell_graph(p, cell, false);
  IntervalMatrix g = cg.tape.value(cg.g);
  detail::require_finite(g, "hull_G");
  return g;
}

inline IntervalMatrix hull_M(const MetricNet& metric, const IntervalVector& cell) {
  const Eigen::Index n = metric.state_dim();
  if (static_cast<Eigen::Index>(cell.size()) != n) throw std::invalid_argument("hull_M: dimension");
  Tape t;
  const Tape::Var proj = t.constant(metric.projection);
  const MlpHull h = mlp_hull(t, mlp_leaves(t, metric.residual, false), t.matmul(proj, t.constant(cell)), false);
  const Tape::Var theta = t.add(t.constant(metric.warm_start), t.unpack_upper(h.output, n));
  IntervalMatrix m = t.value(t.matmul(t.transpose(theta), theta));
  detail::require_finite(m, "hull_M");
  return m;
}

struct CellFailure {
  std::size_t cell = 0;
  std::string message;
};

struct HullReport {
  IntervalMatrix g_hull;
  IntervalMatrix m_hull;
  std::vector<IntervalMatrix> cell_g;
  std::vector<IntervalMatrix> cell_m;
  std::vector<CellFailure> failures;
  std::string propagator = kPropagatorIbp;

  bool ok() const { return failures.empty(); }
};

/// Per-cell hulls computed independently, then reduced in cell order.
inline HullReport hull_over_region(const ContractionProblem& p, const Region& region, int threads = 1) {
  if (region.dim() != static_cast<std::size_t>(p.state_dim())) {
    throw std::invalid_argument("hull_over_region: region dimension differs from the system");
  }
  const std::size_t cells = region.num_cells();
  HullReport report;
  report.cell_g.resize(cells);
  report.cell_m.resize(cells);
  std::vector<std::string> errors(cells);
  parallel_for(cells, threads, [&](std::size_t i) {
    try {
      CellGraph cg = build_cell_graph(p, region.cell(i), false);
      report.cell_g[i] = cg.tape.value(cg.g);
      report.cell_m[i] = cg.tape.value(cg.m);
      detail::require_finite(report.cell_g[i], "hull_G");
      detail::require_finite(report.cell_m[i], "hull_M");
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < cells; ++i) {
    if (!errors[i].empty()) {
      report.failures.push_back({i, errors[i]});
      continue;
    }
    if (report.g_hull.rows() == 0) {
      report.g_hull = report.cell_g[i];
      report.m_hull = report.cell_m[i];
    } else {
      report.g_hull = IntervalMatrix::hull(report.g_hull, report.cell_g[i]);
      report.m_hull = IntervalMatrix::hull(report.m_hull, report.cell_m[i]);
    }
  }
  return report;
}

}  // namespace ncc
