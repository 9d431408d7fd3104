#pragma once

// Tracking controller u = pi(x) - pi(x_ref) + u_ref, flatness-based
// references, fixed-step closed-loop simulation, and tube radii.

#include "ncc/boundprop.hpp"
#include "ncc/nets.hpp"
#include "ncc/parallel.hpp"
#include "ncc/problem.hpp"
#include "ncc/systems.hpp"

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace ncc {

struct InfeasibleReference : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Controller

/// Counts policy evaluations; tracking_control performs exactly two.
struct InferenceCounter {
  std::atomic<std::size_t> count{0};
};

inline Vector tracking_control(const PolicyNet& pi, const Vector& x, const Vector& x_ref, const Vector& u_ref,
                               InferenceCounter* counter = nullptr) {
  if (x.size() != x_ref.size() || u_ref.size() != pi.input_dim()) {
    throw std::invalid_argument("tracking_control: dimension mismatch");
  }
  if (counter != nullptr) counter->count += 2;
  return pi(x) - pi(x_ref) + u_ref;
}

// ---------------------------------------------------------------------------
// Flat output curves.  Each coordinate is
//   c0 + c1 t + c2 t^2 + sum_k amp_k sin(freq_k t + phase_k)
// so derivatives of any order are closed form.

struct Harmonic {
  double amp = 0.0;
  double freq = 0.0;
  double phase = 0.0;
};

struct CurveCoord {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  std::vector<Harmonic> terms;

  double eval(double t, int order) const {
    double v = 0.0;
    switch (order) {
      case 0: v = c0 + c1 * t + c2 * t * t; break;
      case 1: v = c1 + 2.0 * c2 * t; break;
      case 2: v = 2.0 * c2; break;
      default: break;
    }
    for (const auto& h : terms) {
      v += h.amp * std::pow(h.freq, order) * std::sin(h.freq * t + h.phase + 0.5 * std::numbers::pi * order);
    }
    return v;
  }
};

struct ShapeParams {
  double amplitude = 1.0;      // m
  double omega = 0.5;          // rad/s
  double climb_rate = 0.5;     // m/s, helix only
  double yaw_amplitude = 0.0;  // rad
  std::vector<double> center;  // flat-output offset; empty: equilibrium
};

inline std::vector<std::string> reference_shapes(const std::string& system) {
  if (system == "quadrotor10") return {"hover", "figure_eight", "helix", "trefoil", "free_fall"};
  return {"hover", "sine"};
}

struct ReferenceTrajectory {
  std::string shape;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  double feasibility_residual = 0.0;  // max |x'_dot - f_ol(x', u')|
};

namespace detail {

// Fourth-order central difference.
template <class F>
auto central_diff4(F&& f, double t, double h) {
  // Explicit result type: an Eigen expression here would outlive its operands.
  using R = std::decay_t<decltype(f(t))>;
  return R((f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h));
}

struct QuadAttitude {
  double tau, phi, theta;
};

inline QuadAttitude invert_acceleration(double ax, double ay, double az, double g) {
  const double tau = std::sqrt(ax * ax + ay * ay + (g - az) * (g - az));
  if (!(tau > 1e-6 * g)) throw InfeasibleReference("thrust vanishes (free-fall singularity)");
  const double s = -ax / tau;
  if (std::abs(s) >= 1.0) throw InfeasibleReference("pitch reaches +-pi/2");
  const double theta = std::asin(s);
  const double ct = std::cos(theta);
  const double phi = std::atan2(ay / (tau * ct), (g - az) / (tau * ct));
  if (std::abs(phi) >= 0.5 * std::numbers::pi) throw InfeasibleReference("roll reaches +-pi/2");
  return {tau, phi, theta};
}

inline std::vector<CurveCoord> quad_shape(const std::string& shape, const ShapeParams& sp) {
  std::vector<CurveCoord> c(4);  // x, y, z, psi
  const double a = sp.amplitude;
  const double w = sp.omega;
  if (shape == "hover") {
  } else if (shape == "figure_eight") {
    c[0].terms = {{a, w, 0.0}};
    c[1].terms = {{0.5 * a, 2.0 * w, 0.0}};
  } else if (shape == "helix") {
    c[0].terms = {{a, w, 0.5 * std::numbers::pi}};
    c[0].c0 = -a;
    c[1].terms = {{a, w, 0.0}};
    c[2].c1 = -sp.climb_rate;  // NED: climbing is negative z
  } else if (shape == "trefoil") {
    c[0].terms = {{a, w, 0.0}, {2.0 * a, 2.0 * w, 0.0}};
    c[1].terms = {{a, w, 0.5 * std::numbers::pi}, {-2.0 * a, 2.0 * w, 0.5 * std::numbers::pi}};
    c[1].c0 = a;  // start at y = 0: a cos 0 - 2a cos 0 + a = 0
    c[2].terms = {{-a, 3.0 * w, 0.0}};
  } else if (shape == "free_fall") {
    c[2].c2 = 0.5 * kGravity;
  } else {
    throw std::invalid_argument("unknown reference shape '" + shape + "'");
  }
  if (sp.yaw_amplitude != 0.0 && shape != "hover") c[3].terms = {{sp.yaw_amplitude, w, 0.0}};
  return c;
}

}  // namespace detail

/// Samples a reference on [0, duration] with step dt.  The quadrotor uses
/// flatness in (p, psi); the planar and scalar systems use their first state
/// as flat output.
inline ReferenceTrajectory flat_reference(const ControlAffineSystem& sys, const std::string& shape,
                                          const ShapeParams& sp, double duration, double dt) {
  if (!(dt > 0.0) || !(duration >= 0.0)) throw std::invalid_argument("flat_reference: need dt > 0, duration >= 0");
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  const auto steps = static_cast<std::size_t>(std::llround(duration / dt));

  std::function<Vector(double)> state_at;
  std::function<Vector(double)> input_at;

  if (sys.name() == "quadrotor10") {
    const auto& quad = dynamic_cast<const Quadrotor&>(sys);
    const double g = quad.gravity();
    const auto curve = detail::quad_shape(shape, sp);
    Vector offset = Vector::Zero(3);
    if (!sp.center.empty()) {
      if (sp.center.size() != 3) throw std::invalid_argument("flat_reference: quadrotor center needs 3 entries");
      for (int k = 0; k < 3; ++k) offset(k) = sp.center[static_cast<std::size_t>(k)];
    }
    // [tau, phi, theta, psi] as a function of time.
    auto attitude = [curve, g](double t) {
      const auto att = detail::invert_acceleration(curve[0].eval(t, 2), curve[1].eval(t, 2), curve[2].eval(t, 2), g);
      Vector out(4);
      out << att.tau, att.phi, att.theta, curve[3].eval(t, 0);
      return out;
    };
    state_at = [curve, offset, attitude](double t) {
      Vector x(10);
      for (int k = 0; k < 3; ++k) {
        x(k) = offset(k) + curve[static_cast<std::size_t>(k)].eval(t, 0);
        x(3 + k) = curve[static_cast<std::size_t>(k)].eval(t, 1);
      }
      x.tail(4) = attitude(t);
      return x;
    };
    input_at = [attitude, dt](double t) -> Vector { return detail::central_diff4(attitude, t, dt); };
  } else if (n == 1 || (n == 2 && sys.input_matrix()(0, 0) == 0.0 && sys.input_matrix()(1, 0) != 0.0)) {
    if (shape != "hover" && shape != "sine") throw std::invalid_argument("unknown reference shape '" + shape + "'");
    CurveCoord y;
    y.c0 = sp.center.empty() ? sys.x_eq()(0) : sp.center.front();
    if (shape == "sine") y.terms = {{sp.amplitude, sp.omega, 0.0}};
    const Matrix bmat = sys.input_matrix();
    const ControlAffineSystem* s = &sys;
    state_at = [y, n](double t) {
      Vector x(n);
      x(0) = y.eval(t, 0);
      if (n == 2) x(1) = y.eval(t, 1);
      return x;
    };
    // Solve B u = x_dot - f_d(x) on the actuated row.
    input_at = [y, n, bmat, s, state_at](double t) {
      const Vector x = state_at(t);
      Vector xdot(n);
      xdot(0) = y.eval(t, 1);
      if (n == 2) xdot(1) = y.eval(t, 2);
      const Vector r = xdot - s->drift(x);
      Vector u(1);
      u(0) = r(n - 1) / bmat(n - 1, 0);
      return u;
    };
  } else {
    throw std::invalid_argument("flat_reference: no flat parameterization for system '" + sys.name() + "'");
  }

  ReferenceTrajectory ref;
  ref.shape = shape;
  ref.dt = dt;
  ref.times.reserve(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    ref.times.push_back(t);
    ref.states.push_back(state_at(t));
    ref.inputs.push_back(input_at(t));
    if (ref.inputs.back().size() != m) throw std::logic_error("flat_reference: input dimension");
  }
  // Feasibility: x'_dot by central differences of the sampled curve.
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = ref.times[k];
    const Vector xdot = detail::central_diff4(state_at, t, dt);
    const double res = (xdot - sys.open_loop(ref.states[k], ref.inputs[k])).cwiseAbs().maxCoeff();
    ref.feasibility_residual = std::max(ref.feasibility_residual, res);
  }
  return ref;
}

// ---------------------------------------------------------------------------
// Reference interpolation

class ReferenceInterpolant {
 public:
  explicit ReferenceInterpolant(const ReferenceTrajectory& ref) : ref_(&ref) {
    if (ref.times.size() < 2) return;  // constant reference
    const std::size_t n = static_cast<std::size_t>(ref.states.front().size());
    const std::size_t m = static_cast<std::size_t>(ref.inputs.front().size());
    auto build = [&](const std::vector<Vector>& series, std::size_t k) {
      std::vector<double> v(series.size());
      for (std::size_t i = 0; i < series.size(); ++i) v[i] = series[i](static_cast<Eigen::Index>(k));
      if (v.size() < 5) return Spline(v.begin(), v.end(), ref.times.front(), ref.dt);
      // Fourth-order one-sided end slopes; the library default is much cruder.
      const std::size_t e = v.size() - 1;
      const double h = 12.0 * ref.dt;
      const double left = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / h;
      const double right = (25.0 * v[e] - 48.0 * v[e - 1] + 36.0 * v[e - 2] - 16.0 * v[e - 3] + 3.0 * v[e - 4]) / h;
      return Spline(v.begin(), v.end(), ref.times.front(), ref.dt, left, right);
    };
    for (std::size_t k = 0; k < n; ++k) x_.push_back(build(ref.states, k));
    for (std::size_t k = 0; k < m; ++k) u_.push_back(build(ref.inputs, k));
  }

  double end_time() const { return ref_->times.back(); }

  Vector state(double t) const { return eval(x_, ref_->states, t); }
  Vector input(double t) const { return eval(u_, ref_->inputs, t); }

 private:
  using Spline = boost::math::interpolators::cardinal_cubic_b_spline<double>;

  Vector eval(const std::vector<Spline>& s, const std::vector<Vector>& samples, double t) const {
    if (s.empty()) return samples.front();
    t = std::clamp(t, ref_->times.front(), ref_->times.back());
    Vector out(static_cast<Eigen::Index>(s.size()));
    for (std::size_t k = 0; k < s.size(); ++k) out(static_cast<Eigen::Index>(k)) = s[k](t);
    return out;
  }

  const ReferenceTrajectory* ref_;
  std::vector<Spline> x_;
  std::vector<Spline> u_;
};

// ---------------------------------------------------------------------------
// Simulation

struct Trajectory {
  std::vector<Vector> states;
  std::vector<double> dhat;  // |Theta(x_ref)(x - x_ref)|
  bool truncated = false;    // diverged (norm > 1e6)
  double fitted_rate = std::numeric_limits<double>::quiet_NaN();
};

struct SimulationResult {
  std::vector<double> times;
  std::vector<Vector> reference;
  std::vector<Trajectory> trajectories;
  std::size_t policy_inferences = 0;
};

/// Least-squares slope of log d(t) over t <= window, skipping points where
/// d has collapsed to round-off relative to d(0).
inline double fit_decay_rate(const std::vector<double>& times, const std::vector<double>& d, double window) {
  if (d.empty() || !(d.front() > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double floor = 1e-12 * d.front();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < d.size() && i < times.size(); ++i) {
    if (times[i] > window) break;
    if (!(d[i] > floor)) break;
    const double y = std::log(d[i]);
    sx += times[i];
    sy += y;
    sxx += times[i] * times[i];
    sxy += times[i] * y;
    ++cnt;
  }
  if (cnt < 2) return std::numeric_limits<double>::quiet_NaN();
  const double c = static_cast<double>(cnt);
  const double den = c * sxx - sx * sx;
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (c * sxy - sx * sy) / den;
}

struct SimulationOptions {
  double dt = 1e-3;
  double duration = -1.0;     // <0: reference length
  double fit_window = -1.0;   // <0: min(duration, 5 / c)
  double divergence_norm = 1e6;
  int threads = 1;
};

inline SimulationResult simulate(const ContractionProblem& p, const ReferenceTrajectory& ref,
                                 const std::vector<Vector>& initial, const SimulationOptions& opt = {}) {
  if (!(opt.dt > 0.0)) throw std::invalid_argument("simulate: dt must be positive");
  const ReferenceInterpolant interp(ref);
  const double duration = opt.duration < 0.0 ? interp.end_time() : opt.duration;
  const auto steps = static_cast<std::size_t>(std::llround(duration / opt.dt));
  double window = opt.fit_window;
  if (window < 0.0) window = p.c > 0.0 ? std::min(duration, 5.0 / p.c) : duration;

  SimulationResult out;
  out.times.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) out.times[k] = static_cast<double>(k) * opt.dt;
  out.reference.resize(steps + 1);
  std::vector<Matrix> theta_ref(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    out.reference[k] = interp.state(out.times[k]);
    theta_ref[k] = p.metric.theta(out.reference[k]);
  }

  InferenceCounter counter;
  const ControlAffineSystem& sys = *p.system;
  auto rhs = [&](double t, const Vector& x) {
    const Vector u = tracking_control(p.policy, x, interp.state(t), interp.input(t), &counter);
    return sys.open_loop(x, u);
  };

  out.trajectories.resize(initial.size());
  parallel_for(initial.size(), opt.threads, [&](std::size_t i) {
    Trajectory& tr = out.trajectories[i];
    Vector x = initial[i];
    if (x.size() != sys.state_dim()) throw std::invalid_argument("simulate: initial condition dimension");
    tr.states.reserve(steps + 1);
    tr.dhat.reserve(steps + 1);
    for (std::size_t k = 0;; ++k) {
      tr.states.push_back(x);
      tr.dhat.push_back((theta_ref[k] * (x - out.reference[k])).norm());
      if (k == steps) break;
      const double t = out.times[k];
      const double h = opt.dt;
      const Vector k1 = rhs(t, x);
      const Vector k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
      const Vector k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
      const Vector k4 = rhs(t + h, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite() || x.norm() > opt.divergence_norm) {
        tr.truncated = true;
        break;
      }
    }
    tr.fitted_rate = fit_decay_rate(out.times, tr.dhat, window);
  });
  out.policy_inferences = counter.count.load();
  return out;
}

// ---------------------------------------------------------------------------
// Tube radii

struct TubeReport {
  bool ok = false;
  double max_radius = 0.0;       // largest R_bar with the l2 ball inside int X at every sample
  double geodesic_radius = 0.0;  // sqrt(a) R_bar
  double initial_radius = 0.0;   // sqrt(a / b) R_bar
  std::optional<double> first_violation;  // first time the reference is outside int X
};

inline TubeReport ball_tube_check(const Region& region, const ReferenceTrajectory& ref, double radius, double a,
                                  double b) {
  TubeReport out;
  double rbar = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < ref.states.size(); ++k) {
    const Vector& x = ref.states[k];
    if (static_cast<std::size_t>(x.size()) != region.dim()) throw std::invalid_argument("ball_tube_check: dimension");
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < region.dim(); ++i) {
      const Interval& iv = region.box()[i];
      const double xi = x(static_cast<Eigen::Index>(i));
      d = std::min({d, xi - iv.lo(), iv.hi() - xi});
    }
    if (!(d > 0.0) && !out.first_violation) out.first_violation = ref.times[k];
    rbar = std::min(rbar, d);
  }
  out.max_radius = std::max(rbar, 0.0);
  out.geodesic_radius = std::sqrt(a) * out.max_radius;
  out.initial_radius = std::sqrt(a / b) * out.max_radius;
  out.ok = !out.first_violation && radius < rbar;
  return out;
}

}  // namespace ncc
