#pragma once

// Control-affine dynamics x' = f_d(x) + B u with exact and interval-extended
// drift and drift Jacobian.  Every system in the zoo has a constant B.

#include "ncc/interval.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

inline constexpr double kGravity = 9.81;

class ControlAffineSystem {
 public:
  virtual ~ControlAffineSystem() = default;

  virtual std::string name() const = 0;
  Eigen::Index state_dim() const { return input_matrix_.rows(); }
  Eigen::Index input_dim() const { return input_matrix_.cols(); }

  virtual Vector drift(const Vector& x) const = 0;
  virtual Matrix drift_jacobian(const Vector& x) const = 0;
  virtual IntervalVector drift(const IntervalVector& box) const = 0;
  virtual IntervalMatrix drift_jacobian(const IntervalVector& box) const = 0;

  const Matrix& input_matrix() const { return input_matrix_; }
  const Vector& x_eq() const { return x_eq_; }
  const Vector& u_eq() const { return u_eq_; }

  Vector open_loop(const Vector& x, const Vector& u) const { return drift(x) + input_matrix_ * u; }

 protected:
  ControlAffineSystem(Matrix b, Vector x_eq, Vector u_eq)
      : input_matrix_(std::move(b)), x_eq_(std::move(x_eq)), u_eq_(std::move(u_eq)) {}

 private:
  Matrix input_matrix_;
  Vector x_eq_;
  Vector u_eq_;
};

namespace detail {

// Shared plumbing: Derived supplies templated drift_impl / jacobian_impl that
// work for both double and Interval scalars.
template <class Derived>
class SystemBase : public ControlAffineSystem {
 public:
  using ControlAffineSystem::ControlAffineSystem;

  Vector drift(const Vector& x) const override {
    check(x.size());
    std::vector<double> in(x.data(), x.data() + x.size());
    const auto out = self().template drift_impl<double>(std::span<const double>(in));
    return Eigen::Map<const Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
  }

  Matrix drift_jacobian(const Vector& x) const override {
    check(x.size());
    std::vector<double> in(x.data(), x.data() + x.size());
    const auto out = self().template jacobian_impl<double>(std::span<const double>(in));
    const Eigen::Index n = state_dim();
    Matrix j(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c) j(r, c) = out[static_cast<std::size_t>(r * n + c)];
    return j;
  }

  IntervalVector drift(const IntervalVector& box) const override {
    check(static_cast<Eigen::Index>(box.size()));
    return self().template drift_impl<Interval>(std::span<const Interval>(box));
  }

  IntervalMatrix drift_jacobian(const IntervalVector& box) const override {
    check(static_cast<Eigen::Index>(box.size()));
    const auto out = self().template jacobian_impl<Interval>(std::span<const Interval>(box));
    const Eigen::Index n = state_dim();
    IntervalMatrix j(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c) j.set(r, c, out[static_cast<std::size_t>(r * n + c)]);
    return j;
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
  void check(Eigen::Index got) const {
    if (got != state_dim()) {
      throw std::invalid_argument(name() + ": state has dimension " + std::to_string(got) + ", expected " +
                                  std::to_string(state_dim()));
    }
  }
};

}  // namespace detail

/// x' = -x + u
class ScalarLinear final : public detail::SystemBase<ScalarLinear> {
 public:
  ScalarLinear() : SystemBase(Matrix::Ones(1, 1), Vector::Zero(1), Vector::Zero(1)) {}
  std::string name() const override { return "scalar_linear"; }

  template <class T>
  std::vector<T> drift_impl(std::span<const T> x) const {
    return {T(0.0) - x[0]};
  }
  template <class T>
  std::vector<T> jacobian_impl(std::span<const T>) const {
    return {T(-1.0)};
  }
};

/// Inverted Duffing oscillator, open-loop unstable at the origin:
///   x1' = x2
///   x2' = x1 - x1^3 + u
class PlanarNonlinear final : public detail::SystemBase<PlanarNonlinear> {
 public:
  PlanarNonlinear()
      : SystemBase((Matrix(2, 1) << 0.0, 1.0).finished(), Vector::Zero(2), Vector::Zero(1)) {}
  std::string name() const override { return "planar_nonlinear"; }

  template <class T>
  std::vector<T> drift_impl(std::span<const T> x) const {
    using ncc::cube;
    return {x[1], x[0] - cube(x[0])};
  }
  template <class T>
  std::vector<T> jacobian_impl(std::span<const T> x) const {
    return {T(0.0), T(1.0), T(1.0) - T(3.0) * sqr(x[0]), T(0.0)};
  }
};

/// 10-state quadrotor, NED, state [p(3), v(3), tau, phi, theta, psi],
/// input [tau', phi', theta', psi'].  Yaw never enters the translational
/// dynamics, so its Jacobian column is identically zero.
class Quadrotor final : public detail::SystemBase<Quadrotor> {
 public:
  enum Index : int { kPx, kPy, kPz, kVx, kVy, kVz, kTau, kPhi, kTheta, kPsi };

  explicit Quadrotor(double gravity = kGravity)
      : SystemBase(input_map(), hover_state(gravity), Vector::Zero(4)), gravity_(gravity) {}
  std::string name() const override { return "quadrotor10"; }
  double gravity() const { return gravity_; }

  static Vector hover_state(double gravity = kGravity) {
    Vector x = Vector::Zero(10);
    x(kTau) = gravity;
    return x;
  }

  /// Translational acceleration.
  template <class T>
  std::vector<T> acceleration(std::span<const T> x) const {
    using std::cos;
    using std::sin;
    const T& tau = x[kTau];
    const T s_phi = sin(x[kPhi]);
    const T c_phi = cos(x[kPhi]);
    const T s_th = sin(x[kTheta]);
    const T c_th = cos(x[kTheta]);
    return {T(0.0) - tau * s_th, tau * c_th * s_phi, T(gravity_) - tau * c_th * c_phi};
  }

  template <class T>
  std::vector<T> drift_impl(std::span<const T> x) const {
    const auto a = acceleration(x);
    return {x[kVx], x[kVy], x[kVz], a[0], a[1], a[2], T(0.0), T(0.0), T(0.0), T(0.0)};
  }

  template <class T>
  std::vector<T> jacobian_impl(std::span<const T> x) const {
    using std::cos;
    using std::sin;
    std::vector<T> j(100, T(0.0));
    auto at = [&j](int r, int c) -> T& { return j[static_cast<std::size_t>(r * 10 + c)]; };
    at(kPx, kVx) = T(1.0);
    at(kPy, kVy) = T(1.0);
    at(kPz, kVz) = T(1.0);
    const T& tau = x[kTau];
    const T s_phi = sin(x[kPhi]);
    const T c_phi = cos(x[kPhi]);
    const T s_th = sin(x[kTheta]);
    const T c_th = cos(x[kTheta]);
    // a_x = -tau sin(theta)
    at(kVx, kTau) = T(0.0) - s_th;
    at(kVx, kTheta) = T(0.0) - tau * c_th;
    // a_y = tau cos(theta) sin(phi)
    at(kVy, kTau) = c_th * s_phi;
    at(kVy, kPhi) = tau * c_th * c_phi;
    at(kVy, kTheta) = T(0.0) - tau * s_th * s_phi;
    // a_z = g - tau cos(theta) cos(phi)
    at(kVz, kTau) = T(0.0) - c_th * c_phi;
    at(kVz, kPhi) = tau * c_th * s_phi;
    at(kVz, kTheta) = tau * s_th * c_phi;
    return j;
  }

 private:
  static Matrix input_map() {
    Matrix b = Matrix::Zero(10, 4);
    b.bottomRows(4).setIdentity();
    return b;
  }

  double gravity_;
};

inline Vector quad_dynamics(const Quadrotor& quad, const Vector& x, const Vector& u) { return quad.open_loop(x, u); }

inline std::vector<std::string> benchmark_names() { return {"scalar_linear", "planar_nonlinear", "quadrotor10"}; }

inline std::shared_ptr<const ControlAffineSystem> benchmark_system(const std::string& name) {
  if (name == "scalar_linear") return std::make_shared<ScalarLinear>();
  if (name == "planar_nonlinear") return std::make_shared<PlanarNonlinear>();
  if (name == "quadrotor10") return std::make_shared<Quadrotor>();
  throw std::invalid_argument("unknown system '" + name + "'");
}

}  // namespace ncc
