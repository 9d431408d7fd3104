#pragma once

// Dense symmetric eigensolver, Cholesky factor, logarithmic norm and a
// continuous-time algebraic Riccati solver for the LQR warm start.

#include "ncc/interval.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

struct NotPositiveDefinite : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConvergenceFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Matrix sym(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
struct SymEig {
  Vector values;
  Matrix vectors;  // column k pairs with values(k)
};

namespace detail {

constexpr int kMaxJacobiDim = 64;
constexpr int kMaxJacobiSweeps = 64;

inline void check_eig_input(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("sym_eig: matrix is not square");
  if (a.rows() > kMaxJacobiDim) throw std::invalid_argument("sym_eig: dimension exceeds 64");
  if (!a.allFinite()) throw std::invalid_argument("sym_eig: non-finite entries");
}

// Cyclic Jacobi on a (symmetric, overwritten).  When v is non-null it
// accumulates the rotations.
inline void jacobi_sweeps(Matrix& a, Matrix* v) {
  const Eigen::Index n = a.rows();
  constexpr double tol = 1e-12;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < kMaxJacobiSweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol) return;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Negligible relative to both diagonal entries: drop it.
        if (std::abs(apq) <= 0.5 * eps * std::abs(app) && std::abs(apq) <= 0.5 * eps * std::abs(aqq)) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        if (v != nullptr) {
          for (Eigen::Index k = 0; k < n; ++k) {
            const double vkp = (*v)(k, p);
            const double vkq = (*v)(k, q);
            (*v)(k, p) = c * vkp - s * vkq;
            (*v)(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }
  throw ConvergenceFailure("sym_eig: Jacobi iteration did not converge");
}

}  // namespace detail

/// Symmetric eigendecomposition by cyclic Jacobi rotations. The input is
/// symmetrized first. Eigenvectors are sign-normalized so that their first
/// nonzero component is positive, which makes the output deterministic.
inline SymEig sym_eig(const Matrix& input) {
  detail::check_eig_input(input);
  const Eigen::Index n = input.rows();
  Matrix a = sym(input);
  Matrix v = Matrix::Identity(n, n);
  detail::jacobi_sweeps(a, &v);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });

  SymEig out{Vector(n), Matrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.values(k) = a(src, src);
    Vector col = v.col(src);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (col(i) != 0.0) {
        if (col(i) < 0.0) col = -col;
        break;
      }
    }
    out.vectors.col(k) = col;
  }
  return out;
}

/// Eigenvalues only, ascending. Cheaper than sym_eig.
inline Vector sym_eigvals(const Matrix& input) {
  detail::check_eig_input(input);
  Matrix a = sym(input);
  detail::jacobi_sweeps(a, nullptr);
  Vector values = a.diagonal();
  std::sort(values.data(), values.data() + values.size());
  return values;
}

/// l2 logarithmic norm: largest eigenvalue of the symmetric part.
inline double mu2(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("mu2: matrix is not square");
  if (a.rows() == 0) return -std::numeric_limits<double>::infinity();
  const Vector ev = sym_eigvals(a);
  return ev(ev.size() - 1);
}

/// Upper-triangular U with U^T U = S.
inline Matrix cholesky_upper(const Matrix& s) {
  if (s.rows() != s.cols()) throw std::invalid_argument("cholesky_upper: matrix is not square");
  const Eigen::Index n = s.rows();
  Matrix u = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = s(i, i);
    for (Eigen::Index k = 0; k < i; ++k) d -= u(k, i) * u(k, i);
    if (!(d > 0.0)) {
      throw NotPositiveDefinite("cholesky_upper: non-positive pivot " + std::to_string(d) + " at index " +
                                std::to_string(i));
    }
    u(i, i) = std::sqrt(d);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double acc = s(i, j);
      for (Eigen::Index k = 0; k < i; ++k) acc -= u(k, i) * u(k, j);
      u(i, j) = acc / u(i, i);
    }
  }
  return u;
}

/// Largest real part of the spectrum of a general square matrix.
inline double spectral_abscissa(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("spectral_abscissa: matrix is not square");
  if (a.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().real().maxCoeff();
}

struct CareOptions {
  double derivative_tolerance = 1e-10;  // stop when ||dS/dt||_F falls below this
  double max_time = 1e6;
  int max_steps = 2'000'000;
};

struct CareSolution {
  Matrix gain;      // K = R^{-1} B^T S
  Matrix solution;  // S
  double residual = 0.0;
  int steps = 0;
};

inline Matrix care_residual(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r, const Matrix& s) {
  const Matrix rinv_bt = r.llt().solve(b.transpose());
  return a.transpose() * s + s * a - s * b * rinv_bt * s + q;
}

/// Solves A^T S + S A - S B R^{-1} B^T S + Q = 0 by integrating the
/// differential Riccati equation from S = Q to steady state.
inline CareSolution solve_care(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                               const CareOptions& options = {}) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != b.cols() ||
      r.cols() != b.cols()) {
    throw std::invalid_argument("solve_care: inconsistent dimensions");
  }
  Eigen::LLT<Matrix> r_llt(r);
  if (r_llt.info() != Eigen::Success) throw NotPositiveDefinite("solve_care: R is not positive definite");
  const Matrix b_rinv_bt = b * r_llt.solve(b.transpose());

  using State = std::vector<double>;
  const auto nn = static_cast<std::size_t>(n * n);
  auto rhs = [&](const State& x, State& dxdt, double /*t*/) {
    Eigen::Map<const Matrix> s(x.data(), n, n);
    Eigen::Map<Matrix> ds(dxdt.data(), n, n);
    ds = a.transpose() * s + s * a - s * b_rinv_bt * s + q;
    ds = 0.5 * (ds + ds.transpose()).eval();
  };

  namespace odeint = boost::numeric::odeint;
  auto stepper = odeint::make_controlled(1e-13, 1e-13, odeint::runge_kutta_dopri5<State>());
  State x(q.data(), q.data() + nn);
  State dxdt(nn);
  double t = 0.0;
  double dt = 1e-3;
  int steps = 0;
  for (; steps < options.max_steps && t < options.max_time; ++steps) {
    rhs(x, dxdt, t);
    double norm = 0.0;
    for (double d : dxdt) norm += d * d;
    if (std::sqrt(norm) <= options.derivative_tolerance) break;
    // try_step adapts dt on rejection and grows it on success
    while (stepper.try_step(rhs, x, t, dt) == odeint::fail) {
    }
  }
  if (steps >= options.max_steps || t >= options.max_time) {
    throw ConvergenceFailure("solve_care: differential Riccati equation did not reach steady state");
  }

  CareSolution out;
  out.solution = sym(Eigen::Map<const Matrix>(x.data(), n, n));
  out.gain = r_llt.solve(b.transpose() * out.solution);
  out.residual = care_residual(a, b, q, r, out.solution).norm();
  out.steps = steps;
  return out;
}

}  // namespace ncc
