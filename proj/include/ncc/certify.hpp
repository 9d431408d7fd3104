#pragma once

// Exact spectral bounds over interval matrices by corner checks, the
// pointwise contraction oracles, and the region certificate.

#include "ncc/boundprop.hpp"
#include "ncc/interval.hpp"
#include "ncc/linalg.hpp"
#include "ncc/parallel.hpp"
#include "ncc/problem.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

inline constexpr int kMaxCornerDim = 24;

// ---------------------------------------------------------------------------
// Corner checks
//
// diag(s) X diag(s) is invariant under s -> -s, so only signs with s_0 = +1
// are visited.  Canonical index k encodes s by bit i-1 of k set <=> s_i = -1
// (i >= 1).  Values are stored by index, and ties go to the lowest index.

enum class CornerBound { kMaxEig, kMinEig };

struct CornerCheckResult {
  double value = -std::numeric_limits<double>::infinity();  // max mu2, or the min/max eigenvalue bound
  std::uint64_t argmax_index = 0;
  std::vector<int> argmax_sign;  // entries +-1
  std::vector<double> values;    // one per canonical sign index
  Vector eigenvector;            // unit eigenvector of the extremal corner
  CornerBound bound = CornerBound::kMaxEig;

  double max_mu2() const { return value; }
};

inline std::vector<int> sign_from_index(std::uint64_t k, Eigen::Index n) {
  std::vector<int> s(static_cast<std::size_t>(n), 1);
  for (Eigen::Index i = 1; i < n; ++i)
    if ((k >> (i - 1)) & 1U) s[static_cast<std::size_t>(i)] = -1;
  return s;
}

/// A^c + diag(s) A^Delta diag(s), a member of [A].
inline Matrix corner_matrix(const IntervalMatrix& a, const std::vector<int>& s) {
  Matrix out = a.center();
  const Matrix r = a.radius();
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += s[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(j)] * r(i, j);
  return out;
}

namespace detail {

inline void check_corner_input(const IntervalMatrix& a, const char* who) {
  if (a.rows() != a.cols()) throw std::invalid_argument(std::string(who) + ": matrix is not square");
  if (a.rows() == 0) throw std::invalid_argument(std::string(who) + ": empty matrix");
  if (a.rows() > kMaxCornerDim) {
    throw std::invalid_argument(std::string(who) + ": dimension " + std::to_string(a.rows()) +
                                " exceeds the corner-check budget of " + std::to_string(kMaxCornerDim));
  }
  if (!a.finite()) throw std::invalid_argument(std::string(who) + ": non-finite bounds");
}

// kMaxEig: max_s lambda_max(C + D R D).  kMinEig: min_s lambda_min(C - D R D).
inline CornerCheckResult corner_search(const IntervalMatrix& a, CornerBound bound, int threads) {
  const Eigen::Index n = a.rows();
  const Matrix center = sym(a.center());
  const Matrix radius = sym(a.radius());
  const double sgn = bound == CornerBound::kMaxEig ? 1.0 : -1.0;
  const std::uint64_t count = std::uint64_t{1} << (n - 1);

  CornerCheckResult out;
  out.bound = bound;
  out.values.resize(static_cast<std::size_t>(count));

  // Chunks walk their index range in Gray-code order, flipping one sign of
  // D R D per step.  The Gray map is a bijection on each aligned block.
  constexpr std::uint64_t kChunk = 64;
  const std::uint64_t chunks = (count + kChunk - 1) / kChunk;
  parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
    const std::uint64_t begin = static_cast<std::uint64_t>(c) * kChunk;
    const std::uint64_t end = std::min(count, begin + kChunk);
    const std::uint64_t span = end - begin;
    Matrix drd;
    std::uint64_t prev = 0;
    for (std::uint64_t t = 0; t < span; ++t) {
      const std::uint64_t local = t ^ (t >> 1);
      const std::uint64_t k = begin + local;
      if (t == 0) {
        const auto s = sign_from_index(k, n);
        drd = radius;
        for (Eigen::Index j = 0; j < n; ++j)
          for (Eigen::Index i = 0; i < n; ++i) drd(i, j) *= s[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(j)];
      } else {
        const std::uint64_t flipped = local ^ prev;
        Eigen::Index bit = 0;
        while (((flipped >> bit) & 1U) == 0) ++bit;
        const Eigen::Index i = bit + 1;
        drd.row(i) *= -1.0;
        drd.col(i) *= -1.0;
      }
      prev = local;
      const Vector ev = sym_eigvals(center + sgn * drd);
      out.values[static_cast<std::size_t>(k)] = bound == CornerBound::kMaxEig ? ev(n - 1) : ev(0);
    }
  });

  std::uint64_t best = 0;
  for (std::uint64_t k = 1; k < count; ++k) {
    const double v = out.values[static_cast<std::size_t>(k)];
    const double b = out.values[static_cast<std::size_t>(best)];
    if (bound == CornerBound::kMaxEig ? v > b : v < b) best = k;
  }
  out.argmax_index = best;
  out.argmax_sign = sign_from_index(best, n);
  out.value = out.values[static_cast<std::size_t>(best)];

  Matrix corner = radius;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      corner(i, j) *= sgn * out.argmax_sign[static_cast<std::size_t>(i)] * out.argmax_sign[static_cast<std::size_t>(j)];
  const SymEig eig = sym_eig(center + corner);
  out.eigenvector = bound == CornerBound::kMaxEig ? Vector(eig.vectors.col(n - 1)) : Vector(eig.vectors.col(0));
  return out;
}

}  // namespace detail

/// max over A in [A] of mu2(A).
inline CornerCheckResult rohn_max_mu2(const IntervalMatrix& a, int threads = 1) {
  detail::check_corner_input(a, "rohn_max_mu2");
  return detail::corner_search(a, CornerBound::kMaxEig, threads);
}

/// min over M in [M] of lambda_min(sym(M)), with the extremal corner.
inline CornerCheckResult rohn_min_eig_detail(const IntervalMatrix& m, int threads = 1) {
  detail::check_corner_input(m, "rohn_min_eig");
  return detail::corner_search(m, CornerBound::kMinEig, threads);
}

/// max over M in [M] of lambda_max(sym(M)), with the extremal corner.
inline CornerCheckResult rohn_max_eig_detail(const IntervalMatrix& m, int threads = 1) {
  detail::check_corner_input(m, "rohn_max_eig");
  return detail::corner_search(m, CornerBound::kMaxEig, threads);
}

inline double rohn_min_eig(const IntervalMatrix& m, int threads = 1) { return rohn_min_eig_detail(m, threads).value; }
inline double rohn_max_eig(const IntervalMatrix& m, int threads = 1) { return rohn_max_eig_detail(m, threads).value; }

/// Gradient of a corner-check value with respect to the lower and upper
/// bound matrices of the interval matrix it was computed from.
struct BoundGradient {
  Matrix dlo;
  Matrix dhi;
};

inline BoundGradient corner_gradient(const CornerCheckResult& r) {
  const Vector& v = r.eigenvector;
  Vector sv = v;
  for (Eigen::Index i = 0; i < v.size(); ++i) sv(i) *= r.argmax_sign[static_cast<std::size_t>(i)];
  const Matrix gc = v * v.transpose();
  Matrix gr = sv * sv.transpose();
  if (r.bound == CornerBound::kMinEig) gr = -gr;
  // center = (lo + hi) / 2, radius = (hi - lo) / 2
  return {0.5 * (gc - gr), 0.5 * (gc + gr)};
}

// ---------------------------------------------------------------------------
// Pointwise oracles

struct PointwiseTerms {
  Matrix theta;
  Matrix dtheta;   // directional derivative of Theta along f_pi
  Matrix jacobian; // closed-loop Jacobian
  Vector f_pi;
};

inline Vector closed_loop(const ContractionProblem& p, const Vector& x) {
  return p.system->drift(x) + p.system->input_matrix() * p.policy(x);
}

inline Matrix closed_loop_jacobian(const ContractionProblem& p, const Vector& x) {
  return p.system->drift_jacobian(x) + p.system->input_matrix() * p.policy.jacobian(x);
}

inline PointwiseTerms pointwise_terms(const ContractionProblem& p, const Vector& x) {
  PointwiseTerms t;
  t.f_pi = closed_loop(p, x);
  t.jacobian = closed_loop_jacobian(p, x);
  t.theta = p.metric.theta(x);
  t.dtheta = p.metric.directional_derivative(x, t.f_pi);
  return t;
}

inline Matrix pointwise_G(const ContractionProblem& p, const Vector& x) {
  const PointwiseTerms t = pointwise_terms(p, x);
  const Eigen::Index n = t.theta.rows();
  return t.theta.transpose() * (t.dtheta + t.theta * (t.jacobian + p.c * Matrix::Identity(n, n)));
}

inline Matrix pointwise_S(const ContractionProblem& p, const Vector& x) {
  const PointwiseTerms t = pointwise_terms(p, x);
  const Matrix m = t.theta.transpose() * t.theta;
  const Matrix dm = t.dtheta.transpose() * t.theta + t.theta.transpose() * t.dtheta;
  return m * t.jacobian + t.jacobian.transpose() * m + dm + 2.0 * p.c * m;
}

// ---------------------------------------------------------------------------
// Prior-work comparison

struct MetzlerVerdict {
  double max_eigenvalue = 0.0;
  bool certified = false;
};

/// Builds the symmetric matrix B with B_ii = sup sym(A)_ii and
/// B_ij = sup |sym(A)_ij| over the hull, which dominates the Metzler
/// majorant of sym(A) for every A in [A].  Certifies when B has no positive
/// eigenvalue.
inline MetzlerVerdict metzler_majorant_check(const IntervalMatrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("metzler_majorant_check: matrix is not square");
  const Matrix lo = sym(a.lower());
  const Matrix hi = sym(a.upper());
  const Eigen::Index n = a.rows();
  Matrix b(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) b(i, j) = i == j ? hi(i, i) : std::max(std::abs(lo(i, j)), std::abs(hi(i, j)));
  MetzlerVerdict out;
  out.max_eigenvalue = spectral_abscissa(b);
  out.certified = out.max_eigenvalue <= 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Certificates

struct Certificate {
  std::string problem_hash;
  Region region;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  std::vector<double> cell_lambda;
  double max_lambda = -std::numeric_limits<double>::infinity();
  double a_hat = 0.0;
  double b_hat = 0.0;
  bool certified = false;
  std::string cause;
  std::string propagator = kPropagatorIbp;
  std::string timestamp;
  std::uint64_t seed = 0;

  bool consistent_verdict() const {
    if (cell_lambda.empty()) return !certified;
    bool ok = a_hat >= a && b_hat <= b;
    for (double l : cell_lambda) ok = ok && l <= 0.0;
    return ok == certified;
  }
};

inline Certificate certify_region(const ContractionProblem& p, const Region& region, int threads = 1) {
  Certificate cert;
  cert.region = region;
  cert.a = p.a;
  cert.b = p.b;
  cert.c = p.c;

  const HullReport hulls = hull_over_region(p, region, threads);
  if (!hulls.ok()) {
    cert.cause = "propagation failure in cell " + std::to_string(hulls.failures.front().cell) + ": " +
                 hulls.failures.front().message;
    return cert;
  }
  const std::size_t cells = region.num_cells();
  cert.cell_lambda.resize(cells);
  parallel_for(cells, threads, [&](std::size_t i) { cert.cell_lambda[i] = rohn_max_mu2(hulls.cell_g[i]).value; });
  cert.a_hat = rohn_min_eig(hulls.m_hull);
  cert.b_hat = rohn_max_eig(hulls.m_hull);

  std::size_t worst = 0;
  for (std::size_t i = 0; i < cells; ++i)
    if (cert.cell_lambda[i] > cert.cell_lambda[worst]) worst = i;
  cert.max_lambda = cert.cell_lambda[worst];

  if (cert.max_lambda > 0.0) {
    cert.cause = "cell " + std::to_string(worst) + " has positive lambda " + std::to_string(cert.max_lambda);
  } else if (cert.a_hat < p.a) {
    cert.cause = "metric lower bound " + std::to_string(cert.a_hat) + " below a";
  } else if (cert.b_hat > p.b) {
    cert.cause = "metric upper bound " + std::to_string(cert.b_hat) + " above b";
  } else {
    cert.certified = true;
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Sampling falsifier.  A positive value disproves contraction; a negative one
// proves nothing.

struct FalsifyResult {
  double worst = -std::numeric_limits<double>::infinity();
  Vector argmax;
  std::size_t samples = 0;
  bool violated() const { return worst > 0.0; }
};

inline std::vector<Vector> sample_region(const Region& region, std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> out(samples, Vector(static_cast<Eigen::Index>(region.dim())));
  for (auto& x : out) {
    for (std::size_t k = 0; k < region.dim(); ++k) {
      const Interval& iv = region.box()[k];
      x(static_cast<Eigen::Index>(k)) = std::uniform_real_distribution<double>(iv.lo(), iv.hi())(rng);
    }
  }
  return out;
}

inline FalsifyResult falsify_by_sampling(const ContractionProblem& p, const Region& region, std::size_t samples,
                                         std::uint64_t seed = 0, int threads = 1) {
  FalsifyResult out;
  out.samples = samples;
  if (samples == 0) return out;
  const auto xs = sample_region(region, samples, seed);
  std::vector<double> values(samples);
  parallel_for(samples, threads, [&](std::size_t i) { values[i] = mu2(pointwise_G(p, xs[i])); });
  std::size_t best = 0;
  for (std::size_t i = 1; i < samples; ++i)
    if (values[i] > values[best]) best = i;
  out.worst = values[best];
  out.argmax = xs[best];
  return out;
}

}  // namespace ncc
