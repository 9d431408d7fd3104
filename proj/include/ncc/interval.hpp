#pragma once

// Closed real intervals and entrywise interval matrices.
//
// Arithmetic is round-to-nearest by default, so enclosures are exact in real
// arithmetic but may miss the true range by a few ulps in floating point.
// set_outward_rounding(true) widens every interval result by one ulp per side.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ncc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {
inline std::atomic<bool>& outward_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace detail

inline void set_outward_rounding(bool on) { detail::outward_flag().store(on); }
inline bool outward_rounding() { return detail::outward_flag().load(std::memory_order_relaxed); }

inline double round_down(double v) {
  return outward_rounding() ? std::nextafter(v, -std::numeric_limits<double>::infinity()) : v;
}
inline double round_up(double v) {
  return outward_rounding() ? std::nextafter(v, std::numeric_limits<double>::infinity()) : v;
}

class Interval {
 public:
  constexpr Interval() = default;
  // Implicit on purpose: templated dynamics mix doubles and intervals freely.
  constexpr Interval(double v) : lo_(v), hi_(v) {}  // NOLINT
  // NaN bounds are let through; propagation reports them as non-finite.
  Interval(double lo, double hi) : lo_(lo), hi_(hi) {
    if (lo > hi) {
      throw std::invalid_argument("Interval: lower bound " + std::to_string(lo) +
                                  " exceeds upper bound " + std::to_string(hi));
    }
  }

  constexpr double lo() const { return lo_; }
  constexpr double hi() const { return hi_; }
  constexpr double center() const { return 0.5 * (lo_ + hi_); }
  constexpr double radius() const { return 0.5 * (hi_ - lo_); }
  constexpr double width() const { return hi_ - lo_; }
  constexpr bool degenerate() const { return lo_ == hi_; }
  constexpr bool contains(double v) const { return lo_ <= v && v <= hi_; }
  constexpr bool contains(const Interval& o) const { return lo_ <= o.lo_ && o.hi_ <= hi_; }
  bool finite() const { return std::isfinite(lo_) && std::isfinite(hi_); }

  static Interval hull(const Interval& a, const Interval& b) {
    return {std::min(a.lo_, b.lo_), std::max(a.hi_, b.hi_)};
  }

  Interval& operator+=(const Interval& o) { return *this = *this + o; }
  Interval& operator-=(const Interval& o) { return *this = *this - o; }
  Interval& operator*=(const Interval& o) { return *this = *this * o; }

  friend Interval operator+(const Interval& a, const Interval& b) {
    return widened(a.lo_ + b.lo_, a.hi_ + b.hi_);
  }
  friend Interval operator-(const Interval& a, const Interval& b) {
    return widened(a.lo_ - b.hi_, a.hi_ - b.lo_);
  }
  friend Interval operator-(const Interval& a) { return {-a.hi_, -a.lo_}; }
  friend Interval operator*(const Interval& a, const Interval& b) {
    if (a.degenerate() && b.degenerate()) return widened(a.lo_ * b.lo_, a.lo_ * b.lo_);
    const double p1 = a.lo_ * b.lo_;
    const double p2 = a.lo_ * b.hi_;
    const double p3 = a.hi_ * b.lo_;
    const double p4 = a.hi_ * b.hi_;
    return widened(std::min({p1, p2, p3, p4}), std::max({p1, p2, p3, p4}));
  }
  friend bool operator==(const Interval& a, const Interval& b) = default;

  friend std::ostream& operator<<(std::ostream& os, const Interval& x) {
    return os << '[' << x.lo_ << ", " << x.hi_ << ']';
  }

 private:
  static Interval widened(double lo, double hi) {
    Interval r;
    r.lo_ = lo;
    r.hi_ = hi;
    if (outward_rounding() && lo != hi) {
      r.lo_ = round_down(lo);
      r.hi_ = round_up(hi);
    }
    return r;
  }

  double lo_ = 0.0;
  double hi_ = 0.0;
};

using IntervalVector = std::vector<Interval>;

// ---------------------------------------------------------------------------
// Elementary functions.

namespace detail {

// Does [lo, hi] contain a point of the form phase + 2*pi*k?  A small guard
// band makes borderline cases resolve toward "contains", which only widens.
inline bool contains_periodic_point(double lo, double hi, double phase) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double guard = 4.0 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(lo), std::abs(hi)});
  const double k = std::ceil((lo - guard - phase) / two_pi);
  return phase + two_pi * k <= hi + guard;
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline double softplus(double x) { return detail::softplus(x); }
inline double sigmoid(double x) { return detail::sigmoid(x); }

inline Interval sin(const Interval& x) {
  if (x.degenerate()) return Interval(std::sin(x.lo()));
  if (x.width() >= 2.0 * std::numbers::pi) return {-1.0, 1.0};
  double lo = std::min(std::sin(x.lo()), std::sin(x.hi()));
  double hi = std::max(std::sin(x.lo()), std::sin(x.hi()));
  if (detail::contains_periodic_point(x.lo(), x.hi(), 0.5 * std::numbers::pi)) hi = 1.0;
  if (detail::contains_periodic_point(x.lo(), x.hi(), -0.5 * std::numbers::pi)) lo = -1.0;
  return {std::max(-1.0, round_down(lo)), std::min(1.0, round_up(hi))};
}

inline Interval cos(const Interval& x) {
  if (x.degenerate()) return Interval(std::cos(x.lo()));
  if (x.width() >= 2.0 * std::numbers::pi) return {-1.0, 1.0};
  double lo = std::min(std::cos(x.lo()), std::cos(x.hi()));
  double hi = std::max(std::cos(x.lo()), std::cos(x.hi()));
  if (detail::contains_periodic_point(x.lo(), x.hi(), 0.0)) hi = 1.0;
  if (detail::contains_periodic_point(x.lo(), x.hi(), std::numbers::pi)) lo = -1.0;
  return {std::max(-1.0, round_down(lo)), std::min(1.0, round_up(hi))};
}

inline double sqr(double x) { return x * x; }
inline double cube(double x) { return x * x * x; }

inline Interval sqr(const Interval& x) {
  if (x.degenerate()) return Interval(x.lo() * x.lo());
  const double a = x.lo() * x.lo();
  const double b = x.hi() * x.hi();
  const double lo = x.contains(0.0) ? 0.0 : std::min(a, b);
  return {std::max(0.0, round_down(lo)), round_up(std::max(a, b))};
}

// x^3 is monotone.
inline Interval cube(const Interval& x) {
  if (x.degenerate()) return Interval(x.lo() * x.lo() * x.lo());
  return {round_down(x.lo() * x.lo() * x.lo()), round_up(x.hi() * x.hi() * x.hi())};
}

inline Interval softplus(const Interval& x) {
  if (x.degenerate()) return Interval(detail::softplus(x.lo()));
  return {round_down(detail::softplus(x.lo())), round_up(detail::softplus(x.hi()))};
}

inline Interval sigmoid(const Interval& x) {
  if (x.degenerate()) return Interval(detail::sigmoid(x.lo()));
  return {round_down(detail::sigmoid(x.lo())), round_up(detail::sigmoid(x.hi()))};
}

// ---------------------------------------------------------------------------
// Interval matrices, stored as a pair of bound matrices.

class IntervalMatrix {
 public:
  IntervalMatrix() = default;
  IntervalMatrix(Eigen::Index rows, Eigen::Index cols)
      : lo_(Matrix::Zero(rows, cols)), hi_(Matrix::Zero(rows, cols)) {}
  explicit IntervalMatrix(const Matrix& point) : lo_(point), hi_(point) {}
  IntervalMatrix(Matrix lo, Matrix hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.rows() != hi_.rows() || lo_.cols() != hi_.cols()) {
      throw std::invalid_argument("IntervalMatrix: bound shapes differ");
    }
    for (Eigen::Index j = 0; j < lo_.cols(); ++j) {
      for (Eigen::Index i = 0; i < lo_.rows(); ++i) {
        if (lo_(i, j) > hi_(i, j)) {
          throw std::invalid_argument("IntervalMatrix: lower bound exceeds upper bound at (" +
                                      std::to_string(i) + ", " + std::to_string(j) + ")");
        }
      }
    }
  }

  static IntervalMatrix from_vector(const IntervalVector& v) {
    IntervalMatrix out(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) out.set(static_cast<Eigen::Index>(i), 0, v[i]);
    return out;
  }

  Eigen::Index rows() const { return lo_.rows(); }
  Eigen::Index cols() const { return lo_.cols(); }

  Interval operator()(Eigen::Index i, Eigen::Index j) const { return {lo_(i, j), hi_(i, j)}; }
  void set(Eigen::Index i, Eigen::Index j, const Interval& v) {
    lo_(i, j) = v.lo();
    hi_(i, j) = v.hi();
  }

  const Matrix& lower() const { return lo_; }
  const Matrix& upper() const { return hi_; }
  Matrix center() const { return 0.5 * (lo_ + hi_); }
  Matrix radius() const { return 0.5 * (hi_ - lo_); }

  bool contains(const Matrix& a, double tol = 0.0) const {
    if (a.rows() != rows() || a.cols() != cols()) return false;
    return ((lo_.array() - tol) <= a.array()).all() && (a.array() <= (hi_.array() + tol)).all();
  }
  bool contains(const IntervalMatrix& o) const {
    return o.rows() == rows() && o.cols() == cols() && (lo_.array() <= o.lo_.array()).all() &&
           (o.hi_.array() <= hi_.array()).all();
  }
  bool finite() const { return lo_.allFinite() && hi_.allFinite(); }
  double max_radius() const { return lo_.size() == 0 ? 0.0 : radius().maxCoeff(); }

  IntervalMatrix transpose() const { return {Matrix(lo_.transpose()), Matrix(hi_.transpose())}; }

  IntervalVector column(Eigen::Index j) const {
    IntervalVector out;
    out.reserve(static_cast<std::size_t>(rows()));
    for (Eigen::Index i = 0; i < rows(); ++i) out.push_back((*this)(i, j));
    return out;
  }

  // Entrywise union.
  static IntervalMatrix hull(const IntervalMatrix& a, const IntervalMatrix& b) {
    return {Matrix(a.lo_.cwiseMin(b.lo_)), Matrix(a.hi_.cwiseMax(b.hi_))};
  }

  friend IntervalMatrix operator+(const IntervalMatrix& a, const IntervalMatrix& b) {
    check_same_shape(a, b);
    return make_widened(a.lo_ + b.lo_, a.hi_ + b.hi_);
  }
  friend IntervalMatrix operator-(const IntervalMatrix& a, const IntervalMatrix& b) {
    check_same_shape(a, b);
    return make_widened(a.lo_ - b.hi_, a.hi_ - b.lo_);
  }

 private:
  static void check_same_shape(const IntervalMatrix& a, const IntervalMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw std::invalid_argument("IntervalMatrix: shape mismatch");
    }
  }
  static IntervalMatrix make_widened(Matrix lo, Matrix hi) {
    IntervalMatrix r;
    r.lo_ = std::move(lo);
    r.hi_ = std::move(hi);
    if (outward_rounding()) r.widen_one_ulp();
    return r;
  }
  void widen_one_ulp() {
    for (Eigen::Index k = 0; k < lo_.size(); ++k) {
      if (lo_.data()[k] != hi_.data()[k]) {
        lo_.data()[k] = round_down(lo_.data()[k]);
        hi_.data()[k] = round_up(hi_.data()[k]);
      }
    }
  }

  Matrix lo_;
  Matrix hi_;
};

// Entrywise interval dot products: each term is the tight product hull.
inline IntervalMatrix matmul(const IntervalMatrix& a, const IntervalMatrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                std::to_string(b.rows()) + " disagree");
  }
  IntervalMatrix out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      Interval acc(0.0);
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out.set(i, j, acc);
    }
  }
  return out;
}

inline IntervalMatrix scale(const IntervalMatrix& a, double s) {
  return s >= 0.0 ? IntervalMatrix(Matrix(s * a.lower()), Matrix(s * a.upper()))
                  : IntervalMatrix(Matrix(s * a.upper()), Matrix(s * a.lower()));
}

// Center and radius (A^c, A^Delta); A^c -/+ A^Delta reproduces the bounds.
inline std::pair<Matrix, Matrix> hull_center_radius(const IntervalMatrix& a) {
  return {a.center(), a.radius()};
}

}  // namespace ncc
