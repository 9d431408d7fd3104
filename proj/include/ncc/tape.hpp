#pragma once

// Reverse-mode differentiation through interval bound propagation.
//
// Every node holds an interval matrix [lo, hi].  Exact nodes (parameters and
// point constants) store only lo and carry a single gradient.  Each lower and
// upper bound produced by an operation is a piecewise-smooth function of the
// inputs; the backward pass follows the min/max selections taken in the
// forward pass, with ties resolved to the first candidate.

#include "ncc/interval.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ncc {

class Tape {
 public:
  struct Var {
    int id = -1;
  };

  Tape() { nodes_.reserve(64); }

  // Leaves ------------------------------------------------------------------

  Var parameter(const Matrix& value) { return push_exact(value, true); }
  Var constant(const Matrix& value) { return push_exact(value, false); }
  Var constant(const IntervalMatrix& value) {
    return push_interval(value.lower(), value.upper(), false, nullptr);
  }
  Var constant(const IntervalVector& value) { return constant(IntervalMatrix::from_vector(value)); }

  // Inspection --------------------------------------------------------------

  bool exact(Var v) const { return node(v).exact; }
  const Matrix& lo(Var v) const { return node(v).lo; }
  const Matrix& hi(Var v) const { return node(v).exact ? node(v).lo : node(v).hi; }
  Eigen::Index rows(Var v) const { return node(v).lo.rows(); }
  Eigen::Index cols(Var v) const { return node(v).lo.cols(); }
  IntervalMatrix value(Var v) const { return {lo(v), hi(v)}; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients ---------------------------------------------------------------

  /// Adds d(loss)/d(lo) and d(loss)/d(hi) of node v.
  void seed(Var v, const Matrix& dlo, const Matrix& dhi) { accumulate(v.id, dlo, dhi); }

  void backward() {
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.backward || n.glo.size() == 0) continue;
      n.backward(*this, id);
    }
  }

  /// Total gradient of an exact node (zero matrix if nothing reached it).
  Matrix grad(Var v) const {
    const Node& n = node(v);
    if (!n.exact) throw std::logic_error("Tape::grad: node is not exact");
    if (n.glo.size() == 0) return Matrix::Zero(n.lo.rows(), n.lo.cols());
    return n.glo;
  }

  // Operations --------------------------------------------------------------

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    if (exact(a) && exact(b)) {
      return push_exact_op(lo(a) + lo(b), {a, b}, [a, b](Tape& t, int self) {
        t.accumulate_exact(a.id, t.g_lo(self));
        t.accumulate_exact(b.id, t.g_lo(self));
      });
    }
    return push_op(lo(a) + lo(b), hi(a) + hi(b), {a, b}, [a, b](Tape& t, int self) {
      t.accumulate(a.id, t.g_lo(self), t.g_hi(self));
      t.accumulate(b.id, t.g_lo(self), t.g_hi(self));
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    if (exact(a) && exact(b)) {
      return push_exact_op(lo(a) - lo(b), {a, b}, [a, b](Tape& t, int self) {
        t.accumulate_exact(a.id, t.g_lo(self));
        t.accumulate_exact(b.id, -t.g_lo(self));
      });
    }
    return push_op(lo(a) - hi(b), hi(a) - lo(b), {a, b}, [a, b](Tape& t, int self) {
      t.accumulate(a.id, t.g_lo(self), t.g_hi(self));
      t.accumulate(b.id, -t.g_hi(self), -t.g_lo(self));
    });
  }

  /// X + c I
  Var add_scaled_identity(Var x, double c) {
    if (rows(x) != cols(x)) throw std::invalid_argument("add_scaled_identity: not square");
    const Matrix shift = c * Matrix::Identity(rows(x), cols(x));
    if (exact(x)) {
      return push_exact_op(lo(x) + shift, {x}, [x](Tape& t, int self) { t.accumulate_exact(x.id, t.g_lo(self)); });
    }
    return push_op(lo(x) + shift, hi(x) + shift, {x},
                   [x](Tape& t, int self) { t.accumulate(x.id, t.g_lo(self), t.g_hi(self)); });
  }

  Var scale(Var x, double s) {
    if (exact(x)) {
      return push_exact_op(s * lo(x), {x}, [x, s](Tape& t, int self) { t.accumulate_exact(x.id, s * t.g_lo(self)); });
    }
    if (s >= 0.0) {
      return push_op(s * lo(x), s * hi(x), {x},
                     [x, s](Tape& t, int self) { t.accumulate(x.id, s * t.g_lo(self), s * t.g_hi(self)); });
    }
    return push_op(s * hi(x), s * lo(x), {x},
                   [x, s](Tape& t, int self) { t.accumulate(x.id, s * t.g_hi(self), s * t.g_lo(self)); });
  }

  Var transpose(Var x) {
    if (exact(x)) {
      return push_exact_op(lo(x).transpose(), {x},
                           [x](Tape& t, int self) { t.accumulate_exact(x.id, t.g_lo(self).transpose()); });
    }
    return push_op(lo(x).transpose(), hi(x).transpose(), {x}, [x](Tape& t, int self) {
      t.accumulate(x.id, t.g_lo(self).transpose(), t.g_hi(self).transpose());
    });
  }

  Var softplus(Var x) {
    return monotone(x, [](double v) { return ncc::softplus(v); }, [](double v) { return ncc::sigmoid(v); });
  }

  Var sigmoid(Var x) {
    return monotone(x, [](double v) { return ncc::sigmoid(v); }, [](double v) {
      const double s = ncc::sigmoid(v);
      return s * (1.0 - s);
    });
  }

  /// Column vector of length n(n+1)/2 -> upper-triangular n x n (row-major over i <= j).
  Var unpack_upper(Var v, Eigen::Index n) {
    if (cols(v) != 1 || rows(v) != n * (n + 1) / 2) throw std::invalid_argument("unpack_upper: wrong packed length");
    auto unpack = [n](const Matrix& p) {
      Matrix out = Matrix::Zero(n, n);
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) out(i, j) = p(k++, 0);
      return out;
    };
    auto pack = [n](const Matrix& m) {
      Matrix out(n * (n + 1) / 2, 1);
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) out(k++, 0) = m(i, j);
      return out;
    };
    if (exact(v)) {
      return push_exact_op(unpack(lo(v)), {v},
                           [v, pack](Tape& t, int self) { t.accumulate_exact(v.id, pack(t.g_lo(self))); });
    }
    return push_op(unpack(lo(v)), unpack(hi(v)), {v},
                   [v, pack](Tape& t, int self) { t.accumulate(v.id, pack(t.g_lo(self)), pack(t.g_hi(self))); });
  }

  /// Interval matrix product. Exact-times-interval products use the
  /// midpoint-radius form, which is tight entrywise; interval-times-interval
  /// products sum tight corner-product hulls term by term.
  Var matmul(Var a, Var b) {
    if (cols(a) != rows(b)) {
      throw std::invalid_argument("matmul: inner dimensions " + std::to_string(cols(a)) + " and " +
                                  std::to_string(rows(b)) + " disagree");
    }
    if (exact(a) && exact(b)) return matmul_exact(a, b);
    if (exact(a)) return matmul_exact_left(a, b);
    if (exact(b)) return matmul_exact_right(a, b);
    return matmul_corners(a, b);
  }

  /// out_ij = d_i * X_ij with d a column vector.
  Var scale_rows(Var d, Var x) {
    if (cols(d) != 1 || rows(d) != rows(x)) throw std::invalid_argument("scale_rows: shape mismatch");
    const Eigen::Index r = rows(x);
    const Eigen::Index c = cols(x);
    Matrix out_lo(r, c);
    Matrix out_hi(r, c);
    const Matrix& dl = lo(d);
    const Matrix& dh = hi(d);
    const Matrix& xl = lo(x);
    const Matrix& xh = hi(x);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) {
        const Corner cr = corner_product(dl(i, 0), dh(i, 0), xl(i, j), xh(i, j));
        out_lo(i, j) = cr.lo;
        out_hi(i, j) = cr.hi;
      }
    }
    return push_op(std::move(out_lo), std::move(out_hi), {d, x}, [d, x](Tape& t, int self) {
      const Eigen::Index r = t.rows(x);
      const Eigen::Index c = t.cols(x);
      Matrix gdl = Matrix::Zero(r, 1), gdh = Matrix::Zero(r, 1);
      Matrix gxl = Matrix::Zero(r, c), gxh = Matrix::Zero(r, c);
      const Matrix& dl = t.lo(d);
      const Matrix& dh = t.hi(d);
      const Matrix& xl = t.lo(x);
      const Matrix& xh = t.hi(x);
      const Matrix& gl = t.g_lo(self);
      const Matrix& gh = t.g_hi(self);
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) {
          const Corner cr = corner_product(dl(i, 0), dh(i, 0), xl(i, j), xh(i, j));
          route_corner(cr.arg_lo, gl(i, j), dl(i, 0), dh(i, 0), xl(i, j), xh(i, j), gdl(i, 0), gdh(i, 0), gxl(i, j),
                       gxh(i, j));
          route_corner(cr.arg_hi, gh(i, j), dl(i, 0), dh(i, 0), xl(i, j), xh(i, j), gdl(i, 0), gdh(i, 0), gxl(i, j),
                       gxh(i, j));
        }
      }
      t.accumulate(d.id, gdl, gdh);
      t.accumulate(x.id, gxl, gxh);
    });
  }

 private:
  using Backward = std::function<void(Tape&, int)>;

  struct Node {
    Matrix lo, hi;
    Matrix glo, ghi;
    bool exact = false;
    bool requires_grad = false;
    Backward backward;
  };

  struct Corner {
    double lo, hi;
    int arg_lo, arg_hi;  // 0: al*bl, 1: al*bh, 2: ah*bl, 3: ah*bh
  };

  static Corner corner_product(double al, double ah, double bl, double bh) {
    const double p[4] = {al * bl, al * bh, ah * bl, ah * bh};
    Corner c{p[0], p[0], 0, 0};
    for (int k = 1; k < 4; ++k) {
      if (p[k] < c.lo) {
        c.lo = p[k];
        c.arg_lo = k;
      }
      if (p[k] > c.hi) {
        c.hi = p[k];
        c.arg_hi = k;
      }
    }
    return c;
  }

  static void route_corner(int arg, double g, double al, double ah, double bl, double bh, double& gal, double& gah,
                           double& gbl, double& gbh) {
    if (g == 0.0) return;
    switch (arg) {
      case 0: gal += g * bl; gbl += g * al; break;
      case 1: gal += g * bh; gbh += g * al; break;
      case 2: gah += g * bl; gbl += g * ah; break;
      default: gah += g * bh; gbh += g * ah; break;
    }
  }

  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  void check_same(Var a, Var b, const char* op) const {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  bool any_requires_grad(std::initializer_list<Var> inputs) const {
    for (Var v : inputs)
      if (node(v).requires_grad) return true;
    return false;
  }

  Var push_exact(const Matrix& value, bool requires_grad) {
    Node n;
    n.lo = value;
    n.exact = true;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push_interval(Matrix lo, Matrix hi, bool requires_grad, Backward bw) {
    if (outward_rounding()) {
      for (Eigen::Index k = 0; k < lo.size(); ++k) {
        if (lo.data()[k] != hi.data()[k]) {
          lo.data()[k] = round_down(lo.data()[k]);
          hi.data()[k] = round_up(hi.data()[k]);
        }
      }
    }
    Node n;
    n.lo = std::move(lo);
    n.hi = std::move(hi);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push_op(Matrix lo, Matrix hi, std::initializer_list<Var> inputs, Backward bw) {
    return push_interval(std::move(lo), std::move(hi), any_requires_grad(inputs), std::move(bw));
  }

  Var push_exact_op(Matrix value, std::initializer_list<Var> inputs, Backward bw) {
    Node n;
    n.lo = std::move(value);
    n.exact = true;
    n.requires_grad = any_requires_grad(inputs);
    if (n.requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& g_lo(int id) const { return nodes_[static_cast<std::size_t>(id)].glo; }
  const Matrix& g_hi(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.exact ? n.glo : n.ghi;
  }

  void accumulate(int id, const Matrix& dlo, const Matrix& dhi) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.exact) {
      accumulate_exact(id, dlo + dhi);
      return;
    }
    if (n.glo.size() == 0) {
      n.glo = dlo;
      n.ghi = dhi;
    } else {
      n.glo += dlo;
      n.ghi += dhi;
    }
  }

  void accumulate_exact(int id, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.exact) {
      // An exact gradient reaching an interval node splits across both bounds.
      accumulate(id, 0.5 * g, 0.5 * g);
      return;
    }
    if (n.glo.size() == 0) {
      n.glo = g;
    } else {
      n.glo += g;
    }
  }

  template <class F, class DF>
  Var monotone(Var x, F f, DF df) {
    auto apply = [f](const Matrix& m) { return m.unaryExpr([f](double v) { return f(v); }).eval(); };
    if (exact(x)) {
      return push_exact_op(apply(lo(x)), {x}, [x, df](Tape& t, int self) {
        const Matrix d = t.lo(x).unaryExpr([df](double v) { return df(v); });
        t.accumulate_exact(x.id, t.g_lo(self).cwiseProduct(d));
      });
    }
    return push_op(apply(lo(x)), apply(hi(x)), {x}, [x, df](Tape& t, int self) {
      const Matrix dl = t.lo(x).unaryExpr([df](double v) { return df(v); });
      const Matrix dh = t.hi(x).unaryExpr([df](double v) { return df(v); });
      t.accumulate(x.id, t.g_lo(self).cwiseProduct(dl), t.g_hi(self).cwiseProduct(dh));
    });
  }

  Var matmul_exact(Var a, Var b) {
    return push_exact_op(lo(a) * lo(b), {a, b}, [a, b](Tape& t, int self) {
      const Matrix& g = t.g_lo(self);
      if (t.node(a).requires_grad) t.accumulate_exact(a.id, g * t.lo(b).transpose());
      if (t.node(b).requires_grad) t.accumulate_exact(b.id, t.lo(a).transpose() * g);
    });
  }

  // W exact, X interval: center W Xc, radius |W| Xr.
  Var matmul_exact_left(Var w, Var x) {
    const Matrix& wm = lo(w);
    const Matrix xc = 0.5 * (lo(x) + hi(x));
    const Matrix xr = 0.5 * (hi(x) - lo(x));
    const Matrix c = wm * xc;
    const Matrix r = wm.cwiseAbs() * xr;
    return push_op(c - r, c + r, {w, x}, [w, x](Tape& t, int self) {
      const Matrix& wm = t.lo(w);
      const Matrix gc = t.g_lo(self) + t.g_hi(self);
      const Matrix gr = t.g_hi(self) - t.g_lo(self);
      if (t.node(w).requires_grad) {
        const Matrix xc = 0.5 * (t.lo(x) + t.hi(x));
        const Matrix xr = 0.5 * (t.hi(x) - t.lo(x));
        const Matrix sign = wm.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
        t.accumulate_exact(w.id, gc * xc.transpose() + sign.cwiseProduct(gr * xr.transpose()));
      }
      if (t.node(x).requires_grad) {
        const Matrix gxc = wm.transpose() * gc;
        const Matrix gxr = wm.cwiseAbs().transpose() * gr;
        t.accumulate(x.id, 0.5 * (gxc - gxr), 0.5 * (gxc + gxr));
      }
    });
  }

  // X interval, W exact: center Xc W, radius Xr |W|.
  Var matmul_exact_right(Var x, Var w) {
    const Matrix& wm = lo(w);
    const Matrix xc = 0.5 * (lo(x) + hi(x));
    const Matrix xr = 0.5 * (hi(x) - lo(x));
    const Matrix c = xc * wm;
    const Matrix r = xr * wm.cwiseAbs();
    return push_op(c - r, c + r, {x, w}, [x, w](Tape& t, int self) {
      const Matrix& wm = t.lo(w);
      const Matrix gc = t.g_lo(self) + t.g_hi(self);
      const Matrix gr = t.g_hi(self) - t.g_lo(self);
      if (t.node(w).requires_grad) {
        const Matrix xc = 0.5 * (t.lo(x) + t.hi(x));
        const Matrix xr = 0.5 * (t.hi(x) - t.lo(x));
        const Matrix sign = wm.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
        t.accumulate_exact(w.id, xc.transpose() * gc + sign.cwiseProduct(xr.transpose() * gr));
      }
      if (t.node(x).requires_grad) {
        const Matrix gxc = gc * wm.transpose();
        const Matrix gxr = gr * wm.cwiseAbs().transpose();
        t.accumulate(x.id, 0.5 * (gxc - gxr), 0.5 * (gxc + gxr));
      }
    });
  }

  Var matmul_corners(Var a, Var b) {
    const Eigen::Index m = rows(a);
    const Eigen::Index k = cols(a);
    const Eigen::Index n = cols(b);
    const Matrix& al = lo(a);
    const Matrix& ah = hi(a);
    const Matrix& bl = lo(b);
    const Matrix& bh = hi(b);
    Matrix out_lo = Matrix::Zero(m, n);
    Matrix out_hi = Matrix::Zero(m, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        double lo_acc = 0.0;
        double hi_acc = 0.0;
        for (Eigen::Index p = 0; p < k; ++p) {
          const Corner c = corner_product(al(i, p), ah(i, p), bl(p, j), bh(p, j));
          lo_acc += c.lo;
          hi_acc += c.hi;
        }
        out_lo(i, j) = lo_acc;
        out_hi(i, j) = hi_acc;
      }
    }
    return push_op(std::move(out_lo), std::move(out_hi), {a, b}, [a, b](Tape& t, int self) {
      const Eigen::Index m = t.rows(a);
      const Eigen::Index k = t.cols(a);
      const Eigen::Index n = t.cols(b);
      const Matrix& al = t.lo(a);
      const Matrix& ah = t.hi(a);
      const Matrix& bl = t.lo(b);
      const Matrix& bh = t.hi(b);
      const Matrix& gl = t.g_lo(self);
      const Matrix& gh = t.g_hi(self);
      Matrix gal = Matrix::Zero(m, k), gah = Matrix::Zero(m, k);
      Matrix gbl = Matrix::Zero(k, n), gbh = Matrix::Zero(k, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
          if (gl(i, j) == 0.0 && gh(i, j) == 0.0) continue;
          for (Eigen::Index p = 0; p < k; ++p) {
            const Corner c = corner_product(al(i, p), ah(i, p), bl(p, j), bh(p, j));
            route_corner(c.arg_lo, gl(i, j), al(i, p), ah(i, p), bl(p, j), bh(p, j), gal(i, p), gah(i, p), gbl(p, j),
                         gbh(p, j));
            route_corner(c.arg_hi, gh(i, j), al(i, p), ah(i, p), bl(p, j), bh(p, j), gal(i, p), gah(i, p), gbl(p, j),
                         gbh(p, j));
          }
        }
      }
      t.accumulate(a.id, gal, gah);
      t.accumulate(b.id, gbl, gbh);
    });
  }

  std::vector<Node> nodes_;
};

}  // namespace ncc
