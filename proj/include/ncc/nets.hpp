#pragma once

// Softplus MLPs, the LQR-seeded policy and the factored metric network.

#include "ncc/interval.hpp"
#include "ncc/linalg.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Softplus on every hidden layer, identity on the output layer.
struct MlpParams {
  std::vector<Layer> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }
  std::size_t parameter_count() const {
    std::size_t count = 0;
    for (const auto& l : layers) count += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return count;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("MlpParams: no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.bias.size() != l.weight.rows()) {
        throw std::invalid_argument("MlpParams: layer " + std::to_string(k) + " bias length mismatch");
      }
      if (k > 0 && l.weight.cols() != layers[k - 1].weight.rows()) {
        throw std::invalid_argument("MlpParams: layer " + std::to_string(k) + " does not chain");
      }
      if (!l.weight.allFinite() || !l.bias.allFinite()) {
        throw std::invalid_argument("MlpParams: non-finite parameters in layer " + std::to_string(k));
      }
    }
  }
};

/// Residual MLP: hidden weights Glorot-normal, hidden biases zero, final
/// layer weights and bias exactly zero so the output and its Jacobian vanish
/// at initialization.
inline MlpParams make_residual_mlp(Eigen::Index input_dim, const std::vector<int>& hidden, Eigen::Index output_dim,
                                   std::mt19937_64& rng) {
  MlpParams net;
  Eigen::Index fan_in = input_dim;
  for (int width : hidden) {
    Layer l{Matrix::Zero(width, fan_in), Vector::Zero(width)};
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + width));
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = dist(rng);
    net.layers.push_back(std::move(l));
    fan_in = width;
  }
  net.layers.push_back(Layer{Matrix::Zero(output_dim, fan_in), Vector::Zero(output_dim)});
  return net;
}

namespace detail {
inline void check_input(const MlpParams& net, const Vector& x) {
  if (x.size() != net.input_dim()) {
    throw std::invalid_argument("mlp: input has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(net.input_dim()));
  }
}
}  // namespace detail

inline Vector forward(const MlpParams& net, const Vector& x) {
  detail::check_input(net, x);
  Vector h = x;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    Vector z = net.layers[k].weight * h + net.layers[k].bias;
    if (k + 1 < net.layers.size()) z = z.unaryExpr([](double v) { return softplus(v); });
    h = std::move(z);
  }
  return h;
}

/// Exact Jacobian W_L diag(sigmoid(z_{L-1})) ... W_1.
inline Matrix jacobian(const MlpParams& net, const Vector& x) {
  detail::check_input(net, x);
  Vector h = x;
  Matrix acc = Matrix::Identity(x.size(), x.size());
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Vector z = net.layers[k].weight * h + net.layers[k].bias;
    acc = net.layers[k].weight * acc;
    if (k + 1 < net.layers.size()) {
      acc = z.unaryExpr([](double v) { return sigmoid(v); }).asDiagonal() * acc;
      h = z.unaryExpr([](double v) { return softplus(v); });
    }
  }
  return acc;
}

/// Forward-mode derivative of the network output along direction v.
inline Vector jvp(const MlpParams& net, const Vector& x, const Vector& v) {
  detail::check_input(net, x);
  if (v.size() != x.size()) throw std::invalid_argument("mlp: tangent dimension mismatch");
  Vector h = x;
  Vector dh = v;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Vector z = net.layers[k].weight * h + net.layers[k].bias;
    const Vector dz = net.layers[k].weight * dh;
    if (k + 1 < net.layers.size()) {
      h = z.unaryExpr([](double s) { return softplus(s); });
      dh = z.unaryExpr([](double s) { return sigmoid(s); }).cwiseProduct(dz);
    } else {
      h = z;
      dh = dz;
    }
  }
  return dh;
}

// Upper-triangle packing, row-major over i <= j.
inline constexpr const char* kPackingOrder = "upper-row-major";

inline Eigen::Index packed_size(Eigen::Index n) { return n * (n + 1) / 2; }

inline Vector pack_upper(const Matrix& m) {
  const Eigen::Index n = m.rows();
  Vector out(packed_size(n));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) out(k++) = m(i, j);
  return out;
}

inline Matrix unpack_upper(const Vector& v, Eigen::Index n) {
  if (v.size() != packed_size(n)) throw std::invalid_argument("unpack_upper: wrong packed length");
  Matrix out = Matrix::Zero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) out(i, j) = v(k++);
  return out;
}

/// Rows span the left null space of a constant input matrix B, so P B = 0.
/// When B only touches some coordinates, P selects the untouched ones;
/// otherwise an orthonormal basis is taken from a full QR of B.
inline Matrix killing_projection(const Matrix& b) {
  const Eigen::Index n = b.rows();
  std::vector<Eigen::Index> free_rows;
  for (Eigen::Index i = 0; i < n; ++i)
    if (b.row(i).isZero(0.0)) free_rows.push_back(i);
  Eigen::FullPivHouseholderQR<Matrix> qr(b);
  const Eigen::Index rank = qr.rank();
  if (static_cast<Eigen::Index>(free_rows.size()) == n - rank) {
    Matrix p = Matrix::Zero(n - rank, n);
    for (std::size_t k = 0; k < free_rows.size(); ++k) p(static_cast<Eigen::Index>(k), free_rows[k]) = 1.0;
    return p;
  }
  Eigen::HouseholderQR<Matrix> hqr(b);
  const Matrix q = hqr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - rank).transpose();
}

/// pi(x) = K (x - x_eq) + u_eq + pi_res(x)
struct PolicyNet {
  Matrix gain;
  Vector x_eq;
  Vector u_eq;
  MlpParams residual;

  Eigen::Index state_dim() const { return gain.cols(); }
  Eigen::Index input_dim() const { return gain.rows(); }

  Vector operator()(const Vector& x) const { return gain * (x - x_eq) + u_eq + forward(residual, x); }
  Matrix jacobian(const Vector& x) const { return gain + ncc::jacobian(residual, x); }
};

/// Theta(x) = U + unpack_upper(Theta_res(P x)), M(x) = Theta(x)^T Theta(x).
struct MetricNet {
  Matrix warm_start;  // upper triangular U
  MlpParams residual;
  Matrix projection;  // P

  Eigen::Index state_dim() const { return warm_start.rows(); }

  void check_state(const Vector& x) const {
    if (x.size() != state_dim()) {
      throw std::invalid_argument("MetricNet: state has dimension " + std::to_string(x.size()) + ", expected " +
                                  std::to_string(state_dim()));
    }
  }

  Matrix theta(const Vector& x) const {
    check_state(x);
    return warm_start + unpack_upper(forward(residual, projection * x), state_dim());
  }

  Matrix metric(const Vector& x) const {
    const Matrix t = theta(x);
    return t.transpose() * t;
  }

  /// sum_i dTheta/dx_i (x) v_i
  Matrix directional_derivative(const Vector& x, const Vector& v) const {
    check_state(x);
    if (v.size() != state_dim()) throw std::invalid_argument("MetricNet: direction dimension mismatch");
    return unpack_upper(jvp(residual, projection * x, projection * v), state_dim());
  }
};

}  // namespace ncc
