#include "ncc/boundprop.hpp"
#include "ncc/problem.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using ncc::Matrix;
using ncc::Vector;

ncc::MlpParams random_mlp(std::mt19937_64& rng, Eigen::Index in, std::vector<int> hidden, Eigen::Index out) {
  ncc::MlpParams net = ncc::make_residual_mlp(in, hidden, out, rng);
  std::normal_distribution<double> d(0.0, 0.5);
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] += d(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) += d(rng);
  }
  return net;
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

TEST(Mlp, ResidualStartsAtZero) {
  std::mt19937_64 rng(31);
  const ncc::MlpParams net = ncc::make_residual_mlp(3, {16, 16}, 5, rng);
  const Vector x = random_vector(rng, 3);
  EXPECT_TRUE(ncc::forward(net, x).isZero(0.0));
  EXPECT_TRUE(ncc::jacobian(net, x).isZero(0.0));
  EXPECT_EQ(net.parameter_count(), static_cast<std::size_t>(3 * 16 + 16 + 16 * 16 + 16 + 16 * 5 + 5));
}

TEST(Mlp, JacobianAndJvpMatchFiniteDifferences) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const ncc::MlpParams net = random_mlp(rng, 4, {12, 7}, 3);
    const Vector x = random_vector(rng, 4);
    const Matrix fd = oracle::fd_jacobian([&](const Vector& z) { return ncc::forward(net, z); }, x);
    const Matrix j = ncc::jacobian(net, x);
    EXPECT_LE((j - fd).cwiseAbs().maxCoeff(), 1e-7);
    const Vector v = random_vector(rng, 4);
    EXPECT_LE((ncc::jvp(net, x, v) - j * v).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, ValidateRejectsBrokenShapes) {
  std::mt19937_64 rng(33);
  ncc::MlpParams net = ncc::make_residual_mlp(2, {4}, 3, rng);
  net.layers[1].bias = Vector::Zero(2);
  EXPECT_THROW(net.validate(), std::invalid_argument);
  EXPECT_THROW(ncc::forward(ncc::make_residual_mlp(2, {4}, 3, rng), Vector::Zero(3)), std::invalid_argument);
}

TEST(Packing, UpperRowMajorRoundTrip) {
  Matrix u(3, 3);
  u << 1, 2, 3, 0, 4, 5, 0, 0, 6;
  const Vector p = ncc::pack_upper(u);
  EXPECT_EQ(p.size(), 6);
  for (int k = 0; k < 6; ++k) EXPECT_EQ(p(k), k + 1);
  EXPECT_EQ(ncc::unpack_upper(p, 3), u);
}

TEST(Killing, ProjectionAnnihilatesInputMatrix) {
  for (const auto& name : ncc::benchmark_names()) {
    const auto sys = ncc::benchmark_system(name);
    const Matrix p = ncc::killing_projection(sys->input_matrix());
    EXPECT_EQ(p.rows(), sys->state_dim() - sys->input_dim()) << name;
    EXPECT_TRUE((p * sys->input_matrix()).isZero(1e-14)) << name;
  }
  Matrix b(3, 1);
  b << 1.0, 1.0, 0.0;  // not coordinate aligned
  const Matrix p = ncc::killing_projection(b);
  EXPECT_EQ(p.rows(), 2);
  EXPECT_TRUE((p * b).isZero(1e-14));
}

TEST(Killing, MetricInvariantAlongInputDirections) {
  std::mt19937_64 rng(34);
  for (const auto& name : ncc::benchmark_names()) {
    const auto p = oracle::small_problem(name, 35, 0.1, {8, 8}, 0.3);
    const Matrix& b = p.system->input_matrix();
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = random_vector(rng, p.state_dim());
      const Vector u = random_vector(rng, b.cols(), 3.0);
      EXPECT_LE((p.metric.theta(x + b * u) - p.metric.theta(x)).cwiseAbs().maxCoeff(), 1e-12) << name;
      // d_{Bu} Theta = 0
      EXPECT_LE(p.metric.directional_derivative(x, b * u).cwiseAbs().maxCoeff(), 1e-12) << name;
    }
  }
}

TEST(Metric, DirectionalDerivativeMatchesFiniteDifferences) {
  std::mt19937_64 rng(36);
  const auto p = oracle::small_problem("quadrotor10", 37, 0.1, {8, 8}, 0.3);
  const Vector x = random_vector(rng, 10), v = random_vector(rng, 10);
  const double h = 1e-6;
  const Matrix fd = (p.metric.theta(x + h * v) - p.metric.theta(x - h * v)) / (2 * h);
  EXPECT_LE((p.metric.directional_derivative(x, v) - fd).cwiseAbs().maxCoeff(), 1e-7);
  const Matrix m = p.metric.metric(x);
  EXPECT_GT(oracle::lambda_min_sym(m), 0.0);
}

TEST(Systems, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(38);
  for (const auto& name : ncc::benchmark_names()) {
    const auto sys = ncc::benchmark_system(name);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = sys->x_eq() + random_vector(rng, sys->state_dim(), 0.5);
      const Matrix fd = oracle::fd_jacobian([&](const Vector& z) { return sys->drift(z); }, x);
      EXPECT_LE((sys->drift_jacobian(x) - fd).cwiseAbs().maxCoeff(), 1e-7) << name;
    }
  }
}

TEST(Systems, EquilibriumIsStationary) {
  for (const auto& name : ncc::benchmark_names()) {
    const auto sys = ncc::benchmark_system(name);
    EXPECT_LE(sys->open_loop(sys->x_eq(), sys->u_eq()).cwiseAbs().maxCoeff(), 1e-15) << name;
  }
  const ncc::Quadrotor quad;
  const Vector hover = ncc::Quadrotor::hover_state();
  EXPECT_EQ(hover(ncc::Quadrotor::kTau), ncc::kGravity);
  EXPECT_TRUE(quad.drift(hover).isZero(0.0));
}

TEST(Systems, QuadrotorYawColumnVanishes) {
  std::mt19937_64 rng(39);
  const ncc::Quadrotor quad;
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = quad.x_eq() + random_vector(rng, 10, 0.5);
    EXPECT_TRUE(quad.drift_jacobian(x).col(ncc::Quadrotor::kPsi).isZero(0.0));
  }
}

TEST(Systems, IntervalExtensionsAreSound) {
  std::mt19937_64 rng(40);
  for (const auto& name : ncc::benchmark_names()) {
    const auto sys = ncc::benchmark_system(name);
    for (int trial = 0; trial < 20; ++trial) {
      ncc::IntervalVector box;
      for (Eigen::Index k = 0; k < sys->state_dim(); ++k) {
        const double c = sys->x_eq()(k) + std::normal_distribution<double>(0.0, 0.5)(rng);
        const double r = std::uniform_real_distribution<double>(0.0, 0.4)(rng);
        box.emplace_back(c - r, c + r);
      }
      const ncc::IntervalVector f = sys->drift(box);
      const ncc::IntervalMatrix j = sys->drift_jacobian(box);
      for (int s = 0; s < 100; ++s) {
        const Vector x = oracle::sample_box(rng, box);
        const Vector fx = sys->drift(x);
        for (Eigen::Index k = 0; k < fx.size(); ++k)
          EXPECT_TRUE(f[static_cast<std::size_t>(k)].contains(fx(k))) << name;
        EXPECT_TRUE(j.contains(sys->drift_jacobian(x), 1e-12)) << name;
      }
    }
  }
}

TEST(Problem, ParameterRoundTripAndLayout) {
  auto p = oracle::small_problem("planar_nonlinear", 41);
  const Vector flat = ncc::flatten_parameters(p);
  Eigen::Index total = 0;
  for (const auto& blk : ncc::parameter_layout(p)) total += blk.size();
  EXPECT_EQ(flat.size(), total);
  Vector changed = flat;
  changed(0) += 1.0;
  ncc::assign_parameters(p, changed);
  EXPECT_EQ(ncc::flatten_parameters(p), changed);
  EXPECT_THROW(ncc::assign_parameters(p, Vector::Zero(3)), std::invalid_argument);
}

}  // namespace
