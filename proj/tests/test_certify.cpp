#include "ncc/certify.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using ncc::IntervalMatrix;
using ncc::Matrix;
using ncc::Vector;

TEST(SignIndex, BitEncoding) {
  EXPECT_EQ(ncc::sign_from_index(0, 3), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(ncc::sign_from_index(1, 3), (std::vector<int>{1, -1, 1}));
  EXPECT_EQ(ncc::sign_from_index(2, 3), (std::vector<int>{1, 1, -1}));
  EXPECT_EQ(ncc::sign_from_index(3, 3), (std::vector<int>{1, -1, -1}));
}

TEST(Rohn, MatchesExhaustiveVertexSearch) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index n = 2 + trial % 2;
    const IntervalMatrix a = oracle::random_interval_matrix(rng, n);
    const ncc::CornerCheckResult r = ncc::rohn_max_mu2(a);
    EXPECT_NEAR(r.value, oracle::exhaustive_max_mu2(a), 1e-10);
    const Matrix corner = ncc::corner_matrix(a, r.argmax_sign);
    EXPECT_TRUE(a.contains(corner, 1e-12));
    EXPECT_NEAR(oracle::lambda_max_sym(corner), r.value, 1e-10);
  }
}

TEST(Rohn, ValuesStoredByIndexAcrossChunks) {
  // n = 9 gives 256 signs, i.e. four Gray-code chunks.
  std::mt19937_64 rng(62);
  const IntervalMatrix a = oracle::random_interval_matrix(rng, 9, 0.5);
  const ncc::CornerCheckResult r1 = ncc::rohn_max_mu2(a, 1);
  const ncc::CornerCheckResult r4 = ncc::rohn_max_mu2(a, 4);
  ASSERT_EQ(r1.values.size(), 256u);
  EXPECT_EQ(r1.values, r4.values);
  EXPECT_EQ(r1.argmax_index, r4.argmax_index);
  for (std::uint64_t k : {0u, 1u, 77u, 200u, 255u}) {
    const Matrix c = ncc::corner_matrix(a, ncc::sign_from_index(k, 9));
    EXPECT_NEAR(r1.values[k], oracle::lambda_max_sym(c), 1e-10) << k;
  }
}

TEST(Rohn, TiesGoToLowestIndex) {
  const IntervalMatrix a(Matrix::Zero(3, 3), Matrix::Zero(3, 3));
  const ncc::CornerCheckResult r = ncc::rohn_max_mu2(a);
  EXPECT_EQ(r.argmax_index, 0u);
  EXPECT_EQ(r.value, 0.0);
}

TEST(Rohn, SymmetricEigenBoundsMatchSymmetricVertices) {
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 30; ++trial) {
    const IntervalMatrix raw = oracle::random_interval_matrix(rng, 3);
    // Symmetric hull [M] with M_ij = M_ji.
    Matrix lo = raw.lower(), hi = raw.upper();
    lo = lo.triangularView<Eigen::Upper>().toDenseMatrix() +
         lo.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().transpose();
    hi = hi.triangularView<Eigen::Upper>().toDenseMatrix() +
         hi.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().transpose();
    const IntervalMatrix m(lo, hi);
    double best_min = std::numeric_limits<double>::infinity(), best_max = -best_min;
    for (int mask = 0; mask < 64; ++mask) {  // 6 free entries of a symmetric 3x3
      Matrix v(3, 3);
      int bit = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j, ++bit) v(i, j) = v(j, i) = (mask >> bit) & 1 ? hi(i, j) : lo(i, j);
      best_min = std::min(best_min, oracle::lambda_min_sym(v));
      best_max = std::max(best_max, oracle::lambda_max_sym(v));
    }
    EXPECT_NEAR(ncc::rohn_min_eig(m), best_min, 1e-10);
    EXPECT_NEAR(ncc::rohn_max_eig(m), best_max, 1e-10);
  }
}

TEST(Rohn, RejectsOversizedInput) {
  const IntervalMatrix big(Matrix::Zero(25, 25), Matrix::Zero(25, 25));
  EXPECT_THROW(ncc::rohn_max_mu2(big), std::invalid_argument);
  EXPECT_THROW(ncc::rohn_max_mu2(IntervalMatrix(Matrix::Zero(2, 3))), std::invalid_argument);
}

TEST(CornerGradient, MatchesFiniteDifferencesOnBounds) {
  std::mt19937_64 rng(64);
  for (auto bound : {ncc::CornerBound::kMaxEig, ncc::CornerBound::kMinEig}) {
    const IntervalMatrix a = oracle::random_interval_matrix(rng, 3);
    auto eval = [&](const IntervalMatrix& m) {
      return bound == ncc::CornerBound::kMaxEig ? ncc::rohn_max_mu2(m).value : ncc::rohn_min_eig(m);
    };
    const auto r = bound == ncc::CornerBound::kMaxEig ? ncc::rohn_max_mu2(a) : ncc::rohn_min_eig_detail(a);
    const ncc::BoundGradient g = ncc::corner_gradient(r);
    const double h = 1e-7;
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) {
        Matrix lo = a.lower(), hi = a.upper();
        hi(i, j) += h;
        const double up = eval(IntervalMatrix(lo, hi));
        hi(i, j) -= 2 * h;
        if (hi(i, j) < lo(i, j)) continue;
        const double dn = eval(IntervalMatrix(lo, hi));
        EXPECT_NEAR((up - dn) / (2 * h), g.dhi(i, j), 1e-5);
        hi = a.upper();
        lo(i, j) += h;
        const double up2 = eval(IntervalMatrix(lo, hi));
        lo(i, j) -= 2 * h;
        const double dn2 = eval(IntervalMatrix(lo, hi));
        EXPECT_NEAR((up2 - dn2) / (2 * h), g.dlo(i, j), 1e-5);
      }
  }
}

TEST(Metzler, CounterexampleIsInconclusiveWhereRohnCertifies) {
  const int n = 4;
  const double t = 1.0;
  const Matrix a = -t * Matrix::Ones(n, n);
  const IntervalMatrix hull(a);
  const ncc::MetzlerVerdict metzler = ncc::metzler_majorant_check(hull);
  EXPECT_NEAR(metzler.max_eigenvalue, t * (n - 2), 1e-12);
  EXPECT_FALSE(metzler.certified);
  EXPECT_NEAR(ncc::rohn_max_mu2(hull).value, 0.0, 1e-12);
  EXPECT_LE(ncc::rohn_max_mu2(hull).value, 1e-12);
}

TEST(Metzler, NeverCertifiesWhatRohnRejects) {
  std::mt19937_64 rng(65);
  for (int trial = 0; trial < 50; ++trial) {
    const IntervalMatrix a = oracle::random_interval_matrix(rng, 3, 0.3);
    if (ncc::metzler_majorant_check(a).certified) EXPECT_LE(ncc::rohn_max_mu2(a).value, 1e-12);
    EXPECT_GE(ncc::metzler_majorant_check(a).max_eigenvalue, ncc::rohn_max_mu2(a).value - 1e-10);
  }
}

TEST(ContractionForms, HalfLambdaMaxOfSEqualsMu2OfG) {
  std::mt19937_64 rng(66);
  for (const auto& name : ncc::benchmark_names()) {
    const auto p = oracle::small_problem(name, 67, 0.2, {8, 8}, 0.2);
    for (int s = 0; s < 200; ++s) {
      Vector x = p.system->x_eq();
      for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += std::normal_distribution<double>(0.0, 0.5)(rng);
      const Matrix g = ncc::pointwise_G(p, x);
      const Matrix sm = ncc::pointwise_S(p, x);
      EXPECT_LE((g + g.transpose() - sm).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + sm.cwiseAbs().maxCoeff()));
      EXPECT_NEAR(0.5 * ncc::mu2(sm), ncc::mu2(g), 1e-8) << name;
    }
  }
}

TEST(CertifyRegion, LqrPlanarNearEquilibrium) {
  std::mt19937_64 rng(68);
  ncc::WarmStartOptions ws;
  ws.policy_hidden = ws.metric_hidden = {8};
  const auto p = ncc::make_problem(ncc::benchmark_system("planar_nonlinear"), ws, 0.01, 100.0, 0.1, rng);
  const ncc::Region r({{-0.1, 0.1}, {-0.1, 0.1}}, {2, 2});
  const ncc::Certificate cert = ncc::certify_region(p, r, 2);
  EXPECT_TRUE(cert.certified) << cert.cause;
  EXPECT_TRUE(cert.consistent_verdict());
  EXPECT_EQ(cert.cell_lambda.size(), 4u);
  // A certified region admits no sampled violation and bounds it from above.
  const ncc::FalsifyResult f = ncc::falsify_by_sampling(p, r, 2000, 1, 2);
  EXPECT_FALSE(f.violated());
  EXPECT_LE(f.worst, cert.max_lambda + 1e-12);
  EXPECT_GE(cert.a_hat, p.a);
}

TEST(CertifyRegion, ReportsPositiveLambdaCause) {
  std::mt19937_64 rng(69);
  ncc::WarmStartOptions ws;
  ws.policy_hidden = ws.metric_hidden = {8};
  auto p = ncc::make_problem(ncc::benchmark_system("planar_nonlinear"), ws, 0.01, 100.0, 0.1, rng);
  p.policy.gain.setZero();  // open loop: unstable at the origin
  const ncc::Certificate cert = ncc::certify_region(p, ncc::Region({{-0.1, 0.1}, {-0.1, 0.1}}, {}), 1);
  EXPECT_FALSE(cert.certified);
  EXPECT_NE(cert.cause.find("positive lambda"), std::string::npos);
  EXPECT_TRUE(cert.consistent_verdict());
}

TEST(Falsify, LqrQuadrotorOnFullRegionFindsViolation) {
  std::mt19937_64 rng(70);
  ncc::WarmStartOptions ws;
  ws.policy_hidden = ws.metric_hidden = {8};
  const auto p = ncc::make_problem(ncc::benchmark_system("quadrotor10"), ws, 0.01, 100.0, 0.001, rng);
  const double g = ncc::kGravity, pi = std::numbers::pi;
  const ncc::Region full({{-10, 10}, {-10, 10}, {-10, 10}, {-5, 5}, {-5, 5}, {-5, 5},
                          {2 * g / 3, 4 * g / 3}, {-pi / 8, pi / 8}, {-pi / 8, pi / 8}, {-pi / 2, pi / 2}},
                         {});
  EXPECT_TRUE(ncc::falsify_by_sampling(p, full, 10000, 0, 2).violated());
  EXPECT_EQ(ncc::falsify_by_sampling(p, full, 0).samples, 0u);
  EXPECT_FALSE(ncc::falsify_by_sampling(p, full, 0).violated());
}

}  // namespace
