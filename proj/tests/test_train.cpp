#include "ncc/train.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using ncc::Matrix;
using ncc::Vector;

ncc::ContractionProblem gradient_problem(std::uint64_t seed) {
  auto p = oracle::small_problem("planar_nonlinear", seed, 0.5, {6, 5}, 0.15);
  p.a = 0.5;  // make the metric lower-bound term active as well
  return p;
}

const ncc::Region kGradRegion({{-1.2, 1.2}, {-1.2, 1.2}}, {3, 2});

double loss_at(const ncc::ContractionProblem& base, const Vector& params, const ncc::LossOptions& opt) {
  ncc::ContractionProblem p = base;
  ncc::assign_parameters(p, params);
  return ncc::loss(p, kGradRegion, opt).value;
}

// Compares the analytic gradient with central differences on random
// coordinates.  A coordinate whose one-sided differences disagree has a
// hinge or argmax tie within h and is skipped.
void check_gradient(ncc::Aggregation agg, std::uint64_t seed) {
  const auto p = gradient_problem(seed);
  ncc::LossOptions opt;
  opt.aggregation = agg;
  Vector grad;
  const ncc::LossValue lv = ncc::loss_and_gradient(p, kGradRegion, opt, &grad);
  ASSERT_GT(lv.value, 0.0);
  const Vector theta = ncc::flatten_parameters(p);
  ASSERT_EQ(grad.size(), theta.size());
  const ncc::ParameterMasks masks = ncc::parameter_masks(p);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
  const double h = 1e-6;
  int checked = 0, skipped = 0;
  while (checked + skipped < 50) {
    const Eigen::Index k = pick(rng);
    if (masks.lr_scale(k) == 0.0) continue;  // frozen lower triangle
    Vector tp = theta, tm = theta;
    tp(k) += h;
    tm(k) -= h;
    const double fp = loss_at(p, tp, opt), fm = loss_at(p, tm, opt);
    const double fwd = (fp - lv.value) / h, bwd = (lv.value - fm) / h;
    if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(fwd))) {
      ++skipped;
      continue;
    }
    const double fd = (fp - fm) / (2 * h);
    const double rel = std::abs(fd - grad(k)) / std::max(std::abs(fd), 1e-3);
    EXPECT_LE(rel, 1e-4) << "coordinate " << k << " fd " << fd << " grad " << grad(k);
    ++checked;
  }
  EXPECT_GE(checked, 40);
}

TEST(LossGradient, MeanAggregationMatchesFiniteDifferences) { check_gradient(ncc::Aggregation::kMean, 81); }
TEST(LossGradient, MaxAggregationMatchesFiniteDifferences) { check_gradient(ncc::Aggregation::kMax, 82); }

TEST(LossGradient, FrozenLowerTriangleHasZeroGradient) {
  const auto p = oracle::small_problem("quadrotor10", 83, 0.1, {4}, 0.1);
  const ncc::Region r({{-1, 1}, {-1, 1}, {-1, 1}, {-1, 1}, {-1, 1}, {-1, 1}, {9, 10.5}, {-.2, .2}, {-.2, .2}, {-.5, .5}},
                      {});
  Vector grad;
  ncc::loss_and_gradient(p, r, {}, &grad);
  const ncc::ParameterMasks masks = ncc::parameter_masks(p);
  for (Eigen::Index k = 0; k < grad.size(); ++k)
    if (masks.lr_scale(k) == 0.0) EXPECT_EQ(grad(k), 0.0);
}

TEST(Loss, DecomposesIntoTerms) {
  const auto p = gradient_problem(84);
  for (auto agg : {ncc::Aggregation::kMean, ncc::Aggregation::kMax}) {
    ncc::LossOptions opt;
    opt.aggregation = agg;
    const ncc::LossValue lv = ncc::loss(p, kGradRegion, opt);
    double expect = 0.0;
    for (double l : lv.cell_lambda) {
      const double hinge = std::max(l, 0.0);
      expect = agg == ncc::Aggregation::kMean ? expect + hinge / static_cast<double>(lv.cell_lambda.size())
                                              : std::max(expect, hinge);
    }
    EXPECT_NEAR(lv.lambda_term, expect, 1e-14);
    EXPECT_NEAR(lv.a_deficit, std::max(p.a - lv.a_hat, 0.0), 1e-14);
    EXPECT_NEAR(lv.b_excess, std::max(lv.b_hat - p.b, 0.0), 1e-14);
    EXPECT_NEAR(lv.value, lv.lambda_term + lv.a_deficit + lv.b_excess, 1e-14);
  }
}

TEST(Loss, NonFiniteCellsArePenalised) {
  auto p = gradient_problem(85);
  p.metric.residual.layers.front().weight.setConstant(1e300);
  Vector grad;
  const ncc::LossValue lv = ncc::loss_and_gradient(p, kGradRegion, {}, &grad);
  EXPECT_GE(lv.value, ncc::kNonFinitePenalty);
  EXPECT_TRUE(std::isfinite(lv.value));
  EXPECT_TRUE(grad.allFinite());
  EXPECT_FALSE(lv.diagnostics.empty());
}

TEST(AdamW, SingleStepMatchesHandComputation) {
  ncc::AdamWOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.5;
  Vector decay(3), scale(3);
  decay << 1, 0, 1;
  scale << 1, 1, 0;
  ncc::AdamW opt(o, decay, scale);
  Vector x(3), g(3);
  x << 1.0, 2.0, 3.0;
  g << 0.5, -2.0, 1.0;
  opt.step(x, g);
  // First step: m_hat = g, v_hat = g^2, update = lr * sign(g) (up to eps).
  const double x0 = 1.0 * (1 - 0.1 * 0.5) - 0.1 * 0.5 / (0.5 + 1e-8);
  const double x1 = 2.0 + 0.1 * 2.0 / (2.0 + 1e-8);
  EXPECT_NEAR(x(0), x0, 1e-15);
  EXPECT_NEAR(x(1), x1, 1e-15);
  EXPECT_EQ(x(2), 3.0);  // frozen
  EXPECT_EQ(opt.steps(), 1);
}

TEST(ParameterMasks, GroupsAndFrozenTriangle) {
  const auto p = oracle::small_problem("planar_nonlinear", 86);
  const ncc::ParameterMasks m = ncc::parameter_masks(p, 0.5, 0.01);
  Eigen::Index offset = 0;
  for (const auto& blk : ncc::parameter_layout(p)) {
    for (Eigen::Index c = 0; c < blk.cols; ++c)
      for (Eigen::Index r = 0; r < blk.rows; ++r) {
        const Eigen::Index k = offset + c * blk.rows + r;
        EXPECT_EQ(m.decay(k), blk.residual ? 1.0 : 0.0) << blk.name;
        const double want = blk.upper_only && r > c ? 0.0 : (blk.residual ? 0.01 : 0.5);
        EXPECT_EQ(m.lr_scale(k), want) << blk.name;
      }
    offset += blk.size();
  }
}

TEST(Curriculum, ZeroStepBudgetIsExhausted) {
  auto p = gradient_problem(87);
  ncc::TrainOptions opt;
  opt.max_steps = 0;
  opt.start_stage = 50;
  const ncc::TrainResult r = ncc::train_curriculum(p, kGradRegion, opt);
  EXPECT_EQ(r.status, ncc::TrainStatus::kBudgetExhausted);
  EXPECT_EQ(r.state.step, 0);
  EXPECT_FALSE(r.certificate.has_value());
}

TEST(Curriculum, RegionScalesAboutCenter) {
  const ncc::Region full({{0.0, 10.0}}, {5});
  const ncc::Region r = ncc::curriculum_region(full, 30);
  EXPECT_NEAR(r.box()[0].lo(), 3.5, 1e-15);
  EXPECT_NEAR(r.box()[0].hi(), 6.5, 1e-15);
  EXPECT_EQ(ncc::curriculum_region(full, 100).box()[0], full.box()[0]);
}

TEST(Curriculum, PlanarTrainsToCertificate) {
  std::mt19937_64 rng(1);
  ncc::WarmStartOptions ws;
  ws.policy_hidden = ws.metric_hidden = {16, 16};
  auto p = ncc::make_problem(ncc::benchmark_system("planar_nonlinear"), ws, 0.01, 100.0, 0.1, rng);
  const ncc::Region full({{-1.0, 1.0}, {-1.0, 1.0}}, {4, 4});
  ncc::TrainOptions opt;
  opt.max_steps = 2000;
  std::vector<int> checkpoints;
  ncc::TrainCallbacks cb;
  cb.on_checkpoint = [&](int stage, const ncc::ContractionProblem&, const ncc::TrainState&) { checkpoints.push_back(stage); };
  const ncc::TrainResult r = ncc::train_curriculum(p, full, opt, cb);
  ASSERT_EQ(r.status, ncc::TrainStatus::kCertified);
  ASSERT_TRUE(r.certificate.has_value());
  EXPECT_TRUE(r.certificate->certified);
  EXPECT_EQ(r.best_stage, 100);
  EXPECT_TRUE(std::is_sorted(checkpoints.begin(), checkpoints.end()));
  EXPECT_EQ(checkpoints.back(), 100);
  for (const auto& row : r.state.history) EXPECT_TRUE(std::isfinite(row.loss));
}

}  // namespace
