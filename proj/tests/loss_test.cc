// Copyright 2026 The AIRSQ Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"

namespace airsq {
namespace {

using testing::random_grid;
using testing::random_trajectory;

JointConfidenceGrid uniform_grid(std::size_t k) {
  JointConfidenceGrid g(k);
  for (double& v : g.values()) v = 1.0 / static_cast<double>(k * k);
  return g;
}

std::vector<Trajectory> offset_modes(const Trajectory& gt, std::size_t k, Point2 offset) {
  std::vector<Trajectory> out(k, gt);
  for (Trajectory& t : out) {
    for (Point2& p : t.points) p = p + offset;
  }
  return out;
}

TEST(ClassificationLoss, OneHotIsZero) {
  JointConfidenceGrid g(3);
  g(2, 1) = 1.0;
  const ClassificationLoss c = classification_loss(g, {2, 1});
  EXPECT_EQ(c.core, 0.0);
  EXPECT_EQ(c.marginal, 0.0);
}

TEST(ClassificationLoss, UniformTwoByTwo) {
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const ClassificationLoss c = classification_loss(uniform_grid(2), {i, j});
      EXPECT_NEAR(c.core, std::log(4.0), 1e-9);
      EXPECT_NEAR(c.marginal, 2.0 * std::log(2.0), 1e-9);
      EXPECT_NEAR(c.core, 1.3863, 1e-4);
    }
  }
}

TEST(ClassificationLoss, MatchesScalarEvaluation) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const JointConfidenceGrid g = random_grid(rng, 4);
    const std::size_t i = rng.index(4), j = rng.index(4);
    double row = 0.0, col = 0.0;
    for (std::size_t m = 0; m < 4; ++m) {
      row += g(i, m);
      col += g(m, j);
    }
    const ClassificationLoss c = classification_loss(g, {i, j});
    EXPECT_NEAR(c.core, -std::log(g(i, j)), 1e-12);
    EXPECT_NEAR(c.marginal, -std::log(row) - std::log(col), 1e-12);
  }
}

TEST(ClassificationLoss, ZeroProbabilityIsClamped) {
  JointConfidenceGrid g(2);
  g(0, 0) = 1.0;
  const ClassificationLoss c = classification_loss(g, {1, 1});
  EXPECT_NEAR(c.core, -std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(c.marginal));
}

TEST(ClassificationLoss, BoundsAndZeroIffOneHot) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const JointConfidenceGrid g = random_grid(rng, 5);
    const AnchorAssignment a{rng.index(5), rng.index(5)};
    const ClassificationLoss c = classification_loss(g, a);
    EXPECT_GT(c.core, 0.0);
    EXPECT_GT(c.marginal, 0.0);
    EXPECT_LE(-std::log(row_sum(g, a.i_star)), c.core);
    EXPECT_LE(-std::log(col_sum(g, a.j_star)), c.core);
  }
}

TEST(RegressionLoss, PerfectIsZero) {
  Rng rng(3);
  const Trajectory gt0 = random_trajectory(rng), gt1 = random_trajectory(rng);
  const RegressionLoss r = regression_loss(offset_modes(gt0, 3, {}), offset_modes(gt1, 3, {}), gt0, gt1, {1, 2});
  EXPECT_EQ(r.reg0, 0.0);
  EXPECT_EQ(r.reg1, 0.0);
}

TEST(RegressionLoss, UnitOffset) {
  const Trajectory gt = Trajectory::constant({5.0, 5.0});
  const RegressionLoss r = regression_loss(offset_modes(gt, 2, {1, 0}), offset_modes(gt, 2, {1, 0}), gt, gt, {0, 1});
  EXPECT_EQ(r.reg0, 40.0);
  EXPECT_EQ(r.reg1, 40.0);
}

TEST(RegressionLoss, MaskedGroundTruth) {
  Trajectory gt = Trajectory::constant({0.0, 0.0});
  for (std::size_t t = 40; t < kFutureSteps; ++t) gt.valid[t] = false;
  const auto pred = offset_modes(Trajectory::constant({0.0, 0.0}), 1, {0, 2});
  EXPECT_EQ(regression_term(pred[0], gt), 80.0);
}

TEST(RegressionLoss, OnlyAssignedModesCount) {
  const Trajectory gt = Trajectory::constant({0.0, 0.0});
  auto pred = offset_modes(gt, 3, {100, 0});
  pred[1] = gt;
  const RegressionLoss r = regression_loss(pred, pred, gt, gt, {1, 1});
  EXPECT_EQ(r.reg0, 0.0);
}

TEST(RegressionLoss, RigidTransformInvariant) {
  Rng rng(4);
  const Trajectory gt0 = random_trajectory(rng, 20.0, 0.2), gt1 = random_trajectory(rng, 20.0, 0.2);
  std::vector<Trajectory> p0{random_trajectory(rng), random_trajectory(rng)};
  std::vector<Trajectory> p1{random_trajectory(rng), random_trajectory(rng)};
  const RegressionLoss base = regression_loss(p0, p1, gt0, gt1, {1, 0});
  const Pose pose{{12.0, -7.0}, 0.7};
  std::vector<Trajectory> q0, q1;
  for (const auto& t : p0) q0.push_back(to_ego(t, pose));
  for (const auto& t : p1) q1.push_back(to_ego(t, pose));
  const RegressionLoss moved = regression_loss(q0, q1, to_ego(gt0, pose), to_ego(gt1, pose), {1, 0});
  EXPECT_NEAR(moved.reg0, base.reg0, 1e-9 * base.reg0);
  EXPECT_NEAR(moved.reg1, base.reg1, 1e-9 * base.reg1);
}

TEST(TotalLoss, DefaultWeightsExample) {
  const ClassificationLoss c = classification_loss(uniform_grid(2), {0, 0});
  const RegressionLoss r{40.0, 40.0};
  const LossBreakdown b = total_loss(c, r, LossWeights{1.0, 60.0, 1.0});
  EXPECT_NEAR(b.total, 246.36, 0.01);
  EXPECT_NEAR(b.total, 60.0 * (std::log(4.0) + 2.0 * std::log(2.0)) + 80.0, 1e-9);
}

TEST(TotalLoss, ZeroWeights) {
  const LossBreakdown b = total_loss({3.0, 2.0}, {5.0, 7.0}, LossWeights{0.0, 0.0, 0.0});
  EXPECT_EQ(b.total, 0.0);
}

TEST(TotalLoss, NoMarginalTermWhenWmIsZero) {
  const LossBreakdown b = total_loss({3.0, 2.0}, {5.0, 7.0}, LossWeights{1.0, 10.0, 0.0});
  EXPECT_EQ(b.total, 12.0 + 30.0);
}

TEST(TotalLoss, BreakdownInvariantAndLinearity) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const ClassificationLoss c{rng.uniform(0, 5), rng.uniform(0, 5)};
    const RegressionLoss r{rng.uniform(0, 50), rng.uniform(0, 50)};
    const LossWeights w{rng.uniform(0, 3), rng.uniform(0, 80), rng.uniform(0, 2)};
    const LossBreakdown b = total_loss(c, r, w);
    EXPECT_NEAR(b.total, w.w_reg * (b.reg0 + b.reg1) + w.w_cls * (b.cls + w.w_m * b.marginal), 1e-12 * b.total);
    LossWeights w2 = w;
    w2.w_reg *= 2.0;
    EXPECT_NEAR(total_loss(c, r, w2).total - b.total, w.w_reg * (r.reg0 + r.reg1), 1e-9);
  }
}

TEST(TotalLoss, NonFiniteRejected) {
  EXPECT_THROW(total_loss({std::numeric_limits<double>::quiet_NaN(), 0.0}, {0, 0}, LossWeights{}), Error);
  EXPECT_THROW(total_loss({0.0, 0.0}, {std::numeric_limits<double>::infinity(), 0}, LossWeights{}), Error);
  EXPECT_THROW(LossWeights({-1.0, 1.0, 1.0}).validate(), Error);
}

TEST(LossGradients, RegressionDerivativeExact) {
  Rng rng(6);
  const Trajectory gt0 = random_trajectory(rng), gt1 = random_trajectory(rng);
  std::vector<Trajectory> p0{random_trajectory(rng), random_trajectory(rng), random_trajectory(rng)};
  std::vector<Trajectory> p1{random_trajectory(rng), random_trajectory(rng), random_trajectory(rng)};
  const AnchorAssignment a{2, 0};
  const LossGradients g = loss_gradients(random_grid(rng, 3), p0, p1, gt0, gt1, a, LossWeights{1.0, 60.0, 1.0});
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    EXPECT_EQ(g.d_pred0[2][t].x, p0[2].points[t].x - gt0.points[t].x);
    EXPECT_EQ(g.d_pred0[2][t].y, p0[2].points[t].y - gt0.points[t].y);
    for (std::size_t k : {0u, 1u}) {
      EXPECT_EQ(g.d_pred0[k][t].x, 0.0);
      EXPECT_EQ(g.d_pred0[k][t].y, 0.0);
    }
    for (std::size_t k : {1u, 2u}) EXPECT_EQ(g.d_pred1[k][t].x, 0.0);
  }
}

TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(7);
  const std::size_t k = 4;
  JointConfidenceGrid grid = random_grid(rng, k);
  const Trajectory gt0 = random_trajectory(rng, 20.0, 0.3), gt1 = random_trajectory(rng, 20.0, 0.3);
  std::vector<Trajectory> p0, p1;
  for (std::size_t m = 0; m < k; ++m) {
    p0.push_back(random_trajectory(rng));
    p1.push_back(random_trajectory(rng));
  }
  const AnchorAssignment a{1, 3};
  const LossWeights w{1.3, 60.0, 0.7};
  // The grid is treated as free variables (no renormalization).
  auto f = [&] { return evaluate_loss(JointPrediction{grid, {MarginalPrediction{ObjectType::kVehicle, k, p0, {}},
                                                               MarginalPrediction{ObjectType::kVehicle, k, p1, {}}}},
                                      gt0, gt1, a, w)
                     .total; };
  const LossGradients g = loss_gradients(grid, p0, p1, gt0, gt1, a, w);
  for (std::size_t c = 0; c < k * k; ++c) {
    const double fd = testing::central_difference(f, grid.values()[c], 1e-7);
    EXPECT_LT(testing::relative_error(g.d_grid[c], fd, 1e-6), 1e-6) << c;
  }
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t t = 0; t < kFutureSteps; t += 7) {
      const double fx = testing::central_difference(f, p0[m].points[t].x, 1e-5);
      const double fy = testing::central_difference(f, p1[m].points[t].y, 1e-5);
      EXPECT_LT(testing::relative_error(g.d_pred0[m][t].x, fx, 1e-6), 1e-6);
      EXPECT_LT(testing::relative_error(g.d_pred1[m][t].y, fy, 1e-6), 1e-6);
    }
  }
}

TEST(LossGradients, MarginalCrossEntropy) {
  const std::vector<double> q{0.25, 0.5, 0.25, 0.0};
  EXPECT_NEAR(marginal_cross_entropy(q, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(marginal_cross_entropy(q, 3), -std::log(1e-12), 1e-9);
}

}  // namespace
}  // namespace airsq
