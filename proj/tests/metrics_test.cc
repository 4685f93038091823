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

using testing::random_trajectory;

Trajectory shifted(const Trajectory& t, Point2 d) {
  Trajectory out = t;
  for (Point2& p : out.points) p = p + d;
  return out;
}

// Mode `hit` of each agent equals ground truth; the other modes are 10 m+ away.
JointPrediction make_prediction(const Trajectory& gt0, const Trajectory& gt1, std::size_t k, std::size_t hit0,
                                std::size_t hit1, ObjectType t0 = ObjectType::kVehicle,
                                ObjectType t1 = ObjectType::kVehicle) {
  JointPrediction p;
  p.grid = JointConfidenceGrid(k);
  for (double& v : p.grid.values()) v = 1.0 / static_cast<double>(k * k);
  const std::array<const Trajectory*, 2> gts{&gt0, &gt1};
  const std::array<std::size_t, 2> hits{hit0, hit1};
  const std::array<ObjectType, 2> types{t0, t1};
  for (int a = 0; a < 2; ++a) {
    MarginalPrediction& m = p.marginals[a];
    m.type = types[a];
    m.active = k;
    m.confidences.assign(k, 1.0 / static_cast<double>(k));
    for (std::size_t c = 0; c < k; ++c) {
      m.trajectories.push_back(c == hits[a] ? *gts[a] : shifted(*gts[a], {10.0 + 10.0 * c, 0.0}));
    }
  }
  return p;
}

TEST(JointMap, PerfectTopCellGivesOne) {
  Rng rng(1);
  std::vector<JointPrediction> preds;
  std::vector<GroundTruth> truths;
  for (int n = 0; n < 5; ++n) {
    const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
    JointPrediction p = make_prediction(g0, g1, 3, 1, 2);
    for (double& v : p.grid.values()) v = 0.0;
    p.grid(1, 2) = 1.0;
    preds.push_back(p);
    truths.push_back({g0, g1, {1, 2}});
  }
  EXPECT_EQ(joint_map(preds, truths).map, 1.0);
}

TEST(JointMap, NoHitGivesZero) {
  Rng rng(2);
  std::vector<JointPrediction> preds;
  std::vector<GroundTruth> truths;
  for (int n = 0; n < 4; ++n) {
    const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
    preds.push_back(make_prediction(g0, g1, 3, 99, 99));
    truths.push_back({g0, g1, {0, 0}});
  }
  EXPECT_EQ(joint_map(preds, truths).map, 0.0);
}

TEST(JointMap, OneAgentMissingIsNotAHit) {
  Rng rng(3);
  const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
  const std::vector<JointPrediction> preds{make_prediction(g0, g1, 2, 0, 99)};
  const std::vector<GroundTruth> truths{{g0, g1, {0, 0}}};
  EXPECT_EQ(joint_map(preds, truths).map, 0.0);
}

TEST(JointMap, HandComputedAveragePrecision) {
  // Two modes per agent, only cell (0, 0) is a hit, top_k = 2.
  //   s1: .9 TP  .05 FP      s2: .6 FP  .3 TP
  //   s3: .7 FP  .2 FP       s4: .5 FP  .45 TP
  // Pooled: .9T .7F .6F .5F .45T .3T .2F .05F, 4 positives.
  // Interpolated precision 1 at recall .25 and .5 at recall .5 and .75,
  // so AP = .25 * 1 + .25 * .5 + .25 * .5 = .5.
  const std::vector<std::array<double, 4>> grids{
      {0.9, 0.05, 0.03, 0.02}, {0.3, 0.06, 0.04, 0.6}, {0.05, 0.2, 0.7, 0.05}, {0.45, 0.03, 0.02, 0.5}};
  Rng rng(4);
  std::vector<JointPrediction> preds;
  std::vector<GroundTruth> truths;
  for (const auto& g : grids) {
    const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
    JointPrediction p = make_prediction(g0, g1, 2, 0, 0);
    std::copy(g.begin(), g.end(), p.grid.values().begin());
    preds.push_back(p);
    truths.push_back({g0, g1, {0, 0}});
  }
  MapConfig cfg;
  cfg.top_k = 2;
  const MapReport r = joint_map(preds, truths, cfg);
  EXPECT_NEAR(r.map, 0.5, 1e-15);
  ASSERT_EQ(r.buckets.size(), 1u);
  EXPECT_EQ(r.buckets[0].bucket, "vehicle/vehicle");
  EXPECT_EQ(r.buckets[0].true_positives, 3u);
}

TEST(JointMap, OnlyFirstHitCounts) {
  Rng rng(5);
  const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
  JointPrediction p = make_prediction(g0, g1, 2, 0, 0);
  p.marginals[0].trajectories[1] = g0;  // cells (0,0) and (1,0) both hit
  p.grid.values() = {0.4, 0.1, 0.3, 0.2};
  MapConfig cfg;
  cfg.top_k = 4;
  // .4T .3F(duplicate) .2F .1F: AP = 1.
  EXPECT_EQ(joint_map(std::vector{p}, std::vector<GroundTruth>{{g0, g1, {0, 0}}}, cfg).map, 1.0);
}

TEST(JointMap, MeanOverTypePairBuckets) {
  Rng rng(6);
  std::vector<JointPrediction> preds;
  std::vector<GroundTruth> truths;
  const Trajectory a0 = random_trajectory(rng), a1 = random_trajectory(rng);
  const Trajectory b0 = random_trajectory(rng), b1 = random_trajectory(rng);
  preds.push_back(make_prediction(a0, a1, 2, 0, 0, ObjectType::kVehicle, ObjectType::kPedestrian));
  preds.back().grid.values() = {1.0, 0.0, 0.0, 0.0};
  preds.push_back(make_prediction(b0, b1, 2, 99, 99, ObjectType::kPedestrian, ObjectType::kVehicle));
  truths.push_back({a0, a1, {0, 0}});
  truths.push_back({b0, b1, {0, 0}});
  // Both fall in the unordered pair bucket.
  MapReport r = joint_map(preds, truths);
  ASSERT_EQ(r.buckets.size(), 1u);
  EXPECT_EQ(r.buckets[0].bucket, "vehicle/pedestrian");
  EXPECT_EQ(r.map, 0.5);

  preds[1].marginals[0].type = ObjectType::kCyclist;
  r = joint_map(preds, truths);
  ASSERT_EQ(r.buckets.size(), 2u);
  EXPECT_EQ(r.map, 0.5);  // (1 + 0) / 2
}

TEST(JointMap, InvalidMeasurementStepsAreSkipped) {
  Trajectory gt = Trajectory::constant({0.0, 0.0});
  Trajectory pred = gt;
  pred.points[29] = {50.0, 0.0};
  MapConfig cfg;
  EXPECT_FALSE(agent_hit(pred, gt, cfg));
  gt.valid[29] = false;
  EXPECT_TRUE(agent_hit(pred, gt, cfg));
  gt.valid[49] = gt.valid[79] = false;
  EXPECT_FALSE(agent_hit(pred, gt, cfg));
}

TEST(JointMap, Errors) {
  EXPECT_THROW(joint_map(std::vector<JointPrediction>{}, std::vector<GroundTruth>{}), Error);
  Rng rng(7);
  const Trajectory g = random_trajectory(rng);
  EXPECT_THROW(joint_map(std::vector{make_prediction(g, g, 2, 0, 0)}, std::vector<GroundTruth>{}), Error);
  MapConfig bad;
  bad.thresholds = {2.0, 0.0, 6.0};
  EXPECT_THROW(bad.validate(), Error);
  bad = MapConfig{};
  bad.steps = {30, 50, 81};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(JointMap, BoundedAndMonotoneUnderFixingFalsePositives) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<JointPrediction> preds;
    std::vector<GroundTruth> truths;
    for (int n = 0; n < 6; ++n) {
      const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
      JointPrediction p = make_prediction(g0, g1, 3, rng.index(5), rng.index(5));
      p.grid = testing::random_grid(rng, 3);
      preds.push_back(p);
      truths.push_back({g0, g1, {0, 0}});
    }
    const double before = joint_map(preds, truths).map;
    EXPECT_GE(before, 0.0);
    EXPECT_LE(before, 1.0);
    const std::size_t n = rng.index(preds.size());
    const std::vector<RankedCell> cells = top_cells(preds[n], 6);
    const RankedCell& c = cells[rng.index(cells.size())];
    preds[n].marginals[0].trajectories[c.i] = truths[n].gt0;
    preds[n].marginals[1].trajectories[c.j] = truths[n].gt1;
    EXPECT_GE(joint_map(preds, truths).map, before);
  }
}

TEST(Displacement, PerfectCellIsZero) {
  Rng rng(9);
  const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
  const JointPrediction p = make_prediction(g0, g1, 3, 2, 1);
  EXPECT_EQ(min_joint_ade(p, {g0, g1, {}}), 0.0);
  EXPECT_EQ(min_joint_fde(p, {g0, g1, {}}), 0.0);
}

TEST(Displacement, ConstantOffset) {
  Rng rng(10);
  const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
  JointPrediction p = make_prediction(g0, g1, 2, 0, 0);
  for (int a = 0; a < 2; ++a) {
    for (Trajectory& t : p.marginals[a].trajectories) t = shifted(a == 0 ? g0 : g1, {3.0, 4.0});
  }
  EXPECT_NEAR(min_joint_ade(p, {g0, g1, {}}), 5.0, 1e-12);
  EXPECT_NEAR(min_joint_fde(p, {g0, g1, {}}), 5.0, 1e-12);
}

TEST(Displacement, MatchesExhaustiveScan) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.index(4);
    const Trajectory g0 = random_trajectory(rng, 10.0, 0.3), g1 = random_trajectory(rng, 10.0, 0.3);
    JointPrediction p = make_prediction(g0, g1, k, 0, 0);
    for (int a = 0; a < 2; ++a) {
      for (Trajectory& t : p.marginals[a].trajectories) {
        t = random_trajectory(rng, 10.0);
        t.valid.fill(true);
      }
    }
    double best_ade = std::numeric_limits<double>::infinity(), best_fde = best_ade;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        double ade = 0.0, fde = 0.0;
        for (int a = 0; a < 2; ++a) {
          const Trajectory& gt = a == 0 ? g0 : g1;
          const Trajectory& pr = p.marginals[a].trajectories[a == 0 ? i : j];
          double sum = 0.0;
          int n = 0, last = -1;
          for (int t = 0; t < static_cast<int>(kFutureSteps); ++t) {
            if (!gt.valid[t]) continue;
            sum += std::hypot(pr.points[t].x - gt.points[t].x, pr.points[t].y - gt.points[t].y);
            ++n;
            last = t;
          }
          ade += sum / n / 2.0;
          fde += std::hypot(pr.points[last].x - gt.points[last].x, pr.points[last].y - gt.points[last].y) / 2.0;
        }
        best_ade = std::min(best_ade, ade);
        best_fde = std::min(best_fde, fde);
      }
    }
    EXPECT_NEAR(min_joint_ade(p, {g0, g1, {}}), best_ade, 1e-12);
    EXPECT_NEAR(min_joint_fde(p, {g0, g1, {}}), best_fde, 1e-12);
  }
}

TEST(RevealConfidences, Examples) {
  JointConfidenceGrid g(2);
  g.values() = {0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(reveal_confidences(g, {0, 0}, 0.0), g);
  const JointConfidenceGrid r = reveal_confidences(g, {0, 0}, 0.1);
  EXPECT_NEAR(r(0, 0), 0.9 * 0.25 + 0.1, 1e-15);
  EXPECT_NEAR(r(0, 0), 0.325, 1e-15);
  EXPECT_NEAR(r(0, 1), 0.225, 1e-15);
  EXPECT_NEAR(r(1, 0), 0.225, 1e-15);
  EXPECT_NEAR(r(1, 1), 0.225, 1e-15);
  const JointConfidenceGrid one = reveal_confidences(g, {1, 0}, 1.0);
  EXPECT_EQ(one.values(), (std::vector<double>{0.0, 0.0, 1.0, 0.0}));
  EXPECT_THROW(reveal_confidences(g, {0, 0}, 1.5), Error);
  EXPECT_THROW(reveal_confidences(g, {0, 0}, -0.1), Error);
}

TEST(RevealConfidences, PreservesNormalization) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const JointConfidenceGrid g = testing::random_grid(rng, 4);
    const JointConfidenceGrid r = reveal_confidences(g, {rng.index(4), rng.index(4)}, rng.uniform());
    EXPECT_NEAR(r.sum(), 1.0, 1e-12);
    for (double v : r.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(RevealConfidences, ClassificationLossDecreasesInAlpha) {
  Rng rng(13);
  const JointConfidenceGrid g = testing::random_grid(rng, 4);
  const AnchorAssignment a{2, 1};
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s <= 10; ++s) {
    const ClassificationLoss c = classification_loss(reveal_confidences(g, a, s / 10.0), a);
    const double l = c.core + c.marginal;
    EXPECT_LT(l, prev) << s;
    prev = l;
  }
  EXPECT_EQ(classification_loss(reveal_confidences(g, a, 1.0), a).core, 0.0);
}

TEST(RevealTrajectories, OnlyAssignedModesMove) {
  Rng rng(14);
  const Trajectory g0 = random_trajectory(rng, 20.0, 0.2), g1 = random_trajectory(rng, 20.0, 0.2);
  JointPrediction p = make_prediction(g0, g1, 3, 99, 99);
  for (int a = 0; a < 2; ++a) {
    for (Trajectory& t : p.marginals[a].trajectories) t = random_trajectory(rng);
  }
  const AnchorAssignment a{2, 0};
  EXPECT_EQ(reveal_trajectories(p, g0, g1, a, 0.0), p);

  const JointPrediction full = reveal_trajectories(p, g0, g1, a, 1.0);
  const JointPrediction part = reveal_trajectories(p, g0, g1, a, 0.1);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    if (g0.valid[t]) {
      EXPECT_EQ(full.marginals[0].trajectories[2].points[t], g0.points[t]);
      const Point2 x = p.marginals[0].trajectories[2].points[t];
      EXPECT_NEAR(part.marginals[0].trajectories[2].points[t].x, 0.9 * x.x + 0.1 * g0.points[t].x, 1e-12);
    } else {
      EXPECT_EQ(full.marginals[0].trajectories[2].points[t], p.marginals[0].trajectories[2].points[t]);
    }
    if (g1.valid[t]) {
      EXPECT_EQ(full.marginals[1].trajectories[0].points[t], g1.points[t]);
    }
  }
  for (const JointPrediction* r : {&full, &part}) {
    EXPECT_EQ(r->marginals[0].trajectories[0], p.marginals[0].trajectories[0]);
    EXPECT_EQ(r->marginals[0].trajectories[1], p.marginals[0].trajectories[1]);
    EXPECT_EQ(r->marginals[1].trajectories[1], p.marginals[1].trajectories[1]);
    EXPECT_EQ(r->marginals[1].trajectories[2], p.marginals[1].trajectories[2]);
    EXPECT_EQ(r->grid, p.grid);
  }
  EXPECT_THROW(reveal_trajectories(p, g0, g1, a, 2.0), Error);
}

TEST(Sensitivity, DegenerateModelHasUndefinedRegressionRatio) {
  // Perfect trajectories, uniform confidences; the assigned cell (2, 1) is
  // outside the row-major top 6 of a uniform 3x3 grid.
  Rng rng(15);
  std::vector<JointPrediction> preds;
  std::vector<GroundTruth> truths;
  for (int n = 0; n < 8; ++n) {
    const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
    preds.push_back(make_prediction(g0, g1, 3, 2, 1));
    truths.push_back({g0, g1, {2, 1}});
  }
  const SensitivityReport r = sensitivity_analysis(preds, truths, 0.1);
  EXPECT_EQ(r.baseline_reg, 0.0);
  EXPECT_FALSE(r.ratio_reg.has_value());
  ASSERT_TRUE(r.ratio_cls.has_value());
  EXPECT_GT(*r.ratio_cls, 0.0);
  EXPECT_FALSE(r.recommended.has_value());
  try {
    recommend_weights(r);
    FAIL() << "expected an undefined-ratio error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kUndefined);
    EXPECT_NE(std::string(e.what()).find("\"ratio_reg\":null"), std::string::npos);
  }
}

TEST(Sensitivity, BothDefectsGivePositiveWeights) {
  Rng rng(16);
  std::vector<JointPrediction> preds;
  std::vector<GroundTruth> truths;
  for (int n = 0; n < 6; ++n) {
    const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
    JointPrediction p = make_prediction(g0, g1, 3, 1, 1);
    if (n % 2 == 0) {
      // Confidence defect: the true cell ranks just below a wrong one.
      for (double& v : p.grid.values()) v = 0.71 / 7.0;
      p.grid(0, 0) = 0.15;
      p.grid(1, 1) = 0.14;
    } else {
      // Trajectory defect: 2.1 m off, just outside the 2 m gate.
      for (double& v : p.grid.values()) v = 0.1 / 8.0;
      p.grid(1, 1) = 0.9;
      p.marginals[0].trajectories[1] = shifted(g0, {2.1, 0.0});
      p.marginals[1].trajectories[1] = shifted(g1, {0.0, 2.1});
    }
    preds.push_back(p);
    truths.push_back({g0, g1, {1, 1}});
  }
  const SensitivityReport r = sensitivity_analysis(preds, truths, 0.1);
  ASSERT_TRUE(r.ratio_cls && r.ratio_reg);
  EXPECT_GT(*r.ratio_cls, 0.0);
  EXPECT_GT(*r.ratio_reg, 0.0);
  EXPECT_GT(r.revealed_conf_map, r.baseline_map);
  EXPECT_GT(r.revealed_traj_map, r.baseline_map);
  const LossWeights w = recommend_weights(r);
  EXPECT_EQ(w.w_reg, 1.0);
  EXPECT_TRUE(std::isfinite(w.w_cls));
  EXPECT_GT(w.w_cls, 0.0);
  ASSERT_TRUE(r.recommended.has_value());
  EXPECT_EQ(*r.recommended, w);

  const SensitivityReport full = sensitivity_analysis(preds, truths, 1.0, LossWeights{1.0, 60.0, 0.0});
  EXPECT_EQ(full.revealed_conf_cls, 0.0);
  EXPECT_EQ(full.revealed_traj_reg, 0.0);
  EXPECT_THROW(sensitivity_analysis(preds, truths, 0.0), Error);
}

TEST(RecommendWeights, Examples) {
  SensitivityReport r;
  r.ratio_cls = 0.02;
  r.ratio_reg = 0.02;
  EXPECT_EQ(recommend_weights(r).w_cls, 1.0);
  r.ratio_cls = 60.0 * 0.02;
  const LossWeights w = recommend_weights(r, 0.5);
  EXPECT_NEAR(w.w_cls, 60.0, 1e-12);
  EXPECT_EQ(w.w_reg, 1.0);
  EXPECT_EQ(w.w_m, 0.5);
  r.ratio_reg = 0.0;
  EXPECT_THROW(recommend_weights(r), Error);
  r.ratio_reg.reset();
  EXPECT_THROW(recommend_weights(r), Error);
}

TEST(Evaluate, ReportsLossWhenWeightsGiven) {
  Rng rng(17);
  const Trajectory g0 = random_trajectory(rng), g1 = random_trajectory(rng);
  const std::vector<JointPrediction> preds{make_prediction(g0, g1, 2, 0, 0)};
  const std::vector<GroundTruth> truths{{g0, g1, {0, 0}}};
  const EvalReport r = evaluate(preds, truths, MapConfig{}, LossWeights{});
  ASSERT_TRUE(r.loss.has_value());
  EXPECT_NEAR(r.loss->cls, std::log(4.0), 1e-12);
  EXPECT_EQ(r.loss->reg0, 0.0);
  EXPECT_EQ(r.min_ade, 0.0);
  const nlohmann::json j = eval_to_json(r);
  EXPECT_TRUE(j.contains("map"));
  EXPECT_FALSE(evaluate(preds, truths, MapConfig{}, std::nullopt).loss.has_value());
}

}  // namespace
}  // namespace airsq
