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

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "airsq/anchors.hpp"
#include "airsq/common.hpp"
#include "airsq/prediction.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

// Probabilities are clamped from below before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossWeights {
  double w_reg = 1.0;
  double w_cls = 60.0;
  double w_m = 1.0;

  void validate() const {
    if (!(w_reg >= 0.0) || !(w_cls >= 0.0) || !(w_m >= 0.0)) {
      throw Error(errc::kInvalidArgument, "loss weights must be finite and >= 0");
    }
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct ClassificationLoss {
  double core = 0.0;      // -log p[i*, j*]
  double marginal = 0.0;  // -log sum_j p[i*, j] - log sum_i p[i, j*]
};

struct RegressionLoss {
  double reg0 = 0.0;
  double reg1 = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double marginal = 0.0;
  double reg0 = 0.0;
  double reg1 = 0.0;
};

inline double safe_neg_log(double p) { return -std::log(std::max(p, kProbabilityFloor)); }

inline double row_sum(const JointConfidenceGrid& g, std::size_t i) {
  double s = 0.0;
  for (std::size_t j = 0; j < g.k(); ++j) s += g(i, j);
  return s;
}

inline double col_sum(const JointConfidenceGrid& g, std::size_t j) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.k(); ++i) s += g(i, j);
  return s;
}

inline void check_assignment(const JointConfidenceGrid& grid, AnchorAssignment a) {
  if (a.i_star >= grid.k() || a.j_star >= grid.k()) throw Error(errc::kInvalidArgument, "assignment out of range");
}

inline ClassificationLoss classification_loss(const JointConfidenceGrid& grid, AnchorAssignment a) {
  check_assignment(grid, a);
  return {safe_neg_log(grid(a.i_star, a.j_star)),
          safe_neg_log(row_sum(grid, a.i_star)) + safe_neg_log(col_sum(grid, a.j_star))};
}

// 1/2 * sum over ground-truth-valid steps of the squared point error.
inline double regression_term(const Trajectory& pred, const Trajectory& gt) {
  double s = 0.0;
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    if (gt.valid[t]) s += squared_norm(pred.points[t] - gt.points[t]);
  }
  return 0.5 * s;
}

inline RegressionLoss regression_loss(std::span<const Trajectory> pred0, std::span<const Trajectory> pred1,
                                      const Trajectory& gt0, const Trajectory& gt1, AnchorAssignment a) {
  if (a.i_star >= pred0.size() || a.j_star >= pred1.size()) {
    throw Error(errc::kInvalidArgument, "regression_loss: assignment out of range");
  }
  return {regression_term(pred0[a.i_star], gt0), regression_term(pred1[a.j_star], gt1)};
}

inline LossBreakdown total_loss(const ClassificationLoss& cls, const RegressionLoss& reg, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(cls.core) || !std::isfinite(cls.marginal) || !std::isfinite(reg.reg0) ||
      !std::isfinite(reg.reg1)) {
    throw Error(errc::kNumerical, "total_loss: non-finite loss component");
  }
  LossBreakdown b;
  b.cls = cls.core;
  b.marginal = cls.marginal;
  b.reg0 = reg.reg0;
  b.reg1 = reg.reg1;
  b.total = w.w_reg * (reg.reg0 + reg.reg1) + w.w_cls * (cls.core + w.w_m * cls.marginal);
  return b;
}

inline LossBreakdown evaluate_loss(const JointPrediction& pred, const Trajectory& gt0, const Trajectory& gt1,
                                   AnchorAssignment a, const LossWeights& w) {
  return total_loss(classification_loss(pred.grid, a),
                    regression_loss(pred.marginals[0].trajectories, pred.marginals[1].trajectories, gt0, gt1, a), w);
}

using TrajectoryGradient = std::array<Point2, kFutureSteps>;

struct LossGradients {
  std::vector<double> d_grid;                  // K*K, row-major like the grid
  std::vector<TrajectoryGradient> d_pred0;     // one per mode of agent 0
  std::vector<TrajectoryGradient> d_pred1;
};

// Gradient of w_cls * (cls_core + w_m * marginal) w.r.t. the grid cells.
// Terms whose probability sits at the clamp floor contribute zero.
inline std::vector<double> classification_gradient(const JointConfidenceGrid& grid, AnchorAssignment a,
                                                   const LossWeights& w) {
  check_assignment(grid, a);
  const std::size_t k = grid.k();
  std::vector<double> d(k * k, 0.0);
  const double p = grid(a.i_star, a.j_star);
  if (p > kProbabilityFloor) d[a.i_star * k + a.j_star] += -w.w_cls / p;
  const double r = row_sum(grid, a.i_star);
  if (r > kProbabilityFloor) {
    for (std::size_t j = 0; j < k; ++j) d[a.i_star * k + j] += -w.w_cls * w.w_m / r;
  }
  const double c = col_sum(grid, a.j_star);
  if (c > kProbabilityFloor) {
    for (std::size_t i = 0; i < k; ++i) d[i * k + a.j_star] += -w.w_cls * w.w_m / c;
  }
  return d;
}

// Closed-form gradients of the weighted total.
inline LossGradients loss_gradients(const JointConfidenceGrid& grid, std::span<const Trajectory> pred0,
                                    std::span<const Trajectory> pred1, const Trajectory& gt0, const Trajectory& gt1,
                                    AnchorAssignment a, const LossWeights& w) {
  LossGradients g;
  g.d_grid = classification_gradient(grid, a, w);
  g.d_pred0.assign(pred0.size(), TrajectoryGradient{});
  g.d_pred1.assign(pred1.size(), TrajectoryGradient{});
  if (a.i_star >= pred0.size() || a.j_star >= pred1.size()) {
    throw Error(errc::kInvalidArgument, "loss: assignment out of range of predictions");
  }

  auto reg_grad = [&](const Trajectory& pred, const Trajectory& gt, TrajectoryGradient& out) {
    for (std::size_t t = 0; t < kFutureSteps; ++t) {
      if (!gt.valid[t]) continue;
      out[t] = w.w_reg * (pred.points[t] - gt.points[t]);
    }
  };
  reg_grad(pred0[a.i_star], gt0, g.d_pred0[a.i_star]);
  reg_grad(pred1[a.j_star], gt1, g.d_pred1[a.j_star]);
  return g;
}

// Single-agent cross entropy on marginal confidences, -log q[k*], used for
// marginal pretraining.
inline double marginal_cross_entropy(std::span<const double> confidences, std::size_t k_star) {
  return safe_neg_log(confidences[k_star]);
}

}  // namespace airsq
