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
#include <utility>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

// K x K probability matrix; rows index agent 0's anchors, columns agent 1's.
class JointConfidenceGrid {
 public:
  JointConfidenceGrid() = default;
  explicit JointConfidenceGrid(std::size_t k) : k_(k), p_(k * k, 0.0) {}

  std::size_t k() const { return k_; }
  double operator()(std::size_t i, std::size_t j) const { return p_[i * k_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return p_[i * k_ + j]; }
  const std::vector<double>& values() const { return p_; }
  std::vector<double>& values() { return p_; }

  double sum() const {
    double s = 0.0;
    for (double v : p_) s += v;
    return s;
  }

  JointConfidenceGrid transposed() const {
    JointConfidenceGrid t(k_);
    for (std::size_t i = 0; i < k_; ++i) {
      for (std::size_t j = 0; j < k_; ++j) t(j, i) = (*this)(i, j);
    }
    return t;
  }

  friend bool operator==(const JointConfidenceGrid&, const JointConfidenceGrid&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<double> p_;
};

// Per-agent anchored modes. `trajectories` and `confidences` have the padded
// length; modes at index >= active have probability exactly 0.
struct MarginalPrediction {
  ObjectType type = ObjectType::kVehicle;
  std::size_t active = 0;
  std::vector<Trajectory> trajectories;  // world frame
  std::vector<double> confidences;

  std::size_t top1() const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < active; ++k) {
      if (confidences[k] > confidences[best]) best = k;
    }
    return best;
  }

  friend bool operator==(const MarginalPrediction&, const MarginalPrediction&) = default;
};

// Joint confidences over the cartesian product of the two agents' modes; the
// trajectory pair of cell (i, j) is (marginals[0].trajectories[i],
// marginals[1].trajectories[j]).
struct JointPrediction {
  JointConfidenceGrid grid;
  std::array<MarginalPrediction, 2> marginals;

  std::pair<const Trajectory&, const Trajectory&> trajectories(std::size_t i, std::size_t j) const {
    return {marginals[0].trajectories.at(i), marginals[1].trajectories.at(j)};
  }

  JointPrediction with_swapped_pair() const {
    JointPrediction p;
    p.grid = grid.transposed();
    p.marginals = {marginals[1], marginals[0]};
    return p;
  }

  friend bool operator==(const JointPrediction&, const JointPrediction&) = default;
};

// Joint grid of two independent agents: the outer product of the marginal
// confidence vectors.
inline JointConfidenceGrid independent_product(const MarginalPrediction& m0, const MarginalPrediction& m1) {
  const std::size_t k = m0.confidences.size();
  JointConfidenceGrid g(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < m1.confidences.size() && j < k; ++j) g(i, j) = m0.confidences[i] * m1.confidences[j];
  }
  return g;
}

inline JointPrediction with_independent_grid(const JointPrediction& p) {
  JointPrediction out = p;
  out.grid = independent_product(p.marginals[0], p.marginals[1]);
  return out;
}

// Element-wise mean written as x0 + sum(x_m - x0) / M, so that M identical
// inputs reproduce x0 exactly.
inline double stable_mean(std::span<const double> xs) {
  const double x0 = xs[0];
  double acc = 0.0;
  for (double x : xs) acc += x - x0;
  return x0 + acc / static_cast<double>(xs.size());
}

// Average of M predictions for the same scenario: grids cell-wise, per-mode
// trajectories point-wise.
inline JointPrediction ensemble_models(std::span<const JointPrediction> preds) {
  if (preds.empty()) throw Error(errc::kInvalidArgument, "ensemble: need at least one prediction");
  const JointPrediction& first = preds[0];
  for (const JointPrediction& p : preds) {
    if (p.grid.k() != first.grid.k()) throw Error(errc::kInvalidArgument, "ensemble: mismatched K");
    for (int a = 0; a < 2; ++a) {
      if (p.marginals[a].active != first.marginals[a].active || p.marginals[a].type != first.marginals[a].type ||
          p.marginals[a].trajectories.size() != first.marginals[a].trajectories.size()) {
        throw Error(errc::kInvalidArgument, "ensemble: mismatched anchor sets");
      }
    }
  }
  JointPrediction out = first;
  std::vector<double> buf(preds.size());
  auto mean_of = [&](auto&& get) {
    for (std::size_t m = 0; m < preds.size(); ++m) buf[m] = get(preds[m]);
    return stable_mean(buf);
  };
  for (std::size_t c = 0; c < out.grid.values().size(); ++c) {
    out.grid.values()[c] = mean_of([&](const JointPrediction& p) { return p.grid.values()[c]; });
  }
  for (int a = 0; a < 2; ++a) {
    MarginalPrediction& m = out.marginals[a];
    for (std::size_t k = 0; k < m.confidences.size(); ++k) {
      m.confidences[k] = mean_of([&](const JointPrediction& p) { return p.marginals[a].confidences[k]; });
    }
    for (std::size_t k = 0; k < m.trajectories.size(); ++k) {
      for (std::size_t t = 0; t < kFutureSteps; ++t) {
        if (!m.trajectories[k].valid[t]) continue;
        m.trajectories[k].points[t].x =
            mean_of([&](const JointPrediction& p) { return p.marginals[a].trajectories[k].points[t].x; });
        m.trajectories[k].points[t].y =
            mean_of([&](const JointPrediction& p) { return p.marginals[a].trajectories[k].points[t].y; });
      }
    }
  }
  return out;
}

}  // namespace airsq
