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

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "airsq/anchors.hpp"
#include "airsq/common.hpp"
#include "airsq/loss.hpp"
#include "airsq/prediction.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

struct MapConfig {
  std::size_t top_k = 6;
  std::vector<std::size_t> steps{30, 50, 80};  // 1-based
  std::vector<double> thresholds{2.0, 3.6, 6.0};  // meters, one per step
  bool bucket_by_type_pair = true;

  void validate() const {
    if (top_k == 0) throw Error(errc::kInvalidArgument, "map config: top_k must be >= 1");
    if (steps.empty() || steps.size() != thresholds.size()) {
      throw Error(errc::kInvalidArgument, "map config: need one threshold per measurement step");
    }
    for (std::size_t s : steps) {
      if (s < 1 || s > kFutureSteps) throw Error(errc::kInvalidArgument, "map config: steps must be in 1..80");
    }
    for (double t : thresholds) {
      if (!(t > 0.0)) throw Error(errc::kInvalidArgument, "map config: thresholds must be > 0");
    }
  }
};

inline nlohmann::json map_config_to_json(const MapConfig& c) {
  return {{"top_k", c.top_k}, {"steps", c.steps}, {"thresholds", c.thresholds},
          {"bucket_by_type_pair", c.bucket_by_type_pair}};
}

inline MapConfig map_config_from_json(const nlohmann::json& j) {
  MapConfig c;
  try {
    c.top_k = j.value("top_k", c.top_k);
    if (j.contains("steps")) c.steps = j.at("steps").get<std::vector<std::size_t>>();
    if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::vector<double>>();
    c.bucket_by_type_pair = j.value("bucket_by_type_pair", c.bucket_by_type_pair);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, std::string("map config: ") + e.what());
  }
  c.validate();
  return c;
}

struct GroundTruth {
  Trajectory gt0;
  Trajectory gt1;
  AnchorAssignment assignment;
};

inline GroundTruth ground_truth(const Scenario& s, const AnchorLibrary& anchors) {
  return {s.pair_agent(0).future, s.pair_agent(1).future, assign_pair(s, anchors)};
}

// Within threshold at every measurement step where the ground truth is valid;
// no valid measurement step means a miss.
inline bool agent_hit(const Trajectory& pred, const Trajectory& gt, const MapConfig& cfg) {
  bool measured = false;
  for (std::size_t m = 0; m < cfg.steps.size(); ++m) {
    const std::size_t t = cfg.steps[m] - 1;
    if (!gt.valid[t]) continue;
    if (!pred.valid[t]) return false;
    if (norm(pred.points[t] - gt.points[t]) > cfg.thresholds[m]) return false;
    measured = true;
  }
  return measured;
}

struct RankedCell {
  std::size_t i = 0;
  std::size_t j = 0;
  double confidence = 0.0;
};

// Active cells by descending confidence, ties to the lower row-major index.
inline std::vector<RankedCell> top_cells(const JointPrediction& p, std::size_t top_k) {
  std::vector<RankedCell> cells;
  for (std::size_t i = 0; i < p.marginals[0].active; ++i) {
    for (std::size_t j = 0; j < p.marginals[1].active; ++j) cells.push_back({i, j, p.grid(i, j)});
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const RankedCell& a, const RankedCell& b) { return a.confidence > b.confidence; });
  if (cells.size() > top_k) cells.resize(top_k);
  return cells;
}

inline std::string bucket_name(ObjectType a, ObjectType b) {
  if (type_index(b) < type_index(a)) std::swap(a, b);
  return std::string(to_string(a)) + "/" + std::string(to_string(b));
}

struct ScoredCell {
  double confidence = 0.0;
  bool true_positive = false;
};

// Area under the interpolated (monotone) precision-recall curve. Ties in
// confidence keep the input order.
inline double average_precision(std::vector<ScoredCell> cells, std::size_t positives) {
  if (positives == 0) return 0.0;
  std::stable_sort(cells.begin(), cells.end(),
                   [](const ScoredCell& a, const ScoredCell& b) { return a.confidence > b.confidence; });
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (cells[r].true_positive) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }
  for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (recall[r] > prev_recall) {
      ap += (recall[r] - prev_recall) * precision[r];
      prev_recall = recall[r];
    }
  }
  return ap;
}

struct BucketResult {
  std::string bucket;
  double ap = 0.0;
  std::size_t scenarios = 0;
  std::size_t true_positives = 0;
};

struct MapReport {
  double map = 0.0;
  std::vector<BucketResult> buckets;  // sorted by name
};

inline MapReport joint_map(std::span<const JointPrediction> preds, std::span<const GroundTruth> truths,
                           const MapConfig& cfg = {}) {
  cfg.validate();
  if (preds.empty()) throw Error(errc::kInvalidArgument, "joint_map: empty input");
  if (preds.size() != truths.size()) {
    throw Error(errc::kInvalidArgument, "joint_map: " + std::to_string(preds.size()) + " predictions vs " +
                                            std::to_string(truths.size()) + " ground truths");
  }
  std::map<std::string, std::pair<std::vector<ScoredCell>, BucketResult>> buckets;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const JointPrediction& p = preds[n];
    const std::string name =
        cfg.bucket_by_type_pair ? bucket_name(p.marginals[0].type, p.marginals[1].type) : std::string("all");
    auto& [cells, res] = buckets[name];
    res.bucket = name;
    ++res.scenarios;
    bool found = false;
    for (const RankedCell& c : top_cells(p, cfg.top_k)) {
      const bool hit = !found && agent_hit(p.marginals[0].trajectories[c.i], truths[n].gt0, cfg) &&
                       agent_hit(p.marginals[1].trajectories[c.j], truths[n].gt1, cfg);
      found = found || hit;
      cells.push_back({c.confidence, hit});
    }
    if (found) ++res.true_positives;
  }
  MapReport report;
  for (auto& [name, entry] : buckets) {
    entry.second.ap = average_precision(std::move(entry.first), entry.second.scenarios);
    report.buckets.push_back(entry.second);
  }
  double sum = 0.0;
  for (const BucketResult& b : report.buckets) sum += b.ap;
  report.map = sum / static_cast<double>(report.buckets.size());
  return report;
}

namespace detail {

inline double mean_displacement(const Trajectory& pred, const Trajectory& gt) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    if (!gt.valid[t]) continue;
    if (!pred.valid[t]) return std::numeric_limits<double>::infinity();
    sum += norm(pred.points[t] - gt.points[t]);
    ++n;
  }
  if (n == 0) throw Error(errc::kInvalidArgument, "min_joint_ade: ground truth has no valid step");
  return sum / static_cast<double>(n);
}

inline double final_displacement(const Trajectory& pred, const Trajectory& gt) {
  for (std::size_t t = kFutureSteps; t-- > 0;) {
    if (!gt.valid[t]) continue;
    if (!pred.valid[t]) return std::numeric_limits<double>::infinity();
    return norm(pred.points[t] - gt.points[t]);
  }
  throw Error(errc::kInvalidArgument, "min_joint_fde: ground truth has no valid step");
}

template <class F>
double min_over_cells(const JointPrediction& p, const GroundTruth& truth, F&& per_agent) {
  const std::size_t k0 = p.marginals[0].active, k1 = p.marginals[1].active;
  if (k0 == 0 || k1 == 0) throw Error(errc::kInvalidArgument, "joint prediction has no active modes");
  std::vector<double> d0(k0), d1(k1);
  for (std::size_t i = 0; i < k0; ++i) d0[i] = per_agent(p.marginals[0].trajectories[i], truth.gt0);
  for (std::size_t j = 0; j < k1; ++j) d1[j] = per_agent(p.marginals[1].trajectories[j], truth.gt1);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k0; ++i) {
    for (std::size_t j = 0; j < k1; ++j) best = std::min(best, (d0[i] + d1[j]) / 2.0);
  }
  return best;
}

}  // namespace detail

// Minimum over active cells of the two agents' mean displacement, averaged.
inline double min_joint_ade(const JointPrediction& p, const GroundTruth& truth) {
  return detail::min_over_cells(p, truth, detail::mean_displacement);
}

// Same with the displacement at the last valid ground-truth step.
inline double min_joint_fde(const JointPrediction& p, const GroundTruth& truth) {
  return detail::min_over_cells(p, truth, detail::final_displacement);
}

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(errc::kInvalidArgument, "reveal: alpha must be in [0, 1], got " + std::to_string(alpha));
  }
}

}  // namespace detail

// (1 - alpha) p + alpha onehot(i*, j*), written as p + alpha (onehot - p) so
// that cells already at the target stay put; alpha = 1 is exact.
inline JointConfidenceGrid reveal_confidences(const JointConfidenceGrid& grid, AnchorAssignment a, double alpha) {
  detail::check_alpha(alpha);
  check_assignment(grid, a);
  JointConfidenceGrid out = grid;
  for (std::size_t i = 0; i < grid.k(); ++i) {
    for (std::size_t j = 0; j < grid.k(); ++j) {
      const double target = (i == a.i_star && j == a.j_star) ? 1.0 : 0.0;
      out(i, j) = alpha == 1.0 ? target : grid(i, j) + alpha * (target - grid(i, j));
    }
  }
  return out;
}

// Moves only the assigned modes toward ground truth, at valid steps.
inline JointPrediction reveal_trajectories(const JointPrediction& p, const Trajectory& gt0, const Trajectory& gt1,
                                           AnchorAssignment a, double alpha) {
  detail::check_alpha(alpha);
  JointPrediction out = p;
  const std::array<std::size_t, 2> stars{a.i_star, a.j_star};
  const std::array<const Trajectory*, 2> gts{&gt0, &gt1};
  for (std::size_t slot = 0; slot < 2; ++slot) {
    Trajectory& t = out.marginals[slot].trajectories.at(stars[slot]);
    for (std::size_t s = 0; s < kFutureSteps; ++s) {
      if (!gts[slot]->valid[s]) continue;
      t.points[s] = alpha == 1.0 ? gts[slot]->points[s] : t.points[s] + alpha * (gts[slot]->points[s] - t.points[s]);
      t.valid[s] = true;
    }
  }
  return out;
}

struct SensitivityReport {
  double alpha = 0.1;
  double baseline_map = 0.0, baseline_cls = 0.0, baseline_reg = 0.0;
  double revealed_conf_map = 0.0, revealed_conf_cls = 0.0;
  double revealed_traj_map = 0.0, revealed_traj_reg = 0.0;
  std::optional<double> ratio_cls;  // dmAP / dL_cls, absent when dL_cls = 0
  std::optional<double> ratio_reg;
  std::optional<LossWeights> recommended;
};

// Weights proportional to the ratios, normalised to w_reg = 1.
inline LossWeights recommend_weights(const SensitivityReport& r, double w_m = 1.0);

inline nlohmann::json sensitivity_to_json(const SensitivityReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {
      {"alpha", r.alpha},
      {"baseline", {{"map", r.baseline_map}, {"l_cls", r.baseline_cls}, {"l_reg", r.baseline_reg}}},
      {"revealed_conf", {{"map", r.revealed_conf_map}, {"l_cls", r.revealed_conf_cls}}},
      {"revealed_traj", {{"map", r.revealed_traj_map}, {"l_reg", r.revealed_traj_reg}}},
      {"ratio_cls", opt(r.ratio_cls)},
      {"ratio_reg", opt(r.ratio_reg)},
      {"recommended", nullptr}};
  if (r.recommended) {
    j["recommended"] = {{"w_cls", r.recommended->w_cls}, {"w_reg", r.recommended->w_reg},
                        {"w_m", r.recommended->w_m}};
  }
  return j;
}

inline LossWeights recommend_weights(const SensitivityReport& r, double w_m) {
  auto fail = [&](const std::string& why) {
    throw Error(errc::kUndefined, "recommend_weights: " + why + "; report: " + sensitivity_to_json(r).dump());
  };
  if (!r.ratio_cls) fail("ratio_cls undefined (classification loss unchanged by reveal)");
  if (!r.ratio_reg) fail("ratio_reg undefined (regression loss unchanged by reveal)");
  if (!(*r.ratio_cls > 0.0) || !std::isfinite(*r.ratio_cls)) fail("ratio_cls must be > 0");
  if (!(*r.ratio_reg > 0.0) || !std::isfinite(*r.ratio_reg)) fail("ratio_reg must be > 0");
  LossWeights w;
  w.w_reg = 1.0;
  w.w_cls = *r.ratio_cls / *r.ratio_reg;
  w.w_m = w_m;
  return w;
}

// L_cls is cls_core + w_m * marginal; L_reg is reg0 + reg1; both averaged over
// the set before forming ratios.
inline SensitivityReport sensitivity_analysis(std::span<const JointPrediction> preds,
                                              std::span<const GroundTruth> truths, double alpha,
                                              const LossWeights& w = {}, const MapConfig& map_cfg = {}) {
  if (preds.empty()) throw Error(errc::kInvalidArgument, "sensitivity: empty eval set");
  if (preds.size() != truths.size()) throw Error(errc::kInvalidArgument, "sensitivity: size mismatch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(errc::kInvalidArgument, "sensitivity: alpha must be in (0, 1]");
  const double n = static_cast<double>(preds.size());
  SensitivityReport r;
  r.alpha = alpha;
  std::vector<JointPrediction> conf(preds.begin(), preds.end());
  std::vector<JointPrediction> traj;
  traj.reserve(preds.size());
  for (std::size_t e = 0; e < preds.size(); ++e) {
    const GroundTruth& g = truths[e];
    const ClassificationLoss c = classification_loss(preds[e].grid, g.assignment);
    const RegressionLoss reg =
        regression_loss(preds[e].marginals[0].trajectories, preds[e].marginals[1].trajectories, g.gt0, g.gt1,
                        g.assignment);
    r.baseline_cls += (c.core + w.w_m * c.marginal) / n;
    r.baseline_reg += (reg.reg0 + reg.reg1) / n;

    conf[e].grid = reveal_confidences(preds[e].grid, g.assignment, alpha);
    const ClassificationLoss rc = classification_loss(conf[e].grid, g.assignment);
    r.revealed_conf_cls += (rc.core + w.w_m * rc.marginal) / n;

    traj.push_back(reveal_trajectories(preds[e], g.gt0, g.gt1, g.assignment, alpha));
    const RegressionLoss rr = regression_loss(traj[e].marginals[0].trajectories, traj[e].marginals[1].trajectories,
                                              g.gt0, g.gt1, g.assignment);
    r.revealed_traj_reg += (rr.reg0 + rr.reg1) / n;
  }
  r.baseline_map = joint_map(preds, truths, map_cfg).map;
  r.revealed_conf_map = joint_map(conf, truths, map_cfg).map;
  r.revealed_traj_map = joint_map(traj, truths, map_cfg).map;

  const double d_cls = r.baseline_cls - r.revealed_conf_cls;
  const double d_reg = r.baseline_reg - r.revealed_traj_reg;
  if (d_cls != 0.0) r.ratio_cls = (r.revealed_conf_map - r.baseline_map) / d_cls;
  if (d_reg != 0.0) r.ratio_reg = (r.revealed_traj_map - r.baseline_map) / d_reg;
  if (r.ratio_cls && r.ratio_reg && *r.ratio_cls > 0.0 && *r.ratio_reg > 0.0) {
    r.recommended = recommend_weights(r, w.w_m);
  }
  return r;
}

struct EvalReport {
  MapReport map;
  double min_ade = 0.0;  // means over scenarios
  double min_fde = 0.0;
  std::optional<LossBreakdown> loss;  // mean, when assignments are known
  std::size_t scenarios = 0;
};

inline EvalReport evaluate(std::span<const JointPrediction> preds, std::span<const GroundTruth> truths,
                           const MapConfig& cfg, const std::optional<LossWeights>& weights) {
  EvalReport r;
  r.map = joint_map(preds, truths, cfg);
  r.scenarios = preds.size();
  const double n = static_cast<double>(preds.size());
  LossBreakdown mean{};
  for (std::size_t e = 0; e < preds.size(); ++e) {
    r.min_ade += min_joint_ade(preds[e], truths[e]) / n;
    r.min_fde += min_joint_fde(preds[e], truths[e]) / n;
    if (weights) {
      const LossBreakdown b = evaluate_loss(preds[e], truths[e].gt0, truths[e].gt1, truths[e].assignment, *weights);
      mean.total += b.total / n;
      mean.cls += b.cls / n;
      mean.marginal += b.marginal / n;
      mean.reg0 += b.reg0 / n;
      mean.reg1 += b.reg1 / n;
    }
  }
  if (weights) r.loss = mean;
  return r;
}

inline nlohmann::json eval_to_json(const EvalReport& r) {
  nlohmann::json buckets = nlohmann::json::array();
  for (const BucketResult& b : r.map.buckets) {
    buckets.push_back({{"bucket", b.bucket}, {"ap", b.ap}, {"scenarios", b.scenarios},
                       {"true_positives", b.true_positives}});
  }
  nlohmann::json j = {{"map", r.map.map},       {"buckets", buckets},   {"min_ade", r.min_ade},
                      {"min_fde", r.min_fde},   {"scenarios", r.scenarios}, {"loss", nullptr}};
  if (r.loss) {
    j["loss"] = {{"total", r.loss->total}, {"cls", r.loss->cls}, {"marginal", r.loss->marginal},
                 {"reg0", r.loss->reg0}, {"reg1", r.loss->reg1}};
  }
  return j;
}

}  // namespace airsq
