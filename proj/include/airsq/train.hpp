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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "airsq/anchors.hpp"
#include "airsq/common.hpp"
#include "airsq/loss.hpp"
#include "airsq/model.hpp"
#include "airsq/sampling.hpp"
#include "airsq/scenario.hpp"
#include "airsq/scenario_io.hpp"

namespace airsq {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 16;

  void validate() const {
    if (!(lr > 0.0) || !(eps > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(errc::kInvalidArgument, "optimizer: lr, eps > 0 and betas in [0, 1) required");
    }
    if (batch_size == 0) throw Error(errc::kInvalidArgument, "optimizer: batch size must be >= 1");
  }
};

struct TrainConfig {
  OptimizerConfig optimizer;
  LossWeights weights;
  std::size_t marginal_steps = 500;
  std::size_t joint_steps = 500;
  bool freeze_marginal = false;
  bool balanced = false;
  Representation representation = Representation::kRerasterized;
  std::uint64_t seed = 0;
};

struct LossPoint {
  std::string phase;
  std::size_t step = 0;  // global, 1-based
  double loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossPoint> curve;
};

class Adam {
 public:
  Adam(const ModelParams& like, const OptimizerConfig& cfg) : cfg_(cfg), m_(zeros_like(like)), v_(zeros_like(like)) {}

  // Updates every tensor whose group is not excluded.
  void step(ModelParams& params, ModelParams& grads, std::optional<ParamGroup> skip = std::nullopt) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<nn::Tensor*> ps, gs, ms, vs;
    std::vector<ParamGroup> groups;
    visit_params(params, [&](const std::string&, ParamGroup g, nn::Tensor& t) {
      ps.push_back(&t);
      groups.push_back(g);
    });
    visit_params(grads, [&](const std::string&, ParamGroup, nn::Tensor& t) { gs.push_back(&t); });
    visit_params(m_, [&](const std::string&, ParamGroup, nn::Tensor& t) { ms.push_back(&t); });
    visit_params(v_, [&](const std::string&, ParamGroup, nn::Tensor& t) { vs.push_back(&t); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (skip && groups[i] == *skip) continue;
      auto& p = ps[i]->data;
      const auto& g = gs[i]->data;
      auto& m = ms[i]->data;
      auto& v = vs[i]->data;
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        p[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  ModelParams m_, v_;
  std::size_t t_ = 0;
};

namespace detail {

// Batch index streams: uniform with replacement, or type-balanced.
class BatchSampler {
 public:
  BatchSampler(std::span<const Scenario> data, bool balanced, std::uint64_t seed)
      : balanced_(balanced), rng_(seed), seed_(seed) {
    if (data.empty()) throw Error(errc::kInvalidArgument, "train: empty dataset");
    n_ = data.size();
    if (balanced_) {
      for (std::size_t i = 0; i < data.size(); ++i) by_type_[type_index(scenario_type(data[i]))].push_back(i);
      for (ObjectType t : kAllObjectTypes) {
        if (by_type_[type_index(t)].empty()) {
          throw Error(errc::kInvalidArgument, "train: balanced sampling needs " + std::string(to_string(t)) +
                                                  " scenarios, found none");
        }
      }
    }
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    if (!balanced_) {
      for (std::size_t i = 0; i < count; ++i) out.push_back(rng_.index(n_));
      return out;
    }
    const PerTypeSizes sizes{by_type_[0].size(), by_type_[1].size(), by_type_[2].size()};
    for (const SampleRef& r : balanced_sample_refs(sizes, count, derive_seed(seed_, "batch-" + std::to_string(calls_++)))) {
      out.push_back(by_type_[type_index(r.type)][r.index]);
    }
    return out;
  }

 private:
  bool balanced_;
  Rng rng_;
  std::uint64_t seed_;
  std::size_t n_ = 0;
  std::size_t calls_ = 0;
  std::array<std::vector<std::size_t>, 3> by_type_;
};

inline void check_step(const std::string& phase, std::size_t step, double loss, const ModelParams& params) {
  if (!std::isfinite(loss)) {
    throw Error(errc::kNumerical, "train: " + phase + " step " + std::to_string(step) +
                                      ": non-finite batch loss (lower the learning rate or loss weights)");
  }
  if (!all_finite(params)) {
    throw Error(errc::kNumerical, "train: " + phase + " step " + std::to_string(step) + ": parameters diverged");
  }
}

// Per-scenario state that stays fixed while the marginal branch is frozen.
struct FrozenAgents {
  std::array<std::vector<double>, 2> z;
  double reg = 0.0;  // reg0 + reg1
};

}  // namespace detail

using ProgressFn = std::function<void(const LossPoint&)>;

// Phase "marginal": w_reg * (reg0 + reg1) + w_cls * marginal cross entropies.
// Phase "joint": the interaction loss; with freeze_marginal only the joint
// trunk and heads move.
inline TrainResult train_model(std::span<const Scenario> data, const AnchorLibrary& anchors, ModelParams params,
                         const ModelConfig& cfg, const TrainConfig& tc, const ProgressFn& progress = {}) {
  tc.optimizer.validate();
  tc.weights.validate();
  cfg.validate();
  check_anchors(anchors, cfg);
  TrainResult result;
  const std::size_t n = data.size();
  std::vector<AnchorAssignment> assign(n);
  for (std::size_t i = 0; i < n; ++i) assign[i] = assign_pair(data[i], anchors);

  const RasterConfig rc = cfg.input_raster();
  std::vector<std::optional<PairImages>> plain(n);
  auto plain_images = [&](std::size_t i) -> const PairImages& {
    if (!plain[i]) plain[i] = PairImages{rasterize(data[i], 0, rc), rasterize(data[i], 1, rc)};
    return *plain[i];
  };

  const double bs = static_cast<double>(tc.optimizer.batch_size);
  std::size_t global_step = 0;
  auto record = [&](const std::string& phase, double loss) {
    result.curve.push_back({phase, global_step, loss});
    if (progress) progress(result.curve.back());
  };

  // Phase 1.
  {
    Adam adam(params, tc.optimizer);
    detail::BatchSampler sampler(data, tc.balanced, derive_seed(tc.seed, "train-marginal"));
    for (std::size_t s = 0; s < tc.marginal_steps; ++s) {
      ++global_step;
      ModelParams grads = zeros_like(params);
      double loss = 0.0;
      for (std::size_t i : sampler.next(tc.optimizer.batch_size)) {
        const ExampleForward f = forward_example(data[i], plain_images(i), anchors, params, cfg);
        loss += accumulate_example_gradients(f, data[i], assign[i], tc.weights, Objective::kMarginal, false, 1.0 / bs,
                                             params, cfg, grads) /
                bs;
      }
      detail::check_step("marginal", s + 1, loss, params);
      adam.step(params, grads, ParamGroup::kJoint);
      detail::check_step("marginal", s + 1, loss, params);
      record("marginal", loss);
    }
  }

  // Phase 2.
  Adam adam(params, tc.optimizer);
  detail::BatchSampler sampler(data, tc.balanced, derive_seed(tc.seed, "train-joint"));
  std::vector<std::optional<detail::FrozenAgents>> frozen(n);
  auto frozen_agents = [&](std::size_t i) -> const detail::FrozenAgents& {
    if (!frozen[i]) {
      const PairImages imgs = tc.representation == Representation::kPlain
                                  ? plain_images(i)
                                  : render_inputs(data[i], tc.representation, anchors, params, cfg);
      detail::FrozenAgents fa;
      std::array<MarginalPrediction, 2> m;
      for (int slot = 0; slot < 2; ++slot) {
        AgentForward af = marginal_forward(imgs[static_cast<std::size_t>(slot)], data[i].pair_agent(slot), anchors,
                                           params, cfg);
        fa.z[static_cast<std::size_t>(slot)] = std::move(af.z);
        m[static_cast<std::size_t>(slot)] = std::move(af.prediction);
      }
      const RegressionLoss reg = regression_loss(m[0].trajectories, m[1].trajectories, data[i].pair_agent(0).future,
                                                 data[i].pair_agent(1).future, assign[i]);
      fa.reg = reg.reg0 + reg.reg1;
      frozen[i] = std::move(fa);
    }
    return *frozen[i];
  };

  for (std::size_t s = 0; s < tc.joint_steps; ++s) {
    ++global_step;
    ModelParams grads = zeros_like(params);
    double loss = 0.0;
    for (std::size_t i : sampler.next(tc.optimizer.batch_size)) {
      if (tc.freeze_marginal) {
        const detail::FrozenAgents& fa = frozen_agents(i);
        const Agent& a0 = data[i].pair_agent(0);
        const Agent& a1 = data[i].pair_agent(1);
        const JointForward j0 = joint_perspective_forward(fa.z[0], fa.z[1], a0.type, a0.is_sdc, a1.type, params, cfg);
        const JointForward j1 = joint_perspective_forward(fa.z[1], fa.z[0], a1.type, a1.is_sdc, a0.type, params, cfg);
        const std::size_t k = cfg.k_max();
        const JointConfidenceGrid grid = combine_perspectives(j0.probs, j1.probs, k);
        const ClassificationLoss cls = classification_loss(grid, assign[i]);
        const double total = tc.weights.w_reg * fa.reg + tc.weights.w_cls * (cls.core + tc.weights.w_m * cls.marginal);
        loss += total / bs;
        const std::vector<double> dg = classification_gradient(grid, assign[i], tc.weights);
        std::vector<double> d_p0(k * k), d_p1(k * k);
        for (std::size_t r = 0; r < k; ++r) {
          for (std::size_t c = 0; c < k; ++c) {
            d_p0[r * k + c] = dg[r * k + c] / (2.0 * bs);
            d_p1[c * k + r] = dg[r * k + c] / (2.0 * bs);
          }
        }
        std::vector<double> dz0(cfg.trunk_dim, 0.0), dz1(cfg.trunk_dim, 0.0);
        joint_perspective_backward(j0, d_p0, params, cfg, grads, dz0, dz1);
        joint_perspective_backward(j1, d_p1, params, cfg, grads, dz1, dz0);
      } else {
        const PairImages imgs = tc.representation == Representation::kPlain
                                    ? plain_images(i)
                                    : render_inputs(data[i], tc.representation, anchors, params, cfg);
        const ExampleForward f = forward_example(data[i], imgs, anchors, params, cfg);
        loss += accumulate_example_gradients(f, data[i], assign[i], tc.weights, Objective::kJoint, false, 1.0 / bs,
                                             params, cfg, grads) /
                bs;
      }
    }
    detail::check_step("joint", s + 1, loss, params);
    if (tc.freeze_marginal) {
      adam.step(params, grads, ParamGroup::kMarginal);
    } else {
      adam.step(params, grads);
    }
    detail::check_step("joint", s + 1, loss, params);
    record("joint", loss);
  }
  result.params = std::move(params);
  return result;
}

inline std::string loss_curve_csv(std::span<const LossPoint> curve) {
  std::string out = "phase,step,loss\n";
  char buf[64];
  for (const LossPoint& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g", p.loss);
    out += p.phase + "," + std::to_string(p.step) + "," + buf + "\n";
  }
  return out;
}

}  // namespace airsq
