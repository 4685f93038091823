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
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "airsq/anchors.hpp"
#include "airsq/common.hpp"
#include "airsq/loss.hpp"
#include "airsq/nn.hpp"
#include "airsq/prediction.hpp"
#include "airsq/raster.hpp"
#include "airsq/scenario.hpp"
#include "airsq/spline.hpp"

namespace airsq {

enum class Representation { kPlain, kRerasterized };

inline std::string_view to_string(Representation r) {
  return r == Representation::kPlain ? "plain" : "rerasterized";
}

inline Representation parse_representation(std::string_view s) {
  if (s == "plain") return Representation::kPlain;
  if (s == "rerasterized") return Representation::kRerasterized;
  throw Error(errc::kInvalidArgument, "unknown representation '" + std::string(s) + "'");
}

inline constexpr std::size_t kPastFeatureDim = kPastSteps * 6;
inline constexpr std::size_t kModeOutputs = kNumControlPoints * 2;
inline constexpr std::size_t kSdcJointHead = 3;

// Padded modes are anchored here, far outside any scene.
inline constexpr Point2 kSentinelAnchor{1e4, 1e4};

inline constexpr double kHiddenBiasInit = 0.01;

struct ModelConfig {
  RasterConfig raster;  // full-resolution canvas; the network sees raster.scaled(downscale)
  int downscale = 2;
  bool coord_channels = true;
  std::array<std::size_t, 4> conv_channels{8, 16, 32, 32};
  std::size_t trunk_dim = 64;
  std::size_t head_hidden = 64;
  std::size_t joint_hidden = 64;
  double residual_scale = 1.0;
  std::array<std::size_t, 3> k_per_type{32, 8, 30};

  std::size_t k_max() const { return std::max({k_per_type[0], k_per_type[1], k_per_type[2]}); }
  RasterConfig input_raster() const { return raster.scaled(downscale); }
  std::size_t input_channels() const { return coord_channels ? 5 : 3; }
  std::size_t embed_dim() const { return conv_channels[3]; }
  std::size_t head_outputs() const { return k_max() * (kModeOutputs + 1); }

  void validate() const {
    input_raster().validate();
    for (std::size_t c : conv_channels) {
      if (c == 0) throw Error(errc::kInvalidArgument, "model: conv channels must be > 0");
    }
    if (trunk_dim == 0 || head_hidden == 0 || joint_hidden == 0) {
      throw Error(errc::kInvalidArgument, "model: layer sizes must be > 0");
    }
    for (std::size_t k : k_per_type) {
      if (k == 0) throw Error(errc::kInvalidArgument, "model: K must be >= 1 for every type");
    }
  }

};

inline ModelConfig with_anchor_counts(ModelConfig cfg, const AnchorLibrary& lib) {
  for (ObjectType t : kAllObjectTypes) cfg.k_per_type[type_index(t)] = lib[type_index(t)].k();
  return cfg;
}

inline nlohmann::json raster_config_to_json(const RasterConfig& r) {
  return {{"height", r.height}, {"width", r.width}, {"resolution", r.resolution}, {"ego_row", r.ego_row},
          {"ego_col", r.ego_col}};
}

inline RasterConfig raster_config_from_json(const nlohmann::json& j, RasterConfig r = {}) {
  r.height = j.value("height", r.height);
  r.width = j.value("width", r.width);
  r.resolution = j.value("resolution", r.resolution);
  r.ego_row = j.value("ego_row", r.ego_row);
  r.ego_col = j.value("ego_col", r.ego_col);
  return r;
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"raster", raster_config_to_json(c.raster)},
          {"downscale", c.downscale},
          {"coord_channels", c.coord_channels},
          {"conv_channels", c.conv_channels},
          {"trunk_dim", c.trunk_dim},
          {"head_hidden", c.head_hidden},
          {"joint_hidden", c.joint_hidden},
          {"residual_scale", c.residual_scale},
          {"k_per_type", c.k_per_type}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  try {
    if (j.contains("raster")) c.raster = raster_config_from_json(j.at("raster"), c.raster);
    c.downscale = j.value("downscale", c.downscale);
    c.coord_channels = j.value("coord_channels", c.coord_channels);
    if (j.contains("conv_channels")) c.conv_channels = j.at("conv_channels").get<std::array<std::size_t, 4>>();
    c.trunk_dim = j.value("trunk_dim", c.trunk_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.joint_hidden = j.value("joint_hidden", c.joint_hidden);
    c.residual_scale = j.value("residual_scale", c.residual_scale);
    if (j.contains("k_per_type")) c.k_per_type = j.at("k_per_type").get<std::array<std::size_t, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, std::string("model config: ") + e.what());
  }
  return c;
}

struct MarginalHead {
  nn::Linear embed;  // intermediate embedding -> hidden
  nn::Linear out;    // hidden -> K * (control points + logit)

  friend bool operator==(const MarginalHead&, const MarginalHead&) = default;
};

struct ModelParams {
  std::array<nn::Conv, 4> conv;
  nn::Linear trunk;  // image embedding -> intermediate embedding
  nn::Linear past;   // past-state features, added to the trunk output
  std::array<MarginalHead, 3> heads;  // indexed by ObjectType
  nn::Linear joint_trunk;
  std::array<nn::Linear, 4> joint_heads;  // vehicle, pedestrian, cyclist, self-driving car

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

enum class ParamGroup { kMarginal, kJoint };

// f(name, group, tensor) for every tensor, in a fixed order.
template <class Params, class F>
void visit_params(Params& p, F&& f) {
  for (std::size_t i = 0; i < p.conv.size(); ++i) {
    f("conv" + std::to_string(i) + ".w", ParamGroup::kMarginal, p.conv[i].w);
    f("conv" + std::to_string(i) + ".b", ParamGroup::kMarginal, p.conv[i].b);
  }
  f(std::string("trunk.w"), ParamGroup::kMarginal, p.trunk.w);
  f(std::string("trunk.b"), ParamGroup::kMarginal, p.trunk.b);
  f(std::string("past.w"), ParamGroup::kMarginal, p.past.w);
  f(std::string("past.b"), ParamGroup::kMarginal, p.past.b);
  for (ObjectType t : kAllObjectTypes) {
    auto& h = p.heads[type_index(t)];
    const std::string pre = "head." + std::string(to_string(t)) + ".";
    f(pre + "embed.w", ParamGroup::kMarginal, h.embed.w);
    f(pre + "embed.b", ParamGroup::kMarginal, h.embed.b);
    f(pre + "out.w", ParamGroup::kMarginal, h.out.w);
    f(pre + "out.b", ParamGroup::kMarginal, h.out.b);
  }
  f(std::string("joint_trunk.w"), ParamGroup::kJoint, p.joint_trunk.w);
  f(std::string("joint_trunk.b"), ParamGroup::kJoint, p.joint_trunk.b);
  static constexpr std::array<const char*, 4> kJointNames{"vehicle", "pedestrian", "cyclist", "sdc"};
  for (std::size_t i = 0; i < p.joint_heads.size(); ++i) {
    f("joint_head." + std::string(kJointNames[i]) + ".w", ParamGroup::kJoint, p.joint_heads[i].w);
    f("joint_head." + std::string(kJointNames[i]) + ".b", ParamGroup::kJoint, p.joint_heads[i].b);
  }
}

inline ModelParams zero_params(const ModelConfig& cfg) {
  ModelParams p;
  std::size_t in = cfg.input_channels();
  for (std::size_t i = 0; i < 4; ++i) {
    p.conv[i] = nn::Conv(in, cfg.conv_channels[i]);
    in = cfg.conv_channels[i];
  }
  p.trunk = nn::Linear(cfg.embed_dim(), cfg.trunk_dim);
  p.past = nn::Linear(kPastFeatureDim, cfg.trunk_dim);
  for (auto& h : p.heads) {
    h.embed = nn::Linear(cfg.trunk_dim, cfg.head_hidden);
    h.out = nn::Linear(cfg.head_hidden, cfg.head_outputs());
  }
  p.joint_trunk = nn::Linear(2 * cfg.trunk_dim, cfg.joint_hidden);
  for (auto& h : p.joint_heads) h = nn::Linear(cfg.joint_hidden, cfg.k_max() * cfg.k_max());
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  visit_params(z, [](const std::string&, ParamGroup, nn::Tensor& t) { t.zero(); });
  return z;
}

// He-normal for layers feeding a ReLU, a 0.1-scaled LeCun-normal for the
// output layers (small initial residuals, near-uniform confidences). Hidden
// biases start slightly positive so that blank image regions do not sit
// exactly on the ReLU kink; output biases start at 0.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p = zero_params(cfg);
  Rng rng(seed);
  auto fill = [&](nn::Tensor& w, std::size_t fan_in, double stddev_scale) {
    const double sd = stddev_scale / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.data) v = sd * rng.normal();
  };
  auto hidden_bias = [](nn::Tensor& b) { std::fill(b.data.begin(), b.data.end(), kHiddenBiasInit); };
  for (auto& c : p.conv) {
    fill(c.w, c.in() * 9, std::sqrt(2.0));
    hidden_bias(c.b);
  }
  fill(p.trunk.w, p.trunk.in(), std::sqrt(2.0));
  hidden_bias(p.trunk.b);
  fill(p.past.w, p.past.in(), std::sqrt(2.0));
  for (auto& h : p.heads) {
    fill(h.embed.w, h.embed.in(), std::sqrt(2.0));
    hidden_bias(h.embed.b);
    fill(h.out.w, h.out.in(), 0.1);
  }
  fill(p.joint_trunk.w, p.joint_trunk.in(), std::sqrt(2.0));
  hidden_bias(p.joint_trunk.b);
  for (auto& h : p.joint_heads) fill(h.w, h.in(), 0.1);
  return p;
}

inline bool all_finite(const ModelParams& p) {
  bool ok = true;
  visit_params(p, [&](const std::string&, ParamGroup, const nn::Tensor& t) {
    for (double v : t.data) ok = ok && std::isfinite(v);
  });
  return ok;
}

// Channels: R, G, B scaled to [0, 1], then (optionally) column and row
// coordinates in [-1, 1] so that pooled features keep track of position.
inline std::vector<double> image_to_input(const RasterImage& img, const ModelConfig& cfg) {
  const RasterConfig rc = cfg.input_raster();
  if (img.height() != rc.height || img.width() != rc.width) {
    throw Error(errc::kInvalidArgument, "feature_extract: image is " + std::to_string(img.height()) + "x" +
                                            std::to_string(img.width()) + ", expected " + std::to_string(rc.height) +
                                            "x" + std::to_string(rc.width));
  }
  const std::size_t h = static_cast<std::size_t>(rc.height), w = static_cast<std::size_t>(rc.width);
  std::vector<double> in(cfg.input_channels() * h * w);
  const auto& bytes = img.bytes();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t px = (r * w + c) * 3;
      for (std::size_t ch = 0; ch < 3; ++ch) in[ch * h * w + r * w + c] = bytes[px + ch] / 255.0;
      if (cfg.coord_channels) {
        in[3 * h * w + r * w + c] = w > 1 ? 2.0 * static_cast<double>(c) / static_cast<double>(w - 1) - 1.0 : 0.0;
        in[4 * h * w + r * w + c] = h > 1 ? 2.0 * static_cast<double>(r) / static_cast<double>(h - 1) - 1.0 : 0.0;
      }
    }
  }
  return in;
}

// Past states in the agent's current ego frame: position / 10 m, velocity /
// 10 m/s, relative heading / pi, validity flag. Invalid states are all zero.
inline std::array<double, kPastFeatureDim> past_features(const Agent& agent) {
  std::array<double, kPastFeatureDim> f{};
  const Pose pose = agent.current_pose();
  for (std::size_t k = 0; k < kPastSteps; ++k) {
    const PastState& s = agent.past[k];
    if (!s.valid) continue;
    const Point2 p = to_ego(Point2{s.x, s.y}, pose);
    const Point2 v = rotate_to_ego(Point2{s.vx, s.vy}, pose.heading);
    double* o = &f[k * 6];
    o[0] = p.x / 10.0;
    o[1] = p.y / 10.0;
    o[2] = v.x / 10.0;
    o[3] = v.y / 10.0;
    o[4] = wrap_angle(s.heading - pose.heading) / std::numbers::pi;
    o[5] = 1.0;
  }
  return f;
}

struct FeatureForward {
  std::vector<double> input;
  std::array<std::size_t, 5> h{}, w{};  // spatial size per level, 0 = input
  std::array<std::vector<double>, 4> pre;  // conv outputs before ReLU
  std::array<std::vector<double>, 4> act;
  std::vector<double> embedding;  // global average pool of act[3]
};

inline FeatureForward feature_forward(const RasterImage& img, const ModelParams& params, const ModelConfig& cfg) {
  FeatureForward f;
  f.input = image_to_input(img, cfg);
  const RasterConfig rc = cfg.input_raster();
  f.h[0] = static_cast<std::size_t>(rc.height);
  f.w[0] = static_cast<std::size_t>(rc.width);
  for (std::size_t l = 0; l < 4; ++l) {
    f.h[l + 1] = nn::conv_out_dim(f.h[l]);
    f.w[l + 1] = nn::conv_out_dim(f.w[l]);
    f.pre[l].assign(params.conv[l].out() * f.h[l + 1] * f.w[l + 1], 0.0);
    nn::conv_forward(params.conv[l], l == 0 ? std::span<const double>(f.input) : std::span<const double>(f.act[l - 1]),
                     f.h[l], f.w[l], f.pre[l]);
    f.act[l] = f.pre[l];
    nn::relu_inplace(f.act[l]);
  }
  const std::size_t e = params.conv[3].out();
  const std::size_t area = f.h[4] * f.w[4];
  f.embedding.assign(e, 0.0);
  for (std::size_t c = 0; c < e; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += f.act[3][c * area + i];
    f.embedding[c] = s / static_cast<double>(area);
  }
  return f;
}

inline std::vector<double> feature_extract(const RasterImage& img, const ModelParams& params, const ModelConfig& cfg) {
  return feature_forward(img, params, cfg).embedding;
}

// Accumulates conv gradients given d(embedding).
inline void feature_backward(const FeatureForward& f, std::span<const double> d_embedding, const ModelParams& params,
                             ModelParams& grads) {
  const std::size_t area = f.h[4] * f.w[4];
  std::vector<double> d_act(f.act[3].size());
  for (std::size_t c = 0; c < d_embedding.size(); ++c) {
    const double g = d_embedding[c] / static_cast<double>(area);
    for (std::size_t i = 0; i < area; ++i) d_act[c * area + i] = g;
  }
  for (std::size_t l = 4; l-- > 0;) {
    nn::relu_backward(f.pre[l], d_act);
    std::vector<double> d_in;
    if (l > 0) d_in.assign(f.act[l - 1].size(), 0.0);
    nn::conv_backward(params.conv[l],
                      l == 0 ? std::span<const double>(f.input) : std::span<const double>(f.act[l - 1]), f.h[l],
                      f.w[l], d_act, grads.conv[l], d_in);
    d_act = std::move(d_in);
  }
}

struct AgentForward {
  ObjectType type = ObjectType::kVehicle;
  bool is_sdc = false;
  std::size_t k_active = 0;
  Pose pose;
  FeatureForward features;
  std::vector<double> trunk_pre;
  std::vector<double> z;  // intermediate embedding shared with the joint head
  std::array<double, kPastFeatureDim> past{};
  std::vector<double> head_pre;
  std::vector<double> head_hidden;
  std::vector<double> head_out;
  MarginalPrediction prediction;
};

inline void check_anchors(const AnchorLibrary& anchors, const ModelConfig& cfg) {
  for (ObjectType t : kAllObjectTypes) {
    if (anchors[type_index(t)].type != t || anchors[type_index(t)].k() != cfg.k_per_type[type_index(t)]) {
      throw Error(errc::kInvalidArgument, "model: " + std::string(to_string(t)) + " anchor set has K=" +
                                              std::to_string(anchors[type_index(t)].k()) + ", model expects K=" +
                                              std::to_string(cfg.k_per_type[type_index(t)]));
    }
  }
}

// Trunk, type-gated head, splined residuals on top of the anchors, softmax with
// padded modes masked out.
inline AgentForward marginal_forward(FeatureForward features, const Agent& agent, const AnchorLibrary& anchors,
                                     const ModelParams& params, const ModelConfig& cfg) {
  check_anchors(anchors, cfg);
  AgentForward f;
  f.type = agent.type;
  f.is_sdc = agent.is_sdc;
  f.pose = agent.current_pose();
  f.k_active = cfg.k_per_type[type_index(agent.type)];
  f.features = std::move(features);

  f.trunk_pre.assign(cfg.trunk_dim, 0.0);
  nn::linear_forward(params.trunk, f.features.embedding, f.trunk_pre);
  f.past = past_features(agent);
  std::vector<double> past_part(cfg.trunk_dim, 0.0);
  nn::linear_forward(params.past, f.past, past_part);
  for (std::size_t i = 0; i < cfg.trunk_dim; ++i) f.trunk_pre[i] += past_part[i];
  f.z = f.trunk_pre;
  nn::relu_inplace(f.z);

  const MarginalHead& head = params.heads[type_index(agent.type)];
  f.head_pre.assign(cfg.head_hidden, 0.0);
  nn::linear_forward(head.embed, f.z, f.head_pre);
  f.head_hidden = f.head_pre;
  nn::relu_inplace(f.head_hidden);
  f.head_out.assign(cfg.head_outputs(), 0.0);
  nn::linear_forward(head.out, f.head_hidden, f.head_out);

  const std::size_t k_max = cfg.k_max();
  const AnchorSet& set = anchors[type_index(agent.type)];
  const SplineBasis& basis = default_basis();
  MarginalPrediction& m = f.prediction;
  m.type = agent.type;
  m.active = f.k_active;
  m.trajectories.resize(k_max);
  m.confidences.assign(k_max, 0.0);
  std::array<Point2, kNumControlPoints> cp;
  for (std::size_t k = 0; k < k_max; ++k) {
    const double* o = &f.head_out[k * kModeOutputs];
    for (std::size_t c = 0; c < kNumControlPoints; ++c) {
      cp[c] = {cfg.residual_scale * o[2 * c], cfg.residual_scale * o[2 * c + 1]};
    }
    const Trajectory residual = interpolate(cp, basis);
    Trajectory& out = m.trajectories[k];
    for (std::size_t t = 0; t < kFutureSteps; ++t) {
      const Point2 anchor = k < f.k_active ? set.centroids[k].points[t] : kSentinelAnchor;
      out.points[t] = to_world(anchor + residual.points[t], f.pose);
      out.valid[t] = true;
    }
  }
  std::unique_ptr<bool[]> mask(new bool[k_max]);
  for (std::size_t k = 0; k < k_max; ++k) mask[k] = k < f.k_active;
  nn::masked_softmax(std::span<const double>(&f.head_out[k_max * kModeOutputs], k_max),
                     std::span<const bool>(mask.get(), k_max), m.confidences);
  return f;
}

inline AgentForward marginal_forward(const RasterImage& img, const Agent& agent, const AnchorLibrary& anchors,
                                     const ModelParams& params, const ModelConfig& cfg) {
  return marginal_forward(feature_forward(img, params, cfg), agent, anchors, params, cfg);
}

// Accumulates gradients of the marginal branch. d_traj holds world-frame
// point gradients per mode (may be empty), d_logits per mode (may be empty),
// d_z the gradient arriving at the intermediate embedding from the joint
// head (may be empty).
inline void marginal_backward(const AgentForward& f, std::span<const TrajectoryGradient> d_traj,
                              std::span<const double> d_logits, std::span<const double> d_z, const ModelParams& params,
                              const ModelConfig& cfg, ModelParams& grads) {
  const std::size_t k_max = cfg.k_max();
  const SplineBasis& basis = default_basis();
  std::vector<double> d_out(cfg.head_outputs(), 0.0);
  for (std::size_t k = 0; k < d_traj.size(); ++k) {
    bool any = false;
    std::array<Point2, kFutureSteps> d_ego{};
    for (std::size_t t = 0; t < kFutureSteps; ++t) {
      if (d_traj[k][t].x == 0.0 && d_traj[k][t].y == 0.0) continue;
      d_ego[t] = rotate_to_ego(d_traj[k][t], f.pose.heading);
      any = true;
    }
    if (!any) continue;
    const std::vector<Point2> d_cp = interpolate_backward(d_ego, basis);
    for (std::size_t c = 0; c < kNumControlPoints; ++c) {
      d_out[k * kModeOutputs + 2 * c] = cfg.residual_scale * d_cp[c].x;
      d_out[k * kModeOutputs + 2 * c + 1] = cfg.residual_scale * d_cp[c].y;
    }
  }
  for (std::size_t k = 0; k < d_logits.size(); ++k) d_out[k_max * kModeOutputs + k] = d_logits[k];

  const std::size_t ti = type_index(f.type);
  const MarginalHead& head = params.heads[ti];
  MarginalHead& ghead = grads.heads[ti];
  std::vector<double> d_hidden(cfg.head_hidden, 0.0);
  nn::linear_backward(head.out, f.head_hidden, d_out, ghead.out, d_hidden);
  nn::relu_backward(f.head_pre, d_hidden);
  std::vector<double> dz(cfg.trunk_dim, 0.0);
  nn::linear_backward(head.embed, f.z, d_hidden, ghead.embed, dz);
  for (std::size_t i = 0; i < d_z.size(); ++i) dz[i] += d_z[i];

  nn::relu_backward(f.trunk_pre, dz);
  nn::linear_backward(params.past, f.past, dz, grads.past, {});
  std::vector<double> d_emb(f.features.embedding.size(), 0.0);
  nn::linear_backward(params.trunk, f.features.embedding, dz, grads.trunk, d_emb);
  feature_backward(f.features, d_emb, params, grads);
}

struct JointForward {
  std::size_t head = 0;
  std::size_t k_self = 0;
  std::size_t k_other = 0;
  std::vector<double> input;  // [z_self ; z_other]
  std::vector<double> pre;
  std::vector<double> hidden;
  std::vector<double> probs;  // K x K, rows = own anchors
};

inline std::size_t joint_head_index(ObjectType type, bool is_sdc) { return is_sdc ? kSdcJointHead : type_index(type); }

// One perspective: joint trunk (ReLU) on [self ; partner], gated joint head,
// softmax over the active K_self x K_other cells.
inline JointForward joint_perspective_forward(std::span<const double> z_self, std::span<const double> z_other,
                                              ObjectType type_self, bool sdc_self, ObjectType type_other,
                                              const ModelParams& params, const ModelConfig& cfg) {
  JointForward f;
  f.head = joint_head_index(type_self, sdc_self);
  f.k_self = cfg.k_per_type[type_index(type_self)];
  f.k_other = cfg.k_per_type[type_index(type_other)];
  f.input.assign(z_self.begin(), z_self.end());
  f.input.insert(f.input.end(), z_other.begin(), z_other.end());
  f.pre.assign(cfg.joint_hidden, 0.0);
  nn::linear_forward(params.joint_trunk, f.input, f.pre);
  f.hidden = f.pre;
  nn::relu_inplace(f.hidden);
  const std::size_t k = cfg.k_max();
  std::vector<double> logits(k * k, 0.0);
  nn::linear_forward(params.joint_heads[f.head], f.hidden, logits);
  std::unique_ptr<bool[]> mask(new bool[k * k]);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) mask[i * k + j] = i < f.k_self && j < f.k_other;
  }
  f.probs.assign(k * k, 0.0);
  nn::masked_softmax(logits, std::span<const bool>(mask.get(), k * k), f.probs);
  return f;
}

// Adds the perspective's contribution to d_z_self / d_z_other.
inline void joint_perspective_backward(const JointForward& f, std::span<const double> d_probs,
                                       const ModelParams& params, const ModelConfig& cfg, ModelParams& grads,
                                       std::span<double> d_z_self, std::span<double> d_z_other) {
  std::vector<double> d_logits(d_probs.size(), 0.0);
  nn::softmax_backward(f.probs, d_probs, d_logits);
  std::vector<double> d_hidden(cfg.joint_hidden, 0.0);
  nn::linear_backward(params.joint_heads[f.head], f.hidden, d_logits, grads.joint_heads[f.head], d_hidden);
  nn::relu_backward(f.pre, d_hidden);
  std::vector<double> d_in(f.input.size(), 0.0);
  nn::linear_backward(params.joint_trunk, f.input, d_hidden, grads.joint_trunk, d_in);
  const std::size_t n = d_z_self.size();
  for (std::size_t i = 0; i < n; ++i) {
    d_z_self[i] += d_in[i];
    d_z_other[i] += d_in[n + i];
  }
}

// Agent 1's grid is indexed (own, partner) = (j, i); transpose it back and
// average with agent 0's.
inline JointConfidenceGrid combine_perspectives(std::span<const double> p0, std::span<const double> p1, std::size_t k) {
  JointConfidenceGrid g(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) g(i, j) = (p0[i * k + j] + p1[j * k + i]) / 2.0;
  }
  return g;
}

inline JointConfidenceGrid joint_forward(std::span<const double> z0, std::span<const double> z1, ObjectType type0,
                                         ObjectType type1, bool sdc0, bool sdc1, const ModelParams& params,
                                         const ModelConfig& cfg) {
  const JointForward f0 = joint_perspective_forward(z0, z1, type0, sdc0, type1, params, cfg);
  const JointForward f1 = joint_perspective_forward(z1, z0, type1, sdc1, type0, params, cfg);
  return combine_perspectives(f0.probs, f1.probs, cfg.k_max());
}

using PairImages = std::array<RasterImage, 2>;

// Plain images, or re-rasterized images carrying the partner's top-1 marginal
// trajectory as predicted by the same network on plain input.
inline PairImages render_inputs(const Scenario& s, Representation repr, const AnchorLibrary& anchors,
                                const ModelParams& params, const ModelConfig& cfg) {
  const RasterConfig rc = cfg.input_raster();
  PairImages plain{rasterize(s, 0, rc), rasterize(s, 1, rc)};
  if (repr == Representation::kPlain) return plain;
  std::array<Trajectory, 2> top1;
  for (int slot = 0; slot < 2; ++slot) {
    const AgentForward f = marginal_forward(plain[static_cast<std::size_t>(slot)], s.pair_agent(slot), anchors, params, cfg);
    top1[static_cast<std::size_t>(slot)] = f.prediction.trajectories[f.prediction.top1()];
  }
  return {rerasterize(s, 0, top1[1], rc), rerasterize(s, 1, top1[0], rc)};
}

struct ExampleForward {
  std::array<AgentForward, 2> agents;
  std::array<JointForward, 2> joint;
  JointPrediction prediction;
};

inline ExampleForward forward_example(const Scenario& s, const PairImages& images, const AnchorLibrary& anchors,
                                      const ModelParams& params, const ModelConfig& cfg) {
  ExampleForward f;
  for (int slot = 0; slot < 2; ++slot) {
    f.agents[static_cast<std::size_t>(slot)] =
        marginal_forward(images[static_cast<std::size_t>(slot)], s.pair_agent(slot), anchors, params, cfg);
  }
  const AgentForward& a0 = f.agents[0];
  const AgentForward& a1 = f.agents[1];
  f.joint[0] = joint_perspective_forward(a0.z, a1.z, a0.type, a0.is_sdc, a1.type, params, cfg);
  f.joint[1] = joint_perspective_forward(a1.z, a0.z, a1.type, a1.is_sdc, a0.type, params, cfg);
  f.prediction.grid = combine_perspectives(f.joint[0].probs, f.joint[1].probs, cfg.k_max());
  f.prediction.marginals = {a0.prediction, a1.prediction};
  return f;
}

inline JointPrediction predict_joint(const Scenario& s, const AnchorLibrary& anchors, const ModelParams& params,
                                     const ModelConfig& cfg, Representation repr = Representation::kRerasterized) {
  return forward_example(s, render_inputs(s, repr, anchors, params, cfg), anchors, params, cfg).prediction;
}

enum class Objective {
  kMarginal,  // w_reg * (reg0 + reg1) + w_cls * (CE(q0, i*) + CE(q1, j*)) on marginal confidences
  kJoint,     // the interaction loss on the ensembled joint grid
};

// Loss of one example and its gradient, scaled by `scale`, added into grads.
// With freeze_marginal the marginal branch receives no gradient.
inline double accumulate_example_gradients(const ExampleForward& f, const Scenario& s, AnchorAssignment a,
                                           const LossWeights& w, Objective objective, bool freeze_marginal,
                                           double scale, const ModelParams& params, const ModelConfig& cfg,
                                           ModelParams& grads) {
  const Trajectory& gt0 = s.pair_agent(0).future;
  const Trajectory& gt1 = s.pair_agent(1).future;
  const MarginalPrediction& m0 = f.agents[0].prediction;
  const MarginalPrediction& m1 = f.agents[1].prediction;
  const std::size_t k = cfg.k_max();

  if (objective == Objective::kMarginal) {
    const RegressionLoss reg = regression_loss(m0.trajectories, m1.trajectories, gt0, gt1, a);
    const double ce0 = marginal_cross_entropy(m0.confidences, a.i_star);
    const double ce1 = marginal_cross_entropy(m1.confidences, a.j_star);
    const double loss = w.w_reg * (reg.reg0 + reg.reg1) + w.w_cls * (ce0 + ce1);
    if (!std::isfinite(loss)) throw Error(errc::kNumerical, "non-finite marginal loss");
    if (freeze_marginal) return loss;
    const std::array<std::size_t, 2> stars{a.i_star, a.j_star};
    const std::array<const Trajectory*, 2> gts{&gt0, &gt1};
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const AgentForward& af = f.agents[slot];
      std::vector<TrajectoryGradient> d_traj(k, TrajectoryGradient{});
      for (std::size_t t = 0; t < kFutureSteps; ++t) {
        if (!gts[slot]->valid[t]) continue;
        d_traj[stars[slot]][t] =
            (scale * w.w_reg) * (af.prediction.trajectories[stars[slot]].points[t] - gts[slot]->points[t]);
      }
      std::vector<double> d_logits(k, 0.0);
      for (std::size_t m = 0; m < af.k_active; ++m) {
        d_logits[m] = scale * w.w_cls * (af.prediction.confidences[m] - (m == stars[slot] ? 1.0 : 0.0));
      }
      marginal_backward(af, d_traj, d_logits, {}, params, cfg, grads);
    }
    return loss;
  }

  const LossBreakdown lb = evaluate_loss(f.prediction, gt0, gt1, a, w);
  if (!std::isfinite(lb.total)) throw Error(errc::kNumerical, "non-finite joint loss");
  LossGradients lg = loss_gradients(f.prediction.grid, m0.trajectories, m1.trajectories, gt0, gt1, a, w);

  std::vector<double> d_p0(k * k, 0.0), d_p1(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double g = scale * lg.d_grid[i * k + j] / 2.0;
      d_p0[i * k + j] = g;
      d_p1[j * k + i] = g;
    }
  }
  std::vector<double> dz0(cfg.trunk_dim, 0.0), dz1(cfg.trunk_dim, 0.0);
  joint_perspective_backward(f.joint[0], d_p0, params, cfg, grads, dz0, dz1);
  joint_perspective_backward(f.joint[1], d_p1, params, cfg, grads, dz1, dz0);
  if (freeze_marginal) return lb.total;

  for (auto* d : {&lg.d_pred0, &lg.d_pred1}) {
    for (auto& tg : *d) {
      for (Point2& p : tg) p = scale * p;
    }
  }
  marginal_backward(f.agents[0], lg.d_pred0, {}, dz0, params, cfg, grads);
  marginal_backward(f.agents[1], lg.d_pred1, {}, dz1, params, cfg, grads);
  return lb.total;
}

struct BatchGradients {
  ModelParams grads;
  double loss = 0.0;  // mean over the batch
};

// Exact gradients of the batch-mean loss. Examples are processed in order, so
// the reduction is fixed.
inline BatchGradients compute_gradients(std::span<const Scenario> batch, const AnchorLibrary& anchors,
                                        const ModelParams& params, const ModelConfig& cfg, const LossWeights& w,
                                        Objective objective, Representation repr, bool freeze_marginal = false) {
  if (batch.empty()) throw Error(errc::kInvalidArgument, "backward: empty batch");
  w.validate();
  BatchGradients out{zeros_like(params), 0.0};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const Scenario& s : batch) {
    const Representation r = objective == Objective::kMarginal ? Representation::kPlain : repr;
    const ExampleForward f = forward_example(s, render_inputs(s, r, anchors, params, cfg), anchors, params, cfg);
    out.loss += scale * accumulate_example_gradients(f, s, assign_pair(s, anchors), w, objective, freeze_marginal,
                                                     scale, params, cfg, out.grads);
  }
  return out;
}

}  // namespace airsq
