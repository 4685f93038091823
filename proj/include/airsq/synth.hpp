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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

// Crossing-paths scenes: the pair approaches a shared conflict point, a latent
// coin decides which one proceeds, and the other brakes to a stop short of the
// conflict point. Each agent alone is bimodal (go / yield); jointly the
// outcomes are anti-correlated.
struct SynthConfig {
  double go_prob = 0.5;                         // P(pair agent 0 proceeds)
  std::array<double, 3> type_weights{1.0, 1.0, 1.0};
  double mixed_prob = 0.0;                      // P(agent 1 type drawn independently)
  double sdc_prob = 0.2;
  std::size_t max_context_agents = 3;
  double dropout_prob = 0.05;                   // P(a pair future gets an invalid span)
  double corrupt_prob = 0.0;                    // P(a pair future gets a position glitch)
  double min_arrival_s = 2.5;
  double max_arrival_s = 5.0;
  double road_half_length = 150.0;
  double world_extent = 500.0;
};

struct TypeKinematics {
  double min_speed, max_speed;
  double min_gap, max_gap;  // stop distance short of the conflict point
  double max_accel;         // for the proceeding agent
};

inline TypeKinematics kinematics(ObjectType t) {
  switch (t) {
    case ObjectType::kVehicle:
      return {6.0, 14.0, 4.0, 8.0, 0.4};
    case ObjectType::kPedestrian:
      return {1.0, 2.0, 1.0, 2.0, 0.1};
    case ObjectType::kCyclist:
      return {3.0, 7.0, 2.5, 5.0, 0.2};
  }
  return {1.0, 1.0, 1.0, 1.0, 0.0};
}

namespace detail {

inline ObjectType draw_type(Rng& rng, const std::array<double, 3>& weights) {
  const double total = weights[0] + weights[1] + weights[2];
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < 3; ++i) {
    if (u < weights[i]) return kAllObjectTypes[i];
    u -= weights[i];
  }
  return kAllObjectTypes[2];
}

// Arc length travelled after t seconds.
struct Motion {
  double v0 = 0.0;
  double accel = 0.0;     // proceeding: >= 0
  double stop_dist = -1;  // yielding: distance to come to rest; < 0 when proceeding

  double progress(double t) const {
    if (t <= 0.0) return v0 * t;
    if (stop_dist < 0.0) return v0 * t + 0.5 * accel * t * t;
    if (stop_dist == 0.0 || v0 == 0.0) return 0.0;
    const double decel = v0 * v0 / (2.0 * stop_dist);
    const double t_stop = v0 / decel;
    if (t >= t_stop) return stop_dist;
    return v0 * t - 0.5 * decel * t * t;
  }
};

inline Agent make_agent(std::int64_t id, ObjectType type, Point2 start, double heading, const Motion& m) {
  Agent a;
  a.id = id;
  a.type = type;
  const Point2 dir{std::cos(heading), std::sin(heading)};
  for (std::size_t k = 0; k < kPastSteps; ++k) {
    const double t = -kStepSeconds * static_cast<double>(kCurrentIndex - k);
    const Point2 p = start + m.progress(t) * dir;
    a.past[k] = {p.x, p.y, m.v0 * dir.x, m.v0 * dir.y, wrap_angle(heading), true};
  }
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    const double t = kStepSeconds * static_cast<double>(k + 1);
    a.future.points[k] = start + m.progress(t) * dir;
    a.future.valid[k] = true;
  }
  return a;
}

}  // namespace detail

inline Scenario synth_scenario(Rng& rng, const SynthConfig& cfg) {
  Scenario s;
  const Point2 conflict{rng.uniform(-cfg.world_extent, cfg.world_extent),
                        rng.uniform(-cfg.world_extent, cfg.world_extent)};
  const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const std::array<double, 2> headings{phi, phi + side * 0.5 * std::numbers::pi};

  std::array<ObjectType, 2> types;
  types[0] = detail::draw_type(rng, cfg.type_weights);
  types[1] = rng.bernoulli(cfg.mixed_prob) ? detail::draw_type(rng, cfg.type_weights) : types[0];

  const bool agent0_goes = rng.bernoulli(cfg.go_prob);
  for (std::size_t slot = 0; slot < 2; ++slot) {
    const TypeKinematics kin = kinematics(types[slot]);
    detail::Motion m;
    m.v0 = rng.uniform(kin.min_speed, kin.max_speed);
    const double arrival = rng.uniform(cfg.min_arrival_s, cfg.max_arrival_s);
    const double gap = rng.uniform(kin.min_gap, kin.max_gap);
    const double dist = std::max(m.v0 * arrival, gap + 1.0);
    const bool goes = (slot == 0) == agent0_goes;
    if (goes) {
      m.accel = rng.uniform(0.0, kin.max_accel);
    } else {
      m.stop_dist = dist - gap;
    }
    const Point2 dir{std::cos(headings[slot]), std::sin(headings[slot])};
    const Point2 start = conflict - dist * dir;
    s.agents.push_back(detail::make_agent(static_cast<std::int64_t>(slot + 1), types[slot], start, headings[slot], m));

    Polyline road;
    for (double d : {-cfg.road_half_length, 0.0, cfg.road_half_length}) road.push_back(conflict + d * dir);
    s.roads.push_back(std::move(road));
  }
  s.pair = {0, 1};

  if (rng.bernoulli(cfg.sdc_prob)) {
    const std::size_t slot = rng.index(2);
    if (types[slot] == ObjectType::kVehicle) s.agents[slot].is_sdc = true;
  }

  for (std::size_t slot = 0; slot < 2; ++slot) {
    Trajectory& fut = s.agents[slot].future;
    if (rng.bernoulli(cfg.dropout_prob)) {
      const std::size_t len = 5 + rng.index(16);
      const std::size_t first = rng.index(kFutureSteps - len + 1);
      for (std::size_t k = first; k < first + len; ++k) {
        fut.valid[k] = false;
        fut.points[k] = {0.0, 0.0};
      }
    }
    if (rng.bernoulli(cfg.corrupt_prob)) {
      const std::size_t k = 1 + rng.index(kFutureSteps - 2);
      const double jump = rng.uniform(50.0, 150.0);
      const double ang = rng.uniform(-std::numbers::pi, std::numbers::pi);
      fut.points[k] = fut.points[k] + Point2{jump * std::cos(ang), jump * std::sin(ang)};
      fut.valid[k - 1] = fut.valid[k] = fut.valid[k + 1] = true;
    }
  }

  const std::size_t n_context = cfg.max_context_agents == 0 ? 0 : rng.index(cfg.max_context_agents + 1);
  for (std::size_t c = 0; c < n_context; ++c) {
    const std::size_t road = rng.index(2);
    const double heading = headings[road] + (rng.bernoulli(0.5) ? 0.0 : std::numbers::pi);
    const Point2 dir{std::cos(headings[road]), std::sin(headings[road])};
    const Point2 normal{-dir.y, dir.x};
    const double along = rng.uniform(-80.0, 80.0);
    const double lateral = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(3.0, 6.0);
    detail::Motion m;
    m.v0 = rng.bernoulli(0.5) ? 0.0 : rng.uniform(2.0, 10.0);
    const ObjectType type = detail::draw_type(rng, cfg.type_weights);
    s.agents.push_back(detail::make_agent(static_cast<std::int64_t>(3 + c), type,
                                          conflict + along * dir + lateral * normal, heading, m));
  }
  return s;
}

inline std::vector<Scenario> synth_generate(std::size_t n, std::uint64_t seed, const SynthConfig& cfg = {}) {
  Rng rng(seed);
  std::vector<Scenario> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_scenario(rng, cfg));
  return out;
}

}  // namespace airsq
