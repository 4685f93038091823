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
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "airsq/common.hpp"

namespace airsq {

enum class ObjectType : std::uint8_t { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };

inline constexpr std::array<ObjectType, 3> kAllObjectTypes = {
    ObjectType::kVehicle, ObjectType::kPedestrian, ObjectType::kCyclist};

inline constexpr std::size_t type_index(ObjectType t) {
  return static_cast<std::size_t>(t);
}

inline std::string_view to_string(ObjectType t) {
  switch (t) {
    case ObjectType::kVehicle:
      return "vehicle";
    case ObjectType::kPedestrian:
      return "pedestrian";
    case ObjectType::kCyclist:
      return "cyclist";
  }
  return "unknown";
}

inline ObjectType parse_object_type(std::string_view name) {
  for (ObjectType t : kAllObjectTypes) {
    if (name == to_string(t)) return t;
  }
  throw Error(errc::kParse, "unknown object type '" + std::string(name) + "'");
}

struct Pose {
  Point2 origin;
  double heading = 0.0;
};

// World -> ego: translate to the pose origin, then rotate by -heading.
inline Point2 to_ego(Point2 p, const Pose& pose) {
  const double c = std::cos(pose.heading);
  const double s = std::sin(pose.heading);
  const double dx = p.x - pose.origin.x;
  const double dy = p.y - pose.origin.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Point2 to_world(Point2 p, const Pose& pose) {
  const double c = std::cos(pose.heading);
  const double s = std::sin(pose.heading);
  return {c * p.x - s * p.y + pose.origin.x, s * p.x + c * p.y + pose.origin.y};
}

// Directions (velocities, gradients) only rotate.
inline Point2 rotate_to_ego(Point2 v, double heading) {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  return {c * v.x + s * v.y, -s * v.x + c * v.y};
}

inline Point2 rotate_to_world(Point2 v, double heading) {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct Trajectory {
  std::array<Point2, kFutureSteps> points{};
  std::array<bool, kFutureSteps> valid{};

  static Trajectory constant(Point2 p) {
    Trajectory t;
    t.points.fill(p);
    t.valid.fill(true);
    return t;
  }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline Trajectory to_ego(const Trajectory& t, const Pose& pose) {
  Trajectory out = t;
  for (std::size_t i = 0; i < kFutureSteps; ++i) out.points[i] = to_ego(t.points[i], pose);
  return out;
}

inline Trajectory to_world(const Trajectory& t, const Pose& pose) {
  Trajectory out = t;
  for (std::size_t i = 0; i < kFutureSteps; ++i) out.points[i] = to_world(t.points[i], pose);
  return out;
}

struct PastState {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double heading = 0.0;
  bool valid = false;

  friend bool operator==(const PastState&, const PastState&) = default;
};

using PastStates = std::array<PastState, kPastSteps>;

struct Agent {
  std::int64_t id = 0;
  ObjectType type = ObjectType::kVehicle;
  bool is_sdc = false;
  PastStates past{};
  Trajectory future;

  const PastState& current() const { return past[kCurrentIndex]; }
  Pose current_pose() const { return {{current().x, current().y}, current().heading}; }

  friend bool operator==(const Agent&, const Agent&) = default;
};

using Polyline = std::vector<Point2>;

struct Scenario {
  std::vector<Agent> agents;
  std::array<std::size_t, 2> pair{0, 1};
  std::vector<Polyline> roads;

  // slot 0 is "agent 0" of the interacting pair, slot 1 is "agent 1".
  const Agent& pair_agent(int slot) const { return agents.at(pair.at(static_cast<std::size_t>(slot))); }

  Scenario with_swapped_pair() const {
    Scenario s = *this;
    std::swap(s.pair[0], s.pair[1]);
    return s;
  }

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Throws invariant_violation naming the offending field.
inline void validate(const Scenario& s) {
  auto fail = [](const std::string& what) { throw Error(errc::kInvariant, what); };
  if (s.agents.size() < 2) fail("agents: need at least 2 agents");
  if (s.pair[0] == s.pair[1]) fail("pair: indices must be distinct");
  if (s.pair[0] >= s.agents.size() || s.pair[1] >= s.agents.size()) fail("pair: index out of range");
  std::set<std::int64_t> ids;
  for (std::size_t a = 0; a < s.agents.size(); ++a) {
    const Agent& agent = s.agents[a];
    const std::string where = "agents[" + std::to_string(a) + "]";
    if (!ids.insert(agent.id).second) fail(where + ".id: duplicate id " + std::to_string(agent.id));
    for (std::size_t t = 0; t < kPastSteps; ++t) {
      const PastState& p = agent.past[t];
      if (!p.valid) continue;
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.vx) || !std::isfinite(p.vy) ||
          !std::isfinite(p.heading)) {
        fail(where + ".past[" + std::to_string(t) + "]: non-finite state");
      }
      if (p.heading < -std::numbers::pi || p.heading > std::numbers::pi) {
        fail(where + ".past[" + std::to_string(t) + "].heading: outside [-pi, pi]");
      }
    }
    for (std::size_t t = 0; t < kFutureSteps; ++t) {
      if (agent.future.valid[t] &&
          (!std::isfinite(agent.future.points[t].x) || !std::isfinite(agent.future.points[t].y))) {
        fail(where + ".future[" + std::to_string(t) + "]: non-finite point");
      }
    }
  }
  for (int slot = 0; slot < 2; ++slot) {
    if (!s.pair_agent(slot).current().valid) {
      fail("agents[" + std::to_string(s.pair[static_cast<std::size_t>(slot)]) + "].past[10]: pair agent has no valid current state");
    }
  }
}

// True when some pair of consecutive valid steps moves farther than max_step.
inline bool is_corrupt(const Trajectory& t, double max_step) {
  for (std::size_t i = 1; i < kFutureSteps; ++i) {
    if (t.valid[i] && t.valid[i - 1] && norm(t.points[i] - t.points[i - 1]) > max_step) return true;
  }
  return false;
}

struct FilterResult {
  std::vector<Trajectory> kept;
  std::size_t dropped = 0;
};

inline FilterResult filter_corrupt(std::span<const Trajectory> trajectories, double max_step) {
  if (!(max_step > 0.0)) throw Error(errc::kInvalidArgument, "max_step must be > 0");
  FilterResult result;
  for (const Trajectory& t : trajectories) {
    if (is_corrupt(t, max_step)) {
      ++result.dropped;
    } else {
      result.kept.push_back(t);
    }
  }
  return result;
}

// 10 m per 0.1 s step: far above anything physical, well below the position
// glitches seen in logged data.
inline constexpr double kDefaultMaxStep = 10.0;

}  // namespace airsq
