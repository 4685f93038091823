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
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"
#include "airsq/scenario_io.hpp"

namespace airsq {

struct AnchorSet {
  ObjectType type = ObjectType::kVehicle;
  std::vector<Trajectory> centroids;  // all steps valid, ego frame
  std::vector<std::size_t> counts;

  std::size_t k() const { return centroids.size(); }

  friend bool operator==(const AnchorSet&, const AnchorSet&) = default;
};

struct AnchorAssignment {
  std::size_t i_star = 0;
  std::size_t j_star = 0;

  friend bool operator==(const AnchorAssignment&, const AnchorAssignment&) = default;
};

// Mean over jointly valid steps of the squared point distance.
inline double masked_distance(const Trajectory& a, const Trajectory& b) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    if (!a.valid[t] || !b.valid[t]) continue;
    sum += squared_norm(a.points[t] - b.points[t]);
    ++n;
  }
  if (n == 0) throw Error(errc::kInvalidArgument, "masked_distance: no jointly valid steps");
  return sum / static_cast<double>(n);
}

// Nearest centroid, ties resolved to the lowest index.
inline std::size_t nearest_centroid(const Trajectory& t, std::span<const Trajectory> centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    const double d = masked_distance(t, centroids[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline std::size_t assign_anchor(const Trajectory& trajectory, const AnchorSet& anchors) {
  return nearest_centroid(trajectory, anchors.centroids);
}

// Invalid steps take the value of the nearest valid step (earlier step wins a
// tie), so every centroid starts fully valid.
inline Trajectory hold_fill(const Trajectory& t) {
  Trajectory out = t;
  std::vector<std::size_t> valid_idx;
  for (std::size_t i = 0; i < kFutureSteps; ++i) {
    if (t.valid[i]) valid_idx.push_back(i);
  }
  if (valid_idx.empty()) throw Error(errc::kInvalidArgument, "trajectory has no valid step");
  for (std::size_t i = 0; i < kFutureSteps; ++i) {
    if (!t.valid[i]) {
      auto it = std::lower_bound(valid_idx.begin(), valid_idx.end(), i);
      std::size_t src;
      if (it == valid_idx.end()) {
        src = valid_idx.back();
      } else if (it == valid_idx.begin()) {
        src = *it;
      } else {
        const std::size_t after = *it;
        const std::size_t before = *(it - 1);
        src = (i - before <= after - i) ? before : after;
      }
      out.points[i] = t.points[src];
    }
    out.valid[i] = true;
  }
  return out;
}

// K distinct members chosen uniformly (partial Fisher-Yates), hold-filled.
inline std::vector<Trajectory> kmeans_init(std::span<const Trajectory> data, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error(errc::kInvalidArgument, "kmeans: K must be >= 1");
  if (k > data.size()) {
    throw Error(errc::kInvalidArgument, "kmeans: K=" + std::to_string(k) + " exceeds population " +
                                            std::to_string(data.size()));
  }
  Rng rng(seed);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<Trajectory> centroids;
  centroids.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t j = c + rng.index(idx.size() - c);
    std::swap(idx[c], idx[j]);
    centroids.push_back(hold_fill(data[idx[c]]));
  }
  return centroids;
}

struct KMeansResult {
  AnchorSet anchors;
  std::vector<std::size_t> labels;
  // Sum over points of masked_distance to the assigned centroid, recorded
  // after each assignment step.
  std::vector<double> inertia_history;
  // Same, but with the per-point squared error summed over valid steps instead
  // of averaged.
  std::vector<double> sum_inertia_history;
  std::size_t iterations = 0;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

// Lloyd iterations from the given centroids. Centroid update per step: mean of
// the members valid at that step; a step without valid members keeps its
// previous value. Sums run in member index order.
inline KMeansResult kmeans_run(std::span<const Trajectory> data, std::vector<Trajectory> centroids, std::size_t iters) {
  const std::size_t k = centroids.size();
  for (const Trajectory& t : data) {
    if (t.valid_count() == 0) throw Error(errc::kInvalidArgument, "kmeans: trajectory with no valid step");
  }
  KMeansResult r;
  r.labels.assign(data.size(), std::numeric_limits<std::size_t>::max());

  auto record = [&] {
    double inertia = 0.0;
    double sum_inertia = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
      const double d = masked_distance(data[n], centroids[r.labels[n]]);
      inertia += d;
      sum_inertia += d * static_cast<double>(data[n].valid_count());
    }
    r.inertia_history.push_back(inertia);
    r.sum_inertia_history.push_back(sum_inertia);
  };

  const std::size_t max_iters = std::max<std::size_t>(iters, 1);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t n = 0; n < data.size(); ++n) {
      const std::size_t best = nearest_centroid(data[n], centroids);
      if (best != r.labels[n]) {
        r.labels[n] = best;
        changed = true;
      }
    }
    record();
    ++r.iterations;
    // Stopping after an assignment keeps labels consistent with centroids.
    if (!changed || it + 1 == max_iters) break;

    for (std::size_t c = 0; c < k; ++c) {
      std::array<double, kFutureSteps> sx{}, sy{};
      std::array<std::size_t, kFutureSteps> cnt{};
      for (std::size_t n = 0; n < data.size(); ++n) {
        if (r.labels[n] != c) continue;
        for (std::size_t t = 0; t < kFutureSteps; ++t) {
          if (!data[n].valid[t]) continue;
          sx[t] += data[n].points[t].x;
          sy[t] += data[n].points[t].y;
          ++cnt[t];
        }
      }
      for (std::size_t t = 0; t < kFutureSteps; ++t) {
        if (cnt[t] == 0) continue;
        centroids[c].points[t] = {sx[t] / static_cast<double>(cnt[t]), sy[t] / static_cast<double>(cnt[t])};
      }
    }
  }

  r.anchors.centroids = std::move(centroids);
  r.anchors.counts.assign(k, 0);
  for (std::size_t label : r.labels) ++r.anchors.counts[label];
  return r;
}

// `restarts` independent initializations (seeds derived from `seed`); the run
// with the lowest final inertia wins, earliest on ties. restarts == 1 uses
// `seed` directly.
inline KMeansResult kmeans_fit(std::span<const Trajectory> data, std::size_t k, std::size_t iters, std::uint64_t seed,
                               std::size_t restarts = 1) {
  KMeansResult best;
  bool have = false;
  for (std::size_t rs = 0; rs < std::max<std::size_t>(restarts, 1); ++rs) {
    const std::uint64_t s = rs == 0 ? seed : derive_seed(seed, "kmeans-restart-" + std::to_string(rs));
    KMeansResult r = kmeans_run(data, kmeans_init(data, k, s), iters);
    if (!have || r.inertia() < best.inertia()) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

struct AnchorConfig {
  std::array<std::size_t, 3> k{32, 8, 30};  // vehicle, pedestrian, cyclist
  std::size_t iters = 50;
  std::uint64_t seed = 0;
  std::size_t restarts = 1;
  double max_step = kDefaultMaxStep;
};

// Pair-agent futures in each agent's own ego frame, grouped by type. Corrupt
// trajectories and trajectories without any valid step are dropped.
inline std::array<std::vector<Trajectory>, 3> ego_futures_by_type(std::span<const Scenario> scenarios,
                                                                   double max_step, std::size_t* dropped = nullptr) {
  std::array<std::vector<Trajectory>, 3> out;
  std::size_t drop = 0;
  for (const Scenario& s : scenarios) {
    for (int slot = 0; slot < 2; ++slot) {
      const Agent& a = s.pair_agent(slot);
      if (a.future.valid_count() == 0) continue;
      if (is_corrupt(a.future, max_step)) {
        ++drop;
        continue;
      }
      out[type_index(a.type)].push_back(to_ego(a.future, a.current_pose()));
    }
  }
  if (dropped != nullptr) *dropped = drop;
  return out;
}

using AnchorLibrary = std::array<AnchorSet, 3>;

inline AnchorLibrary fit_all_types(std::span<const Scenario> scenarios, const AnchorConfig& cfg) {
  const auto by_type = ego_futures_by_type(scenarios, cfg.max_step);
  AnchorLibrary lib;
  for (ObjectType t : kAllObjectTypes) {
    const auto& data = by_type[type_index(t)];
    const std::size_t k = cfg.k[type_index(t)];
    if (data.size() < k) {
      throw Error(errc::kInvalidArgument, "cluster: insufficient " + std::string(to_string(t)) + " trajectories (" +
                                              std::to_string(data.size()) + " < K=" + std::to_string(k) + ")");
    }
    KMeansResult r = kmeans_fit(data, k, cfg.iters, derive_seed(cfg.seed, to_string(t)), cfg.restarts);
    r.anchors.type = t;
    lib[type_index(t)] = std::move(r.anchors);
  }
  return lib;
}

inline std::size_t max_k(const AnchorLibrary& lib) {
  std::size_t k = 0;
  for (const AnchorSet& a : lib) k = std::max(k, a.k());
  return k;
}

inline AnchorAssignment assign_pair(const Scenario& s, const AnchorLibrary& lib) {
  const Agent& a0 = s.pair_agent(0);
  const Agent& a1 = s.pair_agent(1);
  return {assign_anchor(to_ego(a0.future, a0.current_pose()), lib[type_index(a0.type)]),
          assign_anchor(to_ego(a1.future, a1.current_pose()), lib[type_index(a1.type)])};
}

inline nlohmann::json anchors_to_json(const AnchorSet& a) {
  nlohmann::json centroids = nlohmann::json::array();
  for (const Trajectory& c : a.centroids) {
    nlohmann::json pts = nlohmann::json::array();
    for (Point2 p : c.points) pts.push_back(nlohmann::json::array({p.x, p.y}));
    centroids.push_back(std::move(pts));
  }
  return {{"type", std::string(to_string(a.type))}, {"K", a.k()}, {"counts", a.counts}, {"centroids", centroids}};
}

inline AnchorSet anchors_from_json(const nlohmann::json& j) {
  try {
    AnchorSet a;
    a.type = parse_object_type(j.at("type").get<std::string>());
    const std::size_t k = j.at("K").get<std::size_t>();
    const auto& cs = j.at("centroids");
    if (k == 0 || cs.size() != k) throw Error(errc::kInvariant, "anchors: K does not match centroid count");
    for (const auto& c : cs) {
      if (c.size() != kFutureSteps) throw Error(errc::kInvariant, "anchors: centroid length must be 80");
      Trajectory t;
      for (std::size_t i = 0; i < kFutureSteps; ++i) {
        t.points[i] = {c[i].at(0).get<double>(), c[i].at(1).get<double>()};
        if (!std::isfinite(t.points[i].x) || !std::isfinite(t.points[i].y)) {
          throw Error(errc::kInvariant, "anchors: non-finite centroid");
        }
      }
      t.valid.fill(true);
      a.centroids.push_back(t);
    }
    if (j.contains("counts")) a.counts = j.at("counts").get<std::vector<std::size_t>>();
    if (a.counts.size() != k) a.counts.assign(k, 0);
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, std::string("anchors: ") + e.what());
  }
}

inline std::filesystem::path anchor_file(const std::filesystem::path& dir, ObjectType t) {
  return dir / (std::string(to_string(t)) + ".json");
}

inline void save_anchor_library(const AnchorLibrary& lib, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const AnchorSet& a : lib) write_file_atomic(anchor_file(dir, a.type), anchors_to_json(a).dump() + "\n");
}

inline AnchorLibrary load_anchor_library(const std::filesystem::path& dir) {
  AnchorLibrary lib;
  for (ObjectType t : kAllObjectTypes) {
    const auto path = anchor_file(dir, t);
    if (!std::filesystem::exists(path)) throw Error(errc::kIo, "missing anchor file '" + path.string() + "'");
    try {
      lib[type_index(t)] = anchors_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::kParse, path.string() + ": " + e.what());
    }
    if (lib[type_index(t)].type != t) throw Error(errc::kInvariant, path.string() + ": type mismatch");
  }
  return lib;
}

}  // namespace airsq
