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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/prediction.hpp"
#include "airsq/scenario_io.hpp"

namespace airsq {

// One JSON object per scenario. Only active modes are stored; on load, padded
// modes come back as all-invalid trajectories with zero confidence.
//   {"k": K, "grid": [[...] x K], "marginals": [{"type", "active",
//    "confidences": [...active], "trajectories": [[[x, y, valid] x 80] x active]} x 2]}
inline json prediction_to_json(const JointPrediction& p) {
  const std::size_t k = p.grid.k();
  json grid = json::array();
  for (std::size_t i = 0; i < k; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < k; ++j) row.push_back(p.grid(i, j));
    grid.push_back(std::move(row));
  }
  json marginals = json::array();
  for (const MarginalPrediction& m : p.marginals) {
    json conf = json::array(), trajs = json::array();
    for (std::size_t i = 0; i < m.active; ++i) {
      conf.push_back(m.confidences.at(i));
      trajs.push_back(trajectory_to_json(m.trajectories.at(i)));
    }
    marginals.push_back({{"type", std::string(to_string(m.type))},
                         {"active", m.active},
                         {"confidences", std::move(conf)},
                         {"trajectories", std::move(trajs)}});
  }
  return {{"k", k}, {"grid", std::move(grid)}, {"marginals", std::move(marginals)}};
}

inline JointPrediction prediction_from_json(const json& j, const std::string& where) {
  try {
    JointPrediction p;
    const std::size_t k = j.at("k").get<std::size_t>();
    p.grid = JointConfidenceGrid(k);
    const json& grid = j.at("grid");
    if (grid.size() != k) throw Error(errc::kInvariant, where + ": grid has " + std::to_string(grid.size()) + " rows");
    for (std::size_t i = 0; i < k; ++i) {
      if (grid[i].size() != k) throw Error(errc::kInvariant, where + ": grid row " + std::to_string(i) + " length");
      for (std::size_t c = 0; c < k; ++c) p.grid(i, c) = grid[i][c].get<double>();
    }
    const json& ms = j.at("marginals");
    if (ms.size() != 2) throw Error(errc::kInvariant, where + ": expected 2 marginals");
    for (std::size_t a = 0; a < 2; ++a) {
      MarginalPrediction& m = p.marginals[a];
      m.type = parse_object_type(ms[a].at("type").get<std::string>());
      m.active = ms[a].at("active").get<std::size_t>();
      if (m.active > k) throw Error(errc::kInvariant, where + ": active modes exceed K");
      m.confidences.assign(k, 0.0);
      m.trajectories.assign(k, Trajectory{});
      const json& conf = ms[a].at("confidences");
      const json& trajs = ms[a].at("trajectories");
      if (conf.size() != m.active || trajs.size() != m.active) {
        throw Error(errc::kInvariant, where + ": marginal " + std::to_string(a) + " mode count mismatch");
      }
      for (std::size_t i = 0; i < m.active; ++i) {
        m.confidences[i] = conf[i].get<double>();
        m.trajectories[i] = trajectory_from_json(trajs[i], where + ".trajectories");
      }
    }
    return p;
  } catch (const json::exception& e) {
    throw Error(errc::kParse, where + ": " + e.what());
  }
}

inline std::string serialize_predictions(std::span<const JointPrediction> preds) {
  std::string out;
  for (const JointPrediction& p : preds) out += prediction_to_json(p).dump() + "\n";
  return out;
}

inline std::vector<JointPrediction> parse_predictions(std::string_view text) {
  std::vector<JointPrediction> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(errc::kParse, where + ": " + e.what());
    }
    out.push_back(prediction_from_json(j, where));
  }
  return out;
}

inline void save_predictions(std::span<const JointPrediction> preds, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_predictions(preds));
}

inline std::vector<JointPrediction> load_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_file(path));
}

}  // namespace airsq
