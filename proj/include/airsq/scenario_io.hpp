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
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames over the target, so readers never
// observe a partially written output.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(errc::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(errc::kIo, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(errc::kIo, "cannot rename '" + tmp.string() + "': " + ec.message());
}

namespace detail {

inline double number_at(const json& arr, std::size_t i, const std::string& field) {
  if (!arr.at(i).is_number()) throw Error(errc::kParse, field + ": expected a number");
  return arr.at(i).get<double>();
}

inline bool bool_at(const json& arr, std::size_t i, const std::string& field) {
  const json& v = arr.at(i);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) return v.get<std::int64_t>() != 0;
  throw Error(errc::kParse, field + ": expected a boolean");
}

inline const json& array_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw Error(errc::kParse, where + ": missing field '" + key + "'");
  const json& v = obj.at(key);
  if (!v.is_array()) throw Error(errc::kParse, where + "." + key + ": expected an array");
  return v;
}

}  // namespace detail

inline json trajectory_to_json(const Trajectory& t) {
  json arr = json::array();
  for (std::size_t i = 0; i < kFutureSteps; ++i) {
    arr.push_back(json::array({t.points[i].x, t.points[i].y, t.valid[i]}));
  }
  return arr;
}

inline Trajectory trajectory_from_json(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw Error(errc::kParse, where + ": expected an array");
  if (arr.size() != kFutureSteps) {
    throw Error(errc::kInvariant, where + ": future length " + std::to_string(arr.size()) + ", expected " +
                                      std::to_string(kFutureSteps));
  }
  Trajectory t;
  for (std::size_t i = 0; i < kFutureSteps; ++i) {
    const std::string f = where + "[" + std::to_string(i) + "]";
    const json& step = arr[i];
    if (!step.is_array() || step.size() != 3) throw Error(errc::kParse, f + ": expected [x, y, valid]");
    t.points[i] = {detail::number_at(step, 0, f), detail::number_at(step, 1, f)};
    t.valid[i] = detail::bool_at(step, 2, f);
  }
  return t;
}

inline json scenario_to_json(const Scenario& s) {
  json agents = json::array();
  for (const Agent& a : s.agents) {
    json past = json::array();
    for (const PastState& p : a.past) past.push_back(json::array({p.x, p.y, p.vx, p.vy, p.heading, p.valid}));
    agents.push_back({{"id", a.id},
                      {"type", std::string(to_string(a.type))},
                      {"is_sdc", a.is_sdc},
                      {"past", std::move(past)},
                      {"future", trajectory_to_json(a.future)}});
  }
  json roads = json::array();
  for (const Polyline& line : s.roads) {
    json pts = json::array();
    for (Point2 p : line) pts.push_back(json::array({p.x, p.y}));
    roads.push_back(std::move(pts));
  }
  return {{"agents", std::move(agents)}, {"pair", json::array({s.pair[0], s.pair[1]})}, {"roads", std::move(roads)}};
}

inline Scenario scenario_from_json(const json& j) {
  Scenario s;
  const json& agents = detail::array_field(j, "agents", "scenario");
  for (std::size_t a = 0; a < agents.size(); ++a) {
    const std::string where = "agents[" + std::to_string(a) + "]";
    const json& aj = agents[a];
    if (!aj.is_object()) throw Error(errc::kParse, where + ": expected an object");
    Agent agent;
    if (!aj.contains("id") || !aj.at("id").is_number_integer()) throw Error(errc::kParse, where + ".id: expected integer");
    agent.id = aj.at("id").get<std::int64_t>();
    if (!aj.contains("type") || !aj.at("type").is_string()) throw Error(errc::kParse, where + ".type: expected string");
    agent.type = parse_object_type(aj.at("type").get<std::string>());
    agent.is_sdc = aj.contains("is_sdc") && aj.at("is_sdc").is_boolean() && aj.at("is_sdc").get<bool>();
    const json& past = detail::array_field(aj, "past", where);
    if (past.size() != kPastSteps) {
      throw Error(errc::kInvariant, where + ".past: past length " + std::to_string(past.size()) + ", expected " +
                                        std::to_string(kPastSteps));
    }
    for (std::size_t t = 0; t < kPastSteps; ++t) {
      const std::string f = where + ".past[" + std::to_string(t) + "]";
      const json& st = past[t];
      if (!st.is_array() || st.size() != 6) throw Error(errc::kParse, f + ": expected [x, y, vx, vy, heading, valid]");
      agent.past[t] = {detail::number_at(st, 0, f), detail::number_at(st, 1, f), detail::number_at(st, 2, f),
                       detail::number_at(st, 3, f), detail::number_at(st, 4, f), detail::bool_at(st, 5, f)};
    }
    agent.future = trajectory_from_json(detail::array_field(aj, "future", where), where + ".future");
    s.agents.push_back(std::move(agent));
  }
  const json& pair = detail::array_field(j, "pair", "scenario");
  if (pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number_integer() ||
      pair[0].get<std::int64_t>() < 0 || pair[1].get<std::int64_t>() < 0) {
    throw Error(errc::kInvariant, "pair: expected two non-negative indices");
  }
  s.pair = {pair[0].get<std::size_t>(), pair[1].get<std::size_t>()};
  if (j.contains("roads")) {
    const json& roads = detail::array_field(j, "roads", "scenario");
    for (std::size_t r = 0; r < roads.size(); ++r) {
      const std::string where = "roads[" + std::to_string(r) + "]";
      if (!roads[r].is_array()) throw Error(errc::kParse, where + ": expected an array");
      Polyline line;
      for (std::size_t k = 0; k < roads[r].size(); ++k) {
        const json& p = roads[r][k];
        const std::string f = where + "[" + std::to_string(k) + "]";
        if (!p.is_array() || p.size() != 2) throw Error(errc::kParse, f + ": expected [x, y]");
        line.push_back({detail::number_at(p, 0, f), detail::number_at(p, 1, f)});
      }
      s.roads.push_back(std::move(line));
    }
  }
  validate(s);
  return s;
}

// One JSON object per line; blank lines are skipped. Errors carry the 1-based
// line number.
inline std::vector<Scenario> parse_scenarios(std::string_view text) {
  std::vector<Scenario> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(scenario_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(errc::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  return parse_scenarios(read_file(path));
}

inline std::string serialize_scenarios(std::span<const Scenario> scenarios) {
  std::string out;
  for (const Scenario& s : scenarios) {
    out += scenario_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline void save_scenarios(std::span<const Scenario> scenarios, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_scenarios(scenarios));
}

}  // namespace airsq
