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
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

struct SampleRef {
  ObjectType type;
  std::size_t index;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

using PerTypeSizes = std::array<std::size_t, 3>;

// Each draw: pick a type with probability 1/3, then an element of that type's
// dataset uniformly, with replacement.
inline std::vector<SampleRef> balanced_sample_refs(const PerTypeSizes& sizes, std::size_t n, std::uint64_t seed) {
  for (ObjectType t : kAllObjectTypes) {
    if (sizes[type_index(t)] == 0) {
      throw Error(errc::kInvalidArgument, "balanced_sample: empty " + std::string(to_string(t)) + " dataset");
    }
  }
  Rng rng(seed);
  std::vector<SampleRef> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const ObjectType t = kAllObjectTypes[rng.index(3)];
    out.push_back({t, rng.index(sizes[type_index(t)])});
  }
  return out;
}

inline std::vector<Scenario> balanced_sample(const std::array<std::span<const Scenario>, 3>& datasets, std::size_t n,
                                             std::uint64_t seed) {
  PerTypeSizes sizes{};
  for (std::size_t t = 0; t < 3; ++t) sizes[t] = datasets[t].size();
  std::vector<Scenario> out;
  out.reserve(n);
  for (const SampleRef& r : balanced_sample_refs(sizes, n, seed)) out.push_back(datasets[type_index(r.type)][r.index]);
  return out;
}

// Type key used to route a scenario into a per-type dataset: the type of the
// pair's agent 0.
inline ObjectType scenario_type(const Scenario& s) { return s.pair_agent(0).type; }

inline std::array<std::vector<std::size_t>, 3> partition_by_type(std::span<const Scenario> scenarios) {
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t i = 0; i < scenarios.size(); ++i) parts[type_index(scenario_type(scenarios[i]))].push_back(i);
  return parts;
}

}  // namespace airsq
