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

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/model.hpp"
#include "airsq/scenario_io.hpp"

namespace airsq {

// Layout, all integers little-endian:
//   "AIRSQCKP" | u32 version | u64 len | model config JSON
//   | u32 tensor count | per tensor: u32 len | name | u32 rank | u64 dims... | f64 values...
inline constexpr std::string_view kCheckpointMagic = "AIRSQCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw Error(errc::kParse, "checkpoint: truncated at byte " + std::to_string(pos_));
    const std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t u64() {
    const std::string_view s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }

  std::uint32_t u32() {
    const std::string_view s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  const std::string cfg = model_config_to_json(ck.config).dump();
  detail::put_u64(out, cfg.size());
  out += cfg;
  std::uint32_t count = 0;
  visit_params(ck.params, [&](const std::string&, ParamGroup, const nn::Tensor&) { ++count; });
  detail::put_u32(out, count);
  visit_params(ck.params, [&](const std::string& name, ParamGroup, const nn::Tensor& t) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_u64(out, d);
    for (double v : t.data) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  });
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  detail::Reader r(data);
  if (r.take(kCheckpointMagic.size()) != kCheckpointMagic) throw Error(errc::kParse, "checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(errc::kParse, "checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint64_t len = r.u64();
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(r.take(len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, std::string("checkpoint: config: ") + e.what());
  }
  ck.config = model_config_from_json(cfg);
  ck.config.validate();
  ck.params = zero_params(ck.config);
  const std::uint32_t count = r.u32();
  std::uint32_t expected = 0;
  visit_params(ck.params, [&](const std::string&, ParamGroup, const nn::Tensor&) { ++expected; });
  if (count != expected) {
    throw Error(errc::kParse, "checkpoint: " + std::to_string(count) + " tensors, expected " + std::to_string(expected));
  }
  visit_params(ck.params, [&](const std::string& name, ParamGroup, nn::Tensor& t) {
    const std::string got(r.take(r.u32()));
    if (got != name) throw Error(errc::kParse, "checkpoint: tensor '" + got + "', expected '" + name + "'");
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    if (shape != t.shape) throw Error(errc::kParse, "checkpoint: shape mismatch for '" + name + "'");
    for (double& v : t.data) {
      v = std::bit_cast<double>(r.u64());
      if (!std::isfinite(v)) throw Error(errc::kInvariant, "checkpoint: non-finite value in '" + name + "'");
    }
  });
  if (!r.done()) throw Error(errc::kParse, "checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace airsq
