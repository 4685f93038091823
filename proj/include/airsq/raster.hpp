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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"
#include "airsq/scenario_io.hpp"

namespace airsq {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Every pixel a renderer writes comes from this table.
struct ColorTable {
  Rgb background{0, 0, 0};
  Rgb road{128, 128, 128};
  Rgb context_agent{0, 0, 255};
  Rgb pair_agent{0, 255, 0};
  std::vector<Rgb> pair_history;     // index 0 = most recent
  std::vector<Rgb> context_history;  // index 0 = most recent
  std::vector<Rgb> prediction;       // index 0 = near t=0

  static ColorTable standard() {
    ColorTable c;
    for (int k = 0; k < static_cast<int>(kCurrentIndex); ++k) {
      const auto level = static_cast<std::uint8_t>(200 - 15 * k);
      c.pair_history.push_back({0, level, 0});
      c.context_history.push_back({0, 0, level});
    }
    for (int k = 0; k < 8; ++k) c.prediction.push_back({static_cast<std::uint8_t>(255 - 25 * k), 0, 0});
    return c;
  }

  bool contains(Rgb c) const {
    if (c == background || c == road || c == context_agent || c == pair_agent) return true;
    for (const auto* v : {&pair_history, &context_history, &prediction}) {
      if (std::find(v->begin(), v->end(), c) != v->end()) return true;
    }
    return false;
  }
};

// Ego frame: the ego agent sits at (ego_row, ego_col) heading toward
// increasing column; ego +y (left) is decreasing row.
struct RasterConfig {
  int height = 224;
  int width = 448;
  double resolution = 0.5;  // meters per pixel
  int ego_row = 112;
  int ego_col = 112;
  ColorTable colors = ColorTable::standard();

  // Same field of view at 1/factor of the pixel count along each axis.
  RasterConfig scaled(int factor) const {
    if (factor < 1) throw Error(errc::kInvalidArgument, "raster: scale factor must be >= 1");
    RasterConfig c = *this;
    c.height = height / factor;
    c.width = width / factor;
    c.resolution = resolution * factor;
    c.ego_row = ego_row / factor;
    c.ego_col = ego_col / factor;
    return c;
  }

  void validate() const {
    if (height <= 0 || width <= 0 || !(resolution > 0.0)) throw Error(errc::kInvalidArgument, "raster: bad size");
    if (ego_row < 0 || ego_row >= height || ego_col < 0 || ego_col >= width) {
      throw Error(errc::kInvalidArgument, "raster: ego pixel outside image");
    }
  }
};

class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int height, int width, Rgb fill = {})
      : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width * 3) {
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
      pixels_[i] = fill.r;
      pixels_[i + 1] = fill.g;
      pixels_[i + 2] = fill.b;
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<std::uint8_t>& bytes() const { return pixels_; }
  std::vector<std::uint8_t>& bytes() { return pixels_; }

  bool inside(int r, int c) const { return r >= 0 && r < height_ && c >= 0 && c < width_; }

  Rgb at(int r, int c) const {
    const std::size_t i = offset(r, c);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }

  void set(int r, int c, Rgb color) {
    if (!inside(r, c)) return;
    const std::size_t i = offset(r, c);
    pixels_[i] = color.r;
    pixels_[i + 1] = color.g;
    pixels_[i + 2] = color.b;
  }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  std::size_t offset(int r, int c) const { return (static_cast<std::size_t>(r) * width_ + c) * 3; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Length x width of the box drawn for an agent, meters.
inline std::array<double, 2> footprint(ObjectType t) {
  switch (t) {
    case ObjectType::kVehicle:
      return {4.5, 2.0};
    case ObjectType::kPedestrian:
      return {0.8, 0.8};
    case ObjectType::kCyclist:
      return {2.0, 0.8};
  }
  return {1.0, 1.0};
}

namespace detail {

struct PixelF {
  double row, col;
};

inline PixelF to_pixel(Point2 ego, const RasterConfig& cfg) {
  return {cfg.ego_row - ego.y / cfg.resolution, cfg.ego_col + ego.x / cfg.resolution};
}

inline int round_px(double v) { return static_cast<int>(std::floor(v + 0.5)); }

inline void plot(RasterImage& img, Point2 ego, const RasterConfig& cfg, Rgb color) {
  const PixelF p = to_pixel(ego, cfg);
  if (!(std::abs(p.row) < 1e7 && std::abs(p.col) < 1e7)) return;
  img.set(round_px(p.row), round_px(p.col), color);
}

// Liang-Barsky clip of the segment against the image rectangle expanded by one
// pixel; false when nothing remains.
inline bool clip(PixelF& a, PixelF& b, double rows, double cols) {
  double t0 = 0.0, t1 = 1.0;
  const double dr = b.row - a.row, dc = b.col - a.col;
  const std::array<double, 4> p{-dc, dc, -dr, dr};
  const std::array<double, 4> q{a.col + 1.0, cols - a.col, a.row + 1.0, rows - a.row};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return false;
  }
  const PixelF a0 = a;
  a = {a0.row + t0 * dr, a0.col + t0 * dc};
  b = {a0.row + t1 * dr, a0.col + t1 * dc};
  return true;
}

inline void bresenham(RasterImage& img, int r0, int c0, int r1, int c1, Rgb color) {
  const int dc = std::abs(c1 - c0), sc = c0 < c1 ? 1 : -1;
  const int dr = -std::abs(r1 - r0), sr = r0 < r1 ? 1 : -1;
  int err = dc + dr;
  while (true) {
    img.set(r0, c0, color);
    if (r0 == r1 && c0 == c1) break;
    const int e2 = 2 * err;
    if (e2 >= dr) {
      err += dr;
      c0 += sc;
    }
    if (e2 <= dc) {
      err += dc;
      r0 += sr;
    }
  }
}

inline void line(RasterImage& img, Point2 a_ego, Point2 b_ego, const RasterConfig& cfg, Rgb color) {
  PixelF a = to_pixel(a_ego, cfg), b = to_pixel(b_ego, cfg);
  if (!clip(a, b, img.height(), img.width())) return;
  bresenham(img, round_px(a.row), round_px(a.col), round_px(b.row), round_px(b.col), color);
}

// Scanline fill of an oriented rectangle: every pixel whose center lies inside
// is painted; the center pixel is always painted so sub-pixel boxes show up.
inline void box(RasterImage& img, Point2 center_ego, double heading_ego, double length, double width,
                const RasterConfig& cfg, Rgb color) {
  const double c = std::cos(heading_ego), s = std::sin(heading_ego);
  const double hl = 0.5 * length, hw = 0.5 * width;
  const double reach = std::sqrt(hl * hl + hw * hw) / cfg.resolution + 1.0;
  const PixelF pc = to_pixel(center_ego, cfg);
  if (!(std::abs(pc.row) < 1e7 && std::abs(pc.col) < 1e7)) return;
  const int r_lo = std::max(0, static_cast<int>(std::floor(pc.row - reach)));
  const int r_hi = std::min(img.height() - 1, static_cast<int>(std::ceil(pc.row + reach)));
  const int c_lo = std::max(0, static_cast<int>(std::floor(pc.col - reach)));
  const int c_hi = std::min(img.width() - 1, static_cast<int>(std::ceil(pc.col + reach)));
  for (int r = r_lo; r <= r_hi; ++r) {
    const double y = (cfg.ego_row - r) * cfg.resolution - center_ego.y;
    for (int col = c_lo; col <= c_hi; ++col) {
      const double x = (col - cfg.ego_col) * cfg.resolution - center_ego.x;
      const double u = c * x + s * y;
      const double v = -s * x + c * y;
      if (std::abs(u) <= hl && std::abs(v) <= hw) img.set(r, col, color);
    }
  }
  img.set(round_px(pc.row), round_px(pc.col), color);
}

inline void draw_agent_box(RasterImage& img, const Agent& a, const Pose& ego, const RasterConfig& cfg, Rgb color) {
  if (!a.current().valid) return;
  const auto fp = footprint(a.type);
  box(img, to_ego(Point2{a.current().x, a.current().y}, ego), wrap_angle(a.current().heading - ego.heading), fp[0],
      fp[1], cfg, color);
}

inline void draw_history(RasterImage& img, const Agent& a, const Pose& ego, const RasterConfig& cfg,
                         const std::vector<Rgb>& fade) {
  // Oldest first so that newer points overwrite.
  for (std::size_t k = 0; k < kCurrentIndex; ++k) {
    const PastState& p = a.past[k];
    if (!p.valid) continue;
    const std::size_t age = kCurrentIndex - 1 - k;
    plot(img, to_ego(Point2{p.x, p.y}, ego), cfg, fade[std::min(age, fade.size() - 1)]);
  }
}

}  // namespace detail

// Background, roads, context boxes, history dots, then both pair agents in
// the pair color.
inline RasterImage rasterize(const Scenario& scenario, int ego_slot, const RasterConfig& cfg) {
  cfg.validate();
  if (ego_slot != 0 && ego_slot != 1) throw Error(errc::kInvalidArgument, "rasterize: ego slot must be 0 or 1");
  const Pose ego = scenario.pair_agent(ego_slot).current_pose();
  const ColorTable& colors = cfg.colors;
  RasterImage img(cfg.height, cfg.width, colors.background);

  for (const Polyline& road : scenario.roads) {
    for (std::size_t k = 1; k < road.size(); ++k) {
      detail::line(img, to_ego(road[k - 1], ego), to_ego(road[k], ego), cfg, colors.road);
    }
  }
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    if (i == scenario.pair[0] || i == scenario.pair[1]) continue;
    detail::draw_agent_box(img, scenario.agents[i], ego, cfg, colors.context_agent);
  }
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const bool in_pair = i == scenario.pair[0] || i == scenario.pair[1];
    detail::draw_history(img, scenario.agents[i], ego, cfg, in_pair ? colors.pair_history : colors.context_history);
  }
  // Partner first, ego last: ego stays on top where they overlap.
  detail::draw_agent_box(img, scenario.pair_agent(1 - ego_slot), ego, cfg, colors.pair_agent);
  detail::draw_agent_box(img, scenario.pair_agent(ego_slot), ego, cfg, colors.pair_agent);
  return img;
}

// rasterize() plus the partner's predicted future as a polyline on top, color
// graded from bright (near t=0) to dark (near t=80).
inline RasterImage rerasterize(const Scenario& scenario, int ego_slot, const Trajectory& partner_prediction,
                               const RasterConfig& cfg) {
  RasterImage img = rasterize(scenario, ego_slot, cfg);
  const Pose ego = scenario.pair_agent(ego_slot).current_pose();
  const auto& fade = cfg.colors.prediction;
  bool have_prev = false;
  Point2 prev{};
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    if (!partner_prediction.valid[t]) {
      have_prev = false;
      continue;
    }
    const Point2 p = to_ego(partner_prediction.points[t], ego);
    const Rgb color = fade[t * fade.size() / kFutureSteps];
    if (have_prev) {
      detail::line(img, prev, p, cfg, color);
    } else {
      detail::plot(img, p, cfg, color);
    }
    prev = p;
    have_prev = true;
  }
  return img;
}

inline std::string encode_ppm(const RasterImage& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.bytes().data()), img.bytes().size());
  return out;
}

inline RasterImage decode_ppm(std::string_view data) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return std::string(data.substr(start, pos - start));
  };
  if (token() != "P6") throw Error(errc::kParse, "ppm: not a P6 file");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(errc::kParse, "ppm: bad header");
  }
  if (maxval != 255 || w <= 0 || h <= 0) throw Error(errc::kParse, "ppm: unsupported header");
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (data.size() < pos + n) throw Error(errc::kParse, "ppm: truncated pixel data");
  RasterImage img(h, w);
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(pos), data.begin() + static_cast<std::ptrdiff_t>(pos + n),
            img.bytes().begin());
  return img;
}

inline void write_ppm(const RasterImage& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_ppm(img));
}

inline RasterImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

}  // namespace airsq
