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
#include <span>
#include <string>
#include <vector>

#include "airsq/common.hpp"
#include "airsq/scenario.hpp"

namespace airsq {

inline constexpr std::size_t kNumControlPoints = 8;
inline constexpr std::size_t kSplineDegree = 3;
inline constexpr double kSplineDomainEpsilon = 1e-9;

// Dense num_out x num_ctrl matrix of B-spline basis weights. Row t holds the
// weights that map control points to output sample t.
class SplineBasis {
 public:
  SplineBasis(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), w_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return w_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return w_[r * cols_ + c]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> w_;
};

// Parameter of output sample `r`, measured from the start of the valid domain
// [0, num_ctrl - degree). Evenly spaced, first sample at 0, last sample
// epsilon short of the right end.
inline double spline_sample_parameter(std::size_t r, std::size_t num_out, std::size_t num_ctrl, std::size_t degree) {
  const double span = static_cast<double>(num_ctrl - degree) - kSplineDomainEpsilon;
  if (num_out == 1) return 0.0;
  return span * static_cast<double>(r) / static_cast<double>(num_out - 1);
}

// Non-zero basis functions N_{span-degree..span, degree}(u) on the uniform
// integer knot vector 0, 1, ..., num_ctrl + degree (triangular scheme).
inline std::vector<double> bspline_nonzero_basis(double u, std::size_t span, std::size_t degree) {
  std::vector<double> n(degree + 1, 0.0), left(degree + 1, 0.0), right(degree + 1, 0.0);
  n[0] = 1.0;
  for (std::size_t j = 1; j <= degree; ++j) {
    left[j] = u - static_cast<double>(span + 1 - j);
    right[j] = static_cast<double>(span + j) - u;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  return n;
}

inline SplineBasis build_basis(std::size_t num_out = kFutureSteps, std::size_t num_ctrl = kNumControlPoints,
                               std::size_t degree = kSplineDegree) {
  if (num_ctrl <= degree) {
    throw Error(errc::kInvalidArgument, "spline: need num_ctrl > degree (got " + std::to_string(num_ctrl) + " <= " +
                                            std::to_string(degree) + ")");
  }
  if (num_out == 0) throw Error(errc::kInvalidArgument, "spline: num_out must be >= 1");
  SplineBasis basis(num_out, num_ctrl);
  for (std::size_t r = 0; r < num_out; ++r) {
    const double u = static_cast<double>(degree) + spline_sample_parameter(r, num_out, num_ctrl, degree);
    std::size_t span = static_cast<std::size_t>(std::floor(u));
    span = std::min(std::max(span, degree), num_ctrl - 1);
    const std::vector<double> n = bspline_nonzero_basis(u, span, degree);
    for (std::size_t j = 0; j <= degree; ++j) basis(r, span - degree + j) = n[j];
  }
  return basis;
}

inline const SplineBasis& default_basis() {
  static const SplineBasis basis = build_basis();
  return basis;
}

inline Trajectory interpolate(std::span<const Point2> control_points, const SplineBasis& basis) {
  if (control_points.size() != basis.cols() || basis.rows() != kFutureSteps) {
    throw Error(errc::kInvalidArgument, "interpolate: shape mismatch");
  }
  Trajectory out;
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    Point2 acc;
    for (std::size_t c = 0; c < basis.cols(); ++c) {
      acc.x += basis(t, c) * control_points[c].x;
      acc.y += basis(t, c) * control_points[c].y;
    }
    out.points[t] = acc;
    out.valid[t] = true;
  }
  return out;
}

// d(control points) = basis^T * d(outputs).
inline std::vector<Point2> interpolate_backward(std::span<const Point2> d_out, const SplineBasis& basis) {
  std::vector<Point2> d_cp(basis.cols());
  for (std::size_t t = 0; t < basis.rows(); ++t) {
    for (std::size_t c = 0; c < basis.cols(); ++c) {
      d_cp[c].x += basis(t, c) * d_out[t].x;
      d_cp[c].y += basis(t, c) * d_out[t].y;
    }
  }
  return d_cp;
}

}  // namespace airsq
