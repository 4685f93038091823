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
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "airsq/common.hpp"

// Minimal dense/conv building blocks with hand-written backward passes. All
// tensors are row-major doubles; accumulation order is fixed.
namespace airsq::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>()), 0.0);
  }

  std::size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Weight [out, in] and bias [out].
struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : w({out, in}), b({out}) {}

  std::size_t in() const { return w.shape.at(1); }
  std::size_t out() const { return w.shape.at(0); }

  friend bool operator==(const Linear&, const Linear&) = default;
};

// Weight [out, in, 3, 3] and bias [out]; stride 2, zero padding 1.
struct Conv {
  Tensor w;
  Tensor b;

  Conv() = default;
  Conv(std::size_t in, std::size_t out) : w({out, in, 3, 3}), b({out}) {}

  std::size_t in() const { return w.shape.at(1); }
  std::size_t out() const { return w.shape.at(0); }

  friend bool operator==(const Conv&, const Conv&) = default;
};

// y = W x + b
inline void linear_forward(const Linear& l, std::span<const double> x, std::span<double> y) {
  const std::size_t n_in = l.in(), n_out = l.out();
  for (std::size_t o = 0; o < n_out; ++o) {
    const double* row = &l.w.data[o * n_in];
    double acc = l.b.data[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// Accumulates dW, db; adds W^T dy into dx when dx is non-empty.
inline void linear_backward(const Linear& l, std::span<const double> x, std::span<const double> dy, Linear& grad,
                            std::span<double> dx) {
  const std::size_t n_in = l.in(), n_out = l.out();
  for (std::size_t o = 0; o < n_out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    grad.b.data[o] += g;
    double* grow = &grad.w.data[o * n_in];
    for (std::size_t i = 0; i < n_in; ++i) grow[i] += g * x[i];
    if (!dx.empty()) {
      const double* row = &l.w.data[o * n_in];
      for (std::size_t i = 0; i < n_in; ++i) dx[i] += g * row[i];
    }
  }
}

inline void relu_inplace(std::span<double> v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// dy *= relu'(pre)
inline void relu_backward(std::span<const double> pre, std::span<double> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(pre[i] > 0.0)) dy[i] = 0.0;
  }
}

inline std::size_t conv_out_dim(std::size_t n) { return (n + 1) / 2; }

inline void conv_forward(const Conv& c, std::span<const double> in, std::size_t h, std::size_t w,
                         std::span<double> out) {
  const std::size_t ci_n = c.in(), co_n = c.out();
  const std::size_t oh = conv_out_dim(h), ow = conv_out_dim(w);
  for (std::size_t co = 0; co < co_n; ++co) {
    double* o_plane = &out[co * oh * ow];
    std::fill(o_plane, o_plane + oh * ow, c.b.data[co]);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const double* i_plane = &in[ci * h * w];
      const double* k = &c.w.data[(co * ci_n + ci) * 9];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * y + ky) - 1;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* i_row = i_plane + iy * static_cast<std::ptrdiff_t>(w);
            double* o_row = o_plane + y * ow;
            const std::size_t x_lo = kx == 0 ? 1 : 0;
            for (std::size_t x = x_lo; x < ow; ++x) {
              const std::size_t ix = 2 * x + kx - 1;
              if (ix >= w) break;
              o_row[x] += wv * i_row[ix];
            }
          }
        }
      }
    }
  }
}

// Accumulates dW, db; writes (overwrites) d_in when non-empty.
inline void conv_backward(const Conv& c, std::span<const double> in, std::size_t h, std::size_t w,
                          std::span<const double> d_out, Conv& grad, std::span<double> d_in) {
  const std::size_t ci_n = c.in(), co_n = c.out();
  const std::size_t oh = conv_out_dim(h), ow = conv_out_dim(w);
  if (!d_in.empty()) std::fill(d_in.begin(), d_in.end(), 0.0);
  for (std::size_t co = 0; co < co_n; ++co) {
    const double* g_plane = &d_out[co * oh * ow];
    double gb = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) gb += g_plane[i];
    grad.b.data[co] += gb;
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const double* i_plane = &in[ci * h * w];
      double* di_plane = d_in.empty() ? nullptr : &d_in[ci * h * w];
      const double* k = &c.w.data[(co * ci_n + ci) * 9];
      double* gk = &grad.w.data[(co * ci_n + ci) * 9];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          double acc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * y + ky) - 1;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* i_row = i_plane + iy * static_cast<std::ptrdiff_t>(w);
            const double* g_row = g_plane + y * ow;
            const std::size_t x_lo = kx == 0 ? 1 : 0;
            if (di_plane != nullptr) {
              double* di_row = di_plane + iy * static_cast<std::ptrdiff_t>(w);
              for (std::size_t x = x_lo; x < ow; ++x) {
                const std::size_t ix = 2 * x + kx - 1;
                if (ix >= w) break;
                acc += g_row[x] * i_row[ix];
                di_row[ix] += wv * g_row[x];
              }
            } else {
              for (std::size_t x = x_lo; x < ow; ++x) {
                const std::size_t ix = 2 * x + kx - 1;
                if (ix >= w) break;
                acc += g_row[x] * i_row[ix];
              }
            }
          }
          gk[ky * 3 + kx] += acc;
        }
      }
    }
  }
}

// Softmax over the entries with mask[i] true; masked entries get exactly 0.
inline void masked_softmax(std::span<const double> logits, std::span<const bool> mask, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) mx = std::max(mx, logits[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = mask[i] ? std::exp(logits[i] - mx) : 0.0;
    z += out[i];
  }
  for (double& v : out) v /= z;
}

// d_logits = p * (dp - <p, dp>) on unmasked entries.
inline void softmax_backward(std::span<const double> p, std::span<const double> dp, std::span<double> d_logits) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  for (std::size_t i = 0; i < p.size(); ++i) d_logits[i] = p[i] == 0.0 ? 0.0 : p[i] * (dp[i] - dot);
}

}  // namespace airsq::nn
