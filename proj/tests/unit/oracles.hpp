// Copyright 2026 The gadft Authors
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

// Test-only reference implementations. Nothing here calls into the library
// code path it is used to check.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gadft/random.hpp"
#include "gadft/tensor.hpp"

namespace gadft::testing {

inline BasicTensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_float_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Six-loop direct convolution, 64-bit accumulation.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, Index n, Index c, Index h,
                                        Index w, const std::vector<double>& wt, Index k, Index kh,
                                        Index kw, const std::vector<double>& b, Index stride,
                                        Index pad, Index& oh, Index& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * k * oh * ow), 0.0);
  for (Index s = 0; s < n; ++s)
    for (Index o = 0; o < k; ++o)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = b[o];
          for (Index ci = 0; ci < c; ++ci)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index iy = y * stride - pad + i, ix = xx * stride - pad + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[((s * c + ci) * h + iy) * w + ix] * wt[((o * c + ci) * kh + i) * kw + j];
              }
          out[((s * k + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

struct GradCheck {
  double max_relative = 0.0;
  bool passed = true;
};

/// Compares the analytic gradient of `f` against central differences
/// (step h) for every element of every input. Relative error per input is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8); a gradient
/// that is identically ~0 on both sides counts as a match.
inline GradCheck check_gradients(
    const std::function<BasicTensor<double>(const std::vector<BasicTensor<double>>&)>& f,
    std::vector<BasicTensor<double>> inputs, double h = 1e-3, double tolerance = 1e-3) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto root = f(inputs);
  backward(root);
  GradCheck result;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(t.numel()), 0.0);
    std::vector<double> numeric(analytic.size());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      double up, down;
      {
        NoGradGuard guard;
        up = f(inputs).item();
        data[i] = keep - h;
        down = f(inputs).item();
      }
      data[i] = keep;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    const double rel = std::sqrt(diff) / denom;
    if (std::sqrt(na) < 1e-10 && std::sqrt(nn) < 1e-7) continue;
    result.max_relative = std::max(result.max_relative, rel);
    if (!(rel <= tolerance)) result.passed = false;
  }
  return result;
}

/// Pairwise-comparison AUROC: P(pos > neg) + 0.5 P(tie).
inline double pairwise_auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& pos) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (pos[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Textbook Ledoit-Wolf with the per-sample outer-product sum written out.
inline std::pair<Eigen::MatrixXd, double> direct_ledoit_wolf(const Eigen::MatrixXd& x) {
  const double n = static_cast<double>(x.rows());
  const Eigen::Index d = x.cols();
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd xc = x.rowwise() - mean;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k < x.rows(); ++k) s += xc.row(k).transpose() * xc.row(k);
  s /= n;
  const double m = s.trace() / static_cast<double>(d);
  const Eigen::MatrixXd target = m * Eigen::MatrixXd::Identity(d, d);
  double d2 = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) d2 += (s(i, j) - target(i, j)) * (s(i, j) - target(i, j));
  d2 /= static_cast<double>(d);
  double b2 = 0.0;
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    Eigen::MatrixXd outer = xc.row(k).transpose() * xc.row(k);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) b2 += (outer(i, j) - s(i, j)) * (outer(i, j) - s(i, j));
  }
  b2 /= n * n * static_cast<double>(d);
  b2 = std::min(b2, d2);
  const double rho = d2 > 0.0 ? b2 / d2 : 0.0;
  return {(1.0 - rho) * s + rho * target, rho};
}

}  // namespace gadft::testing
