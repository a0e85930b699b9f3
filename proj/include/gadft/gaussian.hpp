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

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <string_view>
#include <vector>

#include "gadft/error.hpp"
#include "gadft/extractor.hpp"
#include "gadft/tensor.hpp"

namespace gadft {

/// Variance assigned to every direction when the sample covariance vanishes.
inline constexpr double kDegenerateVariance = 1e-6;

struct ShrinkageEstimate {
  Eigen::MatrixXd covariance;
  double shrinkage = 0.0;
  /// True when the sample covariance was identically zero.
  bool degenerate = false;
};

/// Ledoit-Wolf shrinkage towards a scaled identity.
///
/// Rows of `samples` are observations. With S the biased sample covariance
/// and m = trace(S) / D:
///   d2 = ||S - m I||_F^2 / D
///   b2 = min(d2, sum_k ||x_k x_k^T - S||_F^2 / (N^2 D))
///   rho = b2 / d2,  Sigma = (1 - rho) S + rho m I
/// The sum over outer products is evaluated as (sum_k ||x_k||^4 - N ||S||_F^2).
/// A zero S yields kDegenerateVariance * I with rho = 1.
template <typename Derived>
ShrinkageEstimate ledoit_wolf(const Eigen::MatrixBase<Derived>& samples) {
  using Eigen::MatrixXd;
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  if (n < 1 || d < 1) throw EstimationError("ledoit_wolf needs at least one sample and dimension");
  const MatrixXd x = samples.template cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - mean;
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(d);
  MatrixXd s = MatrixXd::Zero(d, d);
  s.template selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / nd);
  s = s.template selfadjointView<Eigen::Lower>();

  ShrinkageEstimate out;
  if (s.cwiseAbs().maxCoeff() == 0.0) {
    out.covariance = kDegenerateVariance * MatrixXd::Identity(d, d);
    out.shrinkage = 1.0;
    out.degenerate = true;
    return out;
  }
  const double m = s.trace() / dd;
  const double s_norm2 = s.squaredNorm();
  const double d2 = (s - m * MatrixXd::Identity(d, d)).squaredNorm() / dd;
  const double fourth = centered.rowwise().squaredNorm().array().square().sum();
  double b2 = std::max(0.0, (fourth - nd * s_norm2) / (nd * nd * dd));
  b2 = std::min(b2, d2);
  out.shrinkage = d2 > 0.0 ? std::clamp(b2 / d2, 0.0, 1.0) : 0.0;
  out.covariance = (1.0 - out.shrinkage) * s;
  out.covariance.diagonal().array() += out.shrinkage * m;
  return out;
}

/// Lower Cholesky factor. On failure the diagonal is loaded with
/// max(1e-6 * mean diagonal, 1e-9) and the factorization retried once.
Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& covariance);

enum class GaussianMode : std::uint8_t { global = 0, tied = 1, local = 2 };

std::string_view to_string(GaussianMode mode);
GaussianMode parse_gaussian_mode(std::string_view name);

/// Gaussian model of one feature level.
///
/// global: one mean and one covariance shared by all locations.
/// tied:   a mean per location, one covariance shared by all locations.
/// local:  a mean and a covariance per location.
struct LevelGaussian {
  GaussianMode mode = GaussianMode::tied;
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  /// One row per stored mean (1 for global, H*W otherwise), row-major locations.
  Eigen::MatrixXd means;
  /// One entry for global/tied, H*W for local.
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<Eigen::MatrixXd> factors;
  std::vector<double> shrinkage;
  bool degenerate = false;

  Index locations() const { return height * width; }
  Eigen::VectorXd mean_at(Index location) const {
    return means.row(mode == GaussianMode::global ? 0 : location).transpose();
  }
  const Eigen::MatrixXd& factor_at(Index location) const {
    return factors[mode == GaussianMode::local ? static_cast<std::size_t>(location) : 0];
  }

  /// Builds a level from given moments; factors are computed here.
  static LevelGaussian from_moments(GaussianMode mode, Index height, Index width,
                                    Eigen::MatrixXd means, std::vector<Eigen::MatrixXd> covariances);
};

struct GaussianModel {
  GaussianMode mode = GaussianMode::tied;
  std::vector<int> level_ids;  // 1-based extractor levels, aligned with `levels`
  std::vector<LevelGaussian> levels;

  bool fitted() const { return !levels.empty(); }
};

template <typename T>
LevelGaussian fit_level(const BasicTensor<T>& features, GaussianMode mode);

/// Fits one Gaussian per level on detached features [N,C,H,W]; gradients
/// never reach the fitted parameters.
template <typename T>
GaussianModel fit_gaussian(const std::vector<LevelFeatures<T>>& features, GaussianMode mode);

/// Per-location Mahalanobis distance, [N,C,H,W] -> [N,H,W], via triangular
/// solves against the cached factor. Differentiable with respect to the
/// features; the Gaussian is a constant. The gradient at distance 0 is 0.
template <typename T>
BasicTensor<T> mahalanobis_map(const BasicTensor<T>& features, const LevelGaussian& gaussian);

/// L^-1 (x - mu) per location, [N,C,H,W] -> [N,C,H,W].
template <typename T>
BasicTensor<T> whiten(const BasicTensor<T>& features, const LevelGaussian& gaussian);

/// log of the normal density at x for the Gaussian at `location`.
double gaussian_log_density(const Eigen::VectorXd& x, const LevelGaussian& gaussian,
                            Index location);

}  // namespace gadft
