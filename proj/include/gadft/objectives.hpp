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
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gadft/extractor.hpp"
#include "gadft/gaussian.hpp"
#include "gadft/tensor.hpp"

namespace gadft {

enum class Aggregation : std::uint8_t { max = 0, mean = 1 };
std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

enum class NormKind : std::uint8_t { l1 = 0, l2 = 1 };
std::string_view to_string(NormKind n);
NormKind parse_norm(std::string_view name);

/// Lower bound on the log argument of the anomalous hypersphere term.
inline constexpr double kHscLogFloor = 1e-12;

/// Per-level feature centers, aligned with the tapped levels.
struct LevelCenters {
  std::vector<int> level_ids;
  std::vector<Eigen::VectorXd> centers;

  bool empty() const { return centers.empty(); }
};

/// Mean over images of globally average-pooled features, per level. Equal
/// to the mean over all images and locations.
LevelCenters feature_centers(const FeatureExtractor<float>& model, const Tensor& images,
                             Index batch_size = 32);

struct SvddParams {
  LevelCenters centers;
  double weight_decay = 1e-4;
  NormKind norm = NormKind::l2;
};

struct HscParams {
  LevelCenters centers;
  /// Apply the loss at every spatial position instead of on pooled features.
  bool spatial = true;
};

/// Images with labels 1 = normal, 0 = anomalous.
struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;
};

/// [N,H,W] -> [N], max or mean over locations.
template <typename T>
BasicTensor<T> aggregate_maps(const BasicTensor<T>& maps, Aggregation aggregation);

/// Per-image score [N]: mean over levels of the aggregated Mahalanobis map.
template <typename T>
BasicTensor<T> mahalanobis_scores(const std::vector<LevelFeatures<T>>& levels,
                                  const GaussianModel& gaussians, Aggregation aggregation);

/// (1 / (n m)) sum_i sum_m agg(A_m(x_i)) from precomputed level features.
template <typename T>
BasicTensor<T> mahalanobis_objective(const std::vector<LevelFeatures<T>>& levels,
                                     const GaussianModel& gaussians, Aggregation aggregation);

template <typename T>
BasicTensor<T> mahalanobis_loss(const FeatureExtractor<T>& model, const GaussianModel& gaussians,
                                const BasicTensor<T>& images, Aggregation aggregation);

/// Per-image distance [N] of pooled features to the level centers, averaged
/// over levels.
template <typename T>
BasicTensor<T> svdd_distances(const std::vector<LevelFeatures<T>>& levels, const SvddParams& params);

/// (lambda / 2) sum_l ||W^l||_F^2 over the convolution weights.
template <typename T>
BasicTensor<T> weight_decay_term(const FeatureExtractor<T>& model, double weight_decay);

template <typename T>
BasicTensor<T> svdd_objective(const std::vector<LevelFeatures<T>>& levels,
                              const FeatureExtractor<T>& model, const SvddParams& params);

template <typename T>
BasicTensor<T> svdd_loss(const FeatureExtractor<T>& model, const SvddParams& params,
                         const BasicTensor<T>& images);

/// Squared norms of the centered embedding: [N,H,W] per position when
/// spatial, [N] on pooled features otherwise.
template <typename T>
BasicTensor<T> hsc_squared_norms(const LevelFeatures<T>& level, const Eigen::VectorXd& center,
                                 bool spatial);

/// Elementwise y * s - (1 - y) * log(max(1 - exp(-s), kHscLogFloor)) where
/// the label of each element is that of its image (leading axis).
template <typename T>
BasicTensor<T> hsc_terms(const BasicTensor<T>& squared_norms, std::span<const int> labels);

template <typename T>
BasicTensor<T> hsc_objective(const std::vector<LevelFeatures<T>>& levels, const HscParams& params,
                             std::span<const int> labels);

template <typename T>
BasicTensor<T> hsc_loss(const FeatureExtractor<T>& model, const HscParams& params,
                        const BasicTensor<T>& images, std::span<const int> labels);

}  // namespace gadft
