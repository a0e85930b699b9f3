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

#include <cstdint>
#include <string_view>
#include <vector>

#include "gadft/extractor.hpp"
#include "gadft/gaussian.hpp"
#include "gadft/objectives.hpp"
#include "gadft/tensor.hpp"

namespace gadft {

/// Row-major single-channel float image.
struct Heatmap {
  Index height = 0;
  Index width = 0;
  std::vector<float> values;

  float at(Index y, Index x) const { return values[static_cast<std::size_t>(y * width + x)]; }
};

/// Non-negative anomaly map of one level for one image.
struct AnomalyMapLevel {
  int level = 0;
  Heatmap map;
};

struct AnomalyResult {
  std::vector<AnomalyMapLevel> maps;
  Heatmap heatmap;  // empty when heatmaps were not requested
  double score = 0.0;
};

/// How a fine-tuned model is scored.
///
/// gaussian: Mahalanobis maps against the fitted Gaussians.
/// svdd:     per-location distance to the level center for maps; the image
///           score is the pooled-feature distance the objective minimizes.
/// hsc:      per-location squared norm of the centered embedding; on pooled
///           features when not spatial.
enum class HeadKind : std::uint8_t { gaussian = 0, svdd = 1, hsc = 2 };
std::string_view to_string(HeadKind kind);

struct ScoringHead {
  HeadKind kind = HeadKind::gaussian;
  GaussianModel gaussians;
  LevelCenters centers;
  NormKind norm = NormKind::l2;
  bool spatial = true;
  double weight_decay = 1e-4;

  SvddParams svdd_params() const { return {centers, weight_decay, norm}; }
  HscParams hsc_params() const { return {centers, spatial}; }
};

/// Mean over levels of max or mean over each map.
double image_score(const std::vector<AnomalyMapLevel>& maps, Aggregation aggregation);

/// Bilinear (align_corners = false) upsampling of every map to height x
/// width followed by the pixel-wise mean over levels.
Heatmap segment(const std::vector<AnomalyMapLevel>& maps, Index height, Index width);

/// Per-image level maps for precomputed features.
std::vector<std::vector<AnomalyMapLevel>> level_maps(const std::vector<LevelFeatures<float>>& levels,
                                                     const ScoringHead& head);

/// Image scores computed without building heatmaps.
std::vector<double> image_scores(const FeatureExtractor<float>& model, const ScoringHead& head,
                                 const Tensor& images, Aggregation aggregation,
                                 Index batch_size = 32);

/// Batched gradient-free scoring; results follow the image order.
std::vector<AnomalyResult> score_dataset(const FeatureExtractor<float>& model,
                                         const ScoringHead& head, const Tensor& images,
                                         Aggregation aggregation, Index batch_size = 32);

}  // namespace gadft
