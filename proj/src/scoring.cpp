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

#include "gadft/scoring.hpp"

#include <algorithm>

#include "gadft/error.hpp"
#include "gadft/ops.hpp"

namespace gadft {

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::gaussian: return "gaussian";
    case HeadKind::svdd: return "svdd";
    case HeadKind::hsc: return "hsc";
  }
  return "?";
}

double image_score(const std::vector<AnomalyMapLevel>& maps, Aggregation aggregation) {
  if (maps.empty()) return 0.0;
  double total = 0.0;
  for (const auto& m : maps) {
    const auto& v = m.map.values;
    if (v.empty()) throw ShapeError("empty anomaly map");
    if (aggregation == Aggregation::max) {
      total += *std::max_element(v.begin(), v.end());
    } else {
      double sum = 0.0;
      for (float x : v) sum += x;
      total += sum / static_cast<double>(v.size());
    }
  }
  return total / static_cast<double>(maps.size());
}

Heatmap segment(const std::vector<AnomalyMapLevel>& maps, Index height, Index width) {
  if (maps.empty()) throw ConfigError("segment needs at least one anomaly map");
  if (height < 1 || width < 1) throw ShapeError("heatmap size must be positive");
  Heatmap out{height, width, std::vector<float>(static_cast<std::size_t>(height * width), 0.0f)};
  std::vector<double> acc(out.values.size(), 0.0);
  std::vector<float> resized(out.values.size());
  for (const auto& m : maps) {
    bilinear_resize_plane<float>(m.map.values, m.map.height, m.map.width, resized, height, width);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += resized[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i] * inv);
  return out;
}

namespace {

void check_head(const ScoringHead& head) {
  if (head.kind == HeadKind::gaussian && !head.gaussians.fitted()) {
    throw StateError("scoring head has no fitted gaussians");
  }
  if (head.kind != HeadKind::gaussian && head.centers.empty()) {
    throw StateError("scoring head has no feature centers");
  }
}

Tensor center_tensor(const Eigen::VectorXd& c) {
  Tensor t({c.size()});
  for (Index i = 0; i < c.size(); ++i) t.mutable_data()[i] = static_cast<float>(c(i));
  return t;
}

// [N,H,W] map tensor for one level.
Tensor level_map_tensor(const LevelFeatures<float>& lf, std::size_t m, const ScoringHead& head) {
  switch (head.kind) {
    case HeadKind::gaussian:
      return mahalanobis_map(lf.features, head.gaussians.levels[m]);
    case HeadKind::svdd: {
      auto diff = sub(lf.features, center_tensor(head.centers.centers[m]));
      return head.norm == NormKind::l2 ? sqrt(reduce_sum_axis(square(diff), 1))
                                       : reduce_sum_axis(abs(diff), 1);
    }
    case HeadKind::hsc:
      return hsc_squared_norms(lf, head.centers.centers[m], true);
  }
  throw StateError("unknown head kind");
}

void check_levels(const std::vector<LevelFeatures<float>>& levels, const ScoringHead& head) {
  const auto& ids = head.kind == HeadKind::gaussian ? head.gaussians.level_ids : head.centers.level_ids;
  if (ids.size() != levels.size()) throw DimensionError("scoring head level count differs from the model taps");
  for (std::size_t m = 0; m < levels.size(); ++m) {
    if (ids[m] != levels[m].level) throw DimensionError("scoring head levels differ from the model taps");
  }
}

std::vector<double> batch_scores(const std::vector<LevelFeatures<float>>& levels,
                                 const std::vector<std::vector<AnomalyMapLevel>>& maps,
                                 const ScoringHead& head, Aggregation aggregation) {
  std::vector<double> out;
  if (head.kind == HeadKind::svdd) {
    const auto d = svdd_distances(levels, head.svdd_params());
    out.assign(d.data().begin(), d.data().end());
  } else if (head.kind == HeadKind::hsc && !head.spatial) {
    const Index n = levels.front().features.dim(0);
    out.assign(static_cast<std::size_t>(n), 0.0);
    for (std::size_t m = 0; m < levels.size(); ++m) {
      const auto s = hsc_squared_norms(levels[m], head.centers.centers[m], false);
      for (Index i = 0; i < n; ++i) out[i] += s.data()[i] / static_cast<double>(levels.size());
    }
  } else {
    for (const auto& per_image : maps) out.push_back(image_score(per_image, aggregation));
  }
  return out;
}

}  // namespace

std::vector<std::vector<AnomalyMapLevel>> level_maps(const std::vector<LevelFeatures<float>>& levels,
                                                     const ScoringHead& head) {
  check_head(head);
  check_levels(levels, head);
  const Index n = levels.empty() ? 0 : levels.front().features.dim(0);
  std::vector<std::vector<AnomalyMapLevel>> out(static_cast<std::size_t>(n));
  for (std::size_t m = 0; m < levels.size(); ++m) {
    const Tensor maps = level_map_tensor(levels[m], m, head);
    const Index h = maps.dim(1), w = maps.dim(2), plane = h * w;
    for (Index i = 0; i < n; ++i) {
      const float* src = maps.raw() + i * plane;
      out[i].push_back({levels[m].level, Heatmap{h, w, std::vector<float>(src, src + plane)}});
    }
  }
  return out;
}

std::vector<double> image_scores(const FeatureExtractor<float>& model, const ScoringHead& head,
                                 const Tensor& images, Aggregation aggregation, Index batch_size) {
  check_head(head);
  NoGradGuard no_grad;
  std::vector<double> out;
  const Index n = images.dim(0);
  for (Index start = 0; start < n; start += batch_size) {
    const auto levels = forward_levels(model, slice_batch(images, start, std::min(batch_size, n - start)));
    std::vector<std::vector<AnomalyMapLevel>> maps;
    const bool needs_maps = !(head.kind == HeadKind::svdd || (head.kind == HeadKind::hsc && !head.spatial));
    if (needs_maps) {
      maps = level_maps(levels, head);
    } else {
      check_levels(levels, head);
    }
    const auto scores = batch_scores(levels, maps, head, aggregation);
    out.insert(out.end(), scores.begin(), scores.end());
  }
  return out;
}

std::vector<AnomalyResult> score_dataset(const FeatureExtractor<float>& model,
                                         const ScoringHead& head, const Tensor& images,
                                         Aggregation aggregation, Index batch_size) {
  check_head(head);
  NoGradGuard no_grad;
  std::vector<AnomalyResult> out;
  const Index n = images.dim(0), height = images.dim(2), width = images.dim(3);
  for (Index start = 0; start < n; start += batch_size) {
    const auto levels = forward_levels(model, slice_batch(images, start, std::min(batch_size, n - start)));
    auto maps = level_maps(levels, head);
    const auto scores = batch_scores(levels, maps, head, aggregation);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      AnomalyResult r;
      r.heatmap = segment(maps[i], height, width);
      r.maps = std::move(maps[i]);
      r.score = scores[i];
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace gadft
