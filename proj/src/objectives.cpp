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

#include "gadft/objectives.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "gadft/error.hpp"
#include "gadft/ops.hpp"

namespace gadft {

std::string_view to_string(Aggregation a) { return a == Aggregation::max ? "max" : "mean"; }

Aggregation parse_aggregation(std::string_view name) {
  if (name == "max") return Aggregation::max;
  if (name == "mean") return Aggregation::mean;
  throw ConfigError("unknown aggregation '" + std::string(name) + "'");
}

std::string_view to_string(NormKind n) { return n == NormKind::l1 ? "l1" : "l2"; }

NormKind parse_norm(std::string_view name) {
  if (name == "l1") return NormKind::l1;
  if (name == "l2") return NormKind::l2;
  throw ConfigError("unknown norm '" + std::string(name) + "'");
}

LevelCenters feature_centers(const FeatureExtractor<float>& model, const Tensor& images,
                             Index batch_size) {
  if (images.rank() != 4 || images.dim(0) < 1) throw ConfigError("centers need at least one image");
  NoGradGuard no_grad;
  LevelCenters out;
  const Index n = images.dim(0);
  for (Index start = 0; start < n; start += batch_size) {
    auto levels = forward_levels(model, slice_batch(images, start, std::min(batch_size, n - start)));
    if (out.centers.empty()) {
      for (const auto& lf : levels) {
        out.level_ids.push_back(lf.level);
        out.centers.push_back(Eigen::VectorXd::Zero(lf.features.dim(1)));
      }
    }
    for (std::size_t m = 0; m < levels.size(); ++m) {
      const auto pooled = reduce_mean_spatial(levels[m].features);
      const Index c = pooled.dim(1);
      for (Index s = 0; s < pooled.dim(0); ++s)
        for (Index ch = 0; ch < c; ++ch) out.centers[m](ch) += pooled.data()[s * c + ch];
    }
  }
  for (auto& c : out.centers) c /= static_cast<double>(n);
  return out;
}

namespace {

template <typename T>
BasicTensor<T> center_tensor(const Eigen::VectorXd& c) {
  std::vector<T> v(static_cast<std::size_t>(c.size()));
  for (Index i = 0; i < c.size(); ++i) v[i] = static_cast<T>(c(i));
  return BasicTensor<T>({c.size()}, std::move(v));
}

template <typename T>
void check_centers(const std::vector<LevelFeatures<T>>& levels, const LevelCenters& centers) {
  if (centers.empty()) throw StateError("feature centers are not initialized");
  if (centers.centers.size() != levels.size()) {
    throw DimensionError("center count differs from the number of tapped levels");
  }
  for (std::size_t m = 0; m < levels.size(); ++m) {
    if (centers.level_ids[m] != levels[m].level ||
        centers.centers[m].size() != levels[m].features.dim(1)) {
      throw DimensionError("centers do not match level " + std::to_string(levels[m].level));
    }
  }
}

template <typename T>
BasicTensor<T> sum_levels(std::vector<BasicTensor<T>> parts) {
  BasicTensor<T> total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  return scale(total, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace

template <typename T>
BasicTensor<T> aggregate_maps(const BasicTensor<T>& maps, Aggregation aggregation) {
  if (maps.rank() != 3) throw ShapeError("maps must be [N,H,W], got " + shape_string(maps.shape()));
  return aggregation == Aggregation::max ? reduce_max_spatial(maps) : reduce_mean_spatial(maps);
}

template <typename T>
BasicTensor<T> mahalanobis_scores(const std::vector<LevelFeatures<T>>& levels,
                                  const GaussianModel& gaussians, Aggregation aggregation) {
  if (!gaussians.fitted()) throw StateError("gaussians are not fitted");
  if (levels.empty()) throw ConfigError("no level features");
  if (gaussians.levels.size() != levels.size()) {
    throw DimensionError("gaussian level count differs from the number of tapped levels");
  }
  std::vector<BasicTensor<T>> parts;
  for (std::size_t m = 0; m < levels.size(); ++m) {
    if (gaussians.level_ids[m] != levels[m].level) {
      throw DimensionError("gaussian fitted for level " + std::to_string(gaussians.level_ids[m]) +
                           " applied to level " + std::to_string(levels[m].level));
    }
    parts.push_back(aggregate_maps(mahalanobis_map(levels[m].features, gaussians.levels[m]), aggregation));
  }
  return sum_levels(std::move(parts));
}

template <typename T>
BasicTensor<T> mahalanobis_objective(const std::vector<LevelFeatures<T>>& levels,
                                     const GaussianModel& gaussians, Aggregation aggregation) {
  return reduce_mean(mahalanobis_scores(levels, gaussians, aggregation));
}

template <typename T>
BasicTensor<T> mahalanobis_loss(const FeatureExtractor<T>& model, const GaussianModel& gaussians,
                                const BasicTensor<T>& images, Aggregation aggregation) {
  if (!gaussians.fitted()) throw StateError("gaussians are not fitted");
  return mahalanobis_objective(forward_levels(model, images), gaussians, aggregation);
}

template <typename T>
BasicTensor<T> svdd_distances(const std::vector<LevelFeatures<T>>& levels, const SvddParams& params) {
  check_centers(levels, params.centers);
  std::vector<BasicTensor<T>> parts;
  for (std::size_t m = 0; m < levels.size(); ++m) {
    auto diff = sub(reduce_mean_spatial(levels[m].features), center_tensor<T>(params.centers.centers[m]));
    parts.push_back(params.norm == NormKind::l2 ? sqrt(reduce_sum_axis(square(diff), 1))
                                                : reduce_sum_axis(abs(diff), 1));
  }
  return sum_levels(std::move(parts));
}

template <typename T>
BasicTensor<T> weight_decay_term(const FeatureExtractor<T>& model, double weight_decay) {
  if (weight_decay < 0.0) throw ParameterError("weight decay must be non-negative");
  BasicTensor<T> total = BasicTensor<T>::scalar(T(0));
  for (const auto& b : model.levels()) total = add(total, reduce_sum(square(b.weight)));
  return scale(total, 0.5 * weight_decay);
}

template <typename T>
BasicTensor<T> svdd_objective(const std::vector<LevelFeatures<T>>& levels,
                              const FeatureExtractor<T>& model, const SvddParams& params) {
  if (params.weight_decay < 0.0) throw ParameterError("weight decay must be non-negative");
  auto data_term = reduce_mean(svdd_distances(levels, params));
  if (params.weight_decay == 0.0) return data_term;
  return add(data_term, weight_decay_term(model, params.weight_decay));
}

template <typename T>
BasicTensor<T> svdd_loss(const FeatureExtractor<T>& model, const SvddParams& params,
                         const BasicTensor<T>& images) {
  if (params.weight_decay < 0.0) throw ParameterError("weight decay must be non-negative");
  return svdd_objective(forward_levels(model, images), model, params);
}

template <typename T>
BasicTensor<T> hsc_squared_norms(const LevelFeatures<T>& level, const Eigen::VectorXd& center,
                                 bool spatial) {
  const auto c = center_tensor<T>(center);
  if (spatial) return reduce_sum_axis(square(sub(level.features, c)), 1);
  return reduce_sum_axis(square(sub(reduce_mean_spatial(level.features), c)), 1);
}

template <typename T>
BasicTensor<T> hsc_terms(const BasicTensor<T>& squared_norms, std::span<const int> labels) {
  const Index n = squared_norms.rank() == 0 ? 1 : squared_norms.dim(0);
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("one label per image required");
  const Index per = squared_norms.numel() / std::max<Index>(n, 1);
  const auto s = squared_norms.data();
  std::vector<T> out(s.size());
  auto derivative = std::make_shared<std::vector<double>>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double v = s[i];
    if (labels[i / static_cast<std::size_t>(per)] != 0) {
      out[i] = static_cast<T>(v);
      (*derivative)[i] = 1.0;
    } else {
      const double e = std::exp(-v);
      const double arg = 1.0 - e;
      if (arg >= kHscLogFloor) {
        out[i] = static_cast<T>(-std::log(arg));
        (*derivative)[i] = -e / arg;
      } else {
        out[i] = static_cast<T>(-std::log(kHscLogFloor));
        (*derivative)[i] = 0.0;
      }
    }
  }
  return make_result<T>(squared_norms.shape(), std::move(out), {squared_norms},
                        [derivative](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                          auto& gs = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            gs[i] += static_cast<T>(g[i] * (*derivative)[i]);
                          }
                        });
}

template <typename T>
BasicTensor<T> hsc_objective(const std::vector<LevelFeatures<T>>& levels, const HscParams& params,
                             std::span<const int> labels) {
  check_centers(levels, params.centers);
  std::vector<BasicTensor<T>> parts;
  for (std::size_t m = 0; m < levels.size(); ++m) {
    parts.push_back(reduce_mean(
        hsc_terms(hsc_squared_norms(levels[m], params.centers.centers[m], params.spatial), labels)));
  }
  return sum_levels(std::move(parts));
}

template <typename T>
BasicTensor<T> hsc_loss(const FeatureExtractor<T>& model, const HscParams& params,
                        const BasicTensor<T>& images, std::span<const int> labels) {
  return hsc_objective(forward_levels(model, images), params, labels);
}

#define GADFT_INSTANTIATE(T)                                                                     \
  template BasicTensor<T> aggregate_maps(const BasicTensor<T>&, Aggregation);                    \
  template BasicTensor<T> mahalanobis_scores(const std::vector<LevelFeatures<T>>&,               \
                                             const GaussianModel&, Aggregation);                 \
  template BasicTensor<T> mahalanobis_objective(const std::vector<LevelFeatures<T>>&,            \
                                                const GaussianModel&, Aggregation);              \
  template BasicTensor<T> mahalanobis_loss(const FeatureExtractor<T>&, const GaussianModel&,     \
                                           const BasicTensor<T>&, Aggregation);                  \
  template BasicTensor<T> svdd_distances(const std::vector<LevelFeatures<T>>&, const SvddParams&); \
  template BasicTensor<T> weight_decay_term(const FeatureExtractor<T>&, double);                 \
  template BasicTensor<T> svdd_objective(const std::vector<LevelFeatures<T>>&,                   \
                                         const FeatureExtractor<T>&, const SvddParams&);         \
  template BasicTensor<T> svdd_loss(const FeatureExtractor<T>&, const SvddParams&,               \
                                    const BasicTensor<T>&);                                      \
  template BasicTensor<T> hsc_squared_norms(const LevelFeatures<T>&, const Eigen::VectorXd&, bool); \
  template BasicTensor<T> hsc_terms(const BasicTensor<T>&, std::span<const int>);                \
  template BasicTensor<T> hsc_objective(const std::vector<LevelFeatures<T>>&, const HscParams&,  \
                                        std::span<const int>);                                   \
  template BasicTensor<T> hsc_loss(const FeatureExtractor<T>&, const HscParams&,                 \
                                   const BasicTensor<T>&, std::span<const int>);

GADFT_INSTANTIATE(float)
GADFT_INSTANTIATE(double)

#undef GADFT_INSTANTIATE

}  // namespace gadft
