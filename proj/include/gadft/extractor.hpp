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
#include <vector>

#include "gadft/tensor.hpp"

namespace gadft {

enum class Activation : std::uint8_t { silu = 0, relu = 1 };

struct ExtractorConfig {
  Index in_channels = 3;
  std::vector<Index> channels{16, 32, 64, 128};
  Index kernel_size = 3;
  Activation activation = Activation::silu;
  /// 1-based level indices whose outputs are exposed; empty means all.
  std::vector<int> taps;
  double norm_eps = 1e-5;

  Index num_levels() const { return static_cast<Index>(channels.size()); }
  /// Sorted tap list with the "empty = all" default resolved.
  std::vector<int> resolved_taps() const;
  bool operator==(const ExtractorConfig&) const = default;
};

/// One block: conv -> frozen_norm -> activation -> 2x average pool.
template <typename T>
struct LevelBlock {
  BasicTensor<T> weight;  // [K, C, k, k]
  BasicTensor<T> bias;    // [K]
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  BasicTensor<T> scale;
  BasicTensor<T> shift;
};

/// Output of one tapped level; `level` is 1-based.
template <typename T>
struct LevelFeatures {
  int level = 0;
  BasicTensor<T> features;  // [N, C_m, H / 2^m, W / 2^m]
};

/// Multi-level convolutional feature extractor with per-level taps.
///
/// Copies are deep; the tensor handles inside a copy do not alias the
/// original.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  /// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  explicit FeatureExtractor(ExtractorConfig config, std::uint64_t seed = 0);

  FeatureExtractor(const FeatureExtractor& other);
  FeatureExtractor& operator=(const FeatureExtractor& other);
  FeatureExtractor(FeatureExtractor&&) noexcept = default;
  FeatureExtractor& operator=(FeatureExtractor&&) noexcept = default;

  const ExtractorConfig& config() const { return config_; }
  Index num_levels() const { return config_.num_levels(); }
  const std::vector<LevelBlock<T>>& levels() const { return levels_; }
  std::vector<LevelBlock<T>>& mutable_levels() { return levels_; }

  /// Trainable tensors in declaration order: weight, bias, scale, shift per level.
  std::vector<BasicTensor<T>> parameters() const;
  /// Every stored tensor in file order: weight, bias, running_mean,
  /// running_var, scale, shift per level.
  std::vector<BasicTensor<T>> state() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  bool statistics_frozen() const { return frozen_; }
  void freeze_statistics() { frozen_ = true; }
  /// Throws StateError once statistics are frozen.
  void set_statistics(Index level, std::span<const double> mean, std::span<const double> var);

  template <typename U>
  FeatureExtractor<U> cast() const;

 private:
  template <typename U>
  friend class FeatureExtractor;

  ExtractorConfig config_;
  std::vector<LevelBlock<T>> levels_;
  bool frozen_ = false;
};

/// Applies one block to its input.
template <typename T>
BasicTensor<T> apply_block(const FeatureExtractor<T>& model, Index level,
                           const BasicTensor<T>& input);

/// Outputs of every tapped level in ascending order. Images are [N,3,H,W]
/// with H and W divisible by 2^L.
template <typename T>
std::vector<LevelFeatures<T>> forward_levels(const FeatureExtractor<T>& model,
                                             const BasicTensor<T>& images);

/// Outputs of every level, ignoring the tap configuration.
template <typename T>
std::vector<BasicTensor<T>> forward_all_levels(const FeatureExtractor<T>& model,
                                               const BasicTensor<T>& images);

/// Sequentially sets each level's running statistics to the per-channel
/// mean and (biased) variance of its conv output over `images`, with the
/// earlier levels already normalized by their new statistics.
void estimate_norm_statistics(FeatureExtractor<float>& model, const Tensor& images,
                              Index batch_size = 32);

struct LabeledImages {
  Tensor images;  // [N,3,H,W]
  std::vector<int> labels;
  int num_classes = 0;
};

struct PretrainOptions {
  int epochs = 20;
  double lr = 1e-3;
  Index batch_size = 16;
  std::uint64_t seed = 0;
  /// Images used for each statistics estimate.
  Index statistics_samples = 256;
  /// Cosine decay of the learning rate to zero over the epochs.
  bool cosine_schedule = true;
};

/// Linear head on globally average-pooled last-level features.
struct ClassifierHead {
  Tensor weight;  // [C_L, K]
  Tensor bias;    // [K]
};

struct PretrainResult {
  FeatureExtractor<float> model;
  ClassifierHead head;
  std::vector<double> epoch_loss;
};

/// Supervised pretraining on a labeled multi-class corpus (the transfer
/// source). Statistics are estimated once on the initial weights, held
/// fixed during training and frozen. The head is returned for evaluation only.
PretrainResult pretrain_classifier(const FeatureExtractor<float>& model,
                                   const LabeledImages& corpus, const PretrainOptions& options);

std::vector<int> classify(const FeatureExtractor<float>& model, const ClassifierHead& head,
                          const Tensor& images, Index batch_size = 64);

}  // namespace gadft
