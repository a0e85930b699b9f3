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

#include "gadft/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>

#include "gadft/error.hpp"
#include "gadft/ops.hpp"
#include "gadft/optim.hpp"
#include "gadft/random.hpp"

namespace gadft {

std::vector<int> ExtractorConfig::resolved_taps() const {
  std::vector<int> taps_out = taps;
  if (taps_out.empty()) {
    taps_out.resize(channels.size());
    std::iota(taps_out.begin(), taps_out.end(), 1);
  }
  std::sort(taps_out.begin(), taps_out.end());
  taps_out.erase(std::unique(taps_out.begin(), taps_out.end()), taps_out.end());
  for (int t : taps_out) {
    if (t < 1 || t > num_levels()) {
      throw ConfigError("tap level " + std::to_string(t) + " outside 1.." +
                        std::to_string(num_levels()));
    }
  }
  return taps_out;
}

namespace {

template <typename T>
BasicTensor<T> deep_copy(const BasicTensor<T>& t) {
  auto c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

template <typename T>
LevelBlock<T> copy_block(const LevelBlock<T>& b) {
  return {deep_copy(b.weight),       deep_copy(b.bias),  deep_copy(b.running_mean),
          deep_copy(b.running_var), deep_copy(b.scale), deep_copy(b.shift)};
}

}  // namespace

template <typename T>
FeatureExtractor<T>::FeatureExtractor(ExtractorConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  if (config_.channels.empty()) throw ConfigError("extractor needs at least one level");
  if (config_.in_channels < 1 || config_.kernel_size < 1 || config_.kernel_size % 2 == 0) {
    throw ConfigError("extractor needs positive input channels and an odd kernel size");
  }
  if (!(config_.norm_eps > 0.0)) throw ConfigError("norm eps must be positive");
  (void)config_.resolved_taps();
  Rng rng(seed);
  Index in = config_.in_channels;
  const Index k = config_.kernel_size;
  for (Index out : config_.channels) {
    if (out < 1) throw ConfigError("channel counts must be positive");
    LevelBlock<T> block;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    block.weight = BasicTensor<T>({out, in, k, k});
    for (auto& v : block.weight.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    block.bias = BasicTensor<T>({out});
    for (auto& v : block.bias.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    block.running_mean = BasicTensor<T>({out}, T(0));
    block.running_var = BasicTensor<T>({out}, T(1));
    block.scale = BasicTensor<T>({out}, T(1));
    block.shift = BasicTensor<T>({out}, T(0));
    levels_.push_back(std::move(block));
    in = out;
  }
}

template <typename T>
FeatureExtractor<T>::FeatureExtractor(const FeatureExtractor& other)
    : config_(other.config_), frozen_(other.frozen_) {
  levels_.reserve(other.levels_.size());
  for (const auto& b : other.levels_) levels_.push_back(copy_block(b));
}

template <typename T>
FeatureExtractor<T>& FeatureExtractor<T>::operator=(const FeatureExtractor& other) {
  if (this != &other) {
    FeatureExtractor copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
std::vector<BasicTensor<T>> FeatureExtractor<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (const auto& b : levels_) {
    out.push_back(b.weight);
    out.push_back(b.bias);
    out.push_back(b.scale);
    out.push_back(b.shift);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> FeatureExtractor<T>::state() const {
  std::vector<BasicTensor<T>> out;
  for (const auto& b : levels_) {
    for (const auto* t : {&b.weight, &b.bias, &b.running_mean, &b.running_var, &b.scale, &b.shift}) {
      out.push_back(*t);
    }
  }
  return out;
}

template <typename T>
void FeatureExtractor<T>::set_requires_grad(bool flag) {
  for (auto& p : parameters()) p.set_requires_grad(flag);
}

template <typename T>
void FeatureExtractor<T>::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

template <typename T>
void FeatureExtractor<T>::set_statistics(Index level, std::span<const double> mean,
                                         std::span<const double> var) {
  if (frozen_) throw StateError("norm statistics are frozen");
  auto& b = levels_.at(static_cast<std::size_t>(level));
  if (static_cast<Index>(mean.size()) != b.running_mean.numel() ||
      static_cast<Index>(var.size()) != b.running_var.numel()) {
    throw DimensionError("statistics length differs from channel count");
  }
  auto m = b.running_mean.mutable_data();
  auto v = b.running_var.mutable_data();
  for (std::size_t c = 0; c < mean.size(); ++c) {
    m[c] = static_cast<T>(mean[c]);
    v[c] = static_cast<T>(var[c]);
  }
}

template <typename T>
template <typename U>
FeatureExtractor<U> FeatureExtractor<T>::cast() const {
  FeatureExtractor<U> out;
  out.config_ = config_;
  out.frozen_ = frozen_;
  for (const auto& b : levels_) {
    out.levels_.push_back({tensor_cast<U>(b.weight), tensor_cast<U>(b.bias),
                           tensor_cast<U>(b.running_mean), tensor_cast<U>(b.running_var),
                           tensor_cast<U>(b.scale), tensor_cast<U>(b.shift)});
  }
  return out;
}

namespace {

template <typename T>
BasicTensor<T> conv_stage(const FeatureExtractor<T>& model, Index level, const BasicTensor<T>& x) {
  const auto& b = model.levels()[static_cast<std::size_t>(level)];
  return conv2d(x, b.weight, b.bias, 1, model.config().kernel_size / 2);
}

template <typename T>
BasicTensor<T> post_conv(const FeatureExtractor<T>& model, Index level, const BasicTensor<T>& z) {
  const auto& b = model.levels()[static_cast<std::size_t>(level)];
  auto y = frozen_norm(z, b.running_mean, b.running_var, b.scale, b.shift, model.config().norm_eps);
  y = model.config().activation == Activation::silu ? silu(y) : relu(y);
  return avg_pool2d(y, 2);
}

template <typename T>
void check_images(const FeatureExtractor<T>& model, const BasicTensor<T>& images) {
  if (images.rank() != 4) throw ShapeError("images must be [N,C,H,W], got " + shape_string(images.shape()));
  if (images.dim(1) != model.config().in_channels) {
    throw DimensionError("images have " + std::to_string(images.dim(1)) + " channels, model expects " +
                         std::to_string(model.config().in_channels));
  }
  const Index div = Index{1} << model.num_levels();
  if (images.dim(2) % div != 0 || images.dim(3) % div != 0 || images.dim(2) == 0 ||
      images.dim(3) == 0) {
    throw ShapeError("image size " + std::to_string(images.dim(2)) + "x" +
                     std::to_string(images.dim(3)) + " not divisible by " + std::to_string(div));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> apply_block(const FeatureExtractor<T>& model, Index level,
                           const BasicTensor<T>& input) {
  return post_conv(model, level, conv_stage(model, level, input));
}

template <typename T>
std::vector<BasicTensor<T>> forward_all_levels(const FeatureExtractor<T>& model,
                                               const BasicTensor<T>& images) {
  check_images(model, images);
  std::vector<BasicTensor<T>> out;
  BasicTensor<T> x = images;
  for (Index m = 0; m < model.num_levels(); ++m) {
    x = apply_block(model, m, x);
    out.push_back(x);
  }
  return out;
}

template <typename T>
std::vector<LevelFeatures<T>> forward_levels(const FeatureExtractor<T>& model,
                                             const BasicTensor<T>& images) {
  check_images(model, images);
  const auto taps = model.config().resolved_taps();
  std::vector<LevelFeatures<T>> out;
  BasicTensor<T> x = images;
  for (Index m = 0; m < taps.back(); ++m) {
    x = apply_block(model, m, x);
    if (std::binary_search(taps.begin(), taps.end(), static_cast<int>(m + 1))) {
      out.push_back({static_cast<int>(m + 1), x});
    }
  }
  return out;
}

void estimate_norm_statistics(FeatureExtractor<float>& model, const Tensor& images,
                              Index batch_size) {
  if (model.statistics_frozen()) throw StateError("norm statistics are frozen");
  check_images(model, images);
  NoGradGuard no_grad;
  const Index n = images.dim(0);
  for (Index level = 0; level < model.num_levels(); ++level) {
    const Index channels = model.config().channels[static_cast<std::size_t>(level)];
    std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
    std::vector<double> sum_sq(static_cast<std::size_t>(channels), 0.0);
    double count = 0.0;
    for (Index start = 0; start < n; start += batch_size) {
      Tensor x = slice_batch(images, start, std::min(batch_size, n - start));
      for (Index m = 0; m < level; ++m) x = apply_block(model, m, x);
      const Tensor z = conv_stage(model, level, x);
      const Index plane = z.dim(2) * z.dim(3);
      for (Index s = 0; s < z.dim(0); ++s) {
        for (Index c = 0; c < channels; ++c) {
          const float* p = z.raw() + (s * channels + c) * plane;
          for (Index i = 0; i < plane; ++i) {
            sum[c] += p[i];
            sum_sq[c] += static_cast<double>(p[i]) * p[i];
          }
        }
      }
      count += static_cast<double>(z.dim(0) * plane);
    }
    std::vector<double> var(sum.size());
    for (std::size_t c = 0; c < sum.size(); ++c) {
      sum[c] /= count;
      var[c] = std::max(sum_sq[c] / count - sum[c] * sum[c], 0.0);
    }
    model.set_statistics(level, sum, var);
  }
}

namespace {

Tensor pooled_logits(const FeatureExtractor<float>& model, const ClassifierHead& head,
                     const Tensor& images) {
  auto levels = forward_all_levels(model, images);
  return add(matmul(reduce_mean_spatial(levels.back()), head.weight), head.bias);
}

Tensor statistics_subset(const LabeledImages& corpus, Index samples, Rng& rng) {
  const Index n = corpus.images.dim(0);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(static_cast<std::size_t>(std::min(samples, n)));
  std::sort(idx.begin(), idx.end());
  return gather_batch(corpus.images, std::span<const Index>(idx));
}

}  // namespace

PretrainResult pretrain_classifier(const FeatureExtractor<float>& model,
                                   const LabeledImages& corpus, const PretrainOptions& options) {
  if (corpus.num_classes < 2) throw ConfigError("pretraining needs at least two classes");
  if (corpus.images.rank() != 4 || static_cast<Index>(corpus.labels.size()) != corpus.images.dim(0)) {
    throw ShapeError("pretraining corpus images and labels disagree");
  }
  if (std::any_of(corpus.labels.begin(), corpus.labels.end(),
                  [&](int l) { return l < 0 || l >= corpus.num_classes; })) {
    throw ConfigError("pretraining label outside [0, num_classes)");
  }
  if (options.epochs < 0 || options.batch_size < 1) throw ConfigError("invalid pretraining options");
  if (model.statistics_frozen()) throw StateError("cannot pretrain a model with frozen statistics");

  PretrainResult result{model, {}, {}};
  FeatureExtractor<float>& net = result.model;
  Rng rng(options.seed);
  Rng stats_rng = rng.fork(1);
  Rng order_rng = rng.fork(2);
  Rng head_rng = rng.fork(3);

  const Index features = net.config().channels.back();
  const double bound = 1.0 / std::sqrt(static_cast<double>(features));
  result.head.weight = Tensor({features, corpus.num_classes});
  for (auto& v : result.head.weight.mutable_data()) v = static_cast<float>(head_rng.uniform(-bound, bound));
  result.head.bias = Tensor({corpus.num_classes}, 0.0f);

  // Statistics are estimated once on the initial weights and held fixed
  // while training; the affine scale and shift absorb later drift.
  estimate_norm_statistics(net, statistics_subset(corpus, options.statistics_samples, stats_rng));
  if (options.epochs > 0) {
    auto params = net.parameters();
    params.push_back(result.head.weight);
    params.push_back(result.head.bias);
    for (auto& p : params) p.set_requires_grad(true);
    Adam<float> adam(params, AdamOptions{options.lr, 0.9, 0.999, 1e-8});
    const Index n = corpus.images.dim(0);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      if (options.cosine_schedule) {
        const double t = static_cast<double>(epoch) / static_cast<double>(options.epochs);
        adam.set_lr(0.5 * options.lr * (1.0 + std::cos(std::numbers::pi * t)));
      }
      order_rng.shuffle(order.begin(), order.end());
      double loss_sum = 0.0;
      Index batches = 0;
      for (Index start = 0; start < n; start += options.batch_size) {
        const Index count = std::min(options.batch_size, n - start);
        std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(count));
        Tensor batch = gather_batch(corpus.images, idx);
        std::vector<int> labels;
        for (Index i : idx) labels.push_back(corpus.labels[static_cast<std::size_t>(i)]);
        auto loss = softmax_cross_entropy(pooled_logits(net, result.head, batch), labels);
        adam.zero_grad();
        backward(loss);
        adam.step();
        loss_sum += loss.item();
        ++batches;
      }
      result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }
    for (auto& p : params) p.zero_grad();
    for (auto& p : params) p.set_requires_grad(false);
  }
  net.freeze_statistics();
  return result;
}

std::vector<int> classify(const FeatureExtractor<float>& model, const ClassifierHead& head,
                          const Tensor& images, Index batch_size) {
  NoGradGuard no_grad;
  std::vector<int> out;
  const Index n = images.dim(0);
  for (Index start = 0; start < n; start += batch_size) {
    auto logits = pooled_logits(model, head, slice_batch(images, start, std::min(batch_size, n - start)));
    const Index k = logits.dim(1);
    for (Index i = 0; i < logits.dim(0); ++i) {
      const float* row = logits.raw() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template FeatureExtractor<double> FeatureExtractor<float>::cast<double>() const;
template FeatureExtractor<float> FeatureExtractor<double>::cast<float>() const;
template FeatureExtractor<float> FeatureExtractor<float>::cast<float>() const;
template BasicTensor<float> apply_block(const FeatureExtractor<float>&, Index, const BasicTensor<float>&);
template BasicTensor<double> apply_block(const FeatureExtractor<double>&, Index, const BasicTensor<double>&);
template std::vector<LevelFeatures<float>> forward_levels(const FeatureExtractor<float>&, const Tensor&);
template std::vector<LevelFeatures<double>> forward_levels(const FeatureExtractor<double>&,
                                                           const BasicTensor<double>&);
template std::vector<Tensor> forward_all_levels(const FeatureExtractor<float>&, const Tensor&);
template std::vector<BasicTensor<double>> forward_all_levels(const FeatureExtractor<double>&,
                                                             const BasicTensor<double>&);

}  // namespace gadft
