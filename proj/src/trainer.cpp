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

#include "gadft/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "gadft/error.hpp"
#include "gadft/metrics.hpp"
#include "gadft/optim.hpp"
#include "gadft/random.hpp"
#include "json.hpp"

namespace gadft {

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::mahalanobis: return "mahalanobis";
    case Objective::svdd: return "svdd";
    case Objective::hsc: return "hsc";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  for (auto o : {Objective::mahalanobis, Objective::svdd, Objective::hsc})
    if (name == to_string(o)) return o;
  throw ConfigError("unknown objective '" + std::string(name) + "'");
}

std::string_view to_string(StopCriterion c) {
  switch (c) {
    case StopCriterion::vrm_auroc: return "vrm_auroc";
    case StopCriterion::val_loss: return "val_loss";
    case StopCriterion::fixed_epochs: return "fixed_epochs";
  }
  return "?";
}

StopCriterion parse_criterion(std::string_view name) {
  for (auto c : {StopCriterion::vrm_auroc, StopCriterion::val_loss, StopCriterion::fixed_epochs})
    if (name == to_string(c)) return c;
  throw ConfigError("unknown stopping criterion '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ParameterError("lr must be positive");
  if (batch_size < 1) throw ParameterError("batch_size must be positive");
  if (patience < 0) throw ParameterError("patience must be non-negative");
  if (max_epochs < 1) throw ParameterError("max_epochs must be positive");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ParameterError("train_ratio must lie in (0, 1)");
  if (anomalous_fraction <= 0.0 || anomalous_fraction >= 1.0) {
    if (criterion == StopCriterion::vrm_auroc) throw ParameterError("vrm_auroc needs an anomalous_fraction in (0, 1)");
  }
  if (oversample < 1) throw ParameterError("oversample must be positive");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be non-negative");
  augment.validate();
}

std::string TrainReport::to_json() const {
  nlohmann::json j;
  j["criterion"] = criterion;
  j["train_loss"] = train_loss;
  j["best_epoch"] = best_epoch;
  j["epochs_trained"] = epochs_trained;
  j["stop_reason"] = stop_reason;
  j["seconds"] = seconds;
  return j.dump(2);
}

DatasetSplit split_dataset(const Tensor& images, double ratio, std::uint64_t seed) {
  if (images.rank() != 4) throw ShapeError("split_dataset expects [N,C,H,W] images");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParameterError("split ratio must lie in (0, 1)");
  const Index n = images.dim(0);
  if (n == 0) throw ConfigError("cannot split an empty image set");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  Index train = std::lround(ratio * static_cast<double>(n));
  if (n >= 2) train = std::clamp<Index>(train, 1, n - 1);
  DatasetSplit out;
  out.train_indices.assign(order.begin(), order.begin() + train);
  out.val_indices.assign(order.begin() + train, order.end());
  out.train = gather_batch(images, std::span<const Index>(out.train_indices));
  if (!out.val_indices.empty()) out.val = gather_batch(images, std::span<const Index>(out.val_indices));
  return out;
}

double vrm_auroc(const FeatureExtractor<float>& model, const ScoringHead& head, const LabeledBatch& val,
                 Aggregation aggregation) {
  if (static_cast<Index>(val.labels.size()) != val.images.dim(0)) throw ShapeError("one label per validation image");
  const auto scores = image_scores(model, head, val.images, aggregation);
  std::vector<std::uint8_t> positive;
  for (int l : val.labels) positive.push_back(l == 0 ? 1 : 0);
  return auroc(scores, positive);
}

double val_loss_criterion(const FeatureExtractor<float>& model, const GaussianModel& gaussians,
                          const Tensor& images, Aggregation aggregation, Index batch_size) {
  NoGradGuard guard;
  const Index n = images.dim(0);
  double total = 0.0;
  for (Index b = 0; b < n; b += batch_size) {
    const Index count = std::min(batch_size, n - b);
    const auto loss = mahalanobis_loss(model, gaussians, slice_batch(images, b, count), aggregation);
    total += loss.item() * static_cast<double>(count);
  }
  return total / static_cast<double>(n);
}

ScoringHead fit_head(const FeatureExtractor<float>& model, const Tensor& train, const TrainConfig& config) {
  NoGradGuard guard;
  ScoringHead head;
  head.norm = config.norm;
  head.spatial = config.hsc_spatial;
  head.weight_decay = config.weight_decay;
  switch (config.objective) {
    case Objective::mahalanobis: {
      head.kind = HeadKind::gaussian;
      head.gaussians = fit_gaussian(forward_levels(model, train), config.gaussian_mode);
      break;
    }
    case Objective::svdd:
      head.kind = HeadKind::svdd;
      head.centers = feature_centers(model, train);
      break;
    case Objective::hsc:
      head.kind = HeadKind::hsc;
      head.centers = feature_centers(model, train);
      break;
  }
  return head;
}

namespace {

// Normal images followed by one augmented copy of each, labelled 0.
LabeledBatch hsc_batch(const Tensor& normal, const AugmentSpec& spec, Rng& rng) {
  const Index n = normal.dim(0);
  const Shape image_shape{normal.dim(1), normal.dim(2), normal.dim(3)};
  std::vector<float> data(normal.data().begin(), normal.data().end());
  LabeledBatch out;
  out.labels.assign(static_cast<std::size_t>(n), 1);
  for (Index i = 0; i < n; ++i) {
    const auto a = augment(slice_batch(normal, i, 1).reshaped(image_shape), spec, rng.next());
    data.insert(data.end(), a.image.data().begin(), a.image.data().end());
    out.labels.push_back(0);
  }
  out.images = Tensor({2 * n, normal.dim(1), normal.dim(2), normal.dim(3)}, std::move(data));
  return out;
}

Tensor objective_loss(const FeatureExtractor<float>& model, const ScoringHead& head, const TrainConfig& config,
                      const Tensor& images, Rng& rng) {
  switch (config.objective) {
    case Objective::mahalanobis: return mahalanobis_loss(model, head.gaussians, images, config.aggregation);
    case Objective::svdd: return svdd_loss(model, head.svdd_params(), images);
    case Objective::hsc: {
      const auto batch = hsc_batch(images, config.augment, rng);
      return hsc_loss(model, head.hsc_params(), batch.images, batch.labels);
    }
  }
  throw ConfigError("unknown objective");
}

// Objective over the unaugmented validation images, negated.
double negated_val_loss(const FeatureExtractor<float>& model, const ScoringHead& head, const TrainConfig& config,
                        const Tensor& val) {
  if (config.objective == Objective::mahalanobis) {
    return -val_loss_criterion(model, head.gaussians, val, config.aggregation);
  }
  NoGradGuard guard;
  const Index n = val.dim(0);
  double total = 0.0;
  for (Index b = 0; b < n; b += 32) {
    const Index count = std::min<Index>(32, n - b);
    const Tensor part = slice_batch(val, b, count);
    const std::vector<int> labels(static_cast<std::size_t>(count), 1);
    const double loss = config.objective == Objective::svdd ? svdd_loss(model, head.svdd_params(), part).item()
                                                            : hsc_loss(model, head.hsc_params(), part, labels).item();
    total += loss * static_cast<double>(count);
  }
  return -total / static_cast<double>(n);
}

}  // namespace

FinetuneResult finetune(const FeatureExtractor<float>& model, const TrainConfig& config,
                        const Tensor& normal_images) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  if (normal_images.rank() != 4 || normal_images.dim(0) == 0) throw ConfigError("finetune needs normal images");
  if (!model.statistics_frozen()) throw StateError("finetune expects frozen norm statistics");

  const Rng root(config.seed);
  FinetuneResult out{model, ScoringHead{}, TrainReport{}, split_dataset(normal_images, config.train_ratio, mix_seed(config.seed, 1))};
  const auto& split = out.split;
  const bool needs_val = config.criterion != StopCriterion::fixed_epochs;
  if (needs_val && split.val_indices.empty()) throw ConfigError("the validation split is empty");

  out.head = fit_head(model, split.train, config);
  LabeledBatch vicinal;
  if (config.criterion == StopCriterion::vrm_auroc) {
    vicinal = make_validation_set(split.val, config.augment, config.anomalous_fraction, config.oversample,
                                  mix_seed(config.seed, 2));
  }

  FeatureExtractor<float> working(model);
  working.set_requires_grad(true);
  Adam<float> adam(working.parameters(), AdamOptions{config.lr, 0.9, 0.999, 1e-8});
  Rng order_rng = root.fork(3);
  Rng augment_rng = root.fork(4);

  const Index n = split.train.dim(0);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto& report = out.report;
  double best = -std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (Index b = 0; b < n; b += config.batch_size) {
      const Index count = std::min(config.batch_size, n - b);
      const Tensor batch = gather_batch(split.train, std::span<const Index>(order).subspan(b, count));
      const auto loss = objective_loss(working, out.head, config, batch, augment_rng);
      adam.zero_grad();
      backward(loss);
      adam.step();
      loss_sum += loss.item() * static_cast<double>(count);
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(n));
    report.epochs_trained = epoch;

    if (config.criterion == StopCriterion::fixed_epochs) {
      report.best_epoch = epoch;
      continue;
    }
    const double value = config.criterion == StopCriterion::vrm_auroc
                             ? vrm_auroc(working, out.head, vicinal, config.aggregation)
                             : negated_val_loss(working, out.head, config, split.val);
    report.criterion.push_back(value);
    if (report.best_epoch == 0 || value - best >= config.min_improvement) {
      best = value;
      report.best_epoch = epoch;
      out.model = working;
    }
    if (epoch - report.best_epoch >= config.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  if (config.criterion == StopCriterion::fixed_epochs) out.model = working;
  out.model.set_requires_grad(false);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace gadft
