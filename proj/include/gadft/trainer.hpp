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
#include <string>
#include <string_view>
#include <vector>

#include "gadft/extractor.hpp"
#include "gadft/gaussian.hpp"
#include "gadft/objectives.hpp"
#include "gadft/scoring.hpp"
#include "gadft/vrm.hpp"

namespace gadft {

enum class Objective : std::uint8_t { mahalanobis = 0, svdd = 1, hsc = 2 };
std::string_view to_string(Objective o);
Objective parse_objective(std::string_view name);

enum class StopCriterion : std::uint8_t { vrm_auroc = 0, val_loss = 1, fixed_epochs = 2 };
std::string_view to_string(StopCriterion c);
StopCriterion parse_criterion(std::string_view name);

struct TrainConfig {
  Objective objective = Objective::mahalanobis;
  Aggregation aggregation = Aggregation::max;
  GaussianMode gaussian_mode = GaussianMode::tied;
  double lr = 1e-6;
  Index batch_size = 8;
  int patience = 20;
  int max_epochs = 250;
  double train_ratio = 0.8;
  AugmentSpec augment;
  double anomalous_fraction = 0.7;
  int oversample = 10;
  StopCriterion criterion = StopCriterion::vrm_auroc;
  /// A criterion value counts as an improvement when it beats the best so
  /// far by at least this much.
  double min_improvement = 1e-6;
  double weight_decay = 1e-4;
  NormKind norm = NormKind::l2;
  bool hsc_spatial = true;
  std::uint64_t seed = 0;

  /// Throws ParameterError or ConfigError on invalid values.
  void validate() const;
};

struct TrainReport {
  /// Criterion value after each trained epoch, higher is better (the
  /// validation loss is negated). Empty for fixed_epochs.
  std::vector<double> criterion;
  std::vector<double> train_loss;
  /// 1-based epoch whose weights were returned.
  int best_epoch = 0;
  int epochs_trained = 0;
  std::string stop_reason;
  double seconds = 0.0;

  std::string to_json() const;
};

struct DatasetSplit {
  Tensor train;
  Tensor val;
  std::vector<Index> train_indices;
  std::vector<Index> val_indices;
};

/// Seeded shuffle split; the train part holds round(ratio * N) images,
/// clamped to [1, N - 1] when N >= 2.
DatasetSplit split_dataset(const Tensor& images, double ratio, std::uint64_t seed);

/// AUROC of image scores with the anomalous (label 0) samples as positives.
double vrm_auroc(const FeatureExtractor<float>& model, const ScoringHead& head, const LabeledBatch& val,
                 Aggregation aggregation);

/// Mahalanobis objective over `images` without gradients (lower is better).
double val_loss_criterion(const FeatureExtractor<float>& model, const GaussianModel& gaussians,
                          const Tensor& images, Aggregation aggregation, Index batch_size = 32);

/// Scoring head fitted on the frozen features of `train` for an objective:
/// Gaussians for mahalanobis, centers for svdd and hsc.
ScoringHead fit_head(const FeatureExtractor<float>& model, const Tensor& train, const TrainConfig& config);

struct FinetuneResult {
  FeatureExtractor<float> model;
  ScoringHead head;
  TrainReport report;
  DatasetSplit split;
};

/// Fine-tunes a norm-frozen extractor on normal images and returns the
/// weights of the best epoch. The scoring head is fitted once on the frozen
/// features of the train split and never updated.
FinetuneResult finetune(const FeatureExtractor<float>& model, const TrainConfig& config,
                        const Tensor& normal_images);

}  // namespace gadft
