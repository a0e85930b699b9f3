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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gadft/corpus.hpp"
#include "gadft/extractor.hpp"
#include "gadft/metrics.hpp"
#include "gadft/scoring.hpp"
#include "gadft/serialize.hpp"
#include "gadft/trainer.hpp"

namespace gadft {

inline constexpr std::string_view kVersion = "1.0.0";

struct PretrainConfig {
  PretrainCorpusSpec corpus{50, 64, 5};
  PretrainOptions options;
  std::uint64_t init_seed = 1;
  /// Held-out images per class for the reported accuracy; 0 skips it.
  int heldout_per_class = 25;
};

/// Named training setup evaluated per category and fold. `finetune = false`
/// is the frozen baseline: the head is fitted on the fold's train split and
/// the pretrained weights are used unchanged.
struct Variant {
  std::string name;
  TrainConfig config;
  bool finetune = true;
};

struct AblationGrid {
  std::vector<StopCriterion> criteria;
  std::vector<Objective> objectives;
  std::vector<AugmentKind> augment_kinds;
  std::vector<int> severities;
  std::vector<Aggregation> aggregations;
  std::vector<GaussianMode> gaussian_modes;
  bool include_frozen = true;
};

/// Everything a CLI run needs. Parsed from JSON with a strict schema:
/// unknown keys and wrong types are configuration errors.
struct RunConfig {
  TrainConfig train;
  /// "synthetic" or a directory in the MVTec layout.
  std::string corpus_source = "synthetic";
  CorpusSpec synthetic;
  Index image_size = 64;
  ExtractorConfig extractor;
  PretrainConfig pretrain;
  std::filesystem::path output_dir = "gadft_out";
  int folds = 5;
  /// Category names to run; empty means all.
  std::vector<std::string> categories;
  /// Worker threads for independent category/fold runs; 0 = hardware threads.
  int workers = 0;
  AblationGrid ablate;

  void validate() const;
  std::string to_json() const;
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// FNV-1a 64 over the canonical JSON form.
std::uint64_t config_hash(const RunConfig& config);

Corpus load_corpus(const RunConfig& config);
std::vector<const CategoryData*> select_categories(const Corpus& corpus, const std::vector<std::string>& names);

struct PretrainSummary {
  std::vector<double> epoch_loss;
  std::optional<double> heldout_accuracy;
  double seconds = 0.0;
};

FeatureExtractor<float> pretrain_model(const RunConfig& config, PretrainSummary* summary = nullptr);

/// Seed of fold `fold` derived from the base seed. All variants of a fold
/// share it, so they see the same train/validation split.
std::uint64_t fold_seed(std::uint64_t base, int fold);

/// The train split used by every variant for this config's seed.
DatasetSplit fold_split(const Tensor& train, const TrainConfig& config);

/// Scoring head of a saved run: Gaussians or centers from the file, the
/// rest from the training config.
ScoringHead head_from_weights(const WeightFile& file, const TrainConfig& config);

struct Evaluation {
  EvalRow row;
  std::vector<Heatmap> heatmaps;
  std::vector<double> scores;
};

Evaluation evaluate_category(const FeatureExtractor<float>& model, const ScoringHead& head, const CategoryData& category,
                             int fold, const std::string& variant, Aggregation aggregation);

struct RunOutcome {
  std::string category;
  int fold = 0;
  std::string variant;
  EvalRow row;
  /// Absent for frozen variants.
  std::optional<TrainReport> report;
  FeatureExtractor<float> model;
  ScoringHead head;
};

/// Fits or fine-tunes one variant on one category and fold and evaluates it
/// on the category's test set.
RunOutcome run_variant(const FeatureExtractor<float>& pretrained, const CategoryData& category, int fold,
                       const Variant& variant, std::uint64_t base_seed);

/// Runs every (category, fold, variant) combination; results are ordered by
/// category, then fold, then variant regardless of the worker count.
/// `on_done` is called after each run, serialized, in completion order.
std::vector<RunOutcome> run_grid(const FeatureExtractor<float>& pretrained,
                                 const std::vector<const CategoryData*>& categories, int folds,
                                 const std::vector<Variant>& variants, std::uint64_t base_seed, int workers,
                                 const std::function<void(const RunOutcome&)>& on_done = {});

EvalReport to_report(const std::vector<RunOutcome>& outcomes);

/// The standard comparison: frozen baseline and the configured fine-tuning.
std::vector<Variant> default_variants(const TrainConfig& train);
/// Cartesian product of the grid's non-empty axes applied to `train`.
std::vector<Variant> ablation_variants(const TrainConfig& train, const AblationGrid& grid);

/// Writes <dir>/<index>.png (8-bit gray, min-max over all maps to [0, 255])
/// and <dir>/<index>.f32 (raw little-endian float32, row-major).
void export_heatmaps(const std::vector<Heatmap>& heatmaps, const std::filesystem::path& dir);

/// Run manifest: command, config, config hash, seeds and versions.
std::string manifest_json(const RunConfig& config, std::string_view command);

/// Calls fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
/// threads). The first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace gadft
