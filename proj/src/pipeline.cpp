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

#include "gadft/pipeline.hpp"

#include <Eigen/Core>
#include <png.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "gadft/error.hpp"
#include "gadft/png_io.hpp"
#include "gadft/random.hpp"
#include "json.hpp"

namespace gadft {

using nlohmann::json;

namespace {

// Strict view of one JSON object: every key must be consumed.
class Schema {
 public:
  Schema(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename F>
  void field(const char* key, F&& apply) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    apply(*it, path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + path_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::int64_t as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t as_seed(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw ConfigError(path + " must be a non-negative integer");
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + " must be a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + " must be a string");
  return v.get<std::string>();
}

template <typename T, typename F>
std::vector<T> as_list(const json& v, const std::string& path, F&& item) {
  if (!v.is_array()) throw ConfigError(path + " must be an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(item(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// Enum parsers throw ConfigError with the bare name; add the key path.
template <typename F>
auto parse_named(const json& v, const std::string& path, F&& parse) {
  const std::string name = as_string(v, path);
  try {
    return parse(name);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::silu;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) { return a == Activation::silu ? "silu" : "relu"; }

void read_augment(const json& j, const std::string& path, AugmentSpec& a) {
  Schema s(j, path);
  s.field("kind", [&](const json& v, const std::string& p) { a.kind = parse_named(v, p, parse_augment_kind); });
  s.field("severity", [&](const json& v, const std::string& p) { a.severity = static_cast<int>(as_int(v, p)); });
  s.field("depth_min", [&](const json& v, const std::string& p) { a.depth_min = static_cast<int>(as_int(v, p)); });
  s.field("depth_max", [&](const json& v, const std::string& p) { a.depth_max = static_cast<int>(as_int(v, p)); });
  s.field("width", [&](const json& v, const std::string& p) { a.width = static_cast<int>(as_int(v, p)); });
  s.field("magnitude_scale", [&](const json& v, const std::string& p) { a.magnitude_scale = as_number(v, p); });
  s.field("cutout_fraction", [&](const json& v, const std::string& p) { a.cutout_fraction = as_number(v, p); });
  s.field("confetti_min", [&](const json& v, const std::string& p) { a.confetti_min = static_cast<int>(as_int(v, p)); });
  s.field("confetti_max", [&](const json& v, const std::string& p) { a.confetti_max = static_cast<int>(as_int(v, p)); });
  s.field("confetti_side_min", [&](const json& v, const std::string& p) { a.confetti_side_min = as_number(v, p); });
  s.field("confetti_side_max", [&](const json& v, const std::string& p) { a.confetti_side_max = as_number(v, p); });
  s.finish();
}

void read_train(const json& j, const std::string& path, TrainConfig& t) {
  Schema s(j, path);
  s.field("objective", [&](const json& v, const std::string& p) { t.objective = parse_named(v, p, parse_objective); });
  s.field("aggregation", [&](const json& v, const std::string& p) { t.aggregation = parse_named(v, p, parse_aggregation); });
  s.field("gaussian_mode", [&](const json& v, const std::string& p) { t.gaussian_mode = parse_named(v, p, parse_gaussian_mode); });
  s.field("lr", [&](const json& v, const std::string& p) { t.lr = as_number(v, p); });
  s.field("batch_size", [&](const json& v, const std::string& p) { t.batch_size = as_int(v, p); });
  s.field("patience", [&](const json& v, const std::string& p) { t.patience = static_cast<int>(as_int(v, p)); });
  s.field("max_epochs", [&](const json& v, const std::string& p) { t.max_epochs = static_cast<int>(as_int(v, p)); });
  s.field("train_ratio", [&](const json& v, const std::string& p) { t.train_ratio = as_number(v, p); });
  s.field("augment", [&](const json& v, const std::string& p) { read_augment(v, p, t.augment); });
  s.field("anomalous_fraction", [&](const json& v, const std::string& p) { t.anomalous_fraction = as_number(v, p); });
  s.field("oversample", [&](const json& v, const std::string& p) { t.oversample = static_cast<int>(as_int(v, p)); });
  s.field("criterion", [&](const json& v, const std::string& p) { t.criterion = parse_named(v, p, parse_criterion); });
  s.field("min_improvement", [&](const json& v, const std::string& p) { t.min_improvement = as_number(v, p); });
  s.field("weight_decay", [&](const json& v, const std::string& p) { t.weight_decay = as_number(v, p); });
  s.field("norm", [&](const json& v, const std::string& p) { t.norm = parse_named(v, p, parse_norm); });
  s.field("hsc_spatial", [&](const json& v, const std::string& p) { t.hsc_spatial = as_bool(v, p); });
  s.field("seed", [&](const json& v, const std::string& p) { t.seed = as_seed(v, p); });
  s.finish();
}

void read_corpus(const json& j, const std::string& path, RunConfig& c) {
  Schema s(j, path);
  CorpusSpec& cs = c.synthetic;
  s.field("source", [&](const json& v, const std::string& p) { c.corpus_source = as_string(v, p); });
  s.field("image_size", [&](const json& v, const std::string& p) { c.image_size = as_int(v, p); });
  s.field("categories", [&](const json& v, const std::string& p) { cs.categories = static_cast<int>(as_int(v, p)); });
  s.field("train_per_category", [&](const json& v, const std::string& p) { cs.train_per_category = static_cast<int>(as_int(v, p)); });
  s.field("test_per_category", [&](const json& v, const std::string& p) { cs.test_per_category = static_cast<int>(as_int(v, p)); });
  s.field("anomalous_fraction", [&](const json& v, const std::string& p) { cs.anomalous_fraction = as_number(v, p); });
  s.field("defects", [&](const json& v, const std::string& p) {
    cs.defects = as_list<DefectType>(v, p, [](const json& e, const std::string& q) { return parse_named(e, q, parse_defect_type); });
  });
  s.field("min_defect_area", [&](const json& v, const std::string& p) { cs.min_defect_area = as_number(v, p); });
  s.field("max_defect_area", [&](const json& v, const std::string& p) { cs.max_defect_area = as_number(v, p); });
  s.field("seed", [&](const json& v, const std::string& p) { cs.seed = as_seed(v, p); });
  s.finish();
}

void read_extractor(const json& j, const std::string& path, ExtractorConfig& e) {
  Schema s(j, path);
  s.field("channels", [&](const json& v, const std::string& p) {
    e.channels = as_list<Index>(v, p, [](const json& x, const std::string& q) { return as_int(x, q); });
  });
  s.field("kernel_size", [&](const json& v, const std::string& p) { e.kernel_size = as_int(v, p); });
  s.field("activation", [&](const json& v, const std::string& p) { e.activation = parse_named(v, p, parse_activation); });
  s.field("taps", [&](const json& v, const std::string& p) {
    e.taps = as_list<int>(v, p, [](const json& x, const std::string& q) { return static_cast<int>(as_int(x, q)); });
  });
  s.field("norm_eps", [&](const json& v, const std::string& p) { e.norm_eps = as_number(v, p); });
  s.finish();
}

void read_pretrain(const json& j, const std::string& path, PretrainConfig& pc) {
  Schema s(j, path);
  s.field("images_per_class", [&](const json& v, const std::string& p) { pc.corpus.images_per_class = static_cast<int>(as_int(v, p)); });
  s.field("corpus_seed", [&](const json& v, const std::string& p) { pc.corpus.seed = as_seed(v, p); });
  s.field("epochs", [&](const json& v, const std::string& p) { pc.options.epochs = static_cast<int>(as_int(v, p)); });
  s.field("lr", [&](const json& v, const std::string& p) { pc.options.lr = as_number(v, p); });
  s.field("batch_size", [&](const json& v, const std::string& p) { pc.options.batch_size = as_int(v, p); });
  s.field("seed", [&](const json& v, const std::string& p) { pc.options.seed = as_seed(v, p); });
  s.field("init_seed", [&](const json& v, const std::string& p) { pc.init_seed = as_seed(v, p); });
  s.field("statistics_samples", [&](const json& v, const std::string& p) { pc.options.statistics_samples = as_int(v, p); });
  s.field("cosine_schedule", [&](const json& v, const std::string& p) { pc.options.cosine_schedule = as_bool(v, p); });
  s.field("heldout_per_class", [&](const json& v, const std::string& p) { pc.heldout_per_class = static_cast<int>(as_int(v, p)); });
  s.finish();
}

void read_ablate(const json& j, const std::string& path, AblationGrid& g) {
  Schema s(j, path);
  s.field("criteria", [&](const json& v, const std::string& p) {
    g.criteria = as_list<StopCriterion>(v, p, [](const json& e, const std::string& q) { return parse_named(e, q, parse_criterion); });
  });
  s.field("objectives", [&](const json& v, const std::string& p) {
    g.objectives = as_list<Objective>(v, p, [](const json& e, const std::string& q) { return parse_named(e, q, parse_objective); });
  });
  s.field("augment_kinds", [&](const json& v, const std::string& p) {
    g.augment_kinds = as_list<AugmentKind>(v, p, [](const json& e, const std::string& q) { return parse_named(e, q, parse_augment_kind); });
  });
  s.field("severities", [&](const json& v, const std::string& p) {
    g.severities = as_list<int>(v, p, [](const json& e, const std::string& q) { return static_cast<int>(as_int(e, q)); });
  });
  s.field("aggregations", [&](const json& v, const std::string& p) {
    g.aggregations = as_list<Aggregation>(v, p, [](const json& e, const std::string& q) { return parse_named(e, q, parse_aggregation); });
  });
  s.field("gaussian_modes", [&](const json& v, const std::string& p) {
    g.gaussian_modes = as_list<GaussianMode>(v, p, [](const json& e, const std::string& q) { return parse_named(e, q, parse_gaussian_mode); });
  });
  s.field("include_frozen", [&](const json& v, const std::string& p) { g.include_frozen = as_bool(v, p); });
  s.finish();
}

json augment_json(const AugmentSpec& a) {
  return {{"kind", to_string(a.kind)},           {"severity", a.severity},
          {"depth_min", a.depth_min},            {"depth_max", a.depth_max},
          {"width", a.width},                    {"magnitude_scale", a.magnitude_scale},
          {"cutout_fraction", a.cutout_fraction}, {"confetti_min", a.confetti_min},
          {"confetti_max", a.confetti_max},      {"confetti_side_min", a.confetti_side_min},
          {"confetti_side_max", a.confetti_side_max}};
}

json train_json(const TrainConfig& t) {
  return {{"objective", to_string(t.objective)},
          {"aggregation", to_string(t.aggregation)},
          {"gaussian_mode", to_string(t.gaussian_mode)},
          {"lr", t.lr},
          {"batch_size", t.batch_size},
          {"patience", t.patience},
          {"max_epochs", t.max_epochs},
          {"train_ratio", t.train_ratio},
          {"augment", augment_json(t.augment)},
          {"anomalous_fraction", t.anomalous_fraction},
          {"oversample", t.oversample},
          {"criterion", to_string(t.criterion)},
          {"min_improvement", t.min_improvement},
          {"weight_decay", t.weight_decay},
          {"norm", to_string(t.norm)},
          {"hsc_spatial", t.hsc_spatial},
          {"seed", t.seed}};
}

template <typename T>
json names(const std::vector<T>& values) {
  json out = json::array();
  for (const auto& v : values) out.push_back(to_string(v));
  return out;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (folds < 1) throw ConfigError("folds must be positive");
  if (workers < 0) throw ConfigError("workers must be non-negative");
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (extractor.channels.empty()) throw ConfigError("extractor.channels must not be empty");
  for (Index c : extractor.channels)
    if (c < 1) throw ConfigError("extractor.channels entries must be positive");
  if (extractor.kernel_size < 1 || extractor.kernel_size % 2 == 0) throw ConfigError("extractor.kernel_size must be odd");
  for (int t : extractor.taps)
    if (t < 1 || t > static_cast<int>(extractor.channels.size())) throw ConfigError("extractor.taps entry out of range");
  const Index unit = Index{1} << extractor.num_levels();
  if (image_size % unit != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by 2^" +
                      std::to_string(extractor.num_levels()));
  }
  if (corpus_source == "synthetic") {
    CorpusSpec spec = synthetic;
    spec.size = image_size;
    spec.levels = static_cast<int>(extractor.num_levels());
    spec.validate();
  }
  if (pretrain.corpus.images_per_class < 1) throw ConfigError("pretrain.images_per_class must be positive");
  if (pretrain.options.epochs < 0 || pretrain.options.lr <= 0.0 || pretrain.options.batch_size < 1 ||
      pretrain.options.statistics_samples < 1) {
    throw ConfigError("invalid pretrain options");
  }
  if (pretrain.heldout_per_class < 0) throw ConfigError("pretrain.heldout_per_class must be non-negative");
  for (int s : ablate.severities)
    if (s < 1 || s > 10) throw ConfigError("ablate.severities entries must lie in [1, 10]");
}

std::string RunConfig::to_json() const {
  json j;
  j["output_dir"] = output_dir.string();
  j["folds"] = folds;
  j["categories"] = categories;
  j["workers"] = workers;
  j["corpus"] = {{"source", corpus_source},
                 {"image_size", image_size},
                 {"categories", synthetic.categories},
                 {"train_per_category", synthetic.train_per_category},
                 {"test_per_category", synthetic.test_per_category},
                 {"anomalous_fraction", synthetic.anomalous_fraction},
                 {"defects", names(synthetic.defects)},
                 {"min_defect_area", synthetic.min_defect_area},
                 {"max_defect_area", synthetic.max_defect_area},
                 {"seed", synthetic.seed}};
  j["extractor"] = {{"channels", extractor.channels},
                    {"kernel_size", extractor.kernel_size},
                    {"activation", activation_name(extractor.activation)},
                    {"taps", extractor.taps},
                    {"norm_eps", extractor.norm_eps}};
  j["pretrain"] = {{"images_per_class", pretrain.corpus.images_per_class},
                   {"corpus_seed", pretrain.corpus.seed},
                   {"epochs", pretrain.options.epochs},
                   {"lr", pretrain.options.lr},
                   {"batch_size", pretrain.options.batch_size},
                   {"seed", pretrain.options.seed},
                   {"init_seed", pretrain.init_seed},
                   {"statistics_samples", pretrain.options.statistics_samples},
                   {"cosine_schedule", pretrain.options.cosine_schedule},
                   {"heldout_per_class", pretrain.heldout_per_class}};
  j["train"] = train_json(train);
  j["ablate"] = {{"criteria", names(ablate.criteria)},
                 {"objectives", names(ablate.objectives)},
                 {"augment_kinds", names(ablate.augment_kinds)},
                 {"severities", ablate.severities},
                 {"aggregations", names(ablate.aggregations)},
                 {"gaussian_modes", names(ablate.gaussian_modes)},
                 {"include_frozen", ablate.include_frozen}};
  return j.dump(2);
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Schema s(j, "config");
  s.field("output_dir", [&](const json& v, const std::string& p) { c.output_dir = as_string(v, p); });
  s.field("folds", [&](const json& v, const std::string& p) { c.folds = static_cast<int>(as_int(v, p)); });
  s.field("categories", [&](const json& v, const std::string& p) {
    c.categories = as_list<std::string>(v, p, [](const json& e, const std::string& q) { return as_string(e, q); });
  });
  s.field("workers", [&](const json& v, const std::string& p) { c.workers = static_cast<int>(as_int(v, p)); });
  s.field("corpus", [&](const json& v, const std::string& p) { read_corpus(v, p, c); });
  s.field("extractor", [&](const json& v, const std::string& p) { read_extractor(v, p, c.extractor); });
  s.field("pretrain", [&](const json& v, const std::string& p) { read_pretrain(v, p, c.pretrain); });
  s.field("train", [&](const json& v, const std::string& p) { read_train(v, p, c.train); });
  s.field("ablate", [&](const json& v, const std::string& p) { read_ablate(v, p, c.ablate); });
  s.finish();
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  c.synthetic.size = c.image_size;
  c.synthetic.levels = static_cast<int>(c.extractor.num_levels());
  c.pretrain.corpus.size = c.image_size;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(json::parse(config.to_json()).dump()); }

Corpus load_corpus(const RunConfig& config) {
  if (config.corpus_source == "synthetic") {
    CorpusSpec spec = config.synthetic;
    spec.size = config.image_size;
    spec.levels = static_cast<int>(config.extractor.num_levels());
    return generate_corpus(spec);
  }
  return load_mvtec_layout(config.corpus_source, config.image_size);
}

std::vector<const CategoryData*> select_categories(const Corpus& corpus, const std::vector<std::string>& names) {
  std::vector<const CategoryData*> out;
  if (names.empty()) {
    for (const auto& c : corpus.categories) out.push_back(&c);
    return out;
  }
  for (const auto& n : names) out.push_back(&corpus.category(n));
  return out;
}

FeatureExtractor<float> pretrain_model(const RunConfig& config, PretrainSummary* summary) {
  const auto start = std::chrono::steady_clock::now();
  PretrainCorpusSpec spec = config.pretrain.corpus;
  spec.size = config.image_size;
  const LabeledImages corpus = generate_pretrain_corpus(spec);
  PretrainResult result =
      pretrain_classifier(FeatureExtractor<float>(config.extractor, config.pretrain.init_seed), corpus, config.pretrain.options);
  if (summary != nullptr) {
    summary->epoch_loss = result.epoch_loss;
    if (config.pretrain.heldout_per_class > 0) {
      PretrainCorpusSpec held = spec;
      held.images_per_class = config.pretrain.heldout_per_class;
      held.seed = mix_seed(spec.seed, 1);
      const LabeledImages test = generate_pretrain_corpus(held);
      const auto predicted = classify(result.model, result.head, test.images);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test.labels[i] ? 1 : 0;
      summary->heldout_accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
    }
    summary->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return std::move(result.model);
}

std::uint64_t fold_seed(std::uint64_t base, int fold) { return mix_seed(base, 0xf01d0000ULL + static_cast<std::uint64_t>(fold)); }

DatasetSplit fold_split(const Tensor& train, const TrainConfig& config) {
  return split_dataset(train, config.train_ratio, mix_seed(config.seed, 1));
}

ScoringHead head_from_weights(const WeightFile& file, const TrainConfig& config) {
  ScoringHead head;
  head.norm = config.norm;
  head.spatial = config.hsc_spatial;
  head.weight_decay = config.weight_decay;
  switch (config.objective) {
    case Objective::mahalanobis:
      if (!file.gaussians) throw StateError("weight file has no Gaussians for a mahalanobis head");
      head.kind = HeadKind::gaussian;
      head.gaussians = *file.gaussians;
      break;
    case Objective::svdd:
    case Objective::hsc:
      if (!file.centers) throw StateError("weight file has no feature centers for a center-based head");
      head.kind = config.objective == Objective::svdd ? HeadKind::svdd : HeadKind::hsc;
      head.centers = *file.centers;
      break;
  }
  return head;
}

Evaluation evaluate_category(const FeatureExtractor<float>& model, const ScoringHead& head, const CategoryData& category,
                             int fold, const std::string& variant, Aggregation aggregation) {
  Evaluation out;
  auto results = score_dataset(model, head, category.test, aggregation);
  for (auto& r : results) {
    out.scores.push_back(r.score);
    out.heatmaps.push_back(std::move(r.heatmap));
  }
  out.row.category = category.name;
  out.row.fold = fold;
  out.row.variant = variant;
  out.row.image_auroc = auroc(out.scores, category.image_labels());
  out.row.pixel_auroc = pixel_auroc(out.heatmaps, category.masks);
  out.row.pro_30 = pro_curve(out.heatmaps, category.masks, 0.3).normalized_area;
  return out;
}

RunOutcome run_variant(const FeatureExtractor<float>& pretrained, const CategoryData& category, int fold,
                       const Variant& variant, std::uint64_t base_seed) {
  TrainConfig config = variant.config;
  config.seed = fold_seed(base_seed, fold);
  RunOutcome out;
  out.category = category.name;
  out.fold = fold;
  out.variant = variant.name;
  if (variant.finetune) {
    FinetuneResult r = finetune(pretrained, config, category.train);
    out.model = std::move(r.model);
    out.head = std::move(r.head);
    out.report = std::move(r.report);
  } else {
    out.model = pretrained;
    out.head = fit_head(pretrained, fold_split(category.train, config).train, config);
  }
  out.row = evaluate_category(out.model, out.head, category, fold, variant.name, config.aggregation).row;
  return out;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::size_t threads = workers > 0 ? static_cast<std::size_t>(workers)
                                    : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<RunOutcome> run_grid(const FeatureExtractor<float>& pretrained,
                                 const std::vector<const CategoryData*>& categories, int folds,
                                 const std::vector<Variant>& variants, std::uint64_t base_seed, int workers,
                                 const std::function<void(const RunOutcome&)>& on_done) {
  const std::size_t nv = variants.size(), nf = static_cast<std::size_t>(folds);
  std::vector<RunOutcome> out(categories.size() * nf * nv);
  std::mutex done_mutex;
  // Fine-tuning runs first in the queue so that the long tasks start early.
  std::vector<std::size_t> order(out.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_partition(order.begin(), order.end(), [&](std::size_t i) { return variants[i % nv].finetune; });
  parallel_for(out.size(), workers, [&](std::size_t k) {
    const std::size_t i = order[k];
    const std::size_t c = i / (nf * nv), f = (i / nv) % nf, v = i % nv;
    out[i] = run_variant(pretrained, *categories[c], static_cast<int>(f), variants[v], base_seed);
    if (on_done) {
      std::lock_guard lock(done_mutex);
      on_done(out[i]);
    }
  });
  return out;
}

EvalReport to_report(const std::vector<RunOutcome>& outcomes) {
  EvalReport report;
  for (const auto& o : outcomes) report.rows.push_back(o.row);
  return report;
}

std::vector<Variant> default_variants(const TrainConfig& train) {
  TrainConfig frozen = train;
  frozen.objective = Objective::mahalanobis;
  return {{"frozen", frozen, false}, {"finetuned", train, true}};
}

std::vector<Variant> ablation_variants(const TrainConfig& train, const AblationGrid& grid) {
  std::vector<Variant> out;
  if (grid.include_frozen) {
    TrainConfig frozen = train;
    frozen.objective = Objective::mahalanobis;
    out.push_back({"frozen", frozen, false});
  }
  auto axis = [](const auto& values, auto fallback) {
    using T = std::decay_t<decltype(fallback)>;
    return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
  };
  for (auto objective : axis(grid.objectives, train.objective))
    for (auto criterion : axis(grid.criteria, train.criterion))
      for (auto kind : axis(grid.augment_kinds, train.augment.kind))
        for (auto severity : axis(grid.severities, train.augment.severity))
          for (auto aggregation : axis(grid.aggregations, train.aggregation))
            for (auto mode : axis(grid.gaussian_modes, train.gaussian_mode)) {
              TrainConfig t = train;
              t.objective = objective;
              t.criterion = criterion;
              t.augment.kind = kind;
              t.augment.severity = severity;
              t.aggregation = aggregation;
              t.gaussian_mode = mode;
              std::string name = std::string(to_string(objective)) + "/" + std::string(to_string(criterion));
              if (!grid.augment_kinds.empty()) name += "/" + std::string(to_string(kind));
              if (!grid.severities.empty()) name += "/sev" + std::to_string(severity);
              if (!grid.aggregations.empty()) name += "/" + std::string(to_string(aggregation));
              if (!grid.gaussian_modes.empty()) name += "/" + std::string(to_string(mode));
              out.push_back({name, t, true});
            }
  return out;
}

void export_heatmaps(const std::vector<Heatmap>& heatmaps, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (const auto& h : heatmaps)
    for (float v : h.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double range = hi > lo ? static_cast<double>(hi) - lo : 1.0;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    const Heatmap& h = heatmaps[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "%03zu", i);
    Image8 img{h.height, h.width, 1, {}};
    img.pixels.reserve(h.values.size());
    for (float v : h.values) {
      img.pixels.push_back(static_cast<std::uint8_t>(std::lround(255.0 * (static_cast<double>(v) - lo) / range)));
    }
    write_png(dir / (std::string(stem) + ".png"), img);
    std::ofstream raw(dir / (std::string(stem) + ".f32"), std::ios::binary);
    for (float v : h.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
      raw.write(bytes, 4);
    }
    if (!raw) throw IngestionError("failed writing heatmap " + (dir / (std::string(stem) + ".f32")).string());
  }
}

std::string manifest_json(const RunConfig& config, std::string_view command) {
  json j;
  j["command"] = command;
  j["config"] = json::parse(config.to_json());
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(config)));
  j["config_hash"] = hash;
  j["seeds"] = {{"train", config.train.seed},
                {"corpus", config.synthetic.seed},
                {"pretrain", config.pretrain.options.seed},
                {"pretrain_corpus", config.pretrain.corpus.seed},
                {"init", config.pretrain.init_seed}};
  json folds = json::array();
  for (int f = 0; f < config.folds; ++f) folds.push_back(fold_seed(config.train.seed, f));
  j["seeds"]["folds"] = folds;
  j["versions"] = {{"gadft", kVersion},
                   {"weight_format", kWeightFormatVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"libpng", PNG_LIBPNG_VER_STRING},
                   {"compiler", __VERSION__}};
  return j.dump(2);
}

}  // namespace gadft
