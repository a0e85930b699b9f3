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

#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "gadft/error.hpp"
#include "gadft/pipeline.hpp"
#include "gadft/png_io.hpp"

using namespace gadft;
namespace fs = std::filesystem;

TEST_CASE("empty config gives the documented defaults") {
  const RunConfig c = parse_run_config("{}");
  CHECK(c.folds == 5);
  CHECK(c.corpus_source == "synthetic");
  CHECK(c.image_size == 64);
  CHECK(c.synthetic.categories == 4);
  CHECK(c.synthetic.train_per_category == 60);
  CHECK(c.synthetic.test_per_category == 20);
  CHECK(c.train.lr == 1e-6);
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.patience == 20);
  CHECK(c.train.max_epochs == 250);
  CHECK(c.train.train_ratio == 0.8);
  CHECK(c.train.criterion == StopCriterion::vrm_auroc);
  CHECK(c.train.aggregation == Aggregation::max);
  CHECK(c.train.gaussian_mode == GaussianMode::tied);
  CHECK(c.categories.empty());
}

TEST_CASE("config fields are read") {
  const RunConfig c = parse_run_config(R"({
    "folds": 3, "categories": ["a"], "workers": 2, "output_dir": "x",
    "corpus": {"image_size": 32, "categories": 2, "defects": ["blob"], "seed": 9},
    "extractor": {"channels": [4, 8], "activation": "relu", "taps": [2]},
    "pretrain": {"epochs": 3, "lr": 0.01, "images_per_class": 7},
    "train": {"objective": "svdd", "lr": 1e-4, "criterion": "fixed_epochs", "augment": {"kind": "all", "severity": 5},
              "aggregation": "mean", "gaussian_mode": "local", "norm": "l1", "seed": 12345678901234},
    "ablate": {"criteria": ["val_loss"], "severities": [1, 3]}
  })");
  CHECK(c.folds == 3);
  CHECK(c.categories == std::vector<std::string>{"a"});
  CHECK(c.workers == 2);
  CHECK(c.output_dir == fs::path("x"));
  CHECK(c.image_size == 32);
  CHECK(c.synthetic.size == 32);
  CHECK(c.synthetic.levels == 2);
  CHECK(c.synthetic.defects == std::vector<DefectType>{DefectType::blob});
  CHECK(c.synthetic.seed == 9);
  CHECK(c.extractor.channels == std::vector<Index>{4, 8});
  CHECK(c.extractor.activation == Activation::relu);
  CHECK(c.extractor.taps == std::vector<int>{2});
  CHECK(c.pretrain.options.epochs == 3);
  CHECK(c.pretrain.corpus.images_per_class == 7);
  CHECK(c.pretrain.corpus.size == 32);
  CHECK(c.train.objective == Objective::svdd);
  CHECK(c.train.criterion == StopCriterion::fixed_epochs);
  CHECK(c.train.augment.kind == AugmentKind::all);
  CHECK(c.train.augment.severity == 5);
  CHECK(c.train.aggregation == Aggregation::mean);
  CHECK(c.train.gaussian_mode == GaussianMode::local);
  CHECK(c.train.norm == NormKind::l1);
  CHECK(c.train.seed == 12345678901234ULL);
  CHECK(c.ablate.criteria == std::vector<StopCriterion>{StopCriterion::val_loss});
  CHECK(c.ablate.severities == std::vector<int>{1, 3});
}

TEST_CASE("config schema violations are configuration errors") {
  for (const char* text : {
           "[]",
           "{not json",
           R"({"unknown": 1})",
           R"({"train": {"lr": "fast"}})",
           R"({"train": {"batch_size": 2.5}})",
           R"({"train": {"augment": {"kind": "mixup"}}})",
           R"({"train": {"augment": {"severity": 11}}})",
           R"({"train": {"lr": -1}})",
           R"({"train": {"seed": -3}})",
           R"({"corpus": {"image_size": 40}})",
           R"({"corpus": {"defects": ["hole"]}})",
           R"({"folds": 0})",
           R"({"categories": "all"})",
           R"({"extractor": {"channels": []}})",
           R"({"extractor": {"kernel_size": 4}})",
           R"({"extractor": {"taps": [5]}})",
           R"({"ablate": {"severities": [0]}})",
           R"({"pretrain": {"extra": true}})",
       }) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse_run_config(text), ConfigError);
  }
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config survives a JSON round trip and hashes canonically") {
  const RunConfig a = parse_run_config(R"({"folds": 2, "train": {"lr": 0.001, "objective": "hsc"}, "ablate": {"criteria": ["val_loss"]}})");
  const RunConfig b = parse_run_config(a.to_json());
  CHECK(b.to_json() == a.to_json());
  CHECK(config_hash(a) == config_hash(b));
  // Key order in the source text does not matter.
  CHECK(config_hash(parse_run_config(R"({"train": {"objective": "hsc", "lr": 0.001}, "folds": 2, "ablate": {"criteria": ["val_loss"]}})")) ==
        config_hash(a));
  CHECK(config_hash(parse_run_config("{}")) != config_hash(a));
}

TEST_CASE("manifest records hash, seeds and versions") {
  const RunConfig c = parse_run_config(R"({"folds": 3})");
  const std::string m = manifest_json(c, "fit");
  CHECK(m.find("\"command\": \"fit\"") != std::string::npos);
  CHECK(m.find("\"config_hash\"") != std::string::npos);
  CHECK(m.find("\"folds\"") != std::string::npos);
  CHECK(m.find("\"eigen\"") != std::string::npos);
  CHECK(m.find("\"libpng\"") != std::string::npos);
  CHECK(m == manifest_json(c, "fit"));
}

TEST_CASE("fold seeds are distinct and stable") {
  std::set<std::uint64_t> seeds;
  for (int f = 0; f < 10; ++f) seeds.insert(fold_seed(7, f));
  CHECK(seeds.size() == 10);
  CHECK(fold_seed(7, 3) == fold_seed(7, 3));
  CHECK(fold_seed(7, 3) != fold_seed(8, 3));
}

TEST_CASE("ablation variants span the grid") {
  TrainConfig t;
  AblationGrid g;
  g.criteria = {StopCriterion::vrm_auroc, StopCriterion::val_loss, StopCriterion::fixed_epochs};
  g.severities = {1, 3};
  const auto v = ablation_variants(t, g);
  REQUIRE(v.size() == 7);
  CHECK(v[0].name == "frozen");
  CHECK_FALSE(v[0].finetune);
  std::set<std::string> names;
  for (const auto& x : v) names.insert(x.name);
  CHECK(names.size() == 7);
  CHECK(names.count("mahalanobis/val_loss/sev3") == 1);
  g.include_frozen = false;
  CHECK(ablation_variants(t, g).size() == 6);
  const auto d = default_variants(t);
  REQUIRE(d.size() == 2);
  CHECK(d[0].name == "frozen");
  CHECK(d[1].name == "finetuned");
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (int workers : {1, 3}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, workers,
                                 [](std::size_t i) {
                                   if (i == 4) throw StateError("boom");
                                 }),
                    StateError);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("heatmap export scales over the whole dataset") {
  const fs::path dir = fs::temp_directory_path() / "gadft_heatmaps";
  fs::remove_all(dir);
  const std::vector<Heatmap> maps{{1, 2, {1.0f, 3.0f}}, {1, 2, {5.0f, 2.0f}}};
  export_heatmaps(maps, dir);
  const Image8 a = read_png(dir / "000.png");
  const Image8 b = read_png(dir / "001.png");
  CHECK(a.channels == 1);
  CHECK(a.pixels == std::vector<std::uint8_t>{0, 128});
  CHECK(b.pixels == std::vector<std::uint8_t>{255, 64});
  std::ifstream raw(dir / "001.f32", std::ios::binary);
  float values[2];
  raw.read(reinterpret_cast<char*>(values), sizeof values);
  CHECK(raw.gcount() == 8);
  CHECK(values[0] == 5.0f);
  CHECK(values[1] == 2.0f);
  fs::remove_all(dir);
}

TEST_CASE("grid results do not depend on the worker count") {
  CorpusSpec spec;
  spec.categories = 2;
  spec.train_per_category = 10;
  spec.test_per_category = 6;
  spec.size = 16;
  spec.levels = 2;
  const Corpus corpus = generate_corpus(spec);
  ExtractorConfig config;
  config.channels = {4, 8};
  FeatureExtractor<float> model(config, 2);
  estimate_norm_statistics(model, corpus.categories[0].train);
  model.freeze_statistics();
  TrainConfig t;
  t.lr = 1e-3;
  t.patience = 1;
  t.max_epochs = 3;
  t.oversample = 3;
  const auto variants = default_variants(t);
  const auto cats = select_categories(corpus, {});
  const auto serial = to_report(run_grid(model, cats, 2, variants, 5, 1)).to_csv();
  const auto threaded = to_report(run_grid(model, cats, 2, variants, 5, 3)).to_csv();
  CHECK(serial == threaded);
  const auto outcomes = run_grid(model, cats, 2, variants, 5, 1);
  REQUIRE(outcomes.size() == 8);
  CHECK(outcomes[0].variant == "frozen");
  CHECK(outcomes[1].variant == "finetuned");
  CHECK(outcomes[2].fold == 1);
  CHECK(outcomes[4].category == corpus.categories[1].name);
  CHECK_FALSE(outcomes[0].report.has_value());
  CHECK(outcomes[1].report.has_value());
  // The frozen baseline keeps the pretrained weights.
  const auto before = model.state();
  const auto after = outcomes[0].model.state();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& a = before[i];
    const auto& b = after[i];
    CHECK(std::memcmp(a.raw(), b.raw(), sizeof(float) * static_cast<std::size_t>(a.numel())) == 0);
  }
}

TEST_CASE("saved runs rebuild their scoring heads") {
  ExtractorConfig config;
  config.channels = {4, 8};
  FeatureExtractor<float> model(config, 2);
  TrainConfig t;
  WeightFile file{model, std::nullopt, std::nullopt};
  CHECK_THROWS_AS(head_from_weights(file, t), StateError);
  file.centers = LevelCenters{};
  t.objective = Objective::hsc;
  t.hsc_spatial = false;
  const ScoringHead h = head_from_weights(file, t);
  CHECK(h.kind == HeadKind::hsc);
  CHECK_FALSE(h.spatial);
}

TEST_CASE("category selection follows the requested names") {
  CorpusSpec spec;
  spec.categories = 3;
  spec.train_per_category = 2;
  spec.test_per_category = 2;
  spec.size = 16;
  spec.levels = 2;
  const Corpus corpus = generate_corpus(spec);
  CHECK(select_categories(corpus, {}).size() == 3);
  const auto picked = select_categories(corpus, {"checker_2", "grating_0"});
  REQUIRE(picked.size() == 2);
  CHECK(picked[0]->name == "checker_2");
  CHECK_THROWS_AS(select_categories(corpus, {"nope"}), ConfigError);
}
