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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "gadft/corpus.hpp"
#include "gadft/error.hpp"
#include "gadft/png_io.hpp"
#include "gadft/scoring.hpp"
#include "gadft/trainer.hpp"
#include "gadft/vrm.hpp"

using namespace gadft;
namespace fs = std::filesystem;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.categories = 3;
  s.train_per_category = 6;
  s.test_per_category = 8;
  s.size = 32;
  s.levels = 3;
  s.seed = 17;
  return s;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

// FNV-1a over the raw float bytes of every tensor and mask.
std::uint64_t fingerprint(const Corpus& c) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
  };
  for (const auto& cat : c.categories) {
    feed(cat.train.raw(), sizeof(float) * static_cast<std::size_t>(cat.train.numel()));
    feed(cat.test.raw(), sizeof(float) * static_cast<std::size_t>(cat.test.numel()));
    for (const auto& m : cat.masks) feed(m.values.data(), m.values.size());
  }
  return h;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gadft_" + name);
  fs::remove_all(p);
  return p;
}

double mask_fraction(const Mask& m) {
  Index n = 0;
  for (auto v : m.values) n += v;
  return static_cast<double>(n) / static_cast<double>(m.values.size());
}

}  // namespace

TEST_CASE("corpus has the requested layout") {
  const auto spec = small_spec();
  const Corpus c = generate_corpus(spec);
  CHECK(c.size == 32);
  CHECK(c.provenance == "synthetic:17");
  REQUIRE(c.categories.size() == 3);
  CHECK(c.categories[0].name == "grating_0");
  CHECK(c.categories[1].name == "noise_1");
  CHECK(c.categories[2].name == "checker_2");
  for (const auto& cat : c.categories) {
    CHECK(cat.train.shape() == Shape{6, 3, 32, 32});
    CHECK(cat.test.shape() == Shape{8, 3, 32, 32});
    REQUIRE(cat.masks.size() == 8);
    Index anomalous = 0;
    for (auto l : cat.image_labels()) anomalous += l;
    CHECK(anomalous == 4);
    for (const auto& m : cat.masks) {
      CHECK(m.height == 32);
      CHECK(m.width == 32);
    }
  }
  CHECK(&c.category("noise_1") == &c.categories[1]);
  CHECK_THROWS_AS(c.category("missing"), ConfigError);
}

TEST_CASE("corpus is deterministic and pinned") {
  const Corpus a = generate_corpus(small_spec());
  const Corpus b = generate_corpus(small_spec());
  CHECK(fingerprint(a) == fingerprint(b));
  // Pinned so that a platform or compiler change to the pixel path shows up.
  CHECK(fingerprint(a) == 0x0baa017da92b5d2bULL);
  auto other = small_spec();
  other.seed = 18;
  CHECK(fingerprint(generate_corpus(other)) != fingerprint(a));
}

TEST_CASE("corpus pixels lie on the 8-bit grid") {
  const Corpus c = generate_corpus(small_spec());
  for (const auto& cat : c.categories)
    for (const Tensor* t : {&cat.train, &cat.test})
      for (float v : t->data()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
        const float k = std::round(v * 255.0f);
        REQUIRE(v == k / 255.0f);
      }
}

TEST_CASE("defect areas stay inside the configured band") {
  auto spec = small_spec();
  spec.test_per_category = 30;
  for (auto band : {std::pair{0.01, 0.10}, std::pair{0.03, 0.05}}) {
    spec.min_defect_area = band.first;
    spec.max_defect_area = band.second;
    const Corpus c = generate_corpus(spec);
    for (const auto& cat : c.categories)
      for (std::size_t i = 0; i < cat.masks.size(); ++i) {
        const double f = mask_fraction(cat.masks[i]);
        if (cat.defect_types[i] == "good") {
          CHECK(f == 0.0);
        } else {
          CHECK(f >= band.first);
          CHECK(f <= band.second);
        }
      }
  }
}

TEST_CASE("defect types cycle over the configured list") {
  auto spec = small_spec();
  spec.test_per_category = 12;
  spec.defects = {DefectType::scratch, DefectType::texture_swap};
  const Corpus c = generate_corpus(spec);
  std::vector<std::string> seen;
  for (const auto& d : c.categories[0].defect_types)
    if (d != "good") seen.push_back(d);
  REQUIRE(seen.size() == 6);
  for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == (i % 2 == 0 ? "scratch" : "texture_swap"));
}

TEST_CASE("every anomalous image has a nonempty mask") {
  auto spec = small_spec();
  spec.anomalous_fraction = 1.0;
  const Corpus c = generate_corpus(spec);
  for (const auto& cat : c.categories)
    for (const auto& m : cat.masks) CHECK(m.any());
}

TEST_CASE("invalid corpus specs are configuration errors") {
  auto spec = small_spec();
  spec.size = 36;
  CHECK_THROWS_AS(generate_corpus(spec), ConfigError);
  spec = small_spec();
  spec.defects.clear();
  CHECK_THROWS_AS(generate_corpus(spec), ConfigError);
  spec = small_spec();
  spec.min_defect_area = 0.2;
  spec.max_defect_area = 0.1;
  CHECK_THROWS_AS(generate_corpus(spec), ConfigError);
  CHECK_THROWS_AS(parse_defect_type("crack"), ConfigError);
  CHECK(parse_defect_type("texture_swap") == DefectType::texture_swap);
}

TEST_CASE("pretraining corpus is balanced over four families") {
  PretrainCorpusSpec spec;
  spec.images_per_class = 5;
  spec.size = 32;
  const auto data = generate_pretrain_corpus(spec);
  CHECK(data.num_classes == 4);
  CHECK(data.images.shape() == Shape{20, 3, 32, 32});
  std::vector<int> counts(4, 0);
  for (int l : data.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) CHECK(n == 5);
}

TEST_CASE("png round trip is lossless on the 8-bit grid") {
  const fs::path dir = scratch_dir("png");
  fs::create_directories(dir);
  const Corpus c = generate_corpus(small_spec());
  const Tensor img = slice_batch(c.categories[0].test, 0, 1).reshaped({3, 32, 32});
  write_png(dir / "a.png", to_image8(img));
  const Image8 back = read_png(dir / "a.png");
  CHECK(back.channels == 3);
  CHECK(same_bytes(from_image8(back), img));

  Image8 gray{2, 3, 1, {0, 50, 100, 150, 200, 255}};
  write_png(dir / "g.png", gray);
  const Image8 g = read_png(dir / "g.png");
  CHECK(g.channels == 1);
  CHECK(g.pixels == gray.pixels);
  const Tensor t = from_image8(g, 3);
  CHECK(t.shape() == Shape{3, 2, 3});
  CHECK(t.data()[5] == 1.0f);
  CHECK(t.data()[6 + 5] == 1.0f);

  CHECK_THROWS_AS(read_png(dir / "missing.png"), IngestionError);
  {
    std::FILE* f = std::fopen((dir / "junk.png").c_str(), "wb");
    std::fputs("not a png at all", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_png(dir / "junk.png"), IngestionError);
  fs::remove_all(dir);
}

TEST_CASE("exported corpus reloads identically and evaluates identically") {
  const fs::path dir = scratch_dir("mvtec");
  const Corpus c = generate_corpus(small_spec());
  export_mvtec_layout(c, dir);
  const Corpus back = load_mvtec_layout(dir, 32);
  REQUIRE(back.categories.size() == c.categories.size());

  ExtractorConfig config;
  config.channels = {4, 8, 8};
  FeatureExtractor<float> model(config, 3);
  estimate_norm_statistics(model, c.categories[0].train);
  model.freeze_statistics();

  for (const auto& original : c.categories) {
    const auto& loaded = back.category(original.name);
    CHECK(same_bytes(loaded.train, original.train));
    // Test images are grouped by defect directory on reload; compare as
    // multisets keyed by defect type and order within the type.
    REQUIRE(loaded.test.dim(0) == original.test.dim(0));
    std::vector<std::string> types = original.defect_types;
    std::vector<Index> order(types.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return types[static_cast<std::size_t>(a)] < types[static_cast<std::size_t>(b)];
    });
    for (std::size_t j = 0; j < order.size(); ++j) {
      const Index i = order[j];
      CHECK(loaded.defect_types[j] == original.defect_types[static_cast<std::size_t>(i)]);
      CHECK(same_bytes(slice_batch(loaded.test, static_cast<Index>(j), 1), slice_batch(original.test, i, 1)));
      CHECK(loaded.masks[j].values == original.masks[static_cast<std::size_t>(i)].values);
    }

    TrainConfig tc;
    const ScoringHead head = fit_head(model, original.train, tc);
    auto metrics = [&](const CategoryData& cat) {
      const auto results = score_dataset(model, head, cat.test, Aggregation::max);
      std::vector<double> scores;
      std::vector<Heatmap> maps;
      for (const auto& r : results) {
        scores.push_back(r.score);
        maps.push_back(r.heatmap);
      }
      return std::pair{auroc(scores, cat.image_labels()), pixel_auroc(maps, cat.masks)};
    };
    CHECK(metrics(loaded) == metrics(original));
  }
  fs::remove_all(dir);
}

TEST_CASE("reloading at another size keeps masks binary") {
  const fs::path dir = scratch_dir("mvtec_resize");
  const Corpus c = generate_corpus(small_spec());
  export_mvtec_layout(c, dir);
  for (Index size : {16, 48}) {
    const Corpus back = load_mvtec_layout(dir, size);
    CHECK(back.categories.size() == 3);
    for (const auto& cat : back.categories) {
      CHECK(cat.test.dim(2) == size);
      for (const auto& m : cat.masks) {
        CHECK(m.height == size);
        for (auto v : m.values) CHECK((v == 0 || v == 1));
      }
      for (float v : cat.train.data()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("category count follows the directory count") {
  const fs::path dir = scratch_dir("mvtec_count");
  auto spec = small_spec();
  spec.categories = 2;
  export_mvtec_layout(generate_corpus(spec), dir);
  CHECK(load_mvtec_layout(dir, 32).categories.size() == 2);
  fs::remove_all(dir / "noise_1");
  CHECK(load_mvtec_layout(dir, 32).categories.size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("missing ground truth names the file") {
  const fs::path dir = scratch_dir("mvtec_missing");
  export_mvtec_layout(generate_corpus(small_spec()), dir);
  const fs::path victim = dir / "grating_0" / "ground_truth" / "blob" / "000_mask.png";
  REQUIRE(fs::exists(victim));
  fs::remove(victim);
  try {
    load_mvtec_layout(dir, 32);
    FAIL("expected an ingestion error");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("000_mask.png") != std::string::npos);
  }
  CHECK_THROWS_AS(load_mvtec_layout(dir / "nowhere", 32), IngestionError);
  fs::remove_all(dir);
}

TEST_CASE("augmix at severity 3 changes corpus images moderately") {
  CorpusSpec spec;
  spec.categories = 4;
  spec.train_per_category = 10;
  spec.test_per_category = 2;
  const Corpus c = generate_corpus(spec);
  AugmentSpec aug;
  aug.severity = 3;
  double total = 0.0;
  Index count = 0;
  std::uint64_t seed = 0;
  for (const auto& cat : c.categories)
    for (Index i = 0; i < cat.train.dim(0); ++i) {
      const Tensor img = slice_batch(cat.train, i, 1).reshaped({3, 64, 64});
      const Tensor out = augmix_lite(img, aug, seed++);
      for (Index k = 0; k < img.numel(); ++k) total += std::abs(double(out.data()[k]) - double(img.data()[k]));
      count += img.numel();
    }
  const double mean_change = total / static_cast<double>(count);
  MESSAGE("mean per-pixel change at severity 3: " << mean_change);
  CHECK(mean_change > 0.0);
  CHECK(mean_change < 0.2);
}

TEST_CASE("pretraining on the texture corpus transfers to held-out images") {
  PretrainCorpusSpec train_spec;
  train_spec.images_per_class = 50;
  train_spec.seed = 5;
  PretrainCorpusSpec test_spec;
  test_spec.images_per_class = 25;
  test_spec.seed = 6;
  const auto train = generate_pretrain_corpus(train_spec);
  const auto test = generate_pretrain_corpus(test_spec);
  PretrainOptions options;
  options.epochs = 20;
  const auto result = pretrain_classifier(FeatureExtractor<float>(ExtractorConfig{}, 1), train, options);
  CHECK(result.model.statistics_frozen());
  const auto predicted = classify(result.model, result.head, test.images);
  int correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test.labels[i] ? 1 : 0;
  const double accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
  MESSAGE("held-out pretraining accuracy: " << accuracy);
  CHECK(accuracy > 0.9);
}
