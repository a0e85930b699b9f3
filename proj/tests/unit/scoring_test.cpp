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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gadft/error.hpp"
#include "gadft/scoring.hpp"
#include "oracles.hpp"

using namespace gadft;

namespace {

AnomalyMapLevel random_map(Rng& rng, int level, Index h, Index w) {
  AnomalyMapLevel m{level, {h, w, {}}};
  for (Index i = 0; i < h * w; ++i) m.map.values.push_back(static_cast<float>(rng.uniform(0.0, 5.0)));
  return m;
}

// Direct align_corners=false formula, one output pixel at a time.
double bilinear_at(const Heatmap& in, Index out_h, Index out_w, Index i, Index j) {
  auto coord = [](Index o, Index in_size, Index out_size, Index& lo, Index& hi) {
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_size) / static_cast<double>(out_size) - 0.5;
    if (src < 0.0) src = 0.0;
    lo = static_cast<Index>(std::floor(src));
    if (lo > in_size - 1) lo = in_size - 1;
    hi = std::min(lo + 1, in_size - 1);
    return src - static_cast<double>(lo);
  };
  Index y0, y1, x0, x1;
  const double fy = coord(i, in.height, out_h, y0, y1);
  const double fx = coord(j, in.width, out_w, x0, x1);
  return (1 - fy) * ((1 - fx) * in.at(y0, x0) + fx * in.at(y0, x1)) +
         fy * ((1 - fx) * in.at(y1, x0) + fx * in.at(y1, x1));
}

ScoringHead tied_head(const FeatureExtractor<float>& model, const Tensor& images) {
  ScoringHead head;
  head.kind = HeadKind::gaussian;
  head.gaussians = fit_gaussian(forward_levels(model, images), GaussianMode::tied);
  return head;
}

}  // namespace

TEST_CASE("image score averages per-level aggregates") {
  std::vector<AnomalyMapLevel> zeros{{1, {2, 2, std::vector<float>(4, 0.0f)}}, {2, {1, 1, {0.0f}}}};
  CHECK(image_score(zeros, Aggregation::max) == 0.0);
  std::vector<AnomalyMapLevel> two{{1, {2, 2, {0.0f, 2.0f, 1.0f, 0.5f}}}, {2, {1, 2, {4.0f, 3.0f}}}};
  CHECK(image_score(two, Aggregation::max) == 3.0);

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AnomalyMapLevel> maps;
    const int levels = static_cast<int>(rng.uniform_int(1, 4));
    for (int l = 0; l < levels; ++l) maps.push_back(random_map(rng, l + 1, rng.uniform_int(1, 8), rng.uniform_int(1, 8)));
    double total = 0.0;
    for (const auto& m : maps) {
      double s = 0.0;
      for (Index y = 0; y < m.map.height; ++y)
        for (Index x = 0; x < m.map.width; ++x) s += m.map.at(y, x);
      total += s / static_cast<double>(m.map.height * m.map.width);
    }
    CHECK(image_score(maps, Aggregation::mean) == doctest::Approx(total / levels).epsilon(1e-12));
  }
}

TEST_CASE("segment at the native size is the identity") {
  Rng rng(2);
  auto m = random_map(rng, 1, 5, 7);
  const auto h = segment({m}, 5, 7);
  CHECK(h.values == m.map.values);
  CHECK_THROWS_AS(segment({}, 4, 4), ConfigError);
}

TEST_CASE("segment keeps constants constant") {
  AnomalyMapLevel a{1, {3, 3, std::vector<float>(9, 2.5f)}};
  AnomalyMapLevel b{2, {2, 5, std::vector<float>(10, 2.5f)}};
  for (auto [h, w] : {std::pair<Index, Index>{4, 4}, {17, 9}, {1, 1}}) {
    for (float v : segment({a, b}, h, w).values) CHECK(v == doctest::Approx(2.5f));
  }
}

TEST_CASE("segment of a 2x2 map matches the bilinear formula") {
  AnomalyMapLevel m{1, {2, 2, {0.0f, 1.0f, 1.0f, 0.0f}}};
  const auto h = segment({m}, 4, 4);
  const float expected[4][4] = {{0.0f, 0.25f, 0.75f, 1.0f},
                                {0.25f, 0.375f, 0.625f, 0.75f},
                                {0.75f, 0.625f, 0.375f, 0.25f},
                                {1.0f, 0.75f, 0.25f, 0.0f}};
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      CHECK(h.at(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-6));
      CHECK(h.at(i, j) == doctest::Approx(bilinear_at(m.map, 4, 4, i, j)).epsilon(1e-6));
    }
}

TEST_CASE("segment matches the bilinear formula on random maps") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    auto m = random_map(rng, 1, rng.uniform_int(1, 8), rng.uniform_int(1, 8));
    const Index oh = rng.uniform_int(1, 20), ow = rng.uniform_int(1, 20);
    const auto h = segment({m}, oh, ow);
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) CHECK(h.at(i, j) == doctest::Approx(bilinear_at(m.map, oh, ow, i, j)).epsilon(1e-5));
  }
}

TEST_CASE("segment is bounded and linear") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AnomalyMapLevel> maps{random_map(rng, 1, 8, 8), random_map(rng, 2, 4, 4), random_map(rng, 3, 2, 2)};
    const auto h = segment(maps, 16, 16);
    float level_max = 0.0f;
    for (const auto& m : maps) level_max = std::max(level_max, *std::max_element(m.map.values.begin(), m.map.values.end()));
    CHECK(*std::max_element(h.values.begin(), h.values.end()) <= level_max + 1e-5f);
    CHECK(*std::min_element(h.values.begin(), h.values.end()) >= 0.0f);
    auto scaled = maps;
    for (auto& m : scaled)
      for (auto& v : m.map.values) v *= 3.0f;
    const auto hs = segment(scaled, 16, 16);
    for (std::size_t i = 0; i < h.values.size(); ++i) CHECK(hs.values[i] == doctest::Approx(3.0f * h.values[i]).epsilon(1e-5));
  }
}

TEST_CASE("an image equal to the fitted means scores zero") {
  FeatureExtractor<float> model(ExtractorConfig{}, 3);
  Rng rng(5);
  auto image = gadft::testing::random_float_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
  const auto head = tied_head(model, image);
  const auto results = score_dataset(model, head, image, Aggregation::max);
  REQUIRE(results.size() == 1);
  CHECK(results[0].score == 0.0);
  CHECK(results[0].heatmap.height == 32);
  for (float v : results[0].heatmap.values) CHECK(v == 0.0f);
}

TEST_CASE("scoring is batch and order independent") {
  FeatureExtractor<float> model(ExtractorConfig{}, 6);
  Rng rng(6);
  auto train = gadft::testing::random_float_tensor({6, 3, 32, 32}, rng, 0.0, 1.0);
  auto test = gadft::testing::random_float_tensor({5, 3, 32, 32}, rng, 0.0, 1.0);
  const auto head = tied_head(model, train);
  const auto batched = score_dataset(model, head, test, Aggregation::max, 4);
  const auto fast = image_scores(model, head, test, Aggregation::max, 2);
  std::vector<Index> reversed{4, 3, 2, 1, 0};
  const auto flipped = score_dataset(model, head, gather_batch(test, std::span<const Index>(reversed)), Aggregation::max);
  for (Index i = 0; i < 5; ++i) {
    const auto single = score_dataset(model, head, slice_batch(test, i, 1), Aggregation::max);
    CHECK(single[0].score == doctest::Approx(batched[i].score).epsilon(1e-6));
    CHECK(fast[i] == doctest::Approx(batched[i].score).epsilon(1e-6));
    CHECK(flipped[4 - i].score == doctest::Approx(batched[i].score).epsilon(1e-6));
    CHECK(batched[i].score > 0.0);
    CHECK(batched[i].maps.size() == 4);
  }
}

TEST_CASE("center heads score with their own distances") {
  FeatureExtractor<float> model(ExtractorConfig{}, 7);
  Rng rng(7);
  auto train = gadft::testing::random_float_tensor({4, 3, 32, 32}, rng, 0.0, 1.0);
  auto test = gadft::testing::random_float_tensor({3, 3, 32, 32}, rng, 0.0, 1.0);
  ScoringHead head;
  head.kind = HeadKind::svdd;
  head.centers = feature_centers(model, train);
  const auto results = score_dataset(model, head, test, Aggregation::max);
  const auto distances = svdd_distances(forward_levels(model, test), head.svdd_params());
  for (Index i = 0; i < 3; ++i) {
    CHECK(results[i].score == doctest::Approx(distances.data()[i]).epsilon(1e-6));
    for (float v : results[i].heatmap.values) CHECK(v >= 0.0f);
  }
  head.kind = HeadKind::hsc;
  head.spatial = true;
  const auto hsc = score_dataset(model, head, test, Aggregation::mean);
  for (const auto& r : hsc) CHECK(r.score == doctest::Approx(image_score(r.maps, Aggregation::mean)));
  CHECK_THROWS_AS(score_dataset(model, ScoringHead{}, test, Aggregation::max), StateError);
}
