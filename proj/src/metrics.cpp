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

#include "gadft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gadft/error.hpp"
#include "json.hpp"

namespace gadft {

bool Mask::any() const {
  return std::any_of(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; });
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double pos_in_group = 0.0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      pos_in_group += positive[order[j]] ? 1.0 : 0.0;
      ++j;
    }
    // 1-based ranks i+1 .. j share their mean.
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    rank_sum += pos_in_group * mid_rank;
    n_pos += pos_in_group;
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedMetricError("auroc needs both classes");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

namespace {

void check_pairs(const std::vector<Heatmap>& heatmaps, const std::vector<Mask>& masks) {
  if (heatmaps.size() != masks.size()) throw ShapeError("one mask per heatmap required");
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    if (heatmaps[i].height != masks[i].height || heatmaps[i].width != masks[i].width ||
        heatmaps[i].values.size() != masks[i].values.size()) {
      throw ShapeError("heatmap " + std::to_string(i) + " and its mask differ in size");
    }
  }
}

// Union-find with path halving; parents only ever point to smaller ids.
int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

double pixel_auroc(const std::vector<Heatmap>& heatmaps, const std::vector<Mask>& masks) {
  check_pairs(heatmaps, masks);
  std::vector<double> scores;
  std::vector<std::uint8_t> positive;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    scores.insert(scores.end(), heatmaps[i].values.begin(), heatmaps[i].values.end());
    for (auto v : masks[i].values) positive.push_back(v != 0 ? 1 : 0);
  }
  if (std::find(positive.begin(), positive.end(), 1) == positive.end()) {
    throw UndefinedMetricError("pixel auroc: no anomalous pixel in any mask");
  }
  return auroc(scores, positive);
}

Labeling connected_components(const Mask& mask) {
  const Index h = mask.height, w = mask.width;
  Labeling out{h, w, std::vector<int>(static_cast<std::size_t>(h * w), 0), 0};
  std::vector<int> parent{0};
  auto& lab = out.labels;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      int best = 0;
      // Already-visited 8-neighbours: W, NW, N, NE.
      const Index ny[] = {y, y - 1, y - 1, y - 1};
      const Index nx[] = {x - 1, x - 1, x, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || nx[k] < 0 || nx[k] >= w) continue;
        const int l = lab[ny[k] * w + nx[k]];
        if (l == 0) continue;
        const int r = find_root(parent, l);
        if (best == 0) {
          best = r;
        } else if (r != best) {
          const int lo = std::min(r, best), hi = std::max(r, best);
          parent[hi] = lo;
          best = lo;
        }
      }
      if (best == 0) {
        best = static_cast<int>(parent.size());
        parent.push_back(best);
      }
      lab[y * w + x] = best;
    }
  std::vector<int> compact(parent.size(), 0);
  for (auto& l : lab) {
    if (l == 0) continue;
    const int r = find_root(parent, l);
    if (compact[r] == 0) compact[r] = ++out.count;
    l = compact[r];
  }
  return out;
}

double trapezoid_area(std::span<const double> x, std::span<const double> y, double limit) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double x0 = x[i - 1], x1 = x[i];
    if (x0 >= limit) break;
    if (x1 <= limit) {
      area += 0.5 * (x1 - x0) * (y[i] + y[i - 1]);
    } else {
      const double y_limit = y[i - 1] + (y[i] - y[i - 1]) * (limit - x0) / (x1 - x0);
      area += 0.5 * (limit - x0) * (y_limit + y[i - 1]);
      break;
    }
  }
  return area;
}

ProCurve pro_curve(const std::vector<Heatmap>& heatmaps, const std::vector<Mask>& masks,
                   double fpr_limit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ParameterError("fpr_limit must lie in (0, 1]");
  check_pairs(heatmaps, masks);

  struct Pixel {
    float score;
    int region;  // -1 for anomaly-free pixels
  };
  std::vector<Pixel> pixels;
  std::vector<double> region_size;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    const auto cc = connected_components(masks[i]);
    const int offset = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(cc.count), 0.0);
    for (std::size_t p = 0; p < cc.labels.size(); ++p) {
      const int l = cc.labels[p];
      if (l > 0) region_size[static_cast<std::size_t>(offset + l - 1)] += 1.0;
      pixels.push_back({heatmaps[i].values[p], l > 0 ? offset + l - 1 : -1});
    }
  }
  if (region_size.empty()) throw UndefinedMetricError("pro curve: no ground-truth region");
  double negatives = 0.0;
  for (const auto& px : pixels) negatives += px.region < 0 ? 1.0 : 0.0;
  if (negatives == 0.0) throw UndefinedMetricError("pro curve: no anomaly-free pixel");

  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });
  const double regions = static_cast<double>(region_size.size());
  std::vector<double> covered(region_size.size(), 0.0);
  ProCurve curve;
  curve.fpr.push_back(0.0);
  curve.overlap.push_back(0.0);
  double false_positives = 0.0;
  for (std::size_t i = 0; i < pixels.size();) {
    std::size_t j = i;
    while (j < pixels.size() && pixels[j].score == pixels[i].score) {
      if (pixels[j].region < 0) {
        false_positives += 1.0;
      } else {
        covered[static_cast<std::size_t>(pixels[j].region)] += 1.0;
      }
      ++j;
    }
    // Recomputing the mean from the per-region counts keeps the curve free
    // of accumulated rounding.
    double overlap = 0.0;
    for (std::size_t r = 0; r < covered.size(); ++r) overlap += covered[r] / region_size[r];
    curve.fpr.push_back(false_positives / negatives);
    curve.overlap.push_back(overlap / regions);
    i = j;
  }
  curve.normalized_area = trapezoid_area(curve.fpr, curve.overlap, fpr_limit) / fpr_limit;
  return curve;
}

MeanSem mean_sem(std::span<const double> values) {
  MeanSem out;
  out.count = values.size();
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

std::vector<EvalSummary> EvalReport::summaries() const {
  std::vector<std::string> variants;
  for (const auto& r : rows) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  }
  std::vector<EvalSummary> out;
  for (const auto& v : variants) {
    std::vector<double> img, pix, pro;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      img.push_back(r.image_auroc);
      pix.push_back(r.pixel_auroc);
      pro.push_back(r.pro_30);
    }
    out.push_back({v, mean_sem(img), mean_sem(pix), mean_sem(pro)});
  }
  return out;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8f", v);
  return buf;
}

nlohmann::json summary_json(const MeanSem& m) {
  return {{"mean", m.mean}, {"sem", m.sem}, {"count", m.count}};
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::string out = "category,fold,image_auroc,pixel_auroc,pro_30,variant\n";
  for (const auto& r : rows) {
    out += r.category + "," + std::to_string(r.fold) + "," + fixed(r.image_auroc) + "," +
           fixed(r.pixel_auroc) + "," + fixed(r.pro_30) + "," + r.variant + "\n";
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"category", r.category},
                         {"fold", r.fold},
                         {"variant", r.variant},
                         {"image_auroc", r.image_auroc},
                         {"pixel_auroc", r.pixel_auroc},
                         {"pro_30", r.pro_30}});
  }
  j["summary"] = nlohmann::json::array();
  for (const auto& s : summaries()) {
    j["summary"].push_back({{"variant", s.variant},
                            {"image_auroc", summary_json(s.image_auroc)},
                            {"pixel_auroc", summary_json(s.pixel_auroc)},
                            {"pro_30", summary_json(s.pro_30)}});
  }
  return j.dump(2);
}

}  // namespace gadft
