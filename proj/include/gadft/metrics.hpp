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
#include <span>
#include <string>
#include <vector>

#include "gadft/scoring.hpp"

namespace gadft {

/// Binary row-major mask; nonzero marks an anomalous pixel.
struct Mask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> values;

  bool any() const;
  std::uint8_t at(Index y, Index x) const { return values[static_cast<std::size_t>(y * width + x)]; }
};

/// Area under the ROC curve with `positive` marking the positive class.
/// Ties count one half (mid-rank). Throws UndefinedMetricError when a class
/// is absent.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// AUROC over every pixel of every image; anomalous pixels are positive.
double pixel_auroc(const std::vector<Heatmap>& heatmaps, const std::vector<Mask>& masks);

/// 8-connected component labels: 0 is background, components are numbered
/// 1..count in the scanline order of their first pixel.
struct Labeling {
  Index height = 0;
  Index width = 0;
  std::vector<int> labels;
  int count = 0;
};

Labeling connected_components(const Mask& mask);

struct ProCurve {
  /// Curve points from (0, 0), one per distinct heatmap value, descending
  /// thresholds.
  std::vector<double> fpr;
  std::vector<double> overlap;
  /// Trapezoidal area up to fpr_limit divided by fpr_limit.
  double normalized_area = 0.0;
};

/// Per-region overlap curve. Regions are the connected components of all
/// masks, pooled across images; overlap is averaged over regions and the
/// false positive rate is taken over all anomaly-free pixels.
ProCurve pro_curve(const std::vector<Heatmap>& heatmaps, const std::vector<Mask>& masks,
                   double fpr_limit = 0.3);

/// Trapezoidal area of a piecewise-linear curve from x = 0 to `limit`,
/// interpolating at the limit.
double trapezoid_area(std::span<const double> x, std::span<const double> y, double limit);

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;  // sample standard deviation / sqrt(n); 0 for n = 1
  std::size_t count = 0;
};

MeanSem mean_sem(std::span<const double> values);

struct EvalRow {
  std::string category;
  int fold = 0;
  std::string variant;
  double image_auroc = 0.0;
  double pixel_auroc = 0.0;
  double pro_30 = 0.0;
};

struct EvalSummary {
  std::string variant;
  MeanSem image_auroc;
  MeanSem pixel_auroc;
  MeanSem pro_30;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  /// One summary per variant in first-appearance order, aggregated over
  /// every row (categories and folds) of that variant.
  std::vector<EvalSummary> summaries() const;
  std::string to_csv() const;
  std::string to_json() const;
};

}  // namespace gadft
