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

// Weight file format, all integers and floats little-endian:
//
//   "GADW" u8 version
//   config:  u32 in_channels, u32 L, u32 channels[L], u32 kernel,
//            u8 activation, u32 T, u32 taps[T], f64 norm_eps, u8 frozen
//   tensors: f32 arrays in FeatureExtractor::state() order, sizes implied
//            by the config
//   optional "GADG" block (Gaussians):
//            u8 mode, u32 levels, then per level u32 level_id, u32 C,
//            u32 H, u32 W, u32 mean_rows, f64 means[mean_rows * C],
//            u32 factor_count, f64 factors[factor_count * C * C] row-major
//   optional "GADS" block (feature centers):
//            u32 levels, then per level u32 level_id, u32 C, f64 center[C]
//
// Covariances are not stored; they are rebuilt as L L^T on load.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "gadft/extractor.hpp"
#include "gadft/gaussian.hpp"
#include "gadft/objectives.hpp"

namespace gadft {

inline constexpr std::uint8_t kWeightFormatVersion = 1;

struct WeightFile {
  FeatureExtractor<float> model;
  std::optional<GaussianModel> gaussians;
  std::optional<LevelCenters> centers;
};

std::string encode_weights(const FeatureExtractor<float>& model, const GaussianModel* gaussians = nullptr,
                           const LevelCenters* centers = nullptr);

/// Throws FormatError on a bad magic, unknown version, truncation or
/// trailing bytes.
WeightFile decode_weights(const std::string& bytes);

void save_weights(const std::filesystem::path& path, const FeatureExtractor<float>& model,
                  const GaussianModel* gaussians = nullptr, const LevelCenters* centers = nullptr);

WeightFile load_weights(const std::filesystem::path& path);

/// As load_weights, but throws DimensionError when the stored configuration
/// differs from `expected`.
WeightFile load_weights(const std::filesystem::path& path, const ExtractorConfig& expected);

}  // namespace gadft
