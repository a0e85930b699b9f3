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
#include <string>
#include <string_view>
#include <vector>

#include "gadft/extractor.hpp"
#include "gadft/metrics.hpp"
#include "gadft/tensor.hpp"

namespace gadft {

enum class DefectType : std::uint8_t { blob = 0, scratch = 1, texture_swap = 2 };
std::string_view to_string(DefectType d);
DefectType parse_defect_type(std::string_view name);

enum class TextureFamily : std::uint8_t { grating = 0, value_noise = 1, checker = 2, weave = 3 };
std::string_view to_string(TextureFamily f);

struct CategoryData {
  std::string name;
  Tensor train;  // [N,3,H,W], normal only
  Tensor test;   // [M,3,H,W]
  /// One mask per test image; all zero for normal images.
  std::vector<Mask> masks;
  /// Defect name per test image, "good" for normal images.
  std::vector<std::string> defect_types;

  /// 1 for anomalous test images.
  std::vector<std::uint8_t> image_labels() const;
};

struct Corpus {
  Index size = 0;
  /// "synthetic:<seed>" or the directory the corpus was read from.
  std::string provenance;
  std::vector<CategoryData> categories;

  const CategoryData& category(std::string_view name) const;
};

struct CorpusSpec {
  int categories = 4;
  int train_per_category = 60;
  int test_per_category = 20;
  double anomalous_fraction = 0.5;
  Index size = 64;
  std::vector<DefectType> defects{DefectType::blob, DefectType::scratch, DefectType::texture_swap};
  /// Bounds on the defect area as a fraction of the image.
  double min_defect_area = 0.01;
  double max_defect_area = 0.10;
  /// Sizes must be divisible by 2^levels.
  int levels = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Procedural texture categories with pasted defects and exact masks.
/// Pixels are quantized to k / 255 so that PNG export is lossless, and the
/// pixel path uses only basic IEEE arithmetic, so a seed yields the same
/// bytes on every platform.
Corpus generate_corpus(const CorpusSpec& spec);

struct PretrainCorpusSpec {
  int images_per_class = 100;
  Index size = 64;
  std::uint64_t seed = 0;
};

/// One class per texture family, with colors, scales and orientations drawn
/// per image so that only the structure identifies the class.
LabeledImages generate_pretrain_corpus(const PretrainCorpusSpec& spec);

/// Reads <category>/train/good/*.png, <category>/test/<defect>/*.png and
/// <category>/ground_truth/<defect>/<stem>_mask.png, resizing images
/// bilinearly and masks by nearest neighbour to size x size. Categories and
/// files are taken in lexicographic order.
Corpus load_mvtec_layout(const std::filesystem::path& root, Index size);

/// Writes a corpus in the layout read by load_mvtec_layout.
void export_mvtec_layout(const Corpus& corpus, const std::filesystem::path& root);

/// Quantizes to the nearest k / 255, the value an 8-bit PNG stores.
inline float quantize8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<float>(static_cast<int>(c * 255.0 + 0.5)) / 255.0f;
}

}  // namespace gadft
