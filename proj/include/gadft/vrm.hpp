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

// Vicinal augmentations of normal images. Images here are single [C,H,W]
// tensors with values in [0, 1]; every function is a pure function of its
// inputs and seed.

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "gadft/metrics.hpp"
#include "gadft/objectives.hpp"
#include "gadft/tensor.hpp"

namespace gadft {

enum class AugmentKind : std::uint8_t { augmix = 0, cutout = 1, confetti = 2, all = 3 };
std::string_view to_string(AugmentKind kind);
AugmentKind parse_augment_kind(std::string_view name);

struct AugmentSpec {
  AugmentKind kind = AugmentKind::augmix;
  /// AugMix severity in [1, 10].
  int severity = 3;
  int depth_min = 1;
  int depth_max = 3;
  /// Number of AugMix chains mixed with the original.
  int width = 2;
  /// Multiplies every AugMix op magnitude; 0 turns each op into the identity.
  double magnitude_scale = 1.0;
  /// CutOut square side as a fraction of min(H, W).
  double cutout_fraction = 0.25;
  int confetti_min = 1;
  int confetti_max = 6;
  /// Confetti rectangle sides as fractions of the image side.
  double confetti_side_min = 0.02;
  double confetti_side_max = 0.10;

  /// Throws ParameterError on out-of-range fields.
  void validate() const;
};

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct PixelRect {
  Index y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  Index area() const { return (y1 - y0) * (x1 - x0); }
};

struct AugmentedSample {
  Tensor image;  // [C,H,W]
  AugmentKind kind = AugmentKind::augmix;
  /// Altered pixels for cutout and confetti; zero-sized for augmix.
  Mask mask;
  /// Pasted rectangles in paste order (cutout and confetti).
  std::vector<PixelRect> regions;
};

/// Mixes the image with `width` chains of depth_min..depth_max random ops:
/// rotate by at most 3 deg * severity, translate by at most 2% of the side
/// * severity, shear by at most 0.02 * severity, brightness shift of at most
/// 0.03 * severity and contrast scale within 1 +- 0.04 * severity. Weights
/// over (original, chain 1, ...) are Dirichlet(1, ..., 1). Geometric ops
/// resample bilinearly with edge clamping; the result is clamped to [0, 1].
Tensor augmix_lite(const Tensor& image, const AugmentSpec& spec, std::uint64_t seed);

/// One square of side round(fraction * min(H, W)) at a uniform position,
/// filled with the per-channel mean of the image.
AugmentedSample cutout(const Tensor& image, double fraction, std::uint64_t seed);

/// k uniform in [confetti_min, confetti_max] rectangles, each filled with a
/// uniform random color.
AugmentedSample confetti(const Tensor& image, const AugmentSpec& spec, std::uint64_t seed);

/// Applies spec.kind; `all` picks one of the three schemes uniformly.
AugmentedSample augment(const Tensor& image, const AugmentSpec& spec, std::uint64_t seed);

/// oversample * N draws with replacement from `images` [N,C,H,W]; each draw
/// is augmented with probability anomalous_fraction (label 0) and passed
/// through otherwise (label 1). Throws ConfigError on an empty input.
LabeledBatch make_validation_set(const Tensor& images, const AugmentSpec& spec,
                                 double anomalous_fraction = 0.7, int oversample = 10,
                                 std::uint64_t seed = 0);

}  // namespace gadft
