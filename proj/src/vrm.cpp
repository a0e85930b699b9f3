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

#include "gadft/vrm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gadft/error.hpp"
#include "gadft/random.hpp"

namespace gadft {

std::string_view to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::augmix: return "augmix";
    case AugmentKind::cutout: return "cutout";
    case AugmentKind::confetti: return "confetti";
    case AugmentKind::all: return "all";
  }
  return "unknown";
}

AugmentKind parse_augment_kind(std::string_view name) {
  for (auto k : {AugmentKind::augmix, AugmentKind::cutout, AugmentKind::confetti, AugmentKind::all}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown augmentation '" + std::string(name) + "'");
}

void AugmentSpec::validate() const {
  if (severity < 1 || severity > 10) throw ParameterError("augmix severity must lie in [1, 10]");
  if (depth_min < 1 || depth_max < depth_min) throw ParameterError("augmix depth range is invalid");
  if (width < 1) throw ParameterError("augmix needs at least one chain");
  if (magnitude_scale < 0.0) throw ParameterError("magnitude_scale must be non-negative");
  if (cutout_fraction < 0.0 || cutout_fraction > 1.0) throw ParameterError("cutout fraction must lie in [0, 1]");
  if (confetti_min < 0 || confetti_max < confetti_min) throw ParameterError("confetti count range is invalid");
  if (confetti_side_min <= 0.0 || confetti_side_max < confetti_side_min || confetti_side_max > 1.0) {
    throw ParameterError("confetti side range is invalid");
  }
}

namespace {

struct Planes {
  Index c = 0, h = 0, w = 0;
  std::vector<float> v;

  float& at(Index ch, Index y, Index x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
  float at(Index ch, Index y, Index x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
};

Planes to_planes(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("augmentations expect a [C,H,W] image, got " + shape_string(image.shape()));
  return {image.dim(0), image.dim(1), image.dim(2), {image.data().begin(), image.data().end()}};
}

Tensor to_tensor(Planes p) { return Tensor({p.c, p.h, p.w}, std::move(p.v)); }

float sample_bilinear(const Planes& p, Index ch, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(p.h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(p.w - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, p.h - 1), x1 = std::min(x0 + 1, p.w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = (1.0 - fx) * p.at(ch, y0, x0) + fx * p.at(ch, y0, x1);
  const double bottom = (1.0 - fx) * p.at(ch, y1, x0) + fx * p.at(ch, y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

// Output pixel (y, x) reads the source at the inverse map
// [a b; c d] (q - center) + center - shift with q = (x, y).
Planes warp(const Planes& p, double a, double b, double c, double d, double shift_x, double shift_y) {
  Planes out = p;
  const double cy = 0.5 * static_cast<double>(p.h - 1), cx = 0.5 * static_cast<double>(p.w - 1);
  for (Index y = 0; y < p.h; ++y)
    for (Index x = 0; x < p.w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = a * dx + b * dy + cx - shift_x;
      const double sy = c * dx + d * dy + cy - shift_y;
      for (Index ch = 0; ch < p.c; ++ch) out.at(ch, y, x) = sample_bilinear(p, ch, sy, sx);
    }
  return out;
}

void clamp_unit(Planes& p) {
  for (auto& v : p.v) v = std::clamp(v, 0.0f, 1.0f);
}

Planes apply_op(const Planes& p, int op, double level, Rng& rng) {
  // Magnitude drawn uniformly in [-max, max].
  auto draw = [&](double max) { return rng.uniform(-max, max) * level; };
  Planes out;
  switch (op) {
    case 0: {
      const double t = draw(3.0) * std::numbers::pi / 180.0;
      out = warp(p, std::cos(t), std::sin(t), -std::sin(t), std::cos(t), 0.0, 0.0);
      break;
    }
    case 1: {
      const double tx = draw(0.02) * static_cast<double>(p.w);
      const double ty = draw(0.02) * static_cast<double>(p.h);
      out = warp(p, 1.0, 0.0, 0.0, 1.0, tx, ty);
      break;
    }
    case 2: {
      const double s = draw(0.02);
      out = rng.bernoulli(0.5) ? warp(p, 1.0, s, 0.0, 1.0, 0.0, 0.0) : warp(p, 1.0, 0.0, s, 1.0, 0.0, 0.0);
      break;
    }
    case 3: {
      out = p;
      const auto delta = static_cast<float>(draw(0.03));
      for (auto& v : out.v) v += delta;
      break;
    }
    default: {
      out = p;
      const double factor = 1.0 + draw(0.04);
      for (Index ch = 0; ch < p.c; ++ch) {
        double mean = 0.0;
        for (Index i = 0; i < p.h * p.w; ++i) mean += p.v[static_cast<std::size_t>(ch * p.h * p.w + i)];
        mean /= static_cast<double>(p.h * p.w);
        for (Index i = 0; i < p.h * p.w; ++i) {
          auto& v = out.v[static_cast<std::size_t>(ch * p.h * p.w + i)];
          v = static_cast<float>(mean + factor * (v - mean));
        }
      }
      break;
    }
  }
  clamp_unit(out);
  return out;
}

Mask empty_mask(Index h, Index w) { return {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)}; }

void paste(Planes& p, Mask& mask, const PixelRect& r, std::span<const float> color) {
  for (Index y = r.y0; y < r.y1; ++y)
    for (Index x = r.x0; x < r.x1; ++x) {
      for (Index ch = 0; ch < p.c; ++ch) p.at(ch, y, x) = color[static_cast<std::size_t>(ch)];
      mask.values[static_cast<std::size_t>(y * p.w + x)] = 1;
    }
}

}  // namespace

Tensor augmix_lite(const Tensor& image, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Planes src = to_planes(image);
  Rng rng(seed);
  std::vector<double> weights(static_cast<std::size_t>(spec.width) + 1);
  double total = 0.0;
  for (auto& w : weights) total += (w = rng.exponential());
  for (auto& w : weights) w /= total;

  const double level = spec.severity * spec.magnitude_scale;
  std::vector<double> mixed(src.v.size());
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = weights[0] * src.v[i];
  for (int chain = 0; chain < spec.width; ++chain) {
    Planes cur = src;
    const auto depth = rng.uniform_int(spec.depth_min, spec.depth_max);
    for (std::int64_t d = 0; d < depth; ++d) cur = apply_op(cur, static_cast<int>(rng.uniform_int(0, 4)), level, rng);
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] += weights[static_cast<std::size_t>(chain) + 1] * cur.v[i];
  }
  Planes out = src;
  for (std::size_t i = 0; i < mixed.size(); ++i) out.v[i] = std::clamp(static_cast<float>(mixed[i]), 0.0f, 1.0f);
  return to_tensor(std::move(out));
}

AugmentedSample cutout(const Tensor& image, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ParameterError("cutout fraction must lie in [0, 1]");
  Planes p = to_planes(image);
  AugmentedSample out{Tensor(), AugmentKind::cutout, empty_mask(p.h, p.w), {}};
  const Index side = static_cast<Index>(std::lround(fraction * static_cast<double>(std::min(p.h, p.w))));
  if (side > 0) {
    std::vector<float> color(static_cast<std::size_t>(p.c));
    for (Index ch = 0; ch < p.c; ++ch) {
      double sum = 0.0;
      for (Index i = 0; i < p.h * p.w; ++i) sum += p.v[static_cast<std::size_t>(ch * p.h * p.w + i)];
      color[static_cast<std::size_t>(ch)] = static_cast<float>(sum / static_cast<double>(p.h * p.w));
    }
    Rng rng(seed);
    const Index y0 = rng.uniform_int(0, p.h - side), x0 = rng.uniform_int(0, p.w - side);
    const PixelRect r{y0, x0, y0 + side, x0 + side};
    paste(p, out.mask, r, color);
    out.regions.push_back(r);
  }
  out.image = to_tensor(std::move(p));
  return out;
}

AugmentedSample confetti(const Tensor& image, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  Planes p = to_planes(image);
  AugmentedSample out{Tensor(), AugmentKind::confetti, empty_mask(p.h, p.w), {}};
  Rng rng(seed);
  auto side = [&](Index extent) {
    const Index lo = std::max<Index>(1, std::lround(spec.confetti_side_min * static_cast<double>(extent)));
    const Index hi = std::max(lo, static_cast<Index>(std::lround(spec.confetti_side_max * static_cast<double>(extent))));
    return std::min(extent, static_cast<Index>(rng.uniform_int(lo, hi)));
  };
  const auto k = rng.uniform_int(spec.confetti_min, spec.confetti_max);
  std::vector<float> color(static_cast<std::size_t>(p.c));
  for (std::int64_t i = 0; i < k; ++i) {
    const Index rh = side(p.h), rw = side(p.w);
    const Index y0 = rng.uniform_int(0, p.h - rh), x0 = rng.uniform_int(0, p.w - rw);
    for (auto& c : color) c = static_cast<float>(rng.uniform());
    const PixelRect r{y0, x0, y0 + rh, x0 + rw};
    paste(p, out.mask, r, color);
    out.regions.push_back(r);
  }
  out.image = to_tensor(std::move(p));
  return out;
}

AugmentedSample augment(const Tensor& image, const AugmentSpec& spec, std::uint64_t seed) {
  AugmentKind kind = spec.kind;
  if (kind == AugmentKind::all) {
    Rng pick(mix_seed(seed, 0xa11));
    kind = static_cast<AugmentKind>(pick.uniform_int(0, 2));
  }
  switch (kind) {
    case AugmentKind::cutout: return cutout(image, spec.cutout_fraction, seed);
    case AugmentKind::confetti: return confetti(image, spec, seed);
    default: return {augmix_lite(image, spec, seed), AugmentKind::augmix, Mask{}, {}};
  }
}

LabeledBatch make_validation_set(const Tensor& images, const AugmentSpec& spec, double anomalous_fraction,
                                 int oversample, std::uint64_t seed) {
  if (images.rank() != 4) throw ShapeError("make_validation_set expects [N,C,H,W] images");
  if (images.dim(0) == 0) throw ConfigError("validation split is empty");
  if (anomalous_fraction < 0.0 || anomalous_fraction > 1.0) throw ParameterError("anomalous_fraction must lie in [0, 1]");
  if (oversample < 1) throw ParameterError("oversample must be positive");
  spec.validate();

  const Index n = images.dim(0);
  const Index per_image = images.numel() / n;
  const Index draws = n * oversample;
  Rng rng(seed);
  LabeledBatch out;
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(draws * per_image));
  for (Index i = 0; i < draws; ++i) {
    const Index src = rng.uniform_int(0, n - 1);
    const bool anomalous = rng.bernoulli(anomalous_fraction);
    const std::uint64_t sample_seed = rng.next();
    Tensor image = slice_batch(images, src, 1).reshaped({images.dim(1), images.dim(2), images.dim(3)});
    if (anomalous) image = augment(image, spec, sample_seed).image;
    data.insert(data.end(), image.data().begin(), image.data().end());
    out.labels.push_back(anomalous ? 0 : 1);
  }
  out.images = Tensor({draws, images.dim(1), images.dim(2), images.dim(3)}, std::move(data));
  return out;
}

}  // namespace gadft
