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

// This file is compiled with -ffp-contract=off: the pixel path must not
// depend on whether the target fuses multiply-adds.

#include "gadft/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "gadft/error.hpp"
#include "gadft/ops.hpp"
#include "gadft/png_io.hpp"
#include "gadft/random.hpp"

namespace gadft {

std::string_view to_string(DefectType d) {
  switch (d) {
    case DefectType::blob: return "blob";
    case DefectType::scratch: return "scratch";
    case DefectType::texture_swap: return "texture_swap";
  }
  return "?";
}

DefectType parse_defect_type(std::string_view name) {
  for (auto d : {DefectType::blob, DefectType::scratch, DefectType::texture_swap})
    if (name == to_string(d)) return d;
  throw ConfigError("unknown defect type '" + std::string(name) + "'");
}

std::string_view to_string(TextureFamily f) {
  switch (f) {
    case TextureFamily::grating: return "grating";
    case TextureFamily::value_noise: return "noise";
    case TextureFamily::checker: return "checker";
    case TextureFamily::weave: return "weave";
  }
  return "?";
}

std::vector<std::uint8_t> CategoryData::image_labels() const {
  std::vector<std::uint8_t> out;
  for (const auto& d : defect_types) out.push_back(d == "good" ? 0 : 1);
  return out;
}

const CategoryData& Corpus::category(std::string_view name) const {
  for (const auto& c : categories)
    if (c.name == name) return c;
  throw ConfigError("no category named '" + std::string(name) + "'");
}

void CorpusSpec::validate() const {
  if (categories < 1) throw ConfigError("corpus needs at least one category");
  if (train_per_category < 2) throw ConfigError("corpus needs at least two training images per category");
  if (test_per_category < 1) throw ConfigError("corpus needs test images");
  if (anomalous_fraction < 0.0 || anomalous_fraction > 1.0) throw ConfigError("anomalous_fraction must lie in [0, 1]");
  if (levels < 0 || levels > 16) throw ConfigError("levels out of range");
  const Index unit = Index{1} << levels;
  if (size < unit || size % unit != 0) {
    throw ConfigError("image size " + std::to_string(size) + " is not divisible by 2^" + std::to_string(levels));
  }
  if (defects.empty()) throw ConfigError("at least one defect type is required");
  if (!(min_defect_area > 0.0 && min_defect_area <= max_defect_area && max_defect_area < 1.0)) {
    throw ConfigError("defect area band is invalid");
  }
}

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 6.28318530717958647692;

// Sine from range reduction and a fixed polynomial, so results do not depend
// on the platform's libm. Absolute error below 1e-12.
double det_sin(double x) {
  x -= kTwoPi * std::floor(x / kTwoPi + 0.5);
  if (x > 0.5 * kPi) {
    x = kPi - x;
  } else if (x < -0.5 * kPi) {
    x = -kPi - x;
  }
  const double x2 = x * x;
  double p = -1.0 / 1307674368000.0;
  p = p * x2 + 1.0 / 6227020800.0;
  p = p * x2 - 1.0 / 39916800.0;
  p = p * x2 + 1.0 / 362880.0;
  p = p * x2 - 1.0 / 5040.0;
  p = p * x2 + 1.0 / 120.0;
  p = p * x2 - 1.0 / 6.0;
  p = p * x2 + 1.0;
  return x * p;
}

double det_cos(double x) { return det_sin(x + 0.5 * kPi); }

using Color = std::array<double, 3>;

// Fraction of the underlying texture that shows through a stain or scratch.
constexpr double kBlobKeep = 0.8;
constexpr double kScratchKeep = 0.75;

struct TextureParams {
  TextureFamily family = TextureFamily::grating;
  Color a{}, b{};
  double frequency = 4.0;  // cycles per image side
  double angle = 0.0;
  double cell = 8.0;       // pixels
  double noise = 0.02;
};

// Per-image draws on top of the category parameters.
struct Variation {
  double phase = 0.0;
  double offset_x = 0.0, offset_y = 0.0;
  double frequency_scale = 1.0;
  std::uint64_t lattice_seed = 0;
  std::uint64_t noise_seed = 0;
};

double hash_unit(std::uint64_t seed, std::int64_t i, std::int64_t j) {
  const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(j));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const double fx = std::floor(gx), fy = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smoothstep(gx - fx), ty = smoothstep(gy - fy);
  const double v00 = hash_unit(seed, ix, iy), v10 = hash_unit(seed, ix + 1, iy);
  const double v01 = hash_unit(seed, ix, iy + 1), v11 = hash_unit(seed, ix + 1, iy + 1);
  const double top = v00 + (v10 - v00) * tx;
  const double bottom = v01 + (v11 - v01) * tx;
  return top + (bottom - top) * ty;
}

double grating(const TextureParams& p, const Variation& v, double x, double y, double angle, Index size) {
  const double f = p.frequency * v.frequency_scale;
  const double t = kTwoPi * f * (x * det_cos(angle) + y * det_sin(angle)) / static_cast<double>(size) + v.phase;
  return 0.5 + 0.5 * det_sin(t);
}

// Mixing weight in [0, 1] between the two category colors at (x, y).
double pattern(const TextureParams& p, const Variation& v, double x, double y, Index size) {
  switch (p.family) {
    case TextureFamily::grating: return grating(p, v, x, y, p.angle, size);
    case TextureFamily::value_noise:
      return 0.7 * value_noise(v.lattice_seed, x + v.offset_x, y + v.offset_y, p.cell) +
             0.3 * value_noise(v.lattice_seed + 1, x + v.offset_x, y + v.offset_y, 0.5 * p.cell);
    case TextureFamily::checker: {
      const auto cx = static_cast<std::int64_t>(std::floor((x + v.offset_x) / p.cell));
      const auto cy = static_cast<std::int64_t>(std::floor((y + v.offset_y) / p.cell));
      return ((cx + cy) % 2 == 0) ? 0.15 : 0.85;
    }
    case TextureFamily::weave: {
      const auto cx = static_cast<std::int64_t>(std::floor((x + v.offset_x) / p.cell));
      const auto cy = static_cast<std::int64_t>(std::floor((y + v.offset_y) / p.cell));
      const double horizontal = ((cx + cy) % 2 == 0) ? 1.0 : 0.0;
      const double g1 = grating(p, v, x, y, p.angle, size);
      const double g2 = grating(p, v, x, y, p.angle + 0.5 * kPi, size);
      return horizontal * g1 + (1.0 - horizontal) * g2;
    }
  }
  return 0.0;
}

// Unquantized planar [3][H][W] rendering with pixel noise.
std::vector<double> render(const TextureParams& p, const Variation& v, Index size) {
  std::vector<double> out(static_cast<std::size_t>(3 * size * size));
  Rng noise(v.noise_seed);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double w = pattern(p, v, static_cast<double>(x), static_cast<double>(y), size);
      for (Index c = 0; c < 3; ++c) {
        // Triangular noise on [-noise, noise].
        const double n = (noise.uniform() + noise.uniform() - 1.0) * p.noise;
        out[static_cast<std::size_t>((c * size + y) * size + x)] =
            p.a[static_cast<std::size_t>(c)] + (p.b[static_cast<std::size_t>(c)] - p.a[static_cast<std::size_t>(c)]) * w + n;
      }
    }
  return out;
}

Variation draw_variation(Rng& rng, const TextureParams& p) {
  Variation v;
  v.phase = rng.uniform(0.0, kTwoPi);
  v.offset_x = rng.uniform(0.0, 2.0 * p.cell);
  v.offset_y = rng.uniform(0.0, 2.0 * p.cell);
  v.frequency_scale = rng.uniform(0.97, 1.03);
  v.lattice_seed = rng.next();
  v.noise_seed = rng.next();
  return v;
}

TextureParams draw_params(TextureFamily family, Rng& rng) {
  TextureParams p;
  p.family = family;
  for (std::size_t c = 0; c < 3; ++c) {
    p.a[c] = rng.uniform(0.1, 0.45);
    p.b[c] = rng.uniform(0.55, 0.9);
  }
  if (rng.bernoulli(0.5)) std::swap(p.a, p.b);
  p.frequency = rng.uniform(3.0, 8.0);
  p.angle = rng.uniform(0.0, kPi);
  p.cell = static_cast<double>(rng.uniform_int(6, 14));
  p.noise = rng.uniform(0.01, 0.03);
  return p;
}

Tensor to_tensor(const std::vector<std::vector<double>>& images, Index size) {
  std::vector<float> data;
  data.reserve(images.size() * static_cast<std::size_t>(3 * size * size));
  for (const auto& img : images)
    for (double v : img) data.push_back(quantize8(v));
  return Tensor({static_cast<Index>(images.size()), 3, size, size}, std::move(data));
}

// Pastes one defect of the requested type; returns the mask. Draws are
// repeated until the masked area lies in the configured band.
Mask paste_defect(std::vector<double>& img, DefectType type, const TextureParams& own, int category,
                  const CorpusSpec& spec, Rng& rng) {
  const Index size = spec.size;
  const double total = static_cast<double>(size * size);
  const auto plane = static_cast<std::size_t>(size * size);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Mask mask{size, size, std::vector<std::uint8_t>(plane, 0)};
    const double area = rng.uniform(spec.min_defect_area, spec.max_defect_area) * total;
    if (type == DefectType::blob) {
      const double aspect = rng.uniform(0.5, 2.0);
      const double r1 = std::sqrt(area / (kPi * aspect));
      const double r2 = aspect * r1;
      const double cy = rng.uniform(0.2, 0.8) * static_cast<double>(size);
      const double cx = rng.uniform(0.2, 0.8) * static_cast<double>(size);
      const double t = rng.uniform(0.0, kPi), ct = det_cos(t), st = det_sin(t);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          const double u = (dx * ct + dy * st) / r1, w = (-dx * st + dy * ct) / r2;
          if (u * u + w * w <= 1.0) mask.values[static_cast<std::size_t>(y * size + x)] = 1;
        }
    } else if (type == DefectType::scratch) {
      const double width = rng.uniform(2.0, 4.0);
      const double length = std::min(area / width, 0.9 * static_cast<double>(size));
      const double y0 = rng.uniform(0.15, 0.85) * static_cast<double>(size);
      const double x0 = rng.uniform(0.15, 0.85) * static_cast<double>(size);
      const double t = rng.uniform(0.0, kTwoPi);
      const double dy = det_sin(t), dx = det_cos(t);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double px = static_cast<double>(x) - x0, py = static_cast<double>(y) - y0;
          const double along = std::clamp(px * dx + py * dy, 0.0, length);
          const double ex = px - along * dx, ey = py - along * dy;
          if (ex * ex + ey * ey <= 0.25 * width * width) mask.values[static_cast<std::size_t>(y * size + x)] = 1;
        }
    } else {
      const double aspect = rng.uniform(0.5, 2.0);
      const auto h = std::clamp<Index>(static_cast<Index>(std::sqrt(area * aspect) + 0.5), 1, size);
      const auto w = std::clamp<Index>(static_cast<Index>(area / static_cast<double>(h) + 0.5), 1, size);
      const Index y0 = rng.uniform_int(0, size - h), x0 = rng.uniform_int(0, size - w);
      for (Index y = y0; y < y0 + h; ++y)
        for (Index x = x0; x < x0 + w; ++x) mask.values[static_cast<std::size_t>(y * size + x)] = 1;
    }
    Index count = 0;
    for (auto v : mask.values) count += v;
    const double fraction = static_cast<double>(count) / total;
    if (fraction < spec.min_defect_area || fraction > spec.max_defect_area) continue;

    if (type == DefectType::texture_swap) {
      // Another family's structure in the category's own colors.
      const auto family = static_cast<TextureFamily>((static_cast<int>(own.family) + 1 + category % 3) % 4);
      TextureParams other = draw_params(family, rng);
      other.a = own.a;
      other.b = own.b;
      const auto patch = render(other, draw_variation(rng, other), size);
      for (std::size_t i = 0; i < plane; ++i)
        if (mask.values[i])
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = patch[c * plane + i];
    } else {
      // Semi-transparent stain or scratch in a random color.
      Color fill{};
      for (std::size_t c = 0; c < 3; ++c) fill[c] = rng.uniform(0.0, 1.0);
      const double keep = type == DefectType::blob ? kBlobKeep : kScratchKeep;
      for (std::size_t i = 0; i < plane; ++i)
        if (mask.values[i])
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = keep * img[c * plane + i] + (1.0 - keep) * fill[c];
    }
    return mask;
  }
  throw ConfigError("could not place a defect inside the configured area band");
}

std::string three_digits(Index i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%03lld", static_cast<long long>(i));
  return buf;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.size = spec.size;
  corpus.provenance = "synthetic:" + std::to_string(spec.seed);
  const Index size = spec.size;
  for (int c = 0; c < spec.categories; ++c) {
    Rng rng(mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(c)));
    const auto family = static_cast<TextureFamily>(c % 4);
    const TextureParams params = draw_params(family, rng);
    CategoryData cat;
    cat.name = std::string(to_string(family)) + "_" + std::to_string(c);

    std::vector<std::vector<double>> train;
    for (int i = 0; i < spec.train_per_category; ++i) train.push_back(render(params, draw_variation(rng, params), size));
    cat.train = to_tensor(train, size);

    const int anomalous = static_cast<int>(std::lround(spec.anomalous_fraction * spec.test_per_category));
    std::vector<int> is_anomalous(static_cast<std::size_t>(spec.test_per_category), 0);
    std::fill(is_anomalous.begin(), is_anomalous.begin() + anomalous, 1);
    rng.shuffle(is_anomalous.begin(), is_anomalous.end());
    std::vector<std::vector<double>> test;
    int defect_index = 0;
    for (int i = 0; i < spec.test_per_category; ++i) {
      auto img = render(params, draw_variation(rng, params), size);
      if (is_anomalous[static_cast<std::size_t>(i)]) {
        const DefectType type = spec.defects[static_cast<std::size_t>(defect_index++) % spec.defects.size()];
        cat.masks.push_back(paste_defect(img, type, params, c, spec, rng));
        cat.defect_types.emplace_back(to_string(type));
      } else {
        cat.masks.push_back({size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size), 0)});
        cat.defect_types.emplace_back("good");
      }
      test.push_back(std::move(img));
    }
    cat.test = to_tensor(test, size);
    corpus.categories.push_back(std::move(cat));
  }
  return corpus;
}

LabeledImages generate_pretrain_corpus(const PretrainCorpusSpec& spec) {
  if (spec.images_per_class < 1) throw ConfigError("images_per_class must be positive");
  if (spec.size < 8) throw ConfigError("pretraining images must be at least 8 pixels wide");
  LabeledImages out;
  out.num_classes = 4;
  std::vector<std::vector<double>> images;
  Rng rng(mix_seed(spec.seed, 77));
  for (int i = 0; i < spec.images_per_class; ++i)
    for (int k = 0; k < out.num_classes; ++k) {
      const TextureParams p = draw_params(static_cast<TextureFamily>(k), rng);
      images.push_back(render(p, draw_variation(rng, p), spec.size));
      out.labels.push_back(k);
    }
  out.images = to_tensor(images, spec.size);
  return out;
}

namespace {

namespace fs = std::filesystem;

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor load_resized(const fs::path& file, Index size) {
  const Image8 img = read_png(file);
  const Tensor chw = from_image8(img, 3);
  if (img.height == size && img.width == size) return chw;
  return bilinear_resize(chw, size, size);
}

Mask load_mask(const fs::path& file, Index size) {
  const Image8 img = read_png(file);
  Mask m{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size), 0)};
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      // Nearest neighbour under the pixel-center convention.
      const Index sy = std::min(img.height - 1, (2 * y + 1) * img.height / (2 * size));
      const Index sx = std::min(img.width - 1, (2 * x + 1) * img.width / (2 * size));
      m.values[static_cast<std::size_t>(y * size + x)] =
          img.pixels[static_cast<std::size_t>((sy * img.width + sx) * img.channels)] > 127 ? 1 : 0;
    }
  return m;
}

Tensor stack_images(const std::vector<Tensor>& images, Index size) {
  if (images.empty()) return Tensor({0, 3, size, size});
  return stack<float>(std::span<const Tensor>(images));
}

}  // namespace

Corpus load_mvtec_layout(const std::filesystem::path& root, Index size) {
  if (size < 1) throw ConfigError("target size must be positive");
  if (!fs::is_directory(root)) throw IngestionError("corpus directory not found: " + root.string());
  Corpus corpus;
  corpus.size = size;
  corpus.provenance = root.string();
  for (const auto& dir : sorted_entries(root, true)) {
    CategoryData cat;
    cat.name = dir.filename().string();
    std::vector<Tensor> train, test;
    for (const auto& f : sorted_entries(dir / "train" / "good", false)) train.push_back(load_resized(f, size));
    if (train.empty()) throw IngestionError("no training images in " + (dir / "train" / "good").string());
    for (const auto& defect_dir : sorted_entries(dir / "test", true)) {
      const std::string defect = defect_dir.filename().string();
      for (const auto& f : sorted_entries(defect_dir, false)) {
        test.push_back(load_resized(f, size));
        cat.defect_types.push_back(defect);
        if (defect == "good") {
          cat.masks.push_back({size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size), 0)});
          continue;
        }
        const fs::path mask_file = dir / "ground_truth" / defect / (f.stem().string() + "_mask.png");
        if (!fs::is_regular_file(mask_file)) {
          throw IngestionError("missing ground-truth mask " + mask_file.string() + " for " + f.string());
        }
        cat.masks.push_back(load_mask(mask_file, size));
      }
    }
    cat.train = stack_images(train, size);
    cat.test = stack_images(test, size);
    corpus.categories.push_back(std::move(cat));
  }
  if (corpus.categories.empty()) throw IngestionError("no categories under " + root.string());
  return corpus;
}

void export_mvtec_layout(const Corpus& corpus, const std::filesystem::path& root) {
  const Index size = corpus.size;
  const Shape image_shape{3, size, size};
  for (const auto& cat : corpus.categories) {
    const fs::path dir = root / cat.name;
    fs::create_directories(dir / "train" / "good");
    for (Index i = 0; i < cat.train.dim(0); ++i) {
      write_png(dir / "train" / "good" / (three_digits(i) + ".png"), to_image8(slice_batch(cat.train, i, 1).reshaped(image_shape)));
    }
    std::vector<Index> per_defect_counter;
    std::vector<std::string> seen;
    for (Index i = 0; i < cat.test.dim(0); ++i) {
      const auto& defect = cat.defect_types[static_cast<std::size_t>(i)];
      auto it = std::find(seen.begin(), seen.end(), defect);
      if (it == seen.end()) {
        seen.push_back(defect);
        per_defect_counter.push_back(0);
        it = seen.end() - 1;
      }
      const Index k = per_defect_counter[static_cast<std::size_t>(it - seen.begin())]++;
      fs::create_directories(dir / "test" / defect);
      write_png(dir / "test" / defect / (three_digits(k) + ".png"), to_image8(slice_batch(cat.test, i, 1).reshaped(image_shape)));
      if (defect == "good") continue;
      fs::create_directories(dir / "ground_truth" / defect);
      Image8 mask{size, size, 1, {}};
      for (auto v : cat.masks[static_cast<std::size_t>(i)].values) mask.pixels.push_back(v ? 255 : 0);
      write_png(dir / "ground_truth" / defect / (three_digits(k) + "_mask.png"), mask);
    }
  }
}

}  // namespace gadft
