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
#include <vector>

#include "gadft/tensor.hpp"

namespace gadft {

/// 8-bit interleaved image.
struct Image8 {
  Index height = 0;
  Index width = 0;
  Index channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decodes any PNG to 8-bit gray or RGB (alpha dropped, palettes expanded,
/// 16-bit reduced). Throws IngestionError naming the file on failure.
Image8 read_png(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image8& image);

/// [C,H,W] in [0, 1] <-> 8-bit, rounding to the nearest level.
Image8 to_image8(const Tensor& chw);
/// Gray inputs are replicated to `channels` channels.
Tensor from_image8(const Image8& image, Index channels = 3);

}  // namespace gadft
