/*
 * Copyright 2026 The ddag Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ddag {

// Interleaved 8-bit image (row-major, channels innermost).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Writes 8-bit gray (1 channel) or RGB (3 channels) PNG. Output bytes are a
// pure function of the image. Throws IoError.
void write_png(const std::filesystem::path& path, const Image8& image);

// Reads an 8-bit gray or RGB PNG. Throws IoError on a missing or corrupt file.
Image8 read_png(const std::filesystem::path& path);

}  // namespace ddag
