// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pbsr/tensor.hpp"

namespace pbsr {

/// 8-bit interleaved raster as decoded from a PNG.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decodes to the requested channel count (1 or 3), converting if needed.
/// Throws FormatError on malformed data.
Raster decode_png(std::span<const std::uint8_t> bytes, std::size_t channels);
std::vector<std::uint8_t> encode_png(const Raster& raster);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// RGB PNG -> (1,3,H,W) in [0,1].
Tensor read_rgb(const std::filesystem::path& path);
/// (1,3,H,W) -> RGB PNG; values are clipped to [0,1] and rounded.
void write_rgb(const std::filesystem::path& path, const Tensor& image);

/// Gray PNG holding only 0 and 255 -> (1,1,H,W) of {0,1}. Any other value
/// raises std::invalid_argument("mask not binary").
Tensor mask_from_raster(const Raster& raster);
Tensor read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Tensor& mask);

Raster to_raster(const Tensor& image);
Tensor from_raster(const Raster& raster);

}  // namespace pbsr
