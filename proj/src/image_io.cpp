// SPDX-License-Identifier: Apache-2.0

#include "pbsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "pbsr/errors.hpp"

namespace pbsr {

namespace {

png_uint_32 format_for(std::size_t channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw std::invalid_argument("unsupported channel count " + std::to_string(channels));
}

struct ImageGuard {
  png_image image{};
  ImageGuard() { image.version = PNG_IMAGE_VERSION; }
  ~ImageGuard() { png_image_free(&image); }
};

}  // namespace

Raster decode_png(std::span<const std::uint8_t> bytes, std::size_t channels) {
  ImageGuard g;
  if (!png_image_begin_read_from_memory(&g.image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG decode failed: ") + g.image.message, 0);
  }
  g.image.format = format_for(channels);
  Raster r{g.image.width, g.image.height, channels, {}};
  r.pixels.resize(PNG_IMAGE_SIZE(g.image));
  if (!png_image_finish_read(&g.image, nullptr, r.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG decode failed: ") + g.image.message, 0);
  }
  return r;
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
  if (raster.pixels.size() != raster.width * raster.height * raster.channels) {
    throw std::invalid_argument("raster buffer does not match its extents");
  }
  ImageGuard g;
  g.image.width = static_cast<png_uint_32>(raster.width);
  g.image.height = static_cast<png_uint_32>(raster.height);
  g.image.format = format_for(raster.channels);
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(g.image, size, 0, raster.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + g.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&g.image, out.data(), &size, 0, raster.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + g.image.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Raster to_raster(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw std::invalid_argument("expected (1,1|3,H,W), got " + s.str());
  Raster r{s.w, s.h, s.c, std::vector<std::uint8_t>(s.h * s.w * s.c)};
  const auto v = image.data();
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const float x = std::clamp(v[c * s.plane() + i], 0.0f, 1.0f);
      r.pixels[i * s.c + c] = static_cast<std::uint8_t>(std::lround(x * 255.0f));
    }
  }
  return r;
}

Tensor from_raster(const Raster& r) {
  const Shape s{1, r.channels, r.height, r.width};
  std::vector<float> v(s.numel());
  for (std::size_t c = 0; c < r.channels; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) v[c * s.plane() + i] = r.pixels[i * r.channels + c] / 255.0f;
  }
  return Tensor::from_data(s, std::move(v));
}

Tensor read_rgb(const std::filesystem::path& path) { return from_raster(decode_png(read_file(path), 3)); }

void write_rgb(const std::filesystem::path& path, const Tensor& image) {
  if (image.shape().c != 3) throw std::invalid_argument("write_rgb expects 3 channels");
  write_file_atomic(path, encode_png(to_raster(image)));
}

Tensor mask_from_raster(const Raster& r) {
  if (r.channels != 1) throw std::invalid_argument("mask must be single-channel");
  std::vector<float> v(r.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (r.pixels[i] != 0 && r.pixels[i] != 255) throw std::invalid_argument("mask not binary");
    v[i] = r.pixels[i] == 255 ? 1.0f : 0.0f;
  }
  return Tensor::from_data({1, 1, r.height, r.width}, std::move(v));
}

Tensor read_mask(const std::filesystem::path& path) { return mask_from_raster(decode_png(read_file(path), 1)); }

void write_mask(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.shape().c != 1) throw std::invalid_argument("write_mask expects 1 channel");
  for (float x : mask.data()) {
    if (x != 0.0f && x != 1.0f) throw std::invalid_argument("mask not binary");
  }
  write_file_atomic(path, encode_png(to_raster(mask)));
}

}  // namespace pbsr
