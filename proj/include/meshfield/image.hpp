// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace meshfield {

/// Linear RGB image, float channels in [0, 1], row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  float* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* pixel(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool operator==(const Image&) const = default;
};

/// 8-bit image with 3 or 4 interleaved channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 4;
  std::vector<std::uint8_t> data;

  std::uint8_t* texel(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
  const std::uint8_t* texel(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  bool operator==(const Image8&) const = default;
};

/// Lossless 8-bit PNG with 3 or 4 channels. Throws IoError with the path.
/// round(255 v) with ties away from zero, clamped to [0, 255].
std::uint8_t quantize_unit(double v);
inline double dequantize_unit(std::uint8_t q) { return q / 255.0; }

void write_png(const std::filesystem::path& path, const Image8& image);
/// Reads 8-bit gray/RGB/RGBA PNGs, expanding to 3 or 4 channels.
Image8 read_png(const std::filesystem::path& path);

/// round(255 v) per channel, clamped to [0, 255].
Image8 to_image8(const Image& image);
/// RGB from 3-channel data, or RGBA composited over black.
Image to_linear(const Image8& image);

/// 10 log10(1 / MSE) over all channels; +inf for identical images.
/// Throws ConfigError on dimension mismatch.
double psnr(const Image& a, const Image& b);
/// Mean absolute difference per channel.
double mean_abs_diff(const Image& a, const Image& b);

}  // namespace meshfield
