// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// CPU reference of the two-pass deferred renderer: z-buffered rasterization of
// the baked mesh into a supersampled 12-channel feature image, then a box
// downsample and one shader evaluation per covered pixel.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "meshfield/baker.hpp"
#include "meshfield/camera.hpp"
#include "meshfield/image.hpp"

namespace meshfield {

inline constexpr double kNearPlane = 1e-4;

/// Per pixel: 8 features, binary alpha, 3 direction components.
struct FeatureImage {
  static constexpr int kChannels = 12;
  static constexpr int kAlpha = 8;
  static constexpr int kDirection = 9;

  int width = 0;
  int height = 0;
  std::vector<float> data;

  FeatureImage() = default;
  FeatureImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * kChannels, 0.0f) {}
  float* at(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * kChannels; }
  const float* at(int x, int y) const { return data.data() + (static_cast<std::size_t>(y) * width + x) * kChannels; }
  bool operator==(const FeatureImage&) const = default;
};

struct RasterOptions {
  int supersample = 2;
  int threads = 1;
  /// Triangle submission order; empty means asset order.
  std::span<const std::uint32_t> order = {};
};

/// Bilinear fetch of the 8 stored channels (0..255 scale) at a texture coordinate.
std::array<float, 8> sample_features(const BakedAsset& asset, std::uint32_t page, float u, float v);

FeatureImage rasterize(const BakedAsset& asset, const Camera& camera, const RasterOptions& options = {});
Image deferred_shade(const FeatureImage& features, std::span<const ShaderLayer> shader,
                     const std::array<float, 3>& background, int supersample = 2, int threads = 1);
Image render(const BakedAsset& asset, const Camera& camera, int threads = 1, int supersample = 2);

struct BenchRow {
  int frame = 0;
  double raster_ms = 0.0;
  double shade_ms = 0.0;
  double total_ms = 0.0;
};

struct BenchStats {
  std::vector<BenchRow> rows;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double mean_raster_ms = 0.0;
  double mean_shade_ms = 0.0;
};

BenchStats bench(const BakedAsset& asset, std::span<const Camera> cameras, int threads = 1);

}  // namespace meshfield
