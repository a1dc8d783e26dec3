// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// Discretization of a trained binary model into a textured mesh: visibility
// culling, per-quad K x K texture patches packed into power-of-two pages,
// 8-bit feature textures with opacity squeezed into channel 0, and the
// OBJ / PNG / mlp.json asset format.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "meshfield/image.hpp"
#include "meshfield/mlp.hpp"
#include "meshfield/trainer.hpp"

namespace meshfield {

inline constexpr int kAssetFormatVersion = 1;
inline constexpr int kDefaultPatch = 17;
inline constexpr int kMaxPageDim = 4096;

/// Quads owning the first opaque hit of at least one training sub-pixel ray,
/// ascending.
std::vector<std::uint32_t> visible_quads(const TrainState& state, std::span<const Camera> cameras,
                                         int supersample = 2, int threads = 1);

struct PatchPlacement {
  std::uint32_t page = 0;
  int x0 = 0;
  int y0 = 0;
};

struct AtlasLayout {
  int K = kDefaultPatch;
  /// Square power-of-two page edge per page.
  std::vector<int> page_dims;
  /// One entry per packed quad, in packing order.
  std::vector<PatchPlacement> placements;

  std::size_t num_pages() const { return page_dims.size(); }
};

/// Row-major packing of n patches. Full pages are max_dim wide; the last page
/// uses the smallest power-of-two edge that holds the remainder.
AtlasLayout allocate_atlas(std::size_t n_quads, int K = kDefaultPatch, int max_dim = kMaxPageDim);

/// Texel (a, b) of a patch maps to quad parameters (a / (K-1), b / (K-1)).
inline double texel_param(int a, int K) { return static_cast<double>(a) / (K - 1); }
/// Bilinear patch through the quad corners in (s,t) order (0,0),(1,0),(0,1),(1,1).
Vec3 quad_point(const std::array<Vec3, 4>& corners, double s, double t);

/// Stored texel bytes for one sample: every feature rounded to 8 bits, then
/// channel 0 forced to 0 for transparent texels and lifted to at least 1 for
/// opaque ones, so opacity is read back from channel 0 alone.
std::array<std::uint8_t, 8> encode_texel(bool opaque, const Features& features);
inline bool texel_opaque(std::uint8_t channel0) { return channel0 != 0; }

/// Shader layer narrowed to f32; weights are row-major [in][out].
struct ShaderLayer {
  int in = 0;
  int out = 0;
  std::vector<float> weights;
  std::vector<float> bias;
  Activation activation = Activation::none;

  bool operator==(const ShaderLayer&) const = default;
};

std::vector<ShaderLayer> narrow_shader(const Mlp& shader);
/// f32 evaluation of the shader layers.
std::array<float, 3> eval_shader(std::span<const ShaderLayer> layers, std::span<const float> input);

struct BakedAsset {
  int format_version = kAssetFormatVersion;
  int K = kDefaultPatch;
  int P = 0;
  std::string scene_kind = "synthetic";
  std::array<float, 3> background{0.0f, 0.0f, 0.0f};
  /// Hex FNV-1a hash of the training config.
  std::string config_hash;

  /// Four corners per quad.
  std::vector<std::array<float, 3>> positions;
  std::vector<std::array<float, 2>> uvs;
  /// Indices into positions and uvs alike; two per quad.
  std::vector<std::array<std::uint32_t, 3>> triangles;
  /// Texture page of every quad.
  std::vector<std::uint32_t> quad_pages;
  /// RGBA pages: feat0 holds channels 0..3, feat1 channels 4..7.
  std::vector<Image8> feat0;
  std::vector<Image8> feat1;
  std::vector<ShaderLayer> shader;

  std::size_t num_pages() const { return feat0.size(); }
  bool operator==(const BakedAsset&) const = default;
};

struct BakeOptions {
  int K = kDefaultPatch;
  int max_dim = kMaxPageDim;
  int supersample = 2;
  int threads = 1;
};

/// Textures every quad in `quads` (ascending) into `layout`.
BakedAsset bake_quads(const TrainState& state, std::span<const std::uint32_t> quads, const AtlasLayout& layout,
                      int threads = 1);
/// Visibility, atlas and textures from the training cameras.
BakedAsset bake(const TrainState& state, std::span<const Camera> train_cameras, const BakeOptions& options = {});

void export_asset(const BakedAsset& asset, const std::filesystem::path& dir);
/// Throws IoError naming the file on any read or parse failure, and on a
/// format version other than kAssetFormatVersion.
BakedAsset import_asset(const std::filesystem::path& dir);

/// Every violated asset invariant as a readable line; empty when valid.
std::vector<std::string> validate_asset(const BakedAsset& asset);

}  // namespace meshfield
