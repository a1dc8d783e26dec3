// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "meshfield/camera.hpp"
#include "meshfield/image.hpp"

namespace meshfield {

struct View {
  std::string name;
  Camera camera;
  Image image;
};

struct Dataset {
  std::vector<View> train;
  std::vector<View> test;
  double camera_angle_x = 0.0;
};

/// Reads transforms_train.json (required) and transforms_test.json (optional)
/// from a NeRF-synthetic style directory. Images are linear RGB in [0, 1];
/// RGBA images are composited over black. Errors name the offending frame.
Dataset load_transforms(const std::filesystem::path& dir);
/// Writes the dataset back in the same layout (PNG frames under train/ and test/).
void write_transforms(const std::filesystem::path& dir, const Dataset& dataset);

// ---- analytic toy scenes -----------------------------------------------------

struct ToySphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
  Vec3 albedo = Vec3::Constant(0.8);
  double specular = 0.0;
  double shininess = 16.0;
};

struct ToyPlane {
  Vec3 normal = Vec3::UnitY();
  double offset = 0.0;
  Vec3 albedo = Vec3::Constant(0.8);
  double specular = 0.0;
  double shininess = 16.0;
};

/// Lambertian surfaces with one Phong lobe, a directional light and a black
/// background.
struct ToyScene {
  std::vector<ToySphere> spheres;
  std::vector<ToyPlane> planes;
  Vec3 light_dir = Vec3(0.4, 0.8, 0.45).normalized();
  double ambient = 0.15;
};

/// Known names: "spheres" (two diffuse and one specular sphere), "sphere"
/// (single diffuse sphere at the origin), "empty".
ToyScene toy_scene(std::string_view name);

/// Radiance of one primary ray.
Vec3 toy_trace(const ToyScene& scene, const Ray& ray);
/// Mean of s x s sub-pixel rays per pixel, using the training sub-pixel grid.
Image toy_ground_truth(const ToyScene& scene, const Camera& camera, int supersample = 2);

struct ToyViewConfig {
  int train_views = 20;
  int test_views = 5;
  int width = 64;
  int height = 64;
  double camera_angle_x = 0.75;
  double radius = 3.0;
  int supersample = 2;
};

/// Cameras on interleaved spirals around the origin, rendered with the oracle.
Dataset make_toy_dataset(const ToyScene& scene, const ToyViewConfig& config);

}  // namespace meshfield
