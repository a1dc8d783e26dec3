// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "meshfield/math.hpp"
#include "meshfield/quadrature.hpp"

namespace meshfield {

/// Pinhole camera in the usual NeRF convention: the camera looks down -z with
/// +x right and +y up; pose maps camera to world.
struct Camera {
  int width = 0;
  int height = 0;
  double focal = 0.0;
  Mat4 pose = Mat4::Identity();

  /// focal = 0.5 * width / tan(0.5 * camera_angle_x)
  static Camera from_fov(int width, int height, double camera_angle_x, const Mat4& pose);

  Vec3 position() const { return pose.block<3, 1>(0, 3); }
  Mat3 rotation() const { return pose.block<3, 3>(0, 0); }
  /// Ray through continuous pixel coordinates (pixel centers at x + 0.5).
  Ray ray(double px, double py) const;
  /// Throws ConfigError unless the rotation is orthonormal within 1e-6.
  void validate() const;
};

/// Sub-pixel offsets for an s x s grid: (m + 0.5) / s per axis, row-major.
std::vector<std::pair<double, double>> subpixel_offsets(int supersample);

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

/// Cameras on a circle of the given radius and height around the origin.
std::vector<Camera> orbit_cameras(int width, int height, double camera_angle_x, double radius, double height_y,
                                  int frames);

}  // namespace meshfield
