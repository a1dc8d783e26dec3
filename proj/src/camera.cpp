// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/camera.hpp"

#include <cmath>
#include <numbers>

#include "meshfield/error.hpp"

namespace meshfield {

Camera Camera::from_fov(int width, int height, double camera_angle_x, const Mat4& pose) {
  Camera c;
  c.width = width;
  c.height = height;
  c.focal = 0.5 * width / std::tan(0.5 * camera_angle_x);
  c.pose = pose;
  return c;
}

Ray Camera::ray(double px, double py) const {
  const Vec3 dir_cam((px - 0.5 * width) / focal, -(py - 0.5 * height) / focal, -1.0);
  return {position(), (rotation() * dir_cam).normalized()};
}

void Camera::validate() const {
  if (width <= 0 || height <= 0 || !(focal > 0.0)) throw ConfigError("camera: invalid intrinsics");
  const Mat3 r = rotation();
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw ConfigError("camera: pose rotation is not orthonormal");
}

std::vector<std::pair<double, double>> subpixel_offsets(int s) {
  if (s < 1) throw ConfigError("supersample factor must be >= 1");
  std::vector<std::pair<double, double>> out;
  for (int my = 0; my < s; ++my)
    for (int mx = 0; mx < s; ++mx) out.emplace_back((mx + 0.5) / s, (my + 0.5) / s);
  return out;
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 back = (eye - target).normalized();
  const Vec3 right = up.cross(back).normalized();
  const Vec3 true_up = back.cross(right);
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 0) = right;
  m.block<3, 1>(0, 1) = true_up;
  m.block<3, 1>(0, 2) = back;
  m.block<3, 1>(0, 3) = eye;
  return m;
}

std::vector<Camera> orbit_cameras(int width, int height, double camera_angle_x, double radius, double height_y,
                                  int frames) {
  std::vector<Camera> out;
  for (int f = 0; f < frames; ++f) {
    const double a = 2.0 * std::numbers::pi * f / frames;
    const Vec3 eye(radius * std::sin(a), height_y, radius * std::cos(a));
    out.push_back(Camera::from_fov(width, height, camera_angle_x, look_at(eye, Vec3::Zero(), Vec3::UnitY())));
  }
  return out;
}

}  // namespace meshfield
