// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/dataset.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "meshfield/error.hpp"

namespace meshfield {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<View> load_split(const fs::path& dir, const fs::path& file, double* angle_out) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("failed to parse " + file.string() + ": " + e.what());
  }
  if (!doc.contains("camera_angle_x") || !doc.contains("frames") || !doc["frames"].is_array())
    throw IoError(file.string() + ": missing camera_angle_x or frames");
  const double angle = doc["camera_angle_x"].get<double>();
  if (angle_out) *angle_out = angle;
  std::vector<View> views;
  const auto& frames = doc["frames"];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string where = file.filename().string() + " frame " + std::to_string(i);
    if (!f.is_object() || !f.contains("file_path") || !f.contains("transform_matrix"))
      throw IoError(where + ": missing file_path or transform_matrix");
    const auto& m = f["transform_matrix"];
    if (!m.is_array() || m.size() != 4) throw IoError(where + ": transform_matrix must be 4x4");
    Mat4 pose;
    try {
      for (int r = 0; r < 4; ++r) {
        if (!m[r].is_array() || m[r].size() != 4) throw IoError(where + ": transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) pose(r, c) = m[r][c].get<double>();
      }
    } catch (const json::exception&) {
      throw IoError(where + ": transform_matrix entries must be numbers");
    }
    fs::path image_path = dir / f["file_path"].get<std::string>();
    if (!image_path.has_extension()) image_path += ".png";
    Image8 raw;
    try {
      raw = read_png(image_path);
    } catch (const IoError& e) {
      throw IoError(where + ": " + e.what());
    }
    View v;
    v.name = f["file_path"].get<std::string>();
    v.image = to_linear(raw);
    v.camera = Camera::from_fov(raw.width, raw.height, angle, pose);
    try {
      v.camera.validate();
    } catch (const ConfigError& e) {
      throw IoError(where + ": " + e.what());
    }
    views.push_back(std::move(v));
  }
  return views;
}

void write_split(const fs::path& dir, const std::string& split, const std::vector<View>& views, double angle) {
  fs::create_directories(dir / split);
  json doc;
  doc["camera_angle_x"] = angle;
  doc["frames"] = json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::string rel = "./" + split + "/r_" + std::to_string(i);
    write_png(dir / split / ("r_" + std::to_string(i) + ".png"), to_image8(views[i].image));
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
      json row = json::array();
      for (int c = 0; c < 4; ++c) row.push_back(views[i].camera.pose(r, c));
      m.push_back(row);
    }
    doc["frames"].push_back({{"file_path", rel}, {"transform_matrix", m}});
  }
  std::ofstream out(dir / ("transforms_" + split + ".json"));
  if (!out) throw IoError("cannot write " + (dir / ("transforms_" + split + ".json")).string());
  out << doc.dump(2) << "\n";
}

}  // namespace

Dataset load_transforms(const fs::path& dir) {
  Dataset d;
  d.train = load_split(dir, dir / "transforms_train.json", &d.camera_angle_x);
  if (fs::exists(dir / "transforms_test.json")) d.test = load_split(dir, dir / "transforms_test.json", nullptr);
  return d;
}

void write_transforms(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  write_split(dir, "train", dataset.train, dataset.camera_angle_x);
  write_split(dir, "test", dataset.test, dataset.camera_angle_x);
}

// ---- toy scenes ------------------------------------------------------------------

ToyScene toy_scene(std::string_view name) {
  ToyScene s;
  if (name == "empty") return s;
  if (name == "sphere") {
    s.spheres.push_back({Vec3::Zero(), 0.6, Vec3(0.8, 0.5, 0.3), 0.0, 16.0});
    return s;
  }
  if (name == "spheres") {
    s.spheres.push_back({Vec3(0.45, -0.1, 0.0), 0.45, Vec3(0.85, 0.35, 0.25), 0.0, 16.0});
    s.spheres.push_back({Vec3(-0.4, 0.05, 0.15), 0.5, Vec3(0.25, 0.45, 0.85), 0.5, 24.0});
    s.spheres.push_back({Vec3(0.0, 0.55, -0.35), 0.25, Vec3(0.35, 0.8, 0.35), 0.2, 8.0});
    return s;
  }
  throw ConfigError("unknown toy scene '" + std::string(name) + "'");
}

Vec3 toy_trace(const ToyScene& scene, const Ray& ray) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 normal, albedo;
  double ks = 0.0, shininess = 1.0;
  for (const auto& s : scene.spheres) {
    const Vec3 oc = ray.origin - s.center;
    const double b = oc.dot(ray.direction);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - c;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 1e-9) t = -b + sq;
    if (t <= 1e-9 || t >= best) continue;
    best = t;
    normal = (ray.at(t) - s.center).normalized();
    albedo = s.albedo;
    ks = s.specular;
    shininess = s.shininess;
  }
  for (const auto& p : scene.planes) {
    const double denom = p.normal.dot(ray.direction);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (p.offset - p.normal.dot(ray.origin)) / denom;
    if (t <= 1e-9 || t >= best) continue;
    best = t;
    normal = denom < 0.0 ? p.normal : Vec3(-p.normal);
    albedo = p.albedo;
    ks = p.specular;
    shininess = p.shininess;
  }
  if (!std::isfinite(best)) return Vec3::Zero();
  const Vec3& l = scene.light_dir;
  const double diffuse = std::max(0.0, normal.dot(l));
  Vec3 color = albedo * (scene.ambient + (1.0 - scene.ambient) * diffuse);
  if (ks > 0.0 && diffuse > 0.0) {
    const Vec3 r = 2.0 * normal.dot(l) * normal - l;
    color += Vec3::Constant(ks * std::pow(std::max(0.0, r.dot(-ray.direction)), shininess));
  }
  return color.cwiseMax(0.0).cwiseMin(1.0);
}

Image toy_ground_truth(const ToyScene& scene, const Camera& camera, int supersample) {
  Image img(camera.width, camera.height);
  const auto offsets = subpixel_offsets(supersample);
  const double inv = 1.0 / static_cast<double>(offsets.size());
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (const auto& [ox, oy] : offsets) acc += toy_trace(scene, camera.ray(x + ox, y + oy));
      acc *= inv;
      for (int c = 0; c < 3; ++c) img.pixel(x, y)[c] = static_cast<float>(acc[c]);
    }
  return img;
}

namespace {

std::vector<Vec3> spiral(int n, double radius, double phase, double y_lo, double y_hi) {
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) {
    const double y = y_lo + (y_hi - y_lo) * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double a = phase + golden * i;
    out.emplace_back(radius * r * std::cos(a), radius * y, radius * r * std::sin(a));
  }
  return out;
}

}  // namespace

Dataset make_toy_dataset(const ToyScene& scene, const ToyViewConfig& config) {
  Dataset d;
  d.camera_angle_x = config.camera_angle_x;
  auto make = [&](const std::vector<Vec3>& eyes, const std::string& prefix, std::vector<View>& out) {
    for (std::size_t i = 0; i < eyes.size(); ++i) {
      View v;
      v.name = prefix + std::to_string(i);
      v.camera = Camera::from_fov(config.width, config.height, config.camera_angle_x,
                                  look_at(eyes[i], Vec3::Zero(), Vec3::UnitY()));
      v.image = toy_ground_truth(scene, v.camera, config.supersample);
      out.push_back(std::move(v));
    }
  };
  make(spiral(config.train_views, config.radius, 0.0, -0.45, 0.85), "train_", d.train);
  make(spiral(config.test_views, config.radius, 1.3, -0.35, 0.75), "test_", d.test);
  return d;
}

}  // namespace meshfield
