// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/quadrature.hpp"

#include <algorithm>
#include <cmath>

#include "meshfield/error.hpp"

namespace meshfield {

namespace {

struct Plane {
  Vec3 normal;
  double offset;
};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// World-space plane holding the normalized lattice plane p[axis] = c.
Plane lattice_plane(const LatticeConfig& config, int axis, double c) {
  return std::visit(overloaded{[&](const SyntheticScene& s) -> Plane { return {Vec3::Unit(axis), s.scale * c}; },
                               [&](const ForwardFacingScene& s) -> Plane {
                                 if (axis == 2) return {Vec3::UnitZ(), std::exp(forward_facing_rate() * (c + 0.5))};
                                 Vec3 n = Vec3::Unit(axis);
                                 n.z() = -(axis == 0 ? s.u : s.v) * c;
                                 return {n, 0.0};
                               },
                               [&](const UnboundedScene&) -> Plane { return {Vec3::Unit(axis), c}; }},
                    config.kind);
}

bool inside_unit_cube(const Vec3& p) {
  return p.x() >= -0.5 && p.x() <= 0.5 && p.y() >= -0.5 && p.y() <= 0.5 && p.z() >= -0.5 && p.z() <= 0.5;
}

void sort_and_unique(std::vector<QuadratureSample>& hits) {
  std::sort(hits.begin(), hits.end(), [](const QuadratureSample& a, const QuadratureSample& b) {
    return a.t < b.t || (a.t == b.t && a.triangle < b.triangle);
  });
  // Hits on a shared edge land on (numerically) the same depth; keep one.
  std::size_t out = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (out > 0 && hits[i].t - hits[out - 1].t <= 1e-12 * std::max(1.0, hits[i].t)) continue;
    hits[out++] = hits[i];
  }
  hits.resize(out);
}

}  // namespace

std::optional<TriangleHit> ray_triangle(const Ray& ray, const Vec3& v0, const Vec3& v1, const Vec3& v2) {
  const Vec3 e1 = v1 - v0;
  const Vec3 e2 = v2 - v0;
  const double area2 = e1.cross(e2).norm();
  if (!(area2 > 0.0)) return std::nullopt;
  const Vec3 pvec = ray.direction.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) <= 1e-12 * area2) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tvec = ray.origin - v0;
  const double u = tvec.dot(pvec) * inv;
  if (u < -kBarycentricEps || u > 1.0 + kBarycentricEps) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = ray.direction.dot(qvec) * inv;
  if (v < -kBarycentricEps || u + v > 1.0 + kBarycentricEps) return std::nullopt;
  const double t = e2.dot(qvec) * inv;
  if (!(t > kRayTMin)) return std::nullopt;
  Vec3 b(1.0 - u - v, u, v);
  b = b.cwiseMax(0.0).cwiseMin(1.0);
  b /= b.sum();
  return TriangleHit{t, b};
}

std::vector<std::uint32_t> ray_lattice_voxels(const Ray& ray, const LatticeConfig& config) {
  const int P = config.P;
  std::vector<double> ts;
  ts.reserve(3 * (P + 1) + 1);
  ts.push_back(0.0);
  for (int axis = 0; axis < 3; ++axis) {
    for (int m = 0; m <= P; ++m) {
      const Plane plane = lattice_plane(config, axis, -0.5 + static_cast<double>(m) / P);
      const double denom = plane.normal.dot(ray.direction);
      if (std::abs(denom) < 1e-15) continue;
      const double t = (plane.offset - plane.normal.dot(ray.origin)) / denom;
      if (t > 0.0 && std::isfinite(t)) ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());
  std::vector<std::uint32_t> voxels;
  for (std::size_t s = 0; s + 1 < ts.size(); ++s) {
    if (!(ts[s + 1] > ts[s])) continue;
    const auto q = unwarp_point(config, ray.at(0.5 * (ts[s] + ts[s + 1])));
    if (!q || !inside_unit_cube(*q)) continue;
    const VoxelIndex v = voxel_containing(P, *q);
    const std::uint32_t id = voxel_id(P, v.i, v.j, v.k);
    if (voxels.empty() || voxels.back() != id) voxels.push_back(id);
  }
  return voxels;
}

std::vector<QuadratureSample> ray_mesh_intersections(const Ray& ray, std::span<const std::uint32_t> voxels,
                                                     const QuadTopology& topology, std::span<const Vec3> positions,
                                                     std::size_t limit) {
  if (limit == 0) throw ConfigError("ray_mesh_intersections: limit must be >= 1");
  std::vector<std::uint32_t> candidates;
  candidates.reserve(voxels.size() * 24);
  for (auto v : voxels)
    for (auto q : topology.quads_of_vertex(v)) {
      candidates.push_back(2 * q);
      candidates.push_back(2 * q + 1);
    }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<QuadratureSample> hits;
  for (auto tri : candidates) {
    const auto vs = topology.triangle(tri);
    if (auto h = ray_triangle(ray, positions[vs[0]], positions[vs[1]], positions[vs[2]]))
      hits.push_back({h->t, tri, h->bary, ray.at(h->t)});
  }
  sort_and_unique(hits);
  if (hits.size() > limit) hits.resize(limit);
  return hits;
}

std::vector<QuadratureSample> ray_shell_intersections(const Ray& ray, const QuadTopology& topology,
                                                      std::span<const Vec3> positions) {
  std::vector<QuadratureSample> hits;
  const int n = topology.box_subdiv;
  for (std::size_t s = 0; s < topology.shell_distances.size(); ++s) {
    const double d = topology.shell_distances[s];
    // Slab test; remember which axis produced the entry and exit.
    double t_in = -std::numeric_limits<double>::infinity(), t_out = std::numeric_limits<double>::infinity();
    int face_in = -1, face_out = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      const double o = ray.origin[a], dir = ray.direction[a];
      if (std::abs(dir) < 1e-15) {
        if (o < -d || o > d) miss = true;
        continue;
      }
      double t0 = (-d - o) / dir, t1 = (d - o) / dir;
      int f0 = 2 * a, f1 = 2 * a + 1;
      if (t0 > t1) {
        std::swap(t0, t1);
        std::swap(f0, f1);
      }
      if (t0 > t_in) {
        t_in = t0;
        face_in = f0;
      }
      if (t1 < t_out) {
        t_out = t1;
        face_out = f1;
      }
    }
    if (miss || t_in > t_out) continue;
    for (auto [t, face] : {std::pair{t_in, face_in}, std::pair{t_out, face_out}}) {
      if (!(t > kRayTMin) || face < 0) continue;
      const Vec3 p = ray.at(t);
      const int axis = face / 2;
      const int au = (axis + 1) % 3, av = (axis + 2) % 3;
      auto cell = [&](double x) { return std::clamp(static_cast<int>(std::floor((x + d) / (2.0 * d) * n)), 0, n - 1); };
      const std::uint32_t quad = topology.box_quad(static_cast<int>(s), face, cell(p[au]), cell(p[av]));
      for (std::uint32_t tri : {2 * quad, 2 * quad + 1}) {
        const auto vs = topology.triangle(tri);
        if (auto h = ray_triangle(ray, positions[vs[0]], positions[vs[1]], positions[vs[2]])) {
          hits.push_back({h->t, tri, h->bary, ray.at(h->t)});
          break;
        }
      }
    }
  }
  sort_and_unique(hits);
  return hits;
}

ScheduleLimits schedule_limits(double progress, int P) {
  if (progress < 0.25) return {false, static_cast<std::size_t>(3 * P), 1};
  if (progress < 0.5) return {true, static_cast<std::size_t>(3 * P / 2), 2};
  return {true, static_cast<std::size_t>(3 * P / 4), 4};
}

std::vector<QuadratureSample> quadrature(const Ray& ray, const LatticeConfig& config, const QuadTopology& topology,
                                         std::span<const Vec3> positions, const AccelGrid* grid,
                                         const QuadratureOptions& options) {
  std::vector<std::uint32_t> voxels = ray_lattice_voxels(ray, config);
  if (options.prune && grid) voxels = prune(*grid, voxels, options.threshold);
  if (voxels.size() > options.limit) voxels.resize(options.limit);
  std::vector<QuadratureSample> hits;
  if (!voxels.empty()) hits = ray_mesh_intersections(ray, voxels, topology, positions, std::max<std::size_t>(options.limit, 1));
  if (!topology.shell_distances.empty()) {
    auto shell = ray_shell_intersections(ray, topology, positions);
    hits.insert(hits.end(), shell.begin(), shell.end());
    std::stable_sort(hits.begin(), hits.end(), [](const QuadratureSample& a, const QuadratureSample& b) { return a.t < b.t; });
  }
  return hits;
}

}  // namespace meshfield
