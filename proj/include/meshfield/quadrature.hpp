// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// Ray traversal of the lattice: plane hits -> voxels -> incident triangles ->
// sorted intersection samples.

#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "meshfield/accel_grid.hpp"
#include "meshfield/lattice.hpp"

namespace meshfield {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3(0, 0, -1);

  Vec3 at(double t) const { return origin + t * direction; }
};

inline constexpr double kRayTMin = 1e-6;
inline constexpr double kBarycentricEps = 1e-9;

struct TriangleHit {
  double t = 0.0;
  /// Weights of v0, v1, v2; non-negative and summing to one.
  Vec3 bary = Vec3::Zero();
};

std::optional<TriangleHit> ray_triangle(const Ray& ray, const Vec3& v0, const Vec3& v1, const Vec3& v2);

struct QuadratureSample {
  double t = 0.0;
  std::uint32_t triangle = 0;
  Vec3 bary = Vec3::Zero();
  Vec3 point = Vec3::Zero();
};

/// Voxels crossed by the ray, near to far, found from the 3(P+1) warped
/// lattice planes. Empty when the ray misses the lattice.
std::vector<std::uint32_t> ray_lattice_voxels(const Ray& ray, const LatticeConfig& config);

/// Hits against both triangles of every quad incident to the vertex of each
/// voxel, deduplicated by triangle id, sorted by t (equal depths collapse to
/// the lower triangle id) and truncated to the nearest `limit`.
std::vector<QuadratureSample> ray_mesh_intersections(const Ray& ray, std::span<const std::uint32_t> voxels,
                                                     const QuadTopology& topology, std::span<const Vec3> positions,
                                                     std::size_t limit);

/// Hits against every concentric box shell (unbounded scenes); never truncated.
std::vector<QuadratureSample> ray_shell_intersections(const Ray& ray, const QuadTopology& topology,
                                                      std::span<const Vec3> positions);

struct ScheduleLimits {
  bool use_pruning = false;
  std::size_t limit = 0;
  int batch_multiplier = 1;
  bool operator==(const ScheduleLimits&) const = default;
};

/// First quarter: all 3P voxels and hits. Second quarter: prune, keep 3P/2,
/// batch x2. Remainder: prune, keep 3P/4, batch x4.
ScheduleLimits schedule_limits(double progress, int P);

struct QuadratureOptions {
  bool prune = false;
  double threshold = 0.1;
  /// Caps retained voxels and lattice hits.
  std::size_t limit = std::numeric_limits<std::size_t>::max();
};

/// Full per-ray quadrature: voxel traversal, optional grid pruning, capped
/// mesh intersections, then shell hits merged in depth order.
std::vector<QuadratureSample> quadrature(const Ray& ray, const LatticeConfig& config, const QuadTopology& topology,
                                         std::span<const Vec3> positions, const AccelGrid* grid,
                                         const QuadratureOptions& options);

}  // namespace meshfield
