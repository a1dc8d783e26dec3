// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// Trainable dual-contouring lattice: one vertex per voxel of a P^3 grid in the
// unit cube, one quad per interior grid edge, and an optional set of fixed
// concentric box shells around it.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "meshfield/autodiff.hpp"
#include "meshfield/math.hpp"

namespace meshfield {

/// p' = scale * p
struct SyntheticScene {
  double scale = 2.4;
};

/// z' = exp(w (z + 0.5)), x' = u x z', y' = v y z' with w = ln 25.
struct ForwardFacingScene {
  double u = 1.75;
  double v = 1.75;
};

/// Identity inside the unit cube plus shells + 1 concentric boxes.
struct UnboundedScene {
  int shells = 64;
  /// Quads per box-face edge; 0 selects P / 2.
  int box_subdiv = 0;
};

using SceneKind = std::variant<SyntheticScene, ForwardFacingScene, UnboundedScene>;

std::string scene_kind_name(const SceneKind& kind);

struct LatticeConfig {
  int P = 16;
  SceneKind kind = SyntheticScene{};

  /// Throws ConfigError on P < 2, non-positive scale, or shells < 1.
  void validate() const;
  bool unbounded() const { return std::holds_alternative<UnboundedScene>(kind); }
  int box_subdiv() const;
};

/// Exponent of the forward-facing depth warp, fixed so that z' = 25 at z = 0.5.
double forward_facing_rate();

Vec3 warp_point(const LatticeConfig& config, const Vec3& p_norm);
/// d warp / d p_norm
Mat3 warp_jacobian(const LatticeConfig& config, const Vec3& p_norm);
/// Inverse warp; nullopt where the forward-facing map is undefined (z' <= 0).
std::optional<Vec3> unwarp_point(const LatticeConfig& config, const Vec3& p_world);

/// Positive root of exp(w) = 15 w + 1, i.e. the rate making d_L = 8.
double concentric_rate();
/// d_i = (exp(w i / L) + w - 1) / (2 w), i = 0..L.
std::vector<double> concentric_distances(int L);

struct VoxelIndex {
  int i = 0, j = 0, k = 0;
  bool operator==(const VoxelIndex&) const = default;
};

inline std::uint32_t voxel_id(int P, int i, int j, int k) {
  return static_cast<std::uint32_t>((i * P + j) * P + k);
}
inline VoxelIndex voxel_index(int P, std::uint32_t id) {
  const int n = static_cast<int>(id);
  return {n / (P * P), (n / P) % P, n % P};
}
/// Voxel center in normalized coordinates, cube [-0.5, 0.5]^3.
Vec3 voxel_center(int P, const VoxelIndex& v);
/// Voxel containing a normalized point, clamped to the grid.
VoxelIndex voxel_containing(int P, const Vec3& p_norm);

struct Quad {
  /// Corner vertices in parameter order (s,t) = (0,0), (1,0), (0,1), (1,1).
  std::array<std::uint32_t, 4> vertices{};
  /// Lattice quads: 0..2 = x, y, z edge axis. Box quads: -1.
  int axis = -1;
  int i = 0, j = 0, k = 0;
  /// Box quads only: shell, face (2*axis + positive side), cell.
  int shell = -1, face = -1, cell_u = 0, cell_v = 0;
};

struct QuadTopology {
  int P = 0;
  std::vector<Quad> quads;
  std::size_t lattice_quads = 0;
  std::size_t lattice_vertices = 0;
  /// Fixed vertices of the concentric shells, ids start at lattice_vertices.
  std::vector<Vec3> box_vertices;
  /// Box shell layout (unbounded scenes only).
  std::vector<double> shell_distances;
  int box_subdiv = 0;
  /// CSR map: lattice vertex -> quads incident to it.
  std::vector<std::uint32_t> vertex_quad_offsets;
  std::vector<std::uint32_t> vertex_quads;

  std::size_t num_vertices() const { return lattice_vertices + box_vertices.size(); }
  std::size_t num_triangles() const { return 2 * quads.size(); }
  /// Triangle split (v0,v1,v3), (v0,v3,v2).
  std::array<std::uint32_t, 3> triangle(std::uint32_t tri) const;
  std::span<const std::uint32_t> quads_of_vertex(std::uint32_t v) const;
  /// Quad id of the box cell hit on a shell face.
  std::uint32_t box_quad(int shell, int face, int cu, int cv) const;
};

QuadTopology build_topology(const LatticeConfig& config);

/// normalized = voxel_center + offset / P, then warped.
Vec3 vertex_world_position(const LatticeConfig& config, const ad::Tensor& offsets, std::uint32_t voxel);
/// World positions of every vertex (lattice first, then box vertices).
std::vector<Vec3> world_positions(const LatticeConfig& config, const QuadTopology& topo, const ad::Tensor& offsets);

/// Trainable mesh: topology plus the P^3 x 3 offset field.
struct MeshLattice {
  LatticeConfig config;
  QuadTopology topology;
  ad::Parameter offsets;

  MeshLattice() = default;
  explicit MeshLattice(const LatticeConfig& cfg);
  std::vector<Vec3> positions() const { return world_positions(config, topology, offsets.value); }
};

/// sum over vertices of (1e3 * I(v) + 1e-2) * |v|_1, I(v) = any |component| > 0.5.
double vertex_regularizer(const ad::Tensor& offsets);
ad::Var vertex_regularizer(ad::Var offsets);

/// Sample points p_s = sum_i b_si X(v_si) where X is the warped vertex
/// position. Gradients reach the lattice offsets through the warp Jacobian with
/// the barycentric weights held constant; box vertices receive none.
ad::Var interpolate_points(ad::Var offsets, const LatticeConfig& config, const QuadTopology& topo,
                           std::span<const std::array<std::uint32_t, 3>> vertices, std::span<const Vec3> barycentric);

}  // namespace meshfield
