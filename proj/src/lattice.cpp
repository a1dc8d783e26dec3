// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/lattice.hpp"

#include <algorithm>
#include <cmath>

#include "meshfield/error.hpp"

namespace meshfield {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Vec3 normalized_vertex(int P, const ad::Tensor& offsets, std::uint32_t voxel) {
  const Vec3 center = voxel_center(P, voxel_index(P, voxel));
  const double inv = 1.0 / P;
  return center + Vec3(offsets(voxel, 0), offsets(voxel, 1), offsets(voxel, 2)) * inv;
}

}  // namespace

std::string scene_kind_name(const SceneKind& kind) {
  return std::visit(overloaded{[](const SyntheticScene&) { return std::string("synthetic"); },
                               [](const ForwardFacingScene&) { return std::string("forward_facing"); },
                               [](const UnboundedScene&) { return std::string("unbounded"); }},
                    kind);
}

void LatticeConfig::validate() const {
  if (P < 2) throw ConfigError("lattice resolution P must be >= 2, got " + std::to_string(P));
  std::visit(overloaded{[](const SyntheticScene& s) {
                          if (!(s.scale > 0.0)) throw ConfigError("synthetic scale must be > 0");
                        },
                        [](const ForwardFacingScene& s) {
                          if (!(s.u > 0.0) || !(s.v > 0.0)) throw ConfigError("forward-facing u, v must be > 0");
                        },
                        [](const UnboundedScene& s) {
                          if (s.shells < 1) throw ConfigError("unbounded scene needs at least one shell");
                          if (s.box_subdiv < 0) throw ConfigError("box_subdiv must be >= 0");
                        }},
             kind);
}

int LatticeConfig::box_subdiv() const {
  if (const auto* u = std::get_if<UnboundedScene>(&kind)) return u->box_subdiv > 0 ? u->box_subdiv : std::max(1, P / 2);
  return 0;
}

double forward_facing_rate() { return std::log(25.0); }

Vec3 warp_point(const LatticeConfig& config, const Vec3& p) {
  return std::visit(overloaded{[&](const SyntheticScene& s) -> Vec3 { return s.scale * p; },
                               [&](const ForwardFacingScene& s) -> Vec3 {
                                 const double z = std::exp(forward_facing_rate() * (p.z() + 0.5));
                                 return {s.u * p.x() * z, s.v * p.y() * z, z};
                               },
                               [&](const UnboundedScene&) -> Vec3 { return p; }},
                    config.kind);
}

Mat3 warp_jacobian(const LatticeConfig& config, const Vec3& p) {
  return std::visit(overloaded{[&](const SyntheticScene& s) -> Mat3 { return s.scale * Mat3::Identity(); },
                               [&](const ForwardFacingScene& s) -> Mat3 {
                                 const double w = forward_facing_rate();
                                 const double z = std::exp(w * (p.z() + 0.5));
                                 Mat3 j = Mat3::Zero();
                                 j(0, 0) = s.u * z;
                                 j(0, 2) = s.u * p.x() * w * z;
                                 j(1, 1) = s.v * z;
                                 j(1, 2) = s.v * p.y() * w * z;
                                 j(2, 2) = w * z;
                                 return j;
                               },
                               [&](const UnboundedScene&) -> Mat3 { return Mat3::Identity(); }},
                    config.kind);
}

std::optional<Vec3> unwarp_point(const LatticeConfig& config, const Vec3& q) {
  return std::visit(overloaded{[&](const SyntheticScene& s) -> std::optional<Vec3> { return Vec3(q / s.scale); },
                               [&](const ForwardFacingScene& s) -> std::optional<Vec3> {
                                 if (!(q.z() > 0.0)) return std::nullopt;
                                 const double z = std::log(q.z()) / forward_facing_rate() - 0.5;
                                 return Vec3(q.x() / (s.u * q.z()), q.y() / (s.v * q.z()), z);
                               },
                               [&](const UnboundedScene&) -> std::optional<Vec3> { return q; }},
                    config.kind);
}

double concentric_rate() {
  auto f = [](double w) { return std::exp(w) - 15.0 * w - 1.0; };
  double lo = 1.0, hi = 10.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> concentric_distances(int L) {
  if (L < 1) throw ConfigError("concentric_distances: L must be >= 1");
  const double w = concentric_rate();
  std::vector<double> d(static_cast<std::size_t>(L) + 1);
  for (int i = 0; i <= L; ++i) d[i] = (std::exp(w * i / L) + w - 1.0) / (2.0 * w);
  return d;
}

Vec3 voxel_center(int P, const VoxelIndex& v) {
  const double inv = 1.0 / P;
  return {-0.5 + (v.i + 0.5) * inv, -0.5 + (v.j + 0.5) * inv, -0.5 + (v.k + 0.5) * inv};
}

VoxelIndex voxel_containing(int P, const Vec3& p) {
  auto cell = [P](double x) { return std::clamp(static_cast<int>(std::floor((x + 0.5) * P)), 0, P - 1); };
  return {cell(p.x()), cell(p.y()), cell(p.z())};
}

std::array<std::uint32_t, 3> QuadTopology::triangle(std::uint32_t tri) const {
  const auto& v = quads[tri / 2].vertices;
  if (tri % 2 == 0) return {v[0], v[1], v[3]};
  return {v[0], v[3], v[2]};
}

std::span<const std::uint32_t> QuadTopology::quads_of_vertex(std::uint32_t v) const {
  return {vertex_quads.data() + vertex_quad_offsets[v], vertex_quad_offsets[v + 1] - vertex_quad_offsets[v]};
}

std::uint32_t QuadTopology::box_quad(int shell, int face, int cu, int cv) const {
  const int n = box_subdiv;
  return static_cast<std::uint32_t>(lattice_quads + static_cast<std::size_t>(((shell * 6 + face) * n + cv) * n + cu));
}

QuadTopology build_topology(const LatticeConfig& config) {
  config.validate();
  QuadTopology topo;
  const int P = config.P;
  topo.P = P;
  topo.lattice_vertices = static_cast<std::size_t>(P) * P * P;
  topo.quads.reserve(3 * static_cast<std::size_t>(P) * (P - 1) * (P - 1));

  // Axis a owns the edge; the two other axes follow in cyclic order.
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < P; ++j)
        for (int k = 0; k < P; ++k) {
          const int idx[3] = {i, j, k};
          if (idx[a1] >= P - 1 || idx[a2] >= P - 1) continue;
          auto vid = [&](int d1, int d2) {
            int c[3] = {i, j, k};
            c[a1] += d1;
            c[a2] += d2;
            return voxel_id(P, c[0], c[1], c[2]);
          };
          Quad q;
          q.axis = axis;
          q.i = i;
          q.j = j;
          q.k = k;
          q.vertices = {vid(0, 0), vid(1, 0), vid(0, 1), vid(1, 1)};
          topo.quads.push_back(q);
        }
  }
  topo.lattice_quads = topo.quads.size();

  // CSR incidence over lattice vertices.
  std::vector<std::uint32_t> counts(topo.lattice_vertices + 1, 0);
  for (const auto& q : topo.quads)
    for (auto v : q.vertices) ++counts[v + 1];
  for (std::size_t v = 0; v < topo.lattice_vertices; ++v) counts[v + 1] += counts[v];
  topo.vertex_quad_offsets = counts;
  topo.vertex_quads.resize(counts.back());
  std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
  for (std::uint32_t qi = 0; qi < topo.quads.size(); ++qi)
    for (auto v : topo.quads[qi].vertices) topo.vertex_quads[cursor[v]++] = qi;

  if (const auto* u = std::get_if<UnboundedScene>(&config.kind)) {
    const int n = config.box_subdiv();
    topo.box_subdiv = n;
    topo.shell_distances = concentric_distances(u->shells);
    const auto base = static_cast<std::uint32_t>(topo.lattice_vertices);
    for (int s = 0; s <= u->shells; ++s) {
      const double d = topo.shell_distances[s];
      for (int f = 0; f < 6; ++f) {
        const int axis = f / 2;
        const double side = (f % 2) ? d : -d;
        const int au = (axis + 1) % 3, av = (axis + 2) % 3;
        const auto first = static_cast<std::uint32_t>(base + topo.box_vertices.size());
        for (int l = 0; l <= n; ++l)
          for (int m = 0; m <= n; ++m) {
            Vec3 p;
            p[axis] = side;
            p[au] = -d + 2.0 * d * m / n;
            p[av] = -d + 2.0 * d * l / n;
            topo.box_vertices.push_back(p);
          }
        auto vid = [&](int m, int l) { return first + static_cast<std::uint32_t>(l * (n + 1) + m); };
        for (int cv = 0; cv < n; ++cv)
          for (int cu = 0; cu < n; ++cu) {
            Quad q;
            q.shell = s;
            q.face = f;
            q.cell_u = cu;
            q.cell_v = cv;
            q.vertices = {vid(cu, cv), vid(cu + 1, cv), vid(cu, cv + 1), vid(cu + 1, cv + 1)};
            topo.quads.push_back(q);
          }
      }
    }
  }
  return topo;
}

Vec3 vertex_world_position(const LatticeConfig& config, const ad::Tensor& offsets, std::uint32_t voxel) {
  const std::size_t n = static_cast<std::size_t>(config.P) * config.P * config.P;
  if (voxel >= n) throw std::out_of_range("vertex_world_position: voxel id out of range");
  return warp_point(config, normalized_vertex(config.P, offsets, voxel));
}

std::vector<Vec3> world_positions(const LatticeConfig& config, const QuadTopology& topo, const ad::Tensor& offsets) {
  std::vector<Vec3> out;
  out.reserve(topo.num_vertices());
  for (std::uint32_t v = 0; v < topo.lattice_vertices; ++v)
    out.push_back(warp_point(config, normalized_vertex(config.P, offsets, v)));
  out.insert(out.end(), topo.box_vertices.begin(), topo.box_vertices.end());
  return out;
}

MeshLattice::MeshLattice(const LatticeConfig& cfg)
    : config(cfg),
      topology(build_topology(cfg)),
      offsets("lattice/offsets", ad::Tensor(topology.lattice_vertices, 3)) {}

namespace {

double vertex_weight(const double* v) {
  const bool outside = std::abs(v[0]) > 0.5 || std::abs(v[1]) > 0.5 || std::abs(v[2]) > 0.5;
  return (outside ? 1e3 : 0.0) + 1e-2;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double vertex_regularizer(const ad::Tensor& offsets) {
  if (offsets.cols() != 3) throw ConfigError("vertex_regularizer: offsets must be Nx3");
  double total = 0.0;
  for (std::size_t r = 0; r < offsets.rows(); ++r) {
    const double* v = offsets.row(r).data();
    total += vertex_weight(v) * (std::abs(v[0]) + std::abs(v[1]) + std::abs(v[2]));
  }
  return total;
}

ad::Var vertex_regularizer(ad::Var offsets) {
  const double value = vertex_regularizer(offsets.value());
  const std::size_t oi = offsets.id();
  return offsets.tape().push(ad::Tensor::scalar(value), offsets.requires_grad(), [oi](ad::Tape& tape, std::size_t self) {
    const double g = (*tape.find_grad(self))[0];
    const ad::Tensor& off = tape.value(oi);
    ad::Tensor& go = tape.grad_buffer(oi);
    for (std::size_t r = 0; r < off.rows(); ++r) {
      const double* v = off.row(r).data();
      const double w = vertex_weight(v);
      for (int c = 0; c < 3; ++c) go(r, c) += g * w * sign(v[c]);
    }
  });
}

ad::Var interpolate_points(ad::Var offsets, const LatticeConfig& config, const QuadTopology& topo,
                           std::span<const std::array<std::uint32_t, 3>> vertices,
                           std::span<const Vec3> barycentric) {
  if (vertices.size() != barycentric.size()) throw ConfigError("interpolate_points: vertex/barycentric count mismatch");
  const ad::Tensor& off = offsets.value();
  const int P = config.P;
  const auto lattice_n = static_cast<std::uint32_t>(topo.lattice_vertices);
  auto position = [&](std::uint32_t v) -> Vec3 {
    if (v < lattice_n) return warp_point(config, normalized_vertex(P, off, v));
    return topo.box_vertices[v - lattice_n];
  };
  ad::Tensor out(vertices.size(), 3);
  for (std::size_t s = 0; s < vertices.size(); ++s) {
    Vec3 p = Vec3::Zero();
    for (int c = 0; c < 3; ++c) p += barycentric[s][c] * position(vertices[s][c]);
    for (int d = 0; d < 3; ++d) out(s, d) = p[d];
  }
  std::vector<std::array<std::uint32_t, 3>> verts(vertices.begin(), vertices.end());
  std::vector<Vec3> bary(barycentric.begin(), barycentric.end());
  const std::size_t oi = offsets.id();
  return offsets.tape().push(
      std::move(out), offsets.requires_grad(),
      [oi, config, lattice_n, verts = std::move(verts), bary = std::move(bary)](ad::Tape& tape, std::size_t self) {
        const ad::Tensor& g = *tape.find_grad(self);
        const ad::Tensor& off = tape.value(oi);
        ad::Tensor& go = tape.grad_buffer(oi);
        const double inv = 1.0 / config.P;
        for (std::size_t s = 0; s < verts.size(); ++s) {
          const Vec3 gs(g(s, 0), g(s, 1), g(s, 2));
          for (int c = 0; c < 3; ++c) {
            const std::uint32_t v = verts[s][c];
            if (v >= lattice_n) continue;
            const Mat3 jac = warp_jacobian(config, normalized_vertex(config.P, off, v));
            const Vec3 gv = bary[s][c] * inv * (jac.transpose() * gs);
            for (int d = 0; d < 3; ++d) go(v, d) += gv[d];
          }
        }
      });
}

}  // namespace meshfield
