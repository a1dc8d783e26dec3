// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/accel_grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "meshfield/error.hpp"

namespace meshfield {

AccelGrid::AccelGrid(int resolution, double tau)
    : P(resolution),
      threshold(tau),
      values("grid/values", ad::Tensor(static_cast<std::size_t>(resolution) * resolution * resolution, 1)) {
  if (resolution < 1) throw ConfigError("acceleration grid resolution must be positive");
}

double AccelGrid::lookup(std::uint32_t voxel) const {
  if (voxel >= size()) throw std::out_of_range("grid lookup: voxel " + std::to_string(voxel) + " out of range");
  return values.value[voxel];
}

double AccelGrid::lookup(const VoxelIndex& v) const {
  if (v.i < 0 || v.j < 0 || v.k < 0 || v.i >= P || v.j >= P || v.k >= P)
    throw std::out_of_range("grid lookup: voxel index out of range");
  return values.value[voxel_id(P, v.i, v.j, v.k)];
}

void AccelGrid::set(std::uint32_t voxel, double value) {
  if (voxel >= size()) throw std::out_of_range("grid set: voxel out of range");
  values.value[voxel] = value;
}

void AccelGrid::project_nonnegative() {
  for (double& v : values.value.values()) v = std::max(v, 0.0);
}

namespace {

void check_dims(const ad::Tensor& values, std::array<int, 3> dims) {
  const auto n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (values.size() != n) throw ConfigError("grid_smoothness: value count does not match dims");
}

template <typename Fn>
void for_each_difference(std::array<int, 3> dims, Fn&& fn) {
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  auto id = [&](int i, int j, int k) { return static_cast<std::size_t>((i * ny + j) * nz + k); };
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k) {
        if (i + 1 < nx) fn(id(i + 1, j, k), id(i, j, k));
        if (j + 1 < ny) fn(id(i, j + 1, k), id(i, j, k));
        if (k + 1 < nz) fn(id(i, j, k + 1), id(i, j, k));
      }
}

}  // namespace

double grid_smoothness(const ad::Tensor& values, std::array<int, 3> dims) {
  check_dims(values, dims);
  double total = 0.0;
  for_each_difference(dims, [&](std::size_t a, std::size_t b) {
    const double d = values[a] - values[b];
    total += d * d;
  });
  return total;
}

ad::Var grid_smoothness(ad::Var values, std::array<int, 3> dims) {
  const double v = grid_smoothness(values.value(), dims);
  const std::size_t vi = values.id();
  return values.tape().push(ad::Tensor::scalar(v), values.requires_grad(), [vi, dims](ad::Tape& tape, std::size_t self) {
    const double g = (*tape.find_grad(self))[0];
    const ad::Tensor& val = tape.value(vi);
    ad::Tensor& gv = tape.grad_buffer(vi);
    for_each_difference(dims, [&](std::size_t a, std::size_t b) {
      const double d = 2.0 * g * (val[a] - val[b]);
      gv[a] += d;
      gv[b] -= d;
    });
  });
}

GridLossValues grid_losses(const AccelGrid& grid, std::span<const GridSample> samples) {
  GridLossValues out;
  for (const auto& s : samples) out.bound += std::max(s.weight - grid.lookup(s.voxel), 0.0);
  for (double v : grid.values.value.values()) out.sparse += std::abs(v);
  out.smooth = grid_smoothness(grid.values.value, {grid.P, grid.P, grid.P});
  return out;
}

GridLossVars grid_losses(ad::Tape& tape, AccelGrid& grid, std::span<const GridSample> samples,
                         GridLossWeights weights) {
  ad::Var g = tape.param(grid.values);
  std::vector<std::size_t> index(samples.size());
  ad::Tensor detached(samples.size(), 1);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].voxel >= grid.size()) throw std::out_of_range("grid_losses: sample voxel out of range");
    index[s] = samples[s].voxel;
    detached[s] = samples[s].weight;
  }
  GridLossVars out;
  if (samples.empty()) {
    out.bound = tape.constant(ad::Tensor::scalar(0.0));
  } else {
    ad::Var w = tape.constant(std::move(detached));
    out.bound = ad::sum(ad::hinge(ad::sub(w, ad::gather_rows(g, index))));
  }
  out.sparse = ad::sum(ad::abs(g));
  out.smooth = grid_smoothness(g, {grid.P, grid.P, grid.P});
  out.total = ad::add(ad::add(out.bound, ad::scale(out.sparse, weights.sparse)), ad::scale(out.smooth, weights.smooth));
  return out;
}

std::vector<std::uint32_t> prune(const AccelGrid& grid, std::span<const std::uint32_t> voxels, double tau) {
  std::vector<std::uint32_t> out;
  out.reserve(voxels.size());
  for (auto v : voxels)
    if (grid.lookup(v) > tau) out.push_back(v);
  return out;
}

}  // namespace meshfield
