// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "meshfield/autodiff.hpp"
#include "meshfield/lattice.hpp"

namespace meshfield {

/// Per-voxel upper bound of the compositing weight T*alpha seen along training
/// rays. Values start at zero and stay non-negative after every update.
struct AccelGrid {
  int P = 0;
  double threshold = 0.1;
  ad::Parameter values;

  AccelGrid() = default;
  explicit AccelGrid(int resolution, double tau = 0.1);

  std::size_t size() const { return values.value.size(); }
  /// Throws std::out_of_range for an invalid voxel.
  double lookup(std::uint32_t voxel) const;
  double lookup(const VoxelIndex& v) const;
  void set(std::uint32_t voxel, double value);
  void project_nonnegative();
};

/// One compositing sample: the voxel holding the sample point and its
/// (already detached) weight T_k * alpha_k.
struct GridSample {
  std::uint32_t voxel = 0;
  double weight = 0.0;
};

struct GridLossWeights {
  double sparse = 1e-5;
  double smooth = 1e-5;
};

struct GridLossValues {
  double bound = 0.0;
  double sparse = 0.0;
  double smooth = 0.0;
};

struct GridLossVars {
  ad::Var bound;
  ad::Var sparse;
  ad::Var smooth;
  /// bound + w_sparse * sparse + w_smooth * smooth
  ad::Var total;
};

/// Sum of squared forward differences along the three axes of a grid laid out
/// as id = (i * ny + j) * nz + k.
double grid_smoothness(const ad::Tensor& values, std::array<int, 3> dims);
ad::Var grid_smoothness(ad::Var values, std::array<int, 3> dims);

GridLossValues grid_losses(const AccelGrid& grid, std::span<const GridSample> samples);
GridLossVars grid_losses(ad::Tape& tape, AccelGrid& grid, std::span<const GridSample> samples,
                         GridLossWeights weights = {});

/// Stable filter keeping voxels whose value is strictly greater than tau.
std::vector<std::uint32_t> prune(const AccelGrid& grid, std::span<const std::uint32_t> voxels, double tau);

}  // namespace meshfield
