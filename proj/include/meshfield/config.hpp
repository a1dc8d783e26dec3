// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "meshfield/accel_grid.hpp"
#include "meshfield/dataset.hpp"
#include "meshfield/lattice.hpp"
#include "meshfield/radiance_model.hpp"

namespace meshfield {

/// Everything that determines a training run. Thread count is not part of it:
/// results are identical for any worker count.
struct TrainConfig {
  /// "toy:<name>" or a directory holding transforms_*.json.
  std::string scene = "toy:spheres";
  LatticeConfig lattice;
  FieldConfig field;
  ToyViewConfig toy;

  int stage1_steps = 3000;
  int stage2_steps = 1000;
  int finetune_steps = 500;
  int stage2_warmup_steps = 200;  // appearance-only steps opening stage 2
  /// Stage-1 rays per step before the schedule multiplier.
  int batch_rays = 256;
  /// Stage-2 and fine-tuning pixels per step (each traced with s x s rays).
  int batch_pixels = 128;
  int supersample = 2;

  double lr_init = 5e-4;
  double lr_final = 5e-5;
  /// Multiplies the learning rate of the vertex offsets.
  double offsets_lr_scale = 1.0;
  double grid_lr = 1e-2;
  double grid_threshold = 0.1;
  GridLossWeights grid_weights;
  /// Distortion weight; negative selects the scene-kind default.
  double w_d = -1.0;
  /// Multiplies the vertex regularizer.
  double w_v = 1.0;

  std::uint64_t seed = 0;
  int log_every = 100;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  /// 0 synthetic, 0.01 forward-facing, 0.001 unbounded unless overridden.
  double distortion_weight() const;
  int stage_steps(int stage) const;
};

/// Small networks and step counts that finish the toy scene on one core.
TrainConfig toy_config();

/// Nested JSON; every key is optional and unknown keys are rejected.
TrainConfig config_from_json(std::string_view text, const TrainConfig& base = TrainConfig{});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = TrainConfig{});
/// Canonical JSON (sorted keys, all fields present).
std::string config_to_json(const TrainConfig& config);
/// FNV-1a 64 of the canonical JSON.
std::uint64_t config_hash(const TrainConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

SceneKind scene_kind_from_string(std::string_view name);

/// Toy views rendered by the analytic oracle, or transforms_*.json from disk.
Dataset load_scene(const TrainConfig& config);

}  // namespace meshfield
