// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// Training stages: continuous opacity (1), continuous and binary co-training
// with feature supersampling (2), and appearance-only fine-tuning on the
// binary model (3).

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "meshfield/accel_grid.hpp"
#include "meshfield/camera.hpp"
#include "meshfield/config.hpp"
#include "meshfield/dataset.hpp"
#include "meshfield/lattice.hpp"
#include "meshfield/mlp.hpp"
#include "meshfield/quadrature.hpp"
#include "meshfield/radiance_model.hpp"

namespace meshfield {

/// Rays per gradient shard in stage 1 and pixels per shard in stages 2-3.
/// Fixed so that the reduction order does not depend on the thread count.
inline constexpr std::size_t kShardRays = 32;
inline constexpr std::size_t kShardPixels = 8;

struct TrainState {
  TrainConfig config;
  MeshLattice lattice;
  AccelGrid grid;
  FieldParams field;
  /// All three networks.
  AdamState adam;
  AdamState offsets_adam;
  AdamState grid_adam;
  /// Features and shader only; created when fine-tuning starts.
  AdamState finetune_adam;
  /// 1, 2, 3 (fine-tuning) or 4 (finished).
  int stage = 1;
  /// Steps taken in the current stage.
  std::uint64_t step = 0;

  TrainState() = default;
  explicit TrainState(const TrainConfig& config);

  /// Opacity, feature and shader weights.
  std::vector<ad::Parameter*> network_parameters() { return field.all_parameters(); }
  std::vector<ad::Parameter*> offset_parameters() { return {&lattice.offsets}; }
  std::vector<ad::Parameter*> finetune_parameters();
  std::vector<ad::Parameter*> grid_parameters() { return {&grid.values}; }
};

/// Quadrature schedule in effect for the next step of the current stage.
ScheduleLimits current_limits(const TrainState& state);
QuadratureOptions quadrature_options(const TrainState& state, const ScheduleLimits& limits);
QuadratureOptions quadrature_options(const TrainState& state);

struct StepStats {
  int stage = 1;
  std::uint64_t step = 0;
  double loss = 0.0;
  /// Stage 1 and the continuous branch of stage 2.
  double color = 0.0;
  /// Binary branch (stages 2 and 3).
  double color_binary = 0.0;
  double distortion = 0.0;
  double vertex = 0.0;
  double grid = 0.0;
  double lr = 0.0;
  std::size_t rays = 0;
  std::size_t samples = 0;
  std::size_t quadrature_limit = 0;
  int batch_multiplier = 1;
};

/// One optimization step of the current stage. Throws TrainingError on a
/// non-finite loss or gradient, before any parameter changes.
StepStats train_step(TrainState& state, const Dataset& data, int threads = 1);
/// Moves to the next stage and resets the step counter.
void advance_stage(TrainState& state);
/// Runs the remaining steps of the current stage, then advances.
void run_stage(TrainState& state, const Dataset& data, int threads,
               const std::function<void(const StepStats&)>& on_step = {});

// ---- losses ------------------------------------------------------------------------

/// sum_{i,j} w_i w_j |s_i - s_j| with s = (t - t_min) / (t_max - t_min) over
/// one ray's samples.
double distortion_loss(std::span<const double> weights, std::span<const double> depths);
/// Sum of the per-segment distortion over all segments of weights [S,1].
ad::Var distortion_loss(ad::Var weights, std::span<const double> depths, std::span<const std::size_t> offsets);

/// 1/2 L_bin + 1/2 L
inline double stage2_color_loss(double binary, double continuous) { return 0.5 * binary + 0.5 * continuous; }

struct SupersampledBranch {
  /// Per-pixel colors [R,3]; pixels without any accumulated weight are 0.
  ad::Var color;
  /// Compositing weights of every sample [S,1].
  ad::Var weights;
};

/// Composites features per sub-pixel ray (continuous alpha or straight-through
/// binary alpha), averages them over groups of `group` rays and shades once
/// per pixel. The direction fed to the shader is the accumulated-opacity
/// weighted mean of the sub-ray directions, renormalized.
SupersampledBranch supersampled_branch(ad::Tape& tape, FieldParams& field, ad::Var alpha, ad::Var features,
                                       std::span<const std::size_t> offsets, std::span<const Vec3> directions,
                                       std::size_t group, bool binary, bool train_shader = true);

// ---- tape-free rendering ---------------------------------------------------------

struct TracedRays {
  /// Sample ranges per ray.
  std::vector<std::size_t> offsets;
  std::vector<QuadratureSample> samples;
  ad::Tensor alpha;
  ad::Tensor features;
};

TracedRays trace_rays(const TrainState& state, std::span<const Ray> rays, std::span<const Vec3> positions,
                      const QuadratureOptions& options, bool want_features = true);

struct RayRender {
  Rgb color{};
  /// (voxel, T_k alpha_k) for every sample inside the lattice.
  std::vector<GridSample> grid_samples;
};

/// Continuous model, per-sample shading, black background.
RayRender render_ray_stage1(const TrainState& state, const Ray& ray, std::span<const Vec3> positions,
                            const QuadratureOptions& options);

enum class PixelMode { continuous, binary };

struct SupersampleOptions {
  PixelMode mode = PixelMode::binary;
  int supersample = 2;
  /// Binary mode only: store features as 8-bit values with the alpha squeeze,
  /// exactly as the baked textures do.
  bool quantize = false;
};

/// Averages composited features of the s x s sub-pixel rays and shades once.
Rgb render_pixel_supersampled(const TrainState& state, const Camera& camera, int px, int py,
                              std::span<const Vec3> positions, const QuadratureOptions& options,
                              const SupersampleOptions& ss);

Image render_stage1(const TrainState& state, const Camera& camera, int threads = 1);
Image render_supersampled(const TrainState& state, const Camera& camera, const SupersampleOptions& ss,
                          int threads = 1);

struct EvalResult {
  std::vector<double> psnr;
  double mean_psnr = 0.0;
};

EvalResult evaluate(std::span<const View> views, const std::function<Image(const Camera&)>& render);

/// Voxel whose cell contains a world point, if it lies inside the lattice.
std::optional<std::uint32_t> sample_voxel(const LatticeConfig& config, const Vec3& world);

}  // namespace meshfield
