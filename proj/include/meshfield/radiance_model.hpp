// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// The three networks (opacity, features, deferred shader), straight-through
// binarization and front-to-back alpha compositing.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "meshfield/autodiff.hpp"
#include "meshfield/math.hpp"
#include "meshfield/mlp.hpp"

namespace meshfield {

inline constexpr std::size_t kFeatureCount = 8;
using Features = std::array<double, kFeatureCount>;
using Rgb = std::array<double, 3>;

struct FieldConfig {
  std::size_t width = 64;
  std::size_t depth = 8;
  std::vector<std::size_t> skips = {4};
  int pe_degree = 6;
  std::size_t shader_width = 16;
  std::size_t shader_depth = 2;
  /// Initial bias of the opacity head (0 gives alpha = 0.5 everywhere).
  double opacity_bias = 0.0;

  static FieldConfig paper_scale() {
    FieldConfig c;
    c.width = 384;
    c.pe_degree = 10;
    return c;
  }
};

struct FieldParams {
  FieldConfig config;
  Mlp opacity;
  Mlp features;
  Mlp shader;

  FieldParams() = default;
  FieldParams(const FieldConfig& cfg, std::uint64_t seed);

  std::vector<ad::Parameter*> all_parameters();
  std::vector<ad::Parameter*> appearance_parameters();
};

struct FieldSample {
  double alpha = 0.0;
  Features features{};
};

FieldSample field_eval(const FieldParams& params, const Vec3& p);
/// Batched, tape-free: returns alpha [N,1] and features [N,8] for points [N,3].
std::pair<ad::Tensor, ad::Tensor> field_eval_batch(const FieldParams& params, const ad::Tensor& points,
                                                   bool want_features = true);

struct FieldVars {
  ad::Var alpha;
  ad::Var features;
};

/// Tape version. `train_opacity` / `train_features` select whether the
/// networks' weights are recorded as parameters or constants.
FieldVars field_eval(ad::Tape& tape, FieldParams& params, ad::Var points, bool train_opacity = true,
                     bool train_features = true);

Rgb shade(const FieldParams& params, const Features& f, const Vec3& direction);
ad::Var shade(ad::Tape& tape, FieldParams& params, ad::Var features, ad::Var directions, bool trainable = true);

/// 1(alpha > 0.5)
inline double binarize(double alpha) { return alpha > 0.5 ? 1.0 : 0.0; }
/// Straight-through: forward 1(alpha > 0.5), backward identity.
ad::Var binarize(ad::Var alpha);

struct CompositeResult {
  std::vector<double> value;
  double residual = 1.0;
};

/// sum_k T_k alpha_k v_k with T_k = prod_{l<k}(1 - alpha_l); residual is
/// prod_k (1 - alpha_k). values is row-major [K, n].
CompositeResult composite(std::span<const double> alphas, std::span<const double> values, std::size_t n);
/// T_k alpha_k for every sample.
std::vector<double> composite_weights(std::span<const double> alphas);

/// Per-segment compositing weights w_k = T_k alpha_k for alpha [S,1]; segments
/// are [offsets[r], offsets[r+1]).
ad::Var composite_weights(ad::Var alpha, std::span<const std::size_t> offsets);
/// Accumulated values [R, n] = segment sums of w * values.
ad::Var composite(ad::Var alpha, ad::Var values, std::span<const std::size_t> offsets);

}  // namespace meshfield
