// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meshfield/autodiff.hpp"

namespace meshfield {

enum class Activation { none, relu, sigmoid };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

/// Weight is [in, out], bias is [1, out].
struct DenseLayer {
  ad::Parameter weight;
  ad::Parameter bias;
  Activation activation = Activation::none;

  std::size_t in() const { return weight.value.rows(); }
  std::size_t out() const { return weight.value.cols(); }
};

/// y = act_L(W_L ... act_1(W_1 x + b_1) ... + b_L) for a plain layer chain.
/// Throws ConfigError when consecutive dimensions disagree.
std::vector<double> mlp_forward(std::span<const DenseLayer> layers, std::span<const double> x);

struct MlpSpec {
  std::size_t input = 0;
  std::size_t width = 64;
  std::size_t hidden_layers = 8;
  std::size_t output = 1;
  /// The raw input is concatenated to the output of these hidden layers.
  std::vector<std::size_t> skips;
  Activation output_activation = Activation::sigmoid;
};

/// Fully connected network with ReLU hidden layers and optional input skips.
class Mlp {
 public:
  Mlp() = default;
  /// Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases 0.
  Mlp(std::string name, const MlpSpec& spec, std::mt19937_64& rng);
  /// Wraps explicit layers; skips as in MlpSpec.
  Mlp(std::vector<DenseLayer> layers, std::vector<std::size_t> skips = {});

  ad::Var forward(ad::Tape& tape, ad::Var x, bool trainable = true);
  std::vector<double> forward(std::span<const double> x) const;
  /// Batched tape-free evaluation of x[N, input].
  ad::Tensor forward_batch(const ad::Tensor& x) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::span<DenseLayer> layers() { return layers_; }
  std::span<const DenseLayer> layers() const { return layers_; }
  const std::vector<std::size_t>& skips() const { return skips_; }
  std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().in(); }
  std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().out(); }

 private:
  bool skip_after(std::size_t layer) const;
  void validate() const;

  std::vector<DenseLayer> layers_;
  std::vector<std::size_t> skips_;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::uint64_t step = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(std::span<ad::Parameter* const> params, AdamConfig cfg);
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Throws TrainingError naming the parameter if any gradient is non-finite;
/// in that case no parameter is modified.
void adam_step(std::span<ad::Parameter* const> params, AdamState& state);

/// lr_init * (lr_final / lr_init)^progress
double exponential_lr(double lr_init, double lr_final, double progress);

}  // namespace meshfield
