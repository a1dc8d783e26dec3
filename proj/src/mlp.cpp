// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/mlp.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "meshfield/error.hpp"
#include "meshfield/math.hpp"

namespace meshfield {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double activate(Activation a, double v) {
  switch (a) {
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-v));
    case Activation::none: break;
  }
  return v;
}

ad::Var activate(Activation a, ad::Var v) {
  switch (a) {
    case Activation::relu: return ad::relu(v);
    case Activation::sigmoid: return ad::sigmoid(v);
    case Activation::none: break;
  }
  return v;
}

void apply_layer(const DenseLayer& layer, std::span<const double> x, std::vector<double>& y) {
  const ad::Tensor& w = layer.weight.value;
  y.assign(w.cols(), 0.0);
  for (std::size_t o = 0; o < w.cols(); ++o) y[o] = layer.bias.value[o];
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double xi = x[i];
    const double* wr = w.row(i).data();
    for (std::size_t o = 0; o < w.cols(); ++o) y[o] += xi * wr[o];
  }
  for (double& v : y) v = activate(layer.activation, v);
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::none: break;
  }
  return "none";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "none") return Activation::none;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

std::vector<double> mlp_forward(std::span<const DenseLayer> layers, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end()), next;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.in() != cur.size())
      throw ConfigError("mlp_forward: layer " + std::to_string(l) + " expects " + std::to_string(layer.in()) +
                        " inputs, got " + std::to_string(cur.size()));
    if (layer.bias.value.size() != layer.out())
      throw ConfigError("mlp_forward: layer " + std::to_string(l) + " bias size mismatch");
    apply_layer(layer, cur, next);
    std::swap(cur, next);
  }
  return cur;
}

Mlp::Mlp(std::string name, const MlpSpec& spec, std::mt19937_64& rng) : skips_(spec.skips) {
  if (spec.input == 0 || spec.output == 0 || spec.width == 0)
    throw ConfigError("mlp '" + name + "': zero-sized layer");
  auto make = [&](std::size_t in, std::size_t out, Activation act, std::size_t index) {
    DenseLayer layer;
    ad::Tensor w(in, out);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (double& v : w.values()) v = (2.0 * unit_double(rng()) - 1.0) * bound;
    const std::string prefix = name + "/" + std::to_string(index);
    layer.weight = ad::Parameter(prefix + "/weight", std::move(w));
    layer.bias = ad::Parameter(prefix + "/bias", ad::Tensor(1, out));
    layer.activation = act;
    return layer;
  };
  std::size_t in = spec.input;
  for (std::size_t l = 0; l < spec.hidden_layers; ++l) {
    layers_.push_back(make(in, spec.width, Activation::relu, l));
    in = spec.width + (skip_after(l) ? spec.input : 0);
  }
  layers_.push_back(make(in, spec.output, spec.output_activation, spec.hidden_layers));
  validate();
}

Mlp::Mlp(std::vector<DenseLayer> layers, std::vector<std::size_t> skips)
    : layers_(std::move(layers)), skips_(std::move(skips)) {
  validate();
}

bool Mlp::skip_after(std::size_t layer) const {
  return std::find(skips_.begin(), skips_.end(), layer) != skips_.end();
}

void Mlp::validate() const {
  if (layers_.empty()) throw ConfigError("mlp has no layers");
  const std::size_t input = layers_.front().in();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.value.rows() != 1 || layer.bias.value.cols() != layer.out())
      throw ConfigError("mlp layer " + std::to_string(l) + ": bias shape mismatch");
    if (l + 1 < layers_.size()) {
      const std::size_t expect = layer.out() + (skip_after(l) ? input : 0);
      if (layers_[l + 1].in() != expect)
        throw ConfigError("mlp layer " + std::to_string(l + 1) + ": expects " + std::to_string(layers_[l + 1].in()) +
                          " inputs, previous layer provides " + std::to_string(expect));
    }
  }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x, bool trainable) {
  ad::Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    ad::Var w = trainable ? tape.param(layer.weight) : tape.frozen(layer.weight);
    ad::Var b = trainable ? tape.param(layer.bias) : tape.frozen(layer.bias);
    h = activate(layer.activation, ad::linear(h, w, b));
    if (skip_after(l) && l + 1 < layers_.size()) h = ad::concat_cols(x, h);
  }
  return h;
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  if (x.size() != input_size())
    throw ConfigError("mlp: expected " + std::to_string(input_size()) + " inputs, got " + std::to_string(x.size()));
  std::vector<double> cur(x.begin(), x.end()), next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    apply_layer(layers_[l], cur, next);
    if (skip_after(l) && l + 1 < layers_.size()) next.insert(next.begin(), x.begin(), x.end());
    std::swap(cur, next);
  }
  return cur;
}

ad::Tensor Mlp::forward_batch(const ad::Tensor& x) const {
  if (x.cols() != input_size())
    throw ConfigError("mlp: expected " + std::to_string(input_size()) + " input columns, got " +
                      std::to_string(x.cols()));
  const auto n = static_cast<Eigen::Index>(x.rows());
  const Eigen::Map<const RowMatrix> input(x.data(), n, static_cast<Eigen::Index>(x.cols()));
  RowMatrix h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const Eigen::Map<const RowMatrix> w(layer.weight.value.data(), static_cast<Eigen::Index>(layer.in()),
                                        static_cast<Eigen::Index>(layer.out()));
    const Eigen::Map<const Eigen::RowVectorXd> b(layer.bias.value.data(), static_cast<Eigen::Index>(layer.out()));
    RowMatrix y = h * w;
    y.rowwise() += b;
    switch (layer.activation) {
      case Activation::relu: y = y.cwiseMax(0.0); break;
      case Activation::sigmoid: y = (1.0 + (-y.array()).exp()).inverse().matrix(); break;
      case Activation::none: break;
    }
    if (skip_after(l) && l + 1 < layers_.size()) {
      RowMatrix cat(n, input.cols() + y.cols());
      cat << input, y;
      h = std::move(cat);
    } else {
      h = std::move(y);
    }
  }
  ad::Tensor out(x.rows(), static_cast<std::size_t>(h.cols()));
  Eigen::Map<RowMatrix>(out.data(), n, h.cols()) = h;
  return out;
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

// ---- Adam --------------------------------------------------------------------

AdamState::AdamState(std::span<ad::Parameter* const> params, AdamConfig cfg) : config(cfg) {
  for (const auto* p : params) {
    m.emplace_back(p->value.rows(), p->value.cols());
    v.emplace_back(p->value.rows(), p->value.cols());
  }
}

void adam_step(std::span<ad::Parameter* const> params, AdamState& state) {
  if (params.size() != state.m.size()) throw ConfigError("adam_step: parameter count does not match optimizer state");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value))
      throw ConfigError("adam_step: shape mismatch for '" + p.name + "'");
    if (!p.grad.all_finite()) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      if (c.lr == 0.0) continue;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double exponential_lr(double lr_init, double lr_final, double progress) {
  progress = std::clamp(progress, 0.0, 1.0);
  if (lr_init <= 0.0 || lr_final <= 0.0) return lr_init;
  return lr_init * std::pow(lr_final / lr_init, progress);
}

}  // namespace meshfield
