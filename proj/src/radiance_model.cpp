// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/radiance_model.hpp"

#include "meshfield/error.hpp"

namespace meshfield {

FieldParams::FieldParams(const FieldConfig& cfg, std::uint64_t seed) : config(cfg) {
  std::mt19937_64 rng(seed);
  const std::size_t in = ad::encoded_size(cfg.pe_degree);
  MlpSpec spec{in, cfg.width, cfg.depth, 1, cfg.skips, Activation::sigmoid};
  opacity = Mlp("opacity", spec, rng);
  opacity.layers().back().bias.value.fill(cfg.opacity_bias);
  spec.output = kFeatureCount;
  features = Mlp("features", spec, rng);
  shader = Mlp("shader", MlpSpec{kFeatureCount + 3, cfg.shader_width, cfg.shader_depth, 3, {}, Activation::sigmoid}, rng);
}

std::vector<ad::Parameter*> FieldParams::all_parameters() {
  auto out = opacity.parameters();
  for (auto* p : features.parameters()) out.push_back(p);
  for (auto* p : shader.parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> FieldParams::appearance_parameters() {
  auto out = features.parameters();
  for (auto* p : shader.parameters()) out.push_back(p);
  return out;
}

FieldSample field_eval(const FieldParams& params, const Vec3& p) {
  const std::array<double, 3> xyz{p.x(), p.y(), p.z()};
  const auto enc = ad::positional_encoding(std::span<const double, 3>(xyz), params.config.pe_degree);
  FieldSample s;
  s.alpha = params.opacity.forward(enc)[0];
  const auto f = params.features.forward(enc);
  std::copy(f.begin(), f.end(), s.features.begin());
  return s;
}

std::pair<ad::Tensor, ad::Tensor> field_eval_batch(const FieldParams& params, const ad::Tensor& points,
                                                   bool want_features) {
  const int degree = params.config.pe_degree;
  ad::Tensor enc(points.rows(), ad::encoded_size(degree));
  for (std::size_t r = 0; r < points.rows(); ++r) {
    const auto e = ad::positional_encoding(std::span<const double, 3>(points.row(r).data(), 3), degree);
    std::copy(e.begin(), e.end(), enc.row(r).data());
  }
  ad::Tensor alpha = params.opacity.forward_batch(enc);
  ad::Tensor feats = want_features ? params.features.forward_batch(enc) : ad::Tensor();
  return {std::move(alpha), std::move(feats)};
}

FieldVars field_eval(ad::Tape& tape, FieldParams& params, ad::Var points, bool train_opacity, bool train_features) {
  ad::Var enc = ad::positional_encoding(points, params.config.pe_degree);
  return {params.opacity.forward(tape, enc, train_opacity), params.features.forward(tape, enc, train_features)};
}

Rgb shade(const FieldParams& params, const Features& f, const Vec3& d) {
  std::array<double, kFeatureCount + 3> x{};
  std::copy(f.begin(), f.end(), x.begin());
  for (int c = 0; c < 3; ++c) x[kFeatureCount + c] = d[c];
  const auto y = params.shader.forward(x);
  return {y[0], y[1], y[2]};
}

ad::Var shade(ad::Tape& tape, FieldParams& params, ad::Var features, ad::Var directions, bool trainable) {
  return params.shader.forward(tape, ad::concat_cols(features, directions), trainable);
}

ad::Var binarize(ad::Var alpha) {
  const ad::Tensor& a = alpha.value();
  ad::Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = binarize(a[i]);
  const std::size_t ai = alpha.id();
  return alpha.tape().push(std::move(out), alpha.requires_grad(), [ai](ad::Tape& tape, std::size_t self) {
    const ad::Tensor& g = *tape.find_grad(self);
    ad::Tensor& ga = tape.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

std::vector<double> composite_weights(std::span<const double> alphas) {
  std::vector<double> w(alphas.size());
  double T = 1.0;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    w[k] = T * alphas[k];
    T *= 1.0 - alphas[k];
  }
  return w;
}

CompositeResult composite(std::span<const double> alphas, std::span<const double> values, std::size_t n) {
  if (values.size() != alphas.size() * n) throw ConfigError("composite: alphas and values differ in length");
  CompositeResult out;
  out.value.assign(n, 0.0);
  double T = 1.0;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const double w = T * alphas[k];
    for (std::size_t c = 0; c < n; ++c) out.value[c] += w * values[k * n + c];
    T *= 1.0 - alphas[k];
  }
  out.residual = T;
  return out;
}

ad::Var composite_weights(ad::Var alpha, std::span<const std::size_t> offsets) {
  const ad::Tensor& a = alpha.value();
  if (a.cols() != 1 || offsets.empty() || offsets.back() != a.rows())
    throw ConfigError("composite_weights: alpha must be [S,1] covered by offsets");
  ad::Tensor w(a.rows(), 1);
  for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
    double T = 1.0;
    for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
      w[k] = T * a[k];
      T *= 1.0 - a[k];
    }
  }
  const std::size_t ai = alpha.id();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return alpha.tape().push(std::move(w), alpha.requires_grad(), [ai, off = std::move(off)](ad::Tape& tape, std::size_t self) {
    // dL/dalpha_k = T_k (g_k - U_{k+1}),  U_k = g_k alpha_k + (1 - alpha_k) U_{k+1}
    const ad::Tensor& g = *tape.find_grad(self);
    const ad::Tensor& a = tape.value(ai);
    ad::Tensor& ga = tape.grad_buffer(ai);
    std::vector<double> trans;
    for (std::size_t r = 0; r + 1 < off.size(); ++r) {
      const std::size_t b = off[r], e = off[r + 1];
      trans.resize(e - b);
      double T = 1.0;
      for (std::size_t k = b; k < e; ++k) {
        trans[k - b] = T;
        T *= 1.0 - a[k];
      }
      double U = 0.0;
      for (std::size_t k = e; k-- > b;) {
        ga[k] += trans[k - b] * (g[k] - U);
        U = g[k] * a[k] + (1.0 - a[k]) * U;
      }
    }
  });
}

ad::Var composite(ad::Var alpha, ad::Var values, std::span<const std::size_t> offsets) {
  return ad::segment_sum(ad::mul_rows(composite_weights(alpha, offsets), values), offsets);
}

}  // namespace meshfield
