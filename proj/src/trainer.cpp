// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "meshfield/error.hpp"
#include "meshfield/parallel.hpp"

namespace meshfield {

namespace {

struct RayBatch {
  std::vector<std::size_t> offsets{0};
  std::vector<std::array<std::uint32_t, 3>> vertices;
  std::vector<Vec3> bary;
  std::vector<double> t;
  std::vector<Vec3> points;
  std::vector<Vec3> ray_dirs;

  std::size_t rays() const { return offsets.size() - 1; }
  std::size_t samples() const { return vertices.size(); }
};

RayBatch build_batch(const TrainState& state, std::span<const Ray> rays, std::span<const Vec3> positions,
                     const QuadratureOptions& options) {
  RayBatch b;
  const auto* grid = options.prune ? &state.grid : nullptr;
  for (const Ray& ray : rays) {
    for (const auto& h : quadrature(ray, state.lattice.config, state.lattice.topology, positions, grid, options)) {
      b.vertices.push_back(state.lattice.topology.triangle(h.triangle));
      b.bary.push_back(h.bary);
      b.t.push_back(h.t);
      b.points.push_back(h.point);
    }
    b.offsets.push_back(b.vertices.size());
    b.ray_dirs.push_back(ray.direction);
  }
  return b;
}

ad::Tensor rows_tensor(std::span<const Vec3> v) {
  ad::Tensor out(v.size(), 3);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int c = 0; c < 3; ++c) out(i, c) = v[i][c];
  return out;
}

/// Ray direction of every sample.
ad::Tensor sample_directions(const RayBatch& b) {
  ad::Tensor out(b.samples(), 3);
  for (std::size_t r = 0; r < b.rays(); ++r)
    for (std::size_t k = b.offsets[r]; k < b.offsets[r + 1]; ++k)
      for (int c = 0; c < 3; ++c) out(k, c) = b.ray_dirs[r][c];
  return out;
}

double sum_squares(const ad::Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

struct PixelPick {
  std::size_t view = 0;
  int x = 0;
  int y = 0;
};

std::vector<PixelPick> pick_pixels(const Dataset& data, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> starts{0};
  for (const auto& v : data.train)
    starts.push_back(starts.back() + static_cast<std::size_t>(v.image.width) * v.image.height);
  const std::size_t total = starts.back();
  if (total == 0) throw ConfigError("training set has no pixels");
  std::vector<PixelPick> out(n);
  std::uint64_t s = seed;
  for (auto& p : out) {
    s = mix_seed(s);
    const std::size_t idx = s % total;
    const auto it = std::upper_bound(starts.begin(), starts.end(), idx) - 1;
    p.view = static_cast<std::size_t>(it - starts.begin());
    const std::size_t local = idx - *it;
    const int w = data.train[p.view].image.width;
    p.x = static_cast<int>(local % w);
    p.y = static_cast<int>(local / w);
  }
  return out;
}

struct ShardResult {
  std::unique_ptr<ad::Tape> tape;
  double color = 0.0;
  double color_binary = 0.0;
  double distortion = 0.0;
  std::size_t rays = 0;
  std::size_t samples = 0;
  std::vector<GridSample> grid;
};

void collect_grid_samples(const TrainState& state, const RayBatch& b, const ad::Tensor& w,
                          std::vector<GridSample>& out) {
  for (std::size_t k = 0; k < b.samples(); ++k)
    if (auto v = sample_voxel(state.lattice.config, b.points[k])) out.push_back({*v, w[k]});
}

void stage1_shard(TrainState& state, std::span<const Ray> rays, const ad::Tensor& gt,
                  std::span<const Vec3> positions, const QuadratureOptions& options, double color_norm,
                  double dist_norm, ShardResult& out) {
  const RayBatch b = build_batch(state, rays, positions, options);
  out.rays = b.rays();
  out.samples = b.samples();
  if (b.samples() == 0) {
    out.color = sum_squares(gt) * color_norm;
    return;
  }
  ad::Tape& tape = *out.tape;
  ad::Var offsets = tape.param(state.lattice.offsets);
  ad::Var points = interpolate_points(offsets, state.lattice.config, state.lattice.topology, b.vertices, b.bary);
  FieldVars fv = field_eval(tape, state.field, points);
  ad::Var colors = shade(tape, state.field, fv.features, tape.constant(sample_directions(b)));
  ad::Var w = composite_weights(fv.alpha, b.offsets);
  ad::Var rendered = ad::segment_sum(ad::mul_rows(w, colors), b.offsets);
  ad::Var color = ad::scale(ad::sum(ad::square(ad::sub(rendered, tape.constant(gt)))), color_norm);
  ad::Var loss = color;
  if (dist_norm > 0.0) {
    ad::Var dist = ad::scale(distortion_loss(w, b.t, b.offsets), dist_norm);
    out.distortion = dist.value().item();
    loss = ad::add(loss, dist);
  }
  out.color = color.value().item();
  tape.backward(loss);
  collect_grid_samples(state, b, w.value(), out.grid);
}

/// Opacity and vertex offsets are held fixed while fine-tuning and during the
/// first stage-2 steps, when the shader first sees composited features.
bool geometry_frozen(const TrainState& state) {
  return state.stage == 3 || (state.stage == 2 && state.step < static_cast<std::uint64_t>(state.config.stage2_warmup_steps));
}

void supersampled_shard(TrainState& state, std::span<const Ray> rays, std::size_t group, const ad::Tensor& gt,
                        std::span<const Vec3> positions, const QuadratureOptions& options, double color_norm,
                        double dist_norm, ShardResult& out) {
  const bool finetune = state.stage == 3;
  const bool frozen = geometry_frozen(state);
  const RayBatch b = build_batch(state, rays, positions, options);
  out.rays = b.rays();
  out.samples = b.samples();
  if (b.samples() == 0) {
    out.color_binary = sum_squares(gt) * color_norm;
    if (!finetune) out.color = out.color_binary;
    return;
  }
  ad::Tape& tape = *out.tape;
  ad::Var offsets = frozen ? tape.frozen(state.lattice.offsets) : tape.param(state.lattice.offsets);
  ad::Var points = frozen ? tape.constant(rows_tensor(b.points))
                            : interpolate_points(offsets, state.lattice.config, state.lattice.topology, b.vertices,
                                                 b.bary);
  FieldVars fv = field_eval(tape, state.field, points, !frozen, true);
  ad::Var target = tape.constant(gt);
  auto color_loss = [&](ad::Var rendered) {
    return ad::scale(ad::sum(ad::square(ad::sub(rendered, target))), color_norm);
  };
  SupersampledBranch bin =
      supersampled_branch(tape, state.field, fv.alpha, fv.features, b.offsets, b.ray_dirs, group, true);
  ad::Var lbin = color_loss(bin.color);
  out.color_binary = lbin.value().item();
  ad::Var loss = lbin;
  if (!finetune) {
    SupersampledBranch cont =
        supersampled_branch(tape, state.field, fv.alpha, fv.features, b.offsets, b.ray_dirs, group, false);
    ad::Var lcont = color_loss(cont.color);
    out.color = lcont.value().item();
    loss = ad::add(ad::scale(lbin, 0.5), ad::scale(lcont, 0.5));
    if (dist_norm > 0.0) {
      ad::Var dist = ad::scale(distortion_loss(cont.weights, b.t, b.offsets), dist_norm);
      out.distortion = dist.value().item();
      loss = ad::add(loss, dist);
    }
    collect_grid_samples(state, b, cont.weights.value(), out.grid);
  }
  tape.backward(loss);
}

void check_finite(double v, const char* what, const TrainState& state) {
  if (!std::isfinite(v))
    throw TrainingError(std::string("non-finite ") + what + " at stage " + std::to_string(state.stage) + " step " +
                        std::to_string(state.step));
}

void check_gradients(std::span<ad::Parameter* const> params) {
  for (const auto* p : params)
    if (!p->grad.all_finite()) throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
}

}  // namespace

TrainState::TrainState(const TrainConfig& cfg)
    : config(cfg),
      lattice(cfg.lattice),
      grid(cfg.lattice.P, cfg.grid_threshold),
      field(cfg.field, mix_seed(cfg.seed)) {
  config.validate();
  adam = AdamState(network_parameters(), AdamConfig{cfg.lr_init});
  offsets_adam = AdamState(offset_parameters(), AdamConfig{cfg.lr_init * cfg.offsets_lr_scale});
  grid_adam = AdamState(grid_parameters(), AdamConfig{cfg.grid_lr});
}

std::vector<ad::Parameter*> TrainState::finetune_parameters() { return field.appearance_parameters(); }

ScheduleLimits current_limits(const TrainState& state) {
  const int P = state.config.lattice.P;
  if (state.stage == 1) {
    const int steps = state.config.stage1_steps;
    const double progress = steps > 0 ? static_cast<double>(state.step) / steps : 1.0;
    return schedule_limits(progress, P);
  }
  // Later stages batch pixels, not rays; only the final voxel limit carries over.
  ScheduleLimits last = schedule_limits(1.0, P);
  last.batch_multiplier = 1;
  return last;
}

QuadratureOptions quadrature_options(const TrainState& state, const ScheduleLimits& limits) {
  QuadratureOptions o;
  o.prune = limits.use_pruning;
  o.threshold = state.grid.threshold;
  o.limit = limits.limit;
  return o;
}

QuadratureOptions quadrature_options(const TrainState& state) {
  return quadrature_options(state, current_limits(state));
}

StepStats train_step(TrainState& state, const Dataset& data, int threads) {
  if (state.stage < 1 || state.stage > 3) throw TrainingError("training already finished");
  const auto& cfg = state.config;
  const ScheduleLimits limits = current_limits(state);
  const QuadratureOptions options = quadrature_options(state, limits);
  const std::vector<Vec3> positions = state.lattice.positions();
  const bool stage1 = state.stage == 1;
  const bool finetune = state.stage == 3;

  const std::size_t batch = stage1 ? static_cast<std::size_t>(cfg.batch_rays) * limits.batch_multiplier
                                   : static_cast<std::size_t>(cfg.batch_pixels);
  const std::size_t shard_size = stage1 ? kShardRays : kShardPixels;
  const std::size_t shards = (batch + shard_size - 1) / shard_size;
  const int ss = stage1 ? 1 : cfg.supersample;
  const auto sub = subpixel_offsets(ss);
  const std::size_t group = sub.size();

  const std::uint64_t seed = mix_seed(cfg.seed ^ mix_seed((static_cast<std::uint64_t>(state.stage) << 40) + state.step));
  const auto picks = pick_pixels(data, batch, seed);
  const double color_norm = 1.0 / (3.0 * static_cast<double>(batch));
  const double dist_norm = cfg.distortion_weight() / static_cast<double>(batch * group);

  const bool frozen = geometry_frozen(state);
  const auto trainable = frozen ? state.finetune_parameters() : state.network_parameters();
  for (auto* p : trainable) p->zero_grad();
  state.lattice.offsets.zero_grad();
  state.grid.values.zero_grad();

  std::vector<ShardResult> results(shards);
  parallel_for(shards, resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const std::size_t p0 = s * shard_size;
      const std::size_t p1 = std::min(batch, p0 + shard_size);
      std::vector<Ray> rays;
      ad::Tensor gt(p1 - p0, 3);
      for (std::size_t i = p0; i < p1; ++i) {
        const auto& pick = picks[i];
        const View& view = data.train[pick.view];
        for (const auto& [ox, oy] : sub) rays.push_back(view.camera.ray(pick.x + ox, pick.y + oy));
        for (int c = 0; c < 3; ++c) gt(i - p0, c) = view.image.pixel(pick.x, pick.y)[c];
      }
      auto& r = results[s];
      r.tape = std::make_unique<ad::Tape>();
      if (stage1)
        stage1_shard(state, rays, gt, positions, options, color_norm, dist_norm, r);
      else
        supersampled_shard(state, rays, group, gt, positions, options, color_norm, dist_norm, r);
    }
  });

  StepStats stats;
  stats.stage = state.stage;
  stats.step = state.step;
  stats.quadrature_limit = limits.limit;
  stats.batch_multiplier = limits.batch_multiplier;
  std::vector<GridSample> grid_samples;
  for (auto& r : results) {
    stats.color += r.color;
    stats.color_binary += r.color_binary;
    stats.distortion += r.distortion;
    stats.rays += r.rays;
    stats.samples += r.samples;
    grid_samples.insert(grid_samples.end(), r.grid.begin(), r.grid.end());
    r.tape->accumulate_gradients();
  }
  results.clear();

  if (stage1)
    stats.loss = stats.color + stats.distortion;
  else if (finetune)
    stats.loss = stats.color_binary;
  else
    stats.loss = stage2_color_loss(stats.color_binary, stats.color) + stats.distortion;

  if (!finetune) {
    ad::Tape tape;
    ad::Var lv = ad::scale(vertex_regularizer(tape.param(state.lattice.offsets)), cfg.w_v);
    stats.vertex = lv.value().item();
    tape.backward(lv);
    tape.accumulate_gradients();
    stats.loss += stats.vertex;

    ad::Tape gtape;
    GridLossVars gl = grid_losses(gtape, state.grid, grid_samples, cfg.grid_weights);
    stats.grid = gl.total.value().item();
    gtape.backward(gl.total);
    gtape.accumulate_gradients();
  }

  check_finite(stats.loss, "loss", state);
  check_finite(stats.grid, "grid loss", state);
  check_gradients(trainable);
  if (!finetune) {
    check_gradients(state.offset_parameters());
    check_gradients(state.grid_parameters());
  }

  const int steps = cfg.stage_steps(state.stage);
  const double progress = steps > 0 ? static_cast<double>(state.step) / steps : 1.0;
  stats.lr = exponential_lr(cfg.lr_init, cfg.lr_final, progress);
  if (frozen) {
    state.finetune_adam.config.lr = stats.lr;
    adam_step(trainable, state.finetune_adam);
  } else {
    state.adam.config.lr = stats.lr;
    adam_step(trainable, state.adam);
    state.offsets_adam.config.lr = stats.lr * cfg.offsets_lr_scale;
    adam_step(state.offset_parameters(), state.offsets_adam);
  }
  if (!finetune) {
    state.grid_adam.config.lr = cfg.grid_lr;
    adam_step(state.grid_parameters(), state.grid_adam);
    state.grid.project_nonnegative();
  }
  ++state.step;
  return stats;
}

void advance_stage(TrainState& state) {
  if (state.stage > 3) return;
  ++state.stage;
  state.step = 0;
  // Appearance-only steps (stage-2 warmup, fine-tuning) get fresh moments.
  if (state.stage == 2 || state.stage == 3) {
    const auto params = state.finetune_parameters();
    state.finetune_adam = AdamState(params, AdamConfig{state.config.lr_init});
  }
}

void run_stage(TrainState& state, const Dataset& data, int threads,
               const std::function<void(const StepStats&)>& on_step) {
  const int stage = state.stage;
  const auto steps = static_cast<std::uint64_t>(state.config.stage_steps(stage));
  while (state.stage == stage && state.step < steps) {
    const StepStats s = train_step(state, data, threads);
    if (on_step) on_step(s);
  }
  advance_stage(state);
}

// ---- losses ----------------------------------------------------------------------

namespace {

std::vector<double> normalized_depths(std::span<const double> t) {
  std::vector<double> s(t.size(), 0.0);
  if (t.empty()) return s;
  const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
  const double range = *hi - *lo;
  if (range > 0.0)
    for (std::size_t i = 0; i < t.size(); ++i) s[i] = (t[i] - *lo) / range;
  return s;
}

}  // namespace

double distortion_loss(std::span<const double> weights, std::span<const double> depths) {
  const auto s = normalized_depths(depths);
  double out = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) out += weights[i] * weights[j] * std::abs(s[i] - s[j]);
  return out;
}

ad::Var distortion_loss(ad::Var weights, std::span<const double> depths, std::span<const std::size_t> offsets) {
  const ad::Tensor& w = weights.value();
  if (w.cols() != 1 || w.rows() != depths.size() || offsets.empty() || offsets.back() != w.rows())
    throw ConfigError("distortion_loss: shape mismatch");
  std::vector<double> s(depths.size());
  for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
    const auto seg = normalized_depths(depths.subspan(offsets[r], offsets[r + 1] - offsets[r]));
    std::copy(seg.begin(), seg.end(), s.begin() + static_cast<std::ptrdiff_t>(offsets[r]));
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  double total = 0.0;
  for (std::size_t r = 0; r + 1 < off.size(); ++r)
    for (std::size_t i = off[r]; i < off[r + 1]; ++i)
      for (std::size_t j = off[r]; j < off[r + 1]; ++j) total += w[i] * w[j] * std::abs(s[i] - s[j]);
  const std::size_t wi = weights.id();
  return weights.tape().push(ad::Tensor::scalar(total), weights.requires_grad(),
                             [wi, s = std::move(s), off = std::move(off)](ad::Tape& tape, std::size_t self) {
                               const double g = tape.find_grad(self)->item();
                               const ad::Tensor& w = tape.value(wi);
                               ad::Tensor& gw = tape.grad_buffer(wi);
                               for (std::size_t r = 0; r + 1 < off.size(); ++r)
                                 for (std::size_t i = off[r]; i < off[r + 1]; ++i) {
                                   double acc = 0.0;
                                   for (std::size_t j = off[r]; j < off[r + 1]; ++j)
                                     acc += w[j] * std::abs(s[i] - s[j]);
                                   gw[i] += 2.0 * g * acc;
                                 }
                             });
}

SupersampledBranch supersampled_branch(ad::Tape& tape, FieldParams& field, ad::Var alpha, ad::Var features,
                                       std::span<const std::size_t> offsets, std::span<const Vec3> directions,
                                       std::size_t group, bool binary, bool train_shader) {
  const std::size_t rays = offsets.size() - 1;
  if (group == 0 || rays % group != 0 || directions.size() != rays)
    throw ConfigError("supersampled_branch: ray count must be a multiple of the group size");
  const std::size_t pixels = rays / group;
  ad::Var a = binary ? binarize(alpha) : alpha;
  ad::Var w = composite_weights(a, offsets);
  ad::Var mean_features = ad::group_mean(ad::segment_sum(ad::mul_rows(w, features), offsets), group);

  // Opacity-weighted mean direction per pixel; pixels with no opacity fall
  // back to the plain mean so the shader input stays defined.
  ad::Tensor ray_dirs(rays, 3), plain(pixels, 3);
  for (std::size_t r = 0; r < rays; ++r)
    for (int c = 0; c < 3; ++c) {
      ray_dirs(r, c) = directions[r][c];
      plain(r / group, c) += directions[r][c];
    }
  ad::Var acc = ad::segment_sum(w, offsets);
  ad::Var weighted = ad::group_mean(ad::mul_rows(acc, tape.constant(std::move(ray_dirs))), group);
  std::vector<char> empty(pixels, 0);
  const ad::Tensor& accv = acc.value();
  for (std::size_t p = 0; p < pixels; ++p) {
    double total = 0.0;
    for (std::size_t r = p * group; r < (p + 1) * group; ++r) total += accv[r];
    empty[p] = total == 0.0;
  }
  ad::Var dirs = ad::normalize_rows(ad::replace_rows(weighted, plain, empty));
  ad::Var color = shade(tape, field, mean_features, dirs, train_shader);
  color = ad::replace_rows(color, ad::Tensor(pixels, 3), empty);
  return {color, w};
}

// ---- tape-free rendering -------------------------------------------------------

std::optional<std::uint32_t> sample_voxel(const LatticeConfig& config, const Vec3& world) {
  const auto p = unwarp_point(config, world);
  if (!p || (p->array().abs() > 0.5).any()) return std::nullopt;
  const VoxelIndex v = voxel_containing(config.P, *p);
  return voxel_id(config.P, v.i, v.j, v.k);
}

TracedRays trace_rays(const TrainState& state, std::span<const Ray> rays, std::span<const Vec3> positions,
                      const QuadratureOptions& options, bool want_features) {
  TracedRays out;
  out.offsets.push_back(0);
  const auto* grid = options.prune ? &state.grid : nullptr;
  for (const Ray& ray : rays) {
    auto hits = quadrature(ray, state.lattice.config, state.lattice.topology, positions, grid, options);
    out.samples.insert(out.samples.end(), hits.begin(), hits.end());
    out.offsets.push_back(out.samples.size());
  }
  ad::Tensor points(out.samples.size(), 3);
  for (std::size_t k = 0; k < out.samples.size(); ++k)
    for (int c = 0; c < 3; ++c) points(k, c) = out.samples[k].point[c];
  if (!out.samples.empty()) {
    auto [alpha, features] = field_eval_batch(state.field, points, want_features);
    out.alpha = std::move(alpha);
    out.features = std::move(features);
  }
  return out;
}

namespace {

/// Shades every sample of traced rays and composites per ray.
std::vector<Rgb> composite_stage1(const TrainState& state, const TracedRays& tr, std::span<const Ray> rays,
                                  std::vector<GridSample>* grid_samples) {
  const std::size_t S = tr.samples.size();
  std::vector<Rgb> out(rays.size(), Rgb{0, 0, 0});
  if (S == 0) return out;
  ad::Tensor x(S, kFeatureCount + 3);
  for (std::size_t r = 0; r < rays.size(); ++r)
    for (std::size_t k = tr.offsets[r]; k < tr.offsets[r + 1]; ++k) {
      for (std::size_t c = 0; c < kFeatureCount; ++c) x(k, c) = tr.features(k, c);
      for (int c = 0; c < 3; ++c) x(k, kFeatureCount + c) = rays[r].direction[c];
    }
  const ad::Tensor colors = state.field.shader.forward_batch(x);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const std::size_t b = tr.offsets[r], e = tr.offsets[r + 1];
    const std::span<const double> alphas(tr.alpha.data() + b, e - b);
    const std::span<const double> values(colors.data() + b * 3, (e - b) * 3);
    const CompositeResult c = composite(alphas, values, 3);
    out[r] = {c.value[0], c.value[1], c.value[2]};
    if (grid_samples) {
      const auto w = composite_weights(alphas);
      for (std::size_t k = b; k < e; ++k)
        if (auto v = sample_voxel(state.lattice.config, tr.samples[k].point)) grid_samples->push_back({*v, w[k - b]});
    }
  }
  return out;
}

/// Supersampled shading of pixels whose sub-rays are consecutive groups.
std::vector<Rgb> composite_supersampled(const TrainState& state, const TracedRays& tr, std::span<const Ray> rays,
                                        std::size_t group, const SupersampleOptions& ss) {
  const std::size_t pixels = rays.size() / group;
  std::vector<Rgb> out(pixels, Rgb{0, 0, 0});
  const bool binary = ss.mode == PixelMode::binary;
  std::vector<std::size_t> shaded;
  std::vector<double> inputs;
  for (std::size_t p = 0; p < pixels; ++p) {
    Features mean{};
    Vec3 d = Vec3::Zero();
    double total = 0.0;
    for (std::size_t r = p * group; r < (p + 1) * group; ++r) {
      Features f{};
      double acc = 0.0;
      double trans = 1.0;
      for (std::size_t k = tr.offsets[r]; k < tr.offsets[r + 1]; ++k) {
        const double a = binary ? binarize(tr.alpha[k]) : tr.alpha[k];
        const double w = trans * a;
        if (w != 0.0) {
          for (std::size_t c = 0; c < kFeatureCount; ++c) {
            double v = tr.features(k, c);
            if (binary && ss.quantize) {
              std::uint8_t q = quantize_unit(v);
              if (c == 0 && q == 0) q = 1;
              v = dequantize_unit(q);
            }
            f[c] += w * v;
          }
        }
        acc += w;
        trans *= 1.0 - a;
        if (binary && trans == 0.0) break;
      }
      for (std::size_t c = 0; c < kFeatureCount; ++c) mean[c] += f[c];
      d += acc * rays[r].direction;
      total += acc;
    }
    if (total == 0.0) continue;
    d.normalize();
    shaded.push_back(p);
    for (std::size_t c = 0; c < kFeatureCount; ++c) inputs.push_back(mean[c] / static_cast<double>(group));
    for (int c = 0; c < 3; ++c) inputs.push_back(d[c]);
  }
  if (shaded.empty()) return out;
  const ad::Tensor colors = state.field.shader.forward_batch(ad::Tensor(shaded.size(), kFeatureCount + 3, inputs));
  for (std::size_t i = 0; i < shaded.size(); ++i) out[shaded[i]] = {colors(i, 0), colors(i, 1), colors(i, 2)};
  return out;
}

}  // namespace

RayRender render_ray_stage1(const TrainState& state, const Ray& ray, std::span<const Vec3> positions,
                            const QuadratureOptions& options) {
  const std::array<Ray, 1> rays{ray};
  const TracedRays tr = trace_rays(state, rays, positions, options);
  RayRender out;
  out.color = composite_stage1(state, tr, rays, &out.grid_samples)[0];
  return out;
}

Rgb render_pixel_supersampled(const TrainState& state, const Camera& camera, int px, int py,
                              std::span<const Vec3> positions, const QuadratureOptions& options,
                              const SupersampleOptions& ss) {
  std::vector<Ray> rays;
  const auto sub = subpixel_offsets(ss.supersample);
  for (const auto& [ox, oy] : sub) rays.push_back(camera.ray(px + ox, py + oy));
  const TracedRays tr = trace_rays(state, rays, positions, options);
  return composite_supersampled(state, tr, rays, sub.size(), ss)[0];
}

Image render_stage1(const TrainState& state, const Camera& camera, int threads) {
  Image img(camera.width, camera.height);
  const auto positions = state.lattice.positions();
  const auto options = quadrature_options(state);
  parallel_for(static_cast<std::size_t>(camera.height), resolve_threads(threads), [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      std::vector<Ray> rays;
      for (int x = 0; x < camera.width; ++x) rays.push_back(camera.ray(x + 0.5, static_cast<double>(y) + 0.5));
      const TracedRays tr = trace_rays(state, rays, positions, options);
      const auto colors = composite_stage1(state, tr, rays, nullptr);
      for (int x = 0; x < camera.width; ++x)
        for (int c = 0; c < 3; ++c) img.pixel(x, static_cast<int>(y))[c] = static_cast<float>(colors[x][c]);
    }
  });
  return img;
}

Image render_supersampled(const TrainState& state, const Camera& camera, const SupersampleOptions& ss, int threads) {
  Image img(camera.width, camera.height);
  const auto positions = state.lattice.positions();
  const auto options = quadrature_options(state);
  const auto sub = subpixel_offsets(ss.supersample);
  parallel_for(static_cast<std::size_t>(camera.height), resolve_threads(threads), [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      std::vector<Ray> rays;
      for (int x = 0; x < camera.width; ++x)
        for (const auto& [ox, oy] : sub) rays.push_back(camera.ray(x + ox, static_cast<double>(y) + oy));
      const TracedRays tr = trace_rays(state, rays, positions, options);
      const auto colors = composite_supersampled(state, tr, rays, sub.size(), ss);
      for (int x = 0; x < camera.width; ++x)
        for (int c = 0; c < 3; ++c) img.pixel(x, static_cast<int>(y))[c] = static_cast<float>(colors[x][c]);
    }
  });
  return img;
}

EvalResult evaluate(std::span<const View> views, const std::function<Image(const Camera&)>& render) {
  EvalResult out;
  for (const auto& v : views) out.psnr.push_back(psnr(render(v.camera), v.image));
  double sum = 0.0;
  for (double p : out.psnr) sum += p;
  out.mean_psnr = out.psnr.empty() ? 0.0 : sum / static_cast<double>(out.psnr.size());
  return out;
}

}  // namespace meshfield
