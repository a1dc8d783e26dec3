// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "meshfield/error.hpp"
#include "meshfield/trainer.hpp"

using namespace meshfield;

namespace {

using testing::tiny_config;

const Dataset& tiny_data() {
  static const Dataset d = make_toy_dataset(toy_scene("spheres"), tiny_config().toy);
  return d;
}

/// All parameter values of a state, flattened.
std::vector<double> flatten(TrainState& s) {
  std::vector<double> out;
  auto add = [&](const std::vector<ad::Parameter*>& ps) {
    for (auto* p : ps) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  };
  add(s.network_parameters());
  add(s.offset_parameters());
  add(s.grid_parameters());
  return out;
}

}  // namespace

TEST_CASE("distortion of a single sample is zero and of two samples is 2 w0 w1") {
  const std::vector<double> w1{0.7}, t1{2.0};
  CHECK(distortion_loss(w1, t1) == 0.0);
  const std::vector<double> w2{0.3, 0.6}, t2{1.0, 5.0};
  CHECK(distortion_loss(w2, t2) == doctest::Approx(2 * 0.3 * 0.6));

  ad::Tape tape;
  const std::vector<std::size_t> off{0, 1, 3};
  const std::vector<double> t{4.0, 1.0, 5.0};
  auto v = distortion_loss(tape.constant(ad::Tensor(3, 1, std::vector<double>{0.7, 0.3, 0.6})), t, off);
  CHECK(v.value().item() == doctest::Approx(2 * 0.3 * 0.6));
}

TEST_CASE("stage-2 colour loss averages the two branches") {
  CHECK(stage2_color_loss(0.4, 0.2) == doctest::Approx(0.3));
}

TEST_CASE("a ray that misses the lattice renders black") {
  TrainState s(tiny_config());
  const auto pos = s.lattice.positions();
  const Ray miss{Vec3(0, 5, 5), Vec3(0, 0, 1)};
  const auto r = render_ray_stage1(s, miss, pos, quadrature_options(s));
  CHECK(r.color == Rgb{0, 0, 0});
  CHECK(r.grid_samples.empty());
}

TEST_CASE("a saturated first sample takes its own colour") {
  TrainConfig c = tiny_config();
  c.field.opacity_bias = 60.0;  // alpha = sigmoid(60) rounds to one
  TrainState s(c);
  const auto pos = s.lattice.positions();
  const Ray ray{Vec3(0.05, 0.1, 3), Vec3(0, 0, -1)};
  const auto r = render_ray_stage1(s, ray, pos, quadrature_options(s));
  const auto hits = quadrature(ray, s.lattice.config, s.lattice.topology, pos, nullptr, quadrature_options(s));
  REQUIRE(!hits.empty());
  const auto first = field_eval(s.field, hits[0].point);
  const Rgb c1 = shade(s.field, first.features, ray.direction);
  for (int k = 0; k < 3; ++k) CHECK(r.color[k] == doctest::Approx(c1[k]).epsilon(1e-12));
}

TEST_CASE("identical sub-rays shade like a single ray") {
  TrainState s(tiny_config());
  ad::Tape tape;
  ad::Tensor alpha(3, 1, std::vector<double>{0.3, 0.8, 0.5});
  ad::Tensor feats(3, kFeatureCount);
  for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = 0.05 * static_cast<double>(i % 17);
  // Four copies of the same three-sample ray versus one.
  ad::Tensor alpha4(12, 1), feats4(12, kFeatureCount);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 3; ++k) {
      alpha4(3 * r + k, 0) = alpha(k, 0);
      for (std::size_t c = 0; c < kFeatureCount; ++c) feats4(3 * r + k, c) = feats(k, c);
    }
  const Vec3 d = Vec3(0.2, -0.3, -1).normalized();
  const std::vector<Vec3> d1{d}, d4{d, d, d, d};
  const std::vector<std::size_t> off1{0, 3}, off4{0, 3, 6, 9, 12};
  for (bool binary : {false, true}) {
    auto one = supersampled_branch(tape, s.field, tape.constant(alpha), tape.constant(feats), off1, d1, 1, binary);
    auto four = supersampled_branch(tape, s.field, tape.constant(alpha4), tape.constant(feats4), off4, d4, 4, binary);
    for (int k = 0; k < 3; ++k) CHECK(four.color.value()[k] == doctest::Approx(one.color.value()[k]).epsilon(1e-14));
  }
}

TEST_CASE("two missing sub-rays halve the shader input") {
  TrainState s(tiny_config());
  ad::Tape tape;
  Features f{};
  for (std::size_t c = 0; c < kFeatureCount; ++c) f[c] = 0.1 + 0.1 * static_cast<double>(c);
  ad::Tensor alpha(2, 1, 1.0), feats(2, kFeatureCount);
  for (int r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < kFeatureCount; ++c) feats(r, c) = f[c];
  const Vec3 d(0, 0, -1);
  const std::vector<Vec3> dirs{d, d, d, d};
  const std::vector<std::size_t> off{0, 1, 1, 2, 2};  // rays 1 and 3 miss
  auto out = supersampled_branch(tape, s.field, tape.constant(alpha), tape.constant(feats), off, dirs, 4, true);
  Features half{};
  for (std::size_t c = 0; c < kFeatureCount; ++c) half[c] = 0.5 * f[c];
  const Rgb want = shade(s.field, half, d);
  for (int k = 0; k < 3; ++k) CHECK(out.color.value()[k] == doctest::Approx(want[k]).epsilon(1e-14));
}

TEST_CASE("every sub-ray of a pixel receives gradient") {
  TrainState s(tiny_config());
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  ad::Parameter alpha("alpha", ad::Tensor(8, 1)), feats("features", ad::Tensor(8, kFeatureCount));
  for (double& v : alpha.value.values()) v = u(rng);
  for (double& v : feats.value.values()) v = u(rng);
  const std::vector<std::size_t> off{0, 2, 4, 6, 8};
  const std::vector<Vec3> dirs(4, Vec3(0, 0, -1));
  for (bool binary : {false, true}) {
    ad::Tape tape;
    auto a = tape.param(alpha), f = tape.param(feats);
    auto out = supersampled_branch(tape, s.field, a, f, off, dirs, 4, binary);
    tape.backward(ad::sum(out.color));
    const ad::Tensor ga = tape.grad(a), gf = tape.grad(f);
    for (int r = 0; r < 4; ++r) {
      double norm = std::abs(ga[2 * r]) + std::abs(ga[2 * r + 1]);
      for (std::size_t c = 0; c < kFeatureCount; ++c) norm += std::abs(gf(2 * r, c)) + std::abs(gf(2 * r + 1, c));
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("a pixel with no accumulated weight renders as background in both branches") {
  TrainState s(tiny_config());
  ad::Tape tape;
  ad::Tensor alpha(4, 1, 0.2), feats(4, kFeatureCount, 0.5);  // binary alpha is 0
  const std::vector<std::size_t> off{0, 1, 2, 3, 4};
  const std::vector<Vec3> dirs(4, Vec3(0, 0, -1));
  auto bin = supersampled_branch(tape, s.field, tape.constant(alpha), tape.constant(feats), off, dirs, 4, true);
  for (int k = 0; k < 3; ++k) CHECK(bin.color.value()[k] == 0.0);
  ad::Tensor zero(4, 1, 0.0);
  auto cont = supersampled_branch(tape, s.field, tape.constant(zero), tape.constant(feats), off, dirs, 4, false);
  for (int k = 0; k < 3; ++k) CHECK(cont.color.value()[k] == 0.0);
}

TEST_CASE("perfect predictions give zero colour loss") {
  TrainConfig c = tiny_config();
  TrainState s(c);
  Dataset d = tiny_data();
  for (auto& v : d.train) v.image = render_stage1(s, v.camera);
  const auto stats = train_step(s, d);
  CHECK(stats.color < 1e-12);
}

TEST_CASE("schedule in effect follows stage-1 progress") {
  TrainConfig c = tiny_config();
  c.stage1_steps = 8;
  TrainState s(c);
  const int P = c.lattice.P;
  const std::vector<std::pair<int, ScheduleLimits>> want{
      {0, {false, std::size_t(3 * P), 1}}, {1, {false, std::size_t(3 * P), 1}},
      {2, {true, std::size_t(3 * P / 2), 2}}, {3, {true, std::size_t(3 * P / 2), 2}},
      {4, {true, std::size_t(3 * P / 4), 4}}, {7, {true, std::size_t(3 * P / 4), 4}}};
  for (const auto& [step, limits] : want) {
    s.step = static_cast<std::uint64_t>(step);
    CHECK(current_limits(s) == limits);
  }
  s.stage = 2;
  s.step = 0;
  CHECK(current_limits(s) == ScheduleLimits{true, std::size_t(3 * P / 4), 1});
}

TEST_CASE("stage progression and fine-tuning freezes geometry and opacity") {
  TrainConfig c = tiny_config();
  // Opaque samples that survive pruning, so binary pixels carry gradient.
  c.field.opacity_bias = 3.0;
  c.grid_threshold = 0.0;
  TrainState s(c);
  const Dataset& d = tiny_data();
  run_stage(s, d, 1);
  CHECK(s.stage == 2);
  run_stage(s, d, 1);
  CHECK(s.stage == 3);
  const ad::Tensor offsets = s.lattice.offsets.value;
  std::vector<ad::Tensor> opacity;
  for (auto* p : s.field.opacity.parameters()) opacity.push_back(p->value);
  const ad::Tensor grid = s.grid.values.value;
  std::vector<ad::Tensor> shader;
  for (auto* p : s.field.shader.parameters()) shader.push_back(p->value);
  run_stage(s, d, 1);
  CHECK(s.stage == 4);
  CHECK(s.lattice.offsets.value == offsets);
  CHECK(s.grid.values.value == grid);
  auto op = s.field.opacity.parameters();
  for (std::size_t i = 0; i < op.size(); ++i) CHECK(op[i]->value == opacity[i]);
  bool shader_moved = false;
  auto sh = s.field.shader.parameters();
  for (std::size_t i = 0; i < sh.size(); ++i) shader_moved |= !(sh[i]->value == shader[i]);
  CHECK(shader_moved);
  CHECK_THROWS_AS(train_step(s, d), TrainingError);
}

TEST_CASE("stage-2 warmup trains appearance only, then geometry resumes") {
  TrainConfig c = tiny_config();
  c.field.opacity_bias = 3.0;
  c.grid_threshold = 0.0;
  c.stage2_steps = 4;
  c.stage2_warmup_steps = 2;
  TrainState s(c);
  const Dataset& d = tiny_data();
  run_stage(s, d, 1);
  REQUIRE(s.stage == 2);
  auto snapshot = [&] {
    std::vector<ad::Tensor> out{s.lattice.offsets.value};
    for (auto* p : s.field.opacity.parameters()) out.push_back(p->value);
    return out;
  };
  auto shader_values = [&] {
    std::vector<ad::Tensor> out;
    for (auto* p : s.field.shader.parameters()) out.push_back(p->value);
    return out;
  };
  const auto geometry = snapshot();
  const auto shader = shader_values();
  train_step(s, d);
  train_step(s, d);
  CHECK(snapshot() == geometry);
  CHECK_FALSE(shader_values() == shader);
  train_step(s, d);
  CHECK_FALSE(snapshot() == geometry);
}

TEST_CASE("fixed seed reruns are bit-identical and independent of threads") {
  auto run = [](int threads, std::uint64_t seed) {
    TrainConfig c = tiny_config();
    c.seed = seed;
    TrainState s(c);
    const Dataset& d = tiny_data();
    for (int stage = 1; stage <= 3; ++stage) run_stage(s, d, threads);
    return flatten(s);
  };
  const auto a = run(1, 5);
  CHECK(a == run(1, 5));
  CHECK(a == run(3, 5));
  CHECK(a != run(1, 6));
}

TEST_CASE("non-finite loss aborts the step before any update") {
  TrainState s(tiny_config());
  auto* w = s.field.features.parameters().front();
  w->value[0] = std::nan("");
  const auto before = s.lattice.offsets.value;
  CHECK_THROWS_AS(train_step(s, tiny_data()), TrainingError);
  CHECK(s.lattice.offsets.value == before);
  CHECK(s.step == 0);
}

TEST_CASE("quantized binary rendering stays close to the exact one") {
  TrainState s(tiny_config());
  s.stage = 2;
  const Camera& cam = tiny_data().test[0].camera;
  SupersampleOptions exact, quant;
  quant.quantize = true;
  const Image a = render_supersampled(s, cam, exact), b = render_supersampled(s, cam, quant);
  CHECK(mean_abs_diff(a, b) < 2.0 / 255.0);
  CHECK(render_supersampled(s, cam, exact, 3) == a);
}

TEST_CASE("voxel lookup of world points") {
  const LatticeConfig cfg{4, SyntheticScene{2.0}};
  CHECK(sample_voxel(cfg, Vec3(-0.9, -0.9, -0.9)) == voxel_id(4, 0, 0, 0));
  CHECK(sample_voxel(cfg, Vec3(0.9, 0.1, -0.1)) == voxel_id(4, 3, 2, 1));
  CHECK_FALSE(sample_voxel(cfg, Vec3(1.1, 0, 0)).has_value());
}
