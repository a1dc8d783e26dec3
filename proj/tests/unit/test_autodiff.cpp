// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "meshfield/autodiff.hpp"
#include "meshfield/error.hpp"
#include "meshfield/mlp.hpp"
#include "oracles.hpp"

using namespace meshfield;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;

TEST_CASE("positional encoding at the origin is zeros then alternating sin 0 and cos 1") {
  const std::array<double, 3> p{0, 0, 0};
  const auto e = ad::positional_encoding(std::span<const double, 3>(p), 2);
  REQUIRE(e.size() == ad::encoded_size(2));
  for (int c = 0; c < 3; ++c) CHECK(e[c] == 0.0);
  for (int l = 0; l < 2; ++l) {
    for (int c = 0; c < 3; ++c) CHECK(e[3 + 6 * l + c] == 0.0);
    for (int c = 0; c < 3; ++c) CHECK(e[6 + 6 * l + c] == 1.0);
  }
}

TEST_CASE("positional encoding hits an exact quarter period") {
  const std::array<double, 3> p{0.5, 0, 0};
  const auto e = ad::positional_encoding(std::span<const double, 3>(p), 1);
  CHECK(e[3] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(e[6]) < 1e-15);
}

TEST_CASE("positional encoding matches a frequency loop") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const std::array<double, 3> a{p.x(), p.y(), p.z()};
    const auto got = ad::positional_encoding(std::span<const double, 3>(a), 4);
    const auto want = testing::pe_oracle(p, 4);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);

    Tape tape;
    const auto batched = ad::positional_encoding(tape.constant(Tensor(1, 3, {p.x(), p.y(), p.z()})), 4);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(batched.value()[i] - want[i]) < 1e-12);
  }
}

namespace {

DenseLayer make_layer(Tensor w, Tensor b, Activation act) {
  DenseLayer l;
  l.weight = Parameter("w", std::move(w));
  l.bias = Parameter("b", std::move(b));
  l.activation = act;
  return l;
}

}  // namespace

TEST_CASE("all-zero network with sigmoid output gives one half") {
  std::vector<DenseLayer> layers{make_layer(Tensor(4, 6), Tensor(1, 6), Activation::relu),
                                 make_layer(Tensor(6, 3), Tensor(1, 3), Activation::sigmoid)};
  const std::vector<double> x{0.3, -1, 2, 5};
  for (double y : mlp_forward(layers, x)) CHECK(y == 0.5);
}

TEST_CASE("identity layer without activation returns its input") {
  Tensor w(3, 3);
  for (int i = 0; i < 3; ++i) w(i, i) = 1;
  std::vector<DenseLayer> layers{make_layer(w, Tensor(1, 3), Activation::none)};
  const std::vector<double> x{0.25, -7, 3.5};
  CHECK(mlp_forward(layers, x) == x);
}

TEST_CASE("two-layer network matches dense matrix arithmetic") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<std::vector<double>>> W;
    std::vector<std::vector<double>> B;
    std::vector<DenseLayer> layers;
    const std::size_t dims[3] = {5, 7, 2};
    const Activation acts[2] = {Activation::relu, Activation::sigmoid};
    for (int l = 0; l < 2; ++l) {
      Tensor w(dims[l], dims[l + 1]), b(1, dims[l + 1]);
      std::vector<std::vector<double>> wl(dims[l], std::vector<double>(dims[l + 1]));
      std::vector<double> bl(dims[l + 1]);
      for (std::size_t i = 0; i < dims[l]; ++i)
        for (std::size_t o = 0; o < dims[l + 1]; ++o) w(i, o) = wl[i][o] = u(rng);
      for (std::size_t o = 0; o < dims[l + 1]; ++o) b[o] = bl[o] = u(rng);
      W.push_back(wl);
      B.push_back(bl);
      layers.push_back(make_layer(w, b, acts[l]));
    }
    std::vector<double> x(5);
    for (double& v : x) v = u(rng);
    const auto got = mlp_forward(layers, x);
    const auto want = testing::dense_oracle(W, B, {acts[0], acts[1]}, x);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);

    Mlp net(std::move(layers));
    const auto tape_free = net.forward(x);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(tape_free[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("mismatched layer dimensions are rejected") {
  std::vector<DenseLayer> layers{make_layer(Tensor(4, 6), Tensor(1, 6), Activation::relu),
                                 make_layer(Tensor(5, 3), Tensor(1, 3), Activation::sigmoid)};
  const std::vector<double> x{0, 0, 0, 0};
  CHECK_THROWS_AS(mlp_forward(layers, x), ConfigError);
}

TEST_CASE("gradient of a sum is all ones") {
  Parameter x("x", Tensor(3, 4, 2.5));
  Tape tape;
  auto v = tape.param(x);
  tape.backward(ad::sum(v));
  const Tensor g = tape.grad(v);
  for (double e : g.values()) CHECK(e == 1.0);
}

TEST_CASE("stop_gradient blocks one factor of a product") {
  Parameter x("x", Tensor(1, 1, 3.0)), y("y", Tensor(1, 1, -2.0));
  Tape tape;
  auto vx = tape.param(x), vy = tape.param(y);
  tape.backward(ad::sum(ad::mul(ad::stop_gradient(vx), vy)));
  CHECK(tape.grad(vx).item() == 0.0);
  CHECK(tape.grad(vy).item() == 3.0);
}

TEST_CASE("gradients of every operation match central differences") {
  for (const auto& c : testing::gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      INFO(c.name << " seed " << seed);
      const auto r = c.run(seed);
      INFO("worst " << r.worst);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("adam leaves parameters unchanged for zero gradients and decays moments") {
  Parameter p("p", Tensor(1, 2, {1.0, -2.0}));
  std::vector<Parameter*> ps{&p};
  AdamState state(ps, AdamConfig{0.1});
  p.zero_grad();
  adam_step(ps, state);
  CHECK(p.value == Tensor(1, 2, {1.0, -2.0}));
  CHECK(state.m[0] == Tensor(1, 2, 0.0));

  state.m[0] = Tensor(1, 2, {0.5, 0.5});
  state.v[0] = Tensor(1, 2, {0.25, 0.25});
  adam_step(ps, state);
  CHECK(state.m[0][0] == doctest::Approx(0.45));
  CHECK(state.v[0][0] == doctest::Approx(0.25 * 0.999));
  // Step 2 bias corrections: 1 - 0.9^2 and 1 - 0.999^2.
  const double mhat = 0.45 / (1 - 0.81), vhat = 0.25 * 0.999 / (1 - 0.999 * 0.999);
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8)));
}

TEST_CASE("adam follows the closed-form trajectory for a constant unit gradient") {
  Parameter p("p", Tensor(1, 1, 0.0));
  std::vector<Parameter*> ps{&p};
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  AdamState state(ps, cfg);
  double x = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    p.grad = Tensor(1, 1, 1.0);
    adam_step(ps, state);
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value.item() == doctest::Approx(x).epsilon(1e-14));
  }
  // With g constant the bias-corrected step is lr / (1 + eps) every time.
  CHECK(p.value.item() == doctest::Approx(-3 * 0.01 / (1 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam with zero learning rate changes nothing") {
  Parameter p("p", Tensor(2, 2, {1, 2, 3, 4}));
  std::vector<Parameter*> ps{&p};
  AdamState state(ps, AdamConfig{0.0});
  p.grad = Tensor(2, 2, {5, -1, 0.3, 7});
  adam_step(ps, state);
  CHECK(p.value == Tensor(2, 2, {1, 2, 3, 4}));
}

TEST_CASE("adam refuses non-finite gradients without touching parameters") {
  Parameter a("a", Tensor(1, 1, 1.0)), b("b", Tensor(1, 1, 2.0));
  std::vector<Parameter*> ps{&a, &b};
  AdamState state(ps, AdamConfig{0.1});
  a.grad = Tensor(1, 1, 1.0);
  b.grad = Tensor(1, 1, std::nan(""));
  CHECK_THROWS_AS(adam_step(ps, state), TrainingError);
  CHECK(a.value.item() == 1.0);
  CHECK(b.value.item() == 2.0);
}

TEST_CASE("kaiming init bounds and zero biases") {
  std::mt19937_64 rng(11);
  Mlp net("n", MlpSpec{10, 32, 3, 4, {}, Activation::sigmoid}, rng);
  for (const auto& layer : net.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in()));
    for (double w : layer.weight.value.values()) CHECK(std::abs(w) <= bound);
    for (double b : layer.bias.value.values()) CHECK(b == 0.0);
  }
}

TEST_CASE("exponential learning rate decays between the endpoints") {
  CHECK(exponential_lr(1e-3, 1e-5, 0.0) == doctest::Approx(1e-3));
  CHECK(exponential_lr(1e-3, 1e-5, 0.5) == doctest::Approx(1e-4));
  CHECK(exponential_lr(1e-3, 1e-5, 1.0) == doctest::Approx(1e-5));
}
