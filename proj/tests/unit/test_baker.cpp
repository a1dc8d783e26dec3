// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <bit>
#include <fstream>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "meshfield/baker.hpp"
#include "meshfield/error.hpp"
#include "meshfield/raster.hpp"
#include "oracles.hpp"

using namespace meshfield;

namespace {

/// Opaque everywhere, random features, jittered vertices.
TrainState opaque_state(std::uint64_t seed = 3) {
  TrainConfig cfg = testing::tiny_config();
  cfg.field.opacity_bias = 60.0;
  cfg.seed = seed;
  TrainState s(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (double& v : s.lattice.offsets.value.values()) v = u(rng);
  return s;
}

std::vector<Camera> views(int n, int size) { return orbit_cameras(size, size, 0.8, 3.0, 0.9, n); }

void check_layout(const AtlasLayout& layout, std::size_t n, int K, int max_dim) {
  REQUIRE(layout.placements.size() == n);
  std::vector<std::vector<std::uint8_t>> used;
  for (int dim : layout.page_dims) {
    CHECK(std::has_single_bit(static_cast<unsigned>(dim)));
    CHECK(dim <= max_dim);
    used.emplace_back(static_cast<std::size_t>(dim) * dim, 0);
  }
  for (const auto& pl : layout.placements) {
    REQUIRE(pl.page < layout.num_pages());
    const int W = layout.page_dims[pl.page];
    REQUIRE(pl.x0 >= 0);
    REQUIRE(pl.y0 >= 0);
    REQUIRE(pl.x0 + K <= W);
    REQUIRE(pl.y0 + K <= W);
    for (int y = pl.y0; y < pl.y0 + K; ++y)
      for (int x = pl.x0; x < pl.x0 + K; ++x) {
        auto& cell = used[pl.page][static_cast<std::size_t>(y) * W + x];
        REQUIRE(cell == 0);
        cell = 1;
      }
  }
}

}  // namespace

TEST_CASE("atlas pages hold floor(4096/17)^2 patches") {
  AtlasLayout one = allocate_atlas(1);
  CHECK(one.page_dims == std::vector<int>{32});
  CHECK(allocate_atlas(0).num_pages() == 0);
  CHECK(allocate_atlas(4).page_dims == std::vector<int>{64});
  const AtlasLayout full = allocate_atlas(57600);
  CHECK(full.page_dims == std::vector<int>{4096});
  CHECK(full.placements[239].y0 == 0);
  CHECK(full.placements[240].x0 == 0);
  CHECK(full.placements[240].y0 == 17);
  const AtlasLayout spill = allocate_atlas(57601);
  CHECK(spill.page_dims == std::vector<int>{4096, 32});
  CHECK(spill.placements.back().page == 1);
  CHECK_THROWS_AS(allocate_atlas(3, 1), ConfigError);
  CHECK_THROWS_AS(allocate_atlas(3, 17, 100), ConfigError);
}

TEST_CASE("atlas patches never overlap and stay inside their page") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int K = 2 + static_cast<int>(rng() % 20);
    const int max_dim = static_cast<int>(std::bit_ceil(static_cast<unsigned>(K))) << (rng() % 4);
    const std::size_t n = rng() % 400;
    check_layout(allocate_atlas(n, K, max_dim), n, K, max_dim);
  }
  check_layout(allocate_atlas(57601), 57601, 17, 4096);
}

TEST_CASE("texel parameters span the quad corner to corner") {
  CHECK(texel_param(0, 17) == 0.0);
  CHECK(texel_param(16, 17) == 1.0);
  CHECK(texel_param(8, 17) == 0.5);
  const std::array<Vec3, 4> c{Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(2, 2, 1)};
  CHECK(quad_point(c, 1, 0) == c[1]);
  CHECK(quad_point(c, 0, 1) == c[2]);
  CHECK(quad_point(c, 1, 1) == c[3]);
  CHECK((quad_point(c, 0.5, 0.5) - Vec3(1, 1, 0.25)).norm() < 1e-15);
}

TEST_CASE("alpha squeeze keeps opacity recoverable from channel 0") {
  Features f{};
  CHECK(encode_texel(false, f) == std::array<std::uint8_t, 8>{});
  CHECK(encode_texel(false, Features{0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9}) ==
        std::array<std::uint8_t, 8>{0, 230, 230, 230, 230, 230, 230, 230});
  CHECK(encode_texel(true, f)[0] == 1);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n = 0; n < 10000; ++n) {
    for (double& x : f) x = n % 7 == 0 ? u(rng) * 0.003 : u(rng);
    const bool opaque = n % 3 != 0;
    const auto q = encode_texel(opaque, f);
    CHECK(texel_opaque(q[0]) == opaque);
    // Channel 0 carries opacity; every other channel is plain rounding.
    if (opaque) CHECK(std::abs(dequantize_unit(q[0]) - f[0]) <= (q[0] == 1 ? 1.0 : 0.5) / 255.0 + 1e-12);
    for (std::size_t c = 1; c < kFeatureCount; ++c) CHECK(std::abs(dequantize_unit(q[c]) - f[c]) <= 0.5 / 255.0 + 1e-12);
  }
}

TEST_CASE("f32 shader agrees with the f64 network") {
  const TrainState s = opaque_state();
  const auto layers = narrow_shader(s.field.shader);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n = 0; n < 100; ++n) {
    Features f;
    for (double& x : f) x = u(rng);
    const Vec3 d = Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5).normalized();
    std::vector<float> in(f.begin(), f.end());
    for (int c = 0; c < 3; ++c) in.push_back(static_cast<float>(d[c]));
    const auto got = eval_shader(layers, in);
    const Rgb want = shade(s.field, f, d);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(got[c] - want[c]) < 1e-5);
  }
}

TEST_CASE("visible quads are the first hits of the training sub-pixel rays") {
  const TrainState s = opaque_state();
  const auto cams = views(2, 10);
  const auto got = visible_quads(s, cams, 2);
  const auto pos = s.lattice.positions();
  std::set<std::uint32_t> want;
  for (const Camera& cam : cams)
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x)
        for (const auto& [ox, oy] : subpixel_offsets(2)) {
          const auto hits = testing::all_triangle_hits(cam.ray(x + ox, y + oy), s.lattice.topology, pos);
          if (!hits.empty()) want.insert(hits.front().triangle / 2);
        }
  CHECK(got == std::vector<std::uint32_t>(want.begin(), want.end()));

  TrainConfig cfg = testing::tiny_config();
  cfg.field.opacity_bias = -60.0;
  CHECK(visible_quads(TrainState(cfg), cams, 2).empty());
}

TEST_CASE("baked textures hold the quantized field at texel parameters") {
  const TrainState s = opaque_state();
  const std::vector<std::uint32_t> quads{0, 5, 17, 40};
  const auto layout = allocate_atlas(quads.size(), 5, 32);
  const BakedAsset a = bake_quads(s, quads, layout);
  CHECK(validate_asset(a).empty());
  const auto pos = s.lattice.positions();
  for (std::size_t i = 0; i < quads.size(); ++i) {
    const Quad& q = s.lattice.topology.quads[quads[i]];
    const std::array<Vec3, 4> c{pos[q.vertices[0]], pos[q.vertices[1]], pos[q.vertices[2]], pos[q.vertices[3]]};
    const auto& pl = layout.placements[i];
    for (int b = 0; b < 5; ++b)
      for (int t = 0; t < 5; ++t) {
        const auto sample = field_eval(s.field, quad_point(c, texel_param(t, 5), texel_param(b, 5)));
        const auto want = encode_texel(true, sample.features);
        const std::uint8_t* t0 = a.feat0[pl.page].texel(pl.x0 + t, pl.y0 + b);
        const std::uint8_t* t1 = a.feat1[pl.page].texel(pl.x0 + t, pl.y0 + b);
        for (int ch = 0; ch < 4; ++ch) {
          CHECK(t0[ch] == want[ch]);
          CHECK(t1[ch] == want[4 + ch]);
        }
      }
    for (int k = 0; k < 4; ++k) {
      const auto& p = a.positions[4 * i + k];
      for (int d = 0; d < 3; ++d) CHECK(p[d] == static_cast<float>(c[k][d]));
    }
  }
  CHECK_THROWS_AS(bake_quads(s, std::vector<std::uint32_t>{5, 0}, allocate_atlas(2, 5, 32)), ConfigError);
  CHECK_THROWS_AS(bake_quads(s, quads, allocate_atlas(3, 5, 32)), ConfigError);
}

TEST_CASE("uv corners land on patch texel centers with v pointing up") {
  const TrainState s = opaque_state();
  const std::vector<std::uint32_t> quads{1, 2, 3};
  BakedAsset a = bake_quads(s, quads, allocate_atlas(quads.size(), 17, 64));
  REQUIRE(a.num_pages() == 1);
  const int W = a.feat0[0].width;
  // Third patch sits at texel origin (34, 0) of a 64 x 64 page.
  CHECK(a.uvs[8][0] == static_cast<float>(34.5 / W));
  CHECK(a.uvs[8][1] == static_cast<float>(1.0 - 0.5 / W));
  CHECK(a.uvs[11][0] == static_cast<float>(50.5 / W));
  CHECK(a.uvs[11][1] == static_cast<float>(1.0 - 16.5 / W));
  // A marker texel is fetched unfiltered at its own uv.
  std::uint8_t* t = a.feat0[0].texel(50, 16);
  t[0] = 200, t[1] = 7, t[2] = 9, t[3] = 11;
  const auto f = sample_features(a, 0, a.uvs[11][0], a.uvs[11][1]);
  CHECK(f[0] == doctest::Approx(200).epsilon(1e-5));
  CHECK(f[1] == doctest::Approx(7).epsilon(1e-5));
  CHECK(f[3] == doctest::Approx(11).epsilon(1e-5));
}

TEST_CASE("bake is deterministic across thread counts") {
  TrainConfig cfg = testing::tiny_config();
  cfg.field.opacity_bias = 0.0;
  TrainState s(cfg);
  const auto cams = views(3, 12);
  BakeOptions o;
  o.K = 9;
  o.threads = 1;
  const BakedAsset a = bake(s, cams, o);
  o.threads = 3;
  CHECK(bake(s, cams, o) == a);
  CHECK(validate_asset(a).empty());
}

TEST_CASE("asset export and import are bit-identical") {
  const TrainState s = opaque_state();
  const BakedAsset a = bake(s, views(2, 10), BakeOptions{9, 32, 2, 1});
  REQUIRE(a.num_pages() >= 2);
  const auto dir = testing::scratch_dir("asset_roundtrip");
  export_asset(a, dir / "asset");
  CHECK(import_asset(dir / "asset") == a);
  CHECK(std::filesystem::exists(dir / "asset" / "mesh.obj"));
  CHECK(std::filesystem::exists(dir / "asset" / "feat0_1.png"));
  CHECK(std::filesystem::exists(dir / "asset" / "feat1_1.png"));
  CHECK(std::filesystem::exists(dir / "asset" / "mlp.json"));

  BakedAsset empty = bake_quads(s, {}, allocate_atlas(0));
  CHECK(validate_asset(empty).empty());
  export_asset(empty, dir / "empty");
  CHECK(import_asset(dir / "empty") == empty);
}

TEST_CASE("import rejects other format versions and names the file") {
  const BakedAsset a = bake_quads(opaque_state(), std::vector<std::uint32_t>{0}, allocate_atlas(1));
  const auto dir = testing::scratch_dir("asset_version");
  export_asset(a, dir);
  std::ifstream in(dir / "mlp.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string key = "\"format_version\":1";
  REQUIRE(text.find(key) != std::string::npos);
  text.replace(text.find(key), key.size(), "\"format_version\":2");
  std::ofstream(dir / "mlp.json") << text;
  try {
    import_asset(dir);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("mlp.json") != std::string::npos);
    CHECK(std::string(e.what()).find("format_version") != std::string::npos);
  }
  std::filesystem::remove(dir / "feat0_0.png");
  CHECK_THROWS_AS(import_asset(dir), IoError);
}

TEST_CASE("validation reports stray texels, layout and shader violations") {
  const TrainState s = opaque_state();
  const BakedAsset good = bake_quads(s, std::vector<std::uint32_t>{0, 1}, allocate_atlas(2, 9, 32));
  REQUIRE(validate_asset(good).empty());
  auto mentions = [](const std::vector<std::string>& v, const std::string& word) {
    return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(word) != std::string::npos; });
  };

  BakedAsset a = good;
  a.feat1[0].texel(a.feat1[0].width - 1, a.feat1[0].height - 1)[2] = 7;
  CHECK(mentions(validate_asset(a), "outside every patch"));

  a = good;
  for (int k = 0; k < 4; ++k) a.uvs[4 + k] = a.uvs[k];
  CHECK(mentions(validate_asset(a), "overlaps"));

  a = good;
  a.feat0[0] = Image8{24, 24, 4, std::vector<std::uint8_t>(24 * 24 * 4)};
  CHECK(mentions(validate_asset(a), "power of two"));

  a = good;
  a.triangles[1] = {0, 2, 3};
  CHECK(mentions(validate_asset(a), "quad split"));

  a = good;
  a.shader.back().out = 4;
  CHECK_FALSE(validate_asset(a).empty());
}
