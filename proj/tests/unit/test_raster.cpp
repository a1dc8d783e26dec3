// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "meshfield/error.hpp"
#include "meshfield/raster.hpp"
#include "oracles.hpp"

using namespace meshfield;

namespace {

using Texel = std::array<std::uint8_t, 8>;
using Corners = std::array<Vec3, 4>;

/// Passes features 0..2 straight through as the color.
std::vector<ShaderLayer> passthrough_shader() {
  ShaderLayer l;
  l.in = 11;
  l.out = 3;
  l.weights.assign(33, 0.0f);
  for (int c = 0; c < 3; ++c) l.weights[static_cast<std::size_t>(c) * 3 + c] = 1.0f;
  l.bias.assign(3, 0.0f);
  return {l};
}

/// One constant-texel patch per quad, laid out like the baker does.
BakedAsset make_asset(const std::vector<Corners>& quads, const std::vector<Texel>& texels, int K = 4) {
  BakedAsset a;
  a.K = K;
  a.P = 1;
  a.shader = passthrough_shader();
  const AtlasLayout layout = allocate_atlas(quads.size(), K, 64);
  for (int dim : layout.page_dims) {
    a.feat0.push_back(Image8{dim, dim, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(dim) * dim * 4)});
    a.feat1.push_back(a.feat0.back());
  }
  for (std::size_t q = 0; q < quads.size(); ++q) {
    const auto& pl = layout.placements[q];
    const int W = layout.page_dims[pl.page];
    const auto base = static_cast<std::uint32_t>(a.positions.size());
    for (int c = 0; c < 4; ++c) {
      const Vec3& p = quads[q][c];
      a.positions.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())});
      a.uvs.push_back({static_cast<float>((pl.x0 + 0.5 + (c & 1) * (K - 1)) / W),
                       static_cast<float>(1.0 - (pl.y0 + 0.5 + (c >> 1) * (K - 1)) / W)});
    }
    a.triangles.push_back({base, base + 1, base + 3});
    a.triangles.push_back({base, base + 3, base + 2});
    a.quad_pages.push_back(pl.page);
    for (int y = 0; y < K; ++y)
      for (int x = 0; x < K; ++x) {
        std::copy(texels[q].begin(), texels[q].begin() + 4, a.feat0[pl.page].texel(pl.x0 + x, pl.y0 + y));
        std::copy(texels[q].begin() + 4, texels[q].end(), a.feat1[pl.page].texel(pl.x0 + x, pl.y0 + y));
      }
  }
  return a;
}

Corners square(double z, double half) {
  return {Vec3(-half, -half, z), Vec3(half, -half, z), Vec3(-half, half, z), Vec3(half, half, z)};
}

Camera front_camera(int size) {
  return Camera::from_fov(size, size, 0.8, look_at(Vec3(0, 0, 3), Vec3::Zero(), Vec3::UnitY()));
}

Corners random_quad(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.8, 0.8), e(-0.25, 0.25);
  const Vec3 c(u(rng), u(rng), u(rng));
  const Vec3 s = Vec3(e(rng), e(rng), e(rng)), t = Vec3(e(rng), e(rng), e(rng));
  Vec3 bend(e(rng), e(rng), e(rng));
  return {c - s - t, c + s - t, c - s + t, c + s + t + 0.3 * bend};
}

/// Texel whose channels 1 and 2 spell the quad index.
Texel id_texel(std::size_t q) {
  return {255, static_cast<std::uint8_t>(q & 0xff), static_cast<std::uint8_t>(q >> 8), 0, 0, 0, 0, 0};
}

}  // namespace

TEST_CASE("empty asset renders the background") {
  BakedAsset a = make_asset({}, {});
  a.background = {0.2f, 0.3f, 0.4f};
  const Image img = render(a, front_camera(8));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(img.pixel(x, y)[0] == 0.2f);
      CHECK(img.pixel(x, y)[2] == 0.4f);
    }
}

TEST_CASE("constant texels render as q/255 through a passthrough shader") {
  const BakedAsset a = make_asset({square(0, 0.5)}, {Texel{51, 102, 204, 0, 0, 0, 0, 0}});
  const Image img = render(a, front_camera(16));
  const float* center = img.pixel(8, 8);
  CHECK(center[0] == doctest::Approx(51 / 255.0).epsilon(1e-6));
  CHECK(center[1] == doctest::Approx(102 / 255.0).epsilon(1e-6));
  CHECK(center[2] == doctest::Approx(204 / 255.0).epsilon(1e-6));
  CHECK(img.pixel(0, 0)[0] == 0.0f);
}

TEST_CASE("nearer surface wins in either submission order") {
  const BakedAsset a = make_asset({square(0, 0.5), square(0.5, 0.3)},
                                  {Texel{255, 0, 0, 0, 0, 0, 0, 0}, Texel{9, 255, 0, 0, 0, 0, 0, 0}});
  const Camera cam = front_camera(16);
  RasterOptions forward;
  const std::vector<std::uint32_t> reversed{3, 2, 1, 0};
  RasterOptions backward;
  backward.order = reversed;
  const FeatureImage f = rasterize(a, cam, forward);
  CHECK(f == rasterize(a, cam, backward));
  const Image img = deferred_shade(f, a.shader, a.background);
  CHECK(img.pixel(8, 8)[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(img.pixel(8, 8)[0] == doctest::Approx(9 / 255.0).epsilon(1e-6));
}

TEST_CASE("transparent texels let the surface behind show through") {
  const BakedAsset a = make_asset({square(0, 0.5), square(0.5, 0.3)},
                                  {Texel{255, 0, 0, 0, 0, 0, 0, 0}, Texel{0, 0, 0, 0, 0, 0, 0, 0}});
  const Image img = render(a, front_camera(16));
  CHECK(img.pixel(8, 8)[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("alpha test reads the nearest texel, so cutouts keep their baked extent") {
  // Left half of a 4x4 patch opaque: the edge sits halfway between texel centres 1 and 2,
  // at the quad's midline. Filtering channel 0 would keep fragments out to texel centre 2.
  BakedAsset a = make_asset({square(0, 0.5)}, {Texel{255, 200, 0, 0, 0, 0, 0, 0}});
  for (int y = 0; y < 4; ++y)
    for (int x = 2; x < 4; ++x) a.feat0[0].texel(x, y)[0] = 0;
  const FeatureImage f = rasterize(a, front_camera(64));
  int covered = 0, spanned = 0;
  const double half_view = 3.0 * std::tan(0.4);
  for (int x = 0; x < f.width; ++x) {
    const double wx = ((x + 0.5) / f.width * 2.0 - 1.0) * half_view;
    spanned += std::abs(wx) < 0.5;
    covered += f.at(x, f.height / 2)[FeatureImage::kAlpha] > 0.0f;
  }
  CHECK(std::abs(covered - spanned / 2) <= 2);
}

TEST_CASE("rasterized coverage matches a brute-force ray cast") {
  std::mt19937_64 rng(17);
  std::vector<Corners> quads;
  std::vector<Texel> texels;
  for (std::size_t q = 0; q < 60; ++q) {
    quads.push_back(random_quad(rng));
    texels.push_back(id_texel(q));
  }
  const BakedAsset a = make_asset(quads, texels);
  std::size_t agree = 0, total = 0;
  for (const Camera& cam : orbit_cameras(40, 40, 0.8, 3.0, 0.7, 4)) {
    const FeatureImage f = rasterize(a, cam);
    const auto want = testing::raycast_coverage(a, cam, 2);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const float* p = f.at(x, y);
        std::int64_t got = -1;
        if (p[FeatureImage::kAlpha] > 0.0f)
          got = std::lround(p[1] * 255.0f) + 256 * std::lround(p[2] * 255.0f);
        const std::int64_t expect = want[static_cast<std::size_t>(y) * f.width + x];
        agree += got == (expect < 0 ? -1 : expect / 2);
        ++total;
      }
  }
  MESSAGE("coverage agreement " << agree << " / " << total);
  CHECK(static_cast<double>(agree) >= 0.999 * static_cast<double>(total));
}

TEST_CASE("deferred shading averages sub-pixel features including empty ones") {
  FeatureImage f(2, 2);
  const auto shader = passthrough_shader();
  const std::array<float, 3> bg{0.1f, 0.2f, 0.3f};
  CHECK(deferred_shade(f, shader, bg).pixel(0, 0)[1] == 0.2f);
  f.at(0, 0)[0] = 0.8f;
  f.at(0, 0)[FeatureImage::kAlpha] = 1.0f;
  f.at(0, 0)[FeatureImage::kDirection + 2] = -1.0f;
  f.at(1, 1)[0] = 0.4f;
  f.at(1, 1)[FeatureImage::kAlpha] = 1.0f;
  f.at(1, 1)[FeatureImage::kDirection + 2] = -1.0f;
  const Image img = deferred_shade(f, shader, bg);
  CHECK(img.width == 1);
  CHECK(img.pixel(0, 0)[0] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(img.pixel(0, 0)[1] == 0.0f);
  CHECK_THROWS_AS(deferred_shade(FeatureImage(3, 2), shader, bg, 2), ConfigError);
  CHECK(deferred_shade(f, shader, bg, 1).pixel(1, 1)[0] == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("renders are identical across threads and submission orders") {
  std::mt19937_64 rng(23);
  std::vector<Corners> quads;
  std::vector<Texel> texels;
  for (std::size_t q = 0; q < 200; ++q) {
    quads.push_back(random_quad(rng));
    Texel t;
    for (auto& v : t) v = static_cast<std::uint8_t>(1 + rng() % 255);
    texels.push_back(t);
  }
  const BakedAsset a = make_asset(quads, texels);
  std::vector<std::uint32_t> order(a.triangles.size());
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), rng);
  for (const Camera& cam : orbit_cameras(48, 40, 0.8, 2.5, 0.4, 3)) {
    const FeatureImage one = rasterize(a, cam, RasterOptions{2, 1, {}});
    CHECK(rasterize(a, cam, RasterOptions{2, 4, {}}) == one);
    CHECK(rasterize(a, cam, RasterOptions{2, 3, order}) == one);
    CHECK(render(a, cam, 1).rgb == render(a, cam, 5).rgb);
  }
}

TEST_CASE("geometry crossing the near plane is clipped") {
  const BakedAsset a = make_asset({square(0, 4.0)}, {Texel{255, 255, 0, 0, 0, 0, 0, 0}});
  // Camera just above the plane, looking along it.
  const Camera cam = Camera::from_fov(16, 16, 1.2, look_at(Vec3(0, 0, 0.2), Vec3(0, 3, -0.5), Vec3::UnitZ()));
  const Image img = render(a, cam);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    CHECK(std::isfinite(img.rgb[i]));
    covered += img.rgb[i + 1] > 0.5f;
  }
  CHECK(covered > 0);
  CHECK(covered < 16 * 16);
}

TEST_CASE("bench reports one row per frame over a full orbit") {
  std::mt19937_64 rng(31);
  std::vector<Corners> quads;
  std::vector<Texel> texels;
  for (std::size_t q = 0; q < 30; ++q) {
    quads.push_back(random_quad(rng));
    texels.push_back(id_texel(q));
  }
  const BakedAsset a = make_asset(quads, texels);
  const auto cams = orbit_cameras(16, 16, 0.8, 3.0, 0.5, 360);
  const BenchStats s = bench(a, cams);
  REQUIRE(s.rows.size() == 360);
  CHECK(s.rows[359].frame == 359);
  for (const auto& r : s.rows) CHECK(r.total_ms == doctest::Approx(r.raster_ms + r.shade_ms));
  CHECK(s.mean_ms > 0.0);
  CHECK(s.median_ms > 0.0);
  for (const Camera& cam : cams)
    for (float v : render(a, cam).rgb) REQUIRE(std::isfinite(v));
  CHECK(bench(a, {}).rows.empty());
}
