// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/raster.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "meshfield/error.hpp"
#include "meshfield/parallel.hpp"

namespace meshfield {

namespace {

// Screen coordinates are snapped to 1/256 pixel so that edge functions are
// exact integers and shared edges are owned by exactly one triangle.
constexpr double kSubpixel = 256.0;
constexpr int kBand = 16;

struct ClipVertex {
  Vec3 p;
  double u, v;
};

struct ScreenTri {
  std::array<std::int64_t, 3> x, y;
  std::array<double, 3> invw, uw, vw;
  std::uint32_t id = 0;
  std::uint32_t page = 0;
  int ymin = 0, ymax = 0, xmin = 0, xmax = 0;
  std::int64_t area = 0;
};

std::vector<ClipVertex> clip_near(const std::array<ClipVertex, 3>& in) {
  std::vector<ClipVertex> out;
  for (int i = 0; i < 3; ++i) {
    const ClipVertex& a = in[i];
    const ClipVertex& b = in[(i + 1) % 3];
    const double da = -a.p.z() - kNearPlane;
    const double db = -b.p.z() - kNearPlane;
    if (da >= 0.0) out.push_back(a);
    if ((da >= 0.0) != (db >= 0.0)) {
      const double t = da / (da - db);
      out.push_back({a.p + t * (b.p - a.p), a.u + t * (b.u - a.u), a.v + t * (b.v - a.v)});
    }
  }
  return out;
}

// Top-left ownership for edges of positively oriented triangles in y-down
// screen space.
bool owns_edge(std::int64_t dx, std::int64_t dy) { return dy < 0 || (dy == 0 && dx > 0); }

std::vector<ScreenTri> setup(const BakedAsset& asset, const Camera& camera, int ss,
                             std::span<const std::uint32_t> order) {
  const Mat3 rt = camera.rotation().transpose();
  const Vec3 origin = camera.position();
  const double f = camera.focal * ss;
  const double cx = 0.5 * camera.width * ss;
  const double cy = 0.5 * camera.height * ss;
  const int W = camera.width * ss, H = camera.height * ss;
  std::vector<ScreenTri> out;
  const std::size_t n = order.empty() ? asset.triangles.size() : order.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t id = order.empty() ? static_cast<std::uint32_t>(i) : order[i];
    const auto& tri = asset.triangles.at(id);
    std::array<ClipVertex, 3> cv;
    for (int k = 0; k < 3; ++k) {
      const auto& p = asset.positions.at(tri[k]);
      cv[k].p = rt * (Vec3(p[0], p[1], p[2]) - origin);
      cv[k].u = asset.uvs.at(tri[k])[0];
      cv[k].v = asset.uvs.at(tri[k])[1];
    }
    const auto poly = clip_near(cv);
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      const std::array<const ClipVertex*, 3> v{&poly[0], &poly[k], &poly[k + 1]};
      ScreenTri st;
      st.id = id;
      st.page = id / 2 < asset.quad_pages.size() ? asset.quad_pages[id / 2] : 0;
      double sx[3], sy[3];
      for (int j = 0; j < 3; ++j) {
        const double w = -v[j]->p.z();
        sx[j] = cx + f * v[j]->p.x() / w;
        sy[j] = cy - f * v[j]->p.y() / w;
        st.x[j] = std::llround(sx[j] * kSubpixel);
        st.y[j] = std::llround(sy[j] * kSubpixel);
        st.invw[j] = 1.0 / w;
        st.uw[j] = v[j]->u / w;
        st.vw[j] = v[j]->v / w;
      }
      st.area = (st.x[1] - st.x[0]) * (st.y[2] - st.y[0]) - (st.y[1] - st.y[0]) * (st.x[2] - st.x[0]);
      if (st.area == 0) continue;
      if (st.area < 0) {
        std::swap(st.x[1], st.x[2]);
        std::swap(st.y[1], st.y[2]);
        std::swap(st.invw[1], st.invw[2]);
        std::swap(st.uw[1], st.uw[2]);
        std::swap(st.vw[1], st.vw[2]);
        st.area = -st.area;
      }
      const double lo_x = std::min({sx[0], sx[1], sx[2]}), hi_x = std::max({sx[0], sx[1], sx[2]});
      const double lo_y = std::min({sy[0], sy[1], sy[2]}), hi_y = std::max({sy[0], sy[1], sy[2]});
      st.xmin = std::max(0, static_cast<int>(std::floor(lo_x - 1.0)));
      st.xmax = std::min(W - 1, static_cast<int>(std::ceil(hi_x + 1.0)));
      st.ymin = std::max(0, static_cast<int>(std::floor(lo_y - 1.0)));
      st.ymax = std::min(H - 1, static_cast<int>(std::ceil(hi_y + 1.0)));
      if (st.xmin > st.xmax || st.ymin > st.ymax) continue;
      out.push_back(st);
    }
  }
  return out;
}

struct Fragment {
  float depth = std::numeric_limits<float>::infinity();
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t page = 0;
  float u = 0.0f, v = 0.0f;
};

/// Opacity of the texel nearest to (u, v). Features are filtered, opacity is
/// not: a filtered channel 0 is non-zero up to a texel beyond the baked cutout.
bool texel_opaque_at(const BakedAsset& asset, std::uint32_t page, float u, float v) {
  const Image8& img = asset.feat0[page];
  const int x = std::clamp(static_cast<int>(std::floor(u * img.width)), 0, img.width - 1);
  const int y = std::clamp(static_cast<int>(std::floor((1.0f - v) * img.height)), 0, img.height - 1);
  return texel_opaque(img.texel(x, y)[0]);
}

}  // namespace

std::array<float, 8> sample_features(const BakedAsset& asset, std::uint32_t page, float u, float v) {
  const Image8& a = asset.feat0.at(page);
  const Image8& b = asset.feat1.at(page);
  const float x = u * a.width - 0.5f;
  const float y = (1.0f - v) * a.height - 0.5f;
  const float fx0 = std::floor(x), fy0 = std::floor(y);
  const float fx = x - fx0, fy = y - fy0;
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const std::array<int, 4> xs{x0, x0 + 1, x0, x0 + 1};
  const std::array<int, 4> ys{y0, y0, y0 + 1, y0 + 1};
  const std::array<float, 4> ws{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  std::array<float, 8> out{};
  for (int k = 0; k < 4; ++k) {
    const int xi = std::clamp(xs[k], 0, a.width - 1);
    const int yi = std::clamp(ys[k], 0, a.height - 1);
    const std::uint8_t* t0 = a.texel(xi, yi);
    const std::uint8_t* t1 = b.texel(xi, yi);
    for (int c = 0; c < 4; ++c) {
      out[c] += ws[k] * t0[c];
      out[4 + c] += ws[k] * t1[c];
    }
  }
  return out;
}

FeatureImage rasterize(const BakedAsset& asset, const Camera& camera, const RasterOptions& options) {
  const int ss = options.supersample;
  if (ss < 1) throw ConfigError("supersample must be >= 1");
  const int W = camera.width * ss, H = camera.height * ss;
  FeatureImage out(W, H);
  const auto tris = setup(asset, camera, ss, options.order);
  const std::size_t bands = static_cast<std::size_t>((H + kBand - 1) / kBand);
  parallel_for(bands, resolve_threads(options.threads), [&](std::size_t b0, std::size_t b1) {
    std::vector<Fragment> frags;
    for (std::size_t band = b0; band < b1; ++band) {
      const int y0 = static_cast<int>(band) * kBand;
      const int y1 = std::min(H, y0 + kBand);
      frags.assign(static_cast<std::size_t>(W) * (y1 - y0), Fragment{});
      for (const ScreenTri& t : tris) {
        if (t.ymax < y0 || t.ymin >= y1) continue;
        const int ya = std::max(t.ymin, y0), yb = std::min(t.ymax, y1 - 1);
        for (int y = ya; y <= yb; ++y) {
          const std::int64_t py = static_cast<std::int64_t>(y) * 256 + 128;
          for (int x = t.xmin; x <= t.xmax; ++x) {
            const std::int64_t px = static_cast<std::int64_t>(x) * 256 + 128;
            std::array<std::int64_t, 3> e;
            bool inside = true;
            for (int k = 0; k < 3 && inside; ++k) {
              const int a = (k + 1) % 3, c = (k + 2) % 3;
              const std::int64_t dx = t.x[c] - t.x[a], dy = t.y[c] - t.y[a];
              e[k] = dx * (py - t.y[a]) - dy * (px - t.x[a]);
              inside = e[k] > 0 || (e[k] == 0 && owns_edge(dx, dy));
            }
            if (!inside) continue;
            const double inv_area = 1.0 / static_cast<double>(t.area);
            const double l0 = e[0] * inv_area, l1 = e[1] * inv_area, l2 = e[2] * inv_area;
            const double invw = l0 * t.invw[0] + l1 * t.invw[1] + l2 * t.invw[2];
            const auto depth = static_cast<float>(1.0 / invw);
            Fragment& f = frags[static_cast<std::size_t>(y - y0) * W + x];
            if (depth > f.depth || (depth == f.depth && t.id >= f.id)) continue;
            const auto u = static_cast<float>((l0 * t.uw[0] + l1 * t.uw[1] + l2 * t.uw[2]) / invw);
            const auto v = static_cast<float>((l0 * t.vw[0] + l1 * t.vw[1] + l2 * t.vw[2]) / invw);
            if (!texel_opaque_at(asset, t.page, u, v)) continue;
            f = {depth, t.id, t.page, u, v};
          }
        }
      }
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < W; ++x) {
          const Fragment& f = frags[static_cast<std::size_t>(y - y0) * W + x];
          if (f.id == std::numeric_limits<std::uint32_t>::max()) continue;
          float* px = out.at(x, y);
          const auto feats = sample_features(asset, f.page, f.u, f.v);
          for (int c = 0; c < 8; ++c) px[c] = feats[c] / 255.0f;
          px[FeatureImage::kAlpha] = 1.0f;
          const Vec3 d = camera.ray((x + 0.5) / ss, (y + 0.5) / ss).direction;
          for (int c = 0; c < 3; ++c) px[FeatureImage::kDirection + c] = static_cast<float>(d[c]);
        }
    }
  });
  return out;
}

Image deferred_shade(const FeatureImage& fi, std::span<const ShaderLayer> shader, const std::array<float, 3>& background,
                     int ss, int threads) {
  if (ss < 1 || fi.width % ss != 0 || fi.height % ss != 0)
    throw ConfigError("feature image size must be a multiple of the supersampling factor");
  const int W = fi.width / ss, H = fi.height / ss;
  Image out(W, H);
  const float inv = 1.0f / static_cast<float>(ss * ss);
  parallel_for(static_cast<std::size_t>(H), resolve_threads(threads), [&](std::size_t r0, std::size_t r1) {
    for (std::size_t yy = r0; yy < r1; ++yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < W; ++x) {
        std::array<float, 11> in{};
        float coverage = 0.0f;
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const float* p = fi.at(x * ss + sx, y * ss + sy);
            for (int c = 0; c < 8; ++c) in[c] += p[c];
            coverage += p[FeatureImage::kAlpha];
            for (int c = 0; c < 3; ++c) in[8 + c] += p[FeatureImage::kDirection + c];
          }
        float* dst = out.pixel(x, y);
        if (coverage == 0.0f) {
          for (int c = 0; c < 3; ++c) dst[c] = background[c];
          continue;
        }
        for (int c = 0; c < 8; ++c) in[c] *= inv;
        const float norm = std::sqrt(in[8] * in[8] + in[9] * in[9] + in[10] * in[10]);
        if (norm > 0.0f)
          for (int c = 8; c < 11; ++c) in[c] /= norm;
        const auto rgb = eval_shader(shader, in);
        for (int c = 0; c < 3; ++c) dst[c] = rgb[c];
      }
    }
  });
  return out;
}

Image render(const BakedAsset& asset, const Camera& camera, int threads, int supersample) {
  RasterOptions o;
  o.supersample = supersample;
  o.threads = threads;
  return deferred_shade(rasterize(asset, camera, o), asset.shader, asset.background, supersample, threads);
}

BenchStats bench(const BakedAsset& asset, std::span<const Camera> cameras, int threads) {
  using clock = std::chrono::steady_clock;
  BenchStats stats;
  RasterOptions o;
  o.threads = threads;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const auto t0 = clock::now();
    const FeatureImage fi = rasterize(asset, cameras[i], o);
    const auto t1 = clock::now();
    const Image img = deferred_shade(fi, asset.shader, asset.background, o.supersample, threads);
    const auto t2 = clock::now();
    BenchRow row;
    row.frame = static_cast<int>(i);
    row.raster_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    row.shade_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    row.total_ms = row.raster_ms + row.shade_ms;
    stats.rows.push_back(row);
  }
  if (stats.rows.empty()) return stats;
  std::vector<double> totals;
  for (const auto& r : stats.rows) {
    stats.mean_ms += r.total_ms;
    stats.mean_raster_ms += r.raster_ms;
    stats.mean_shade_ms += r.shade_ms;
    totals.push_back(r.total_ms);
  }
  const double n = static_cast<double>(stats.rows.size());
  stats.mean_ms /= n;
  stats.mean_raster_ms /= n;
  stats.mean_shade_ms /= n;
  std::sort(totals.begin(), totals.end());
  const std::size_t m = totals.size() / 2;
  stats.median_ms = totals.size() % 2 ? totals[m] : 0.5 * (totals[m - 1] + totals[m]);
  return stats;
}

}  // namespace meshfield
