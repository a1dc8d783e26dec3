// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/baker.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "meshfield/error.hpp"
#include "meshfield/parallel.hpp"

namespace meshfield {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::uint32_t> visible_quads(const TrainState& state, std::span<const Camera> cameras, int supersample,
                                         int threads) {
  const auto positions = state.lattice.positions();
  const auto options = quadrature_options(state);
  const auto sub = subpixel_offsets(supersample);
  std::vector<std::uint8_t> kept(state.lattice.topology.quads.size(), 0);
  for (const Camera& camera : cameras) {
    std::vector<std::vector<std::uint32_t>> rows(static_cast<std::size_t>(camera.height));
    parallel_for(rows.size(), resolve_threads(threads), [&](std::size_t y0, std::size_t y1) {
      for (std::size_t y = y0; y < y1; ++y) {
        std::vector<Ray> rays;
        for (int x = 0; x < camera.width; ++x)
          for (const auto& [ox, oy] : sub) rays.push_back(camera.ray(x + ox, static_cast<double>(y) + oy));
        const TracedRays tr = trace_rays(state, rays, positions, options, false);
        for (std::size_t r = 0; r < rays.size(); ++r)
          for (std::size_t k = tr.offsets[r]; k < tr.offsets[r + 1]; ++k)
            if (binarize(tr.alpha[k]) == 1.0) {
              rows[y].push_back(tr.samples[k].triangle / 2);
              break;
            }
      }
    });
    for (const auto& row : rows)
      for (auto q : row) kept[q] = 1;
  }
  std::vector<std::uint32_t> out;
  for (std::size_t q = 0; q < kept.size(); ++q)
    if (kept[q]) out.push_back(static_cast<std::uint32_t>(q));
  return out;
}

AtlasLayout allocate_atlas(std::size_t n_quads, int K, int max_dim) {
  if (K < 2) throw ConfigError("patch size K must be >= 2");
  if (max_dim < K || !std::has_single_bit(static_cast<unsigned>(max_dim)))
    throw ConfigError("max page dimension must be a power of two >= K");
  AtlasLayout layout;
  layout.K = K;
  const std::size_t per_full = static_cast<std::size_t>(max_dim / K);
  const std::size_t capacity = per_full * per_full;
  std::size_t remaining = n_quads;
  while (remaining > 0) {
    const std::size_t want = std::min(remaining, capacity);
    int dim = static_cast<int>(std::bit_ceil(static_cast<unsigned>(K)));
    while (dim < max_dim && static_cast<std::size_t>(dim / K) * static_cast<std::size_t>(dim / K) < want) dim *= 2;
    const std::size_t per_row = static_cast<std::size_t>(dim / K);
    const std::size_t take = std::min(want, per_row * per_row);
    const auto page = static_cast<std::uint32_t>(layout.page_dims.size());
    layout.page_dims.push_back(dim);
    for (std::size_t i = 0; i < take; ++i)
      layout.placements.push_back(
          {page, static_cast<int>((i % per_row) * K), static_cast<int>((i / per_row) * K)});
    remaining -= take;
  }
  return layout;
}

Vec3 quad_point(const std::array<Vec3, 4>& c, double s, double t) {
  return (1 - s) * (1 - t) * c[0] + s * (1 - t) * c[1] + (1 - s) * t * c[2] + s * t * c[3];
}

std::array<std::uint8_t, 8> encode_texel(bool opaque, const Features& f) {
  std::array<std::uint8_t, 8> q{};
  for (std::size_t c = 0; c < kFeatureCount; ++c) q[c] = quantize_unit(f[c]);
  if (!opaque)
    q[0] = 0;
  else if (q[0] == 0)
    q[0] = 1;
  return q;
}

std::vector<ShaderLayer> narrow_shader(const Mlp& shader) {
  if (!shader.skips().empty()) throw ConfigError("shader network must not have skip connections");
  std::vector<ShaderLayer> out;
  for (const auto& l : shader.layers()) {
    ShaderLayer s;
    s.in = static_cast<int>(l.in());
    s.out = static_cast<int>(l.out());
    s.activation = l.activation;
    for (double w : l.weight.value.values()) s.weights.push_back(static_cast<float>(w));
    for (double b : l.bias.value.values()) s.bias.push_back(static_cast<float>(b));
    out.push_back(std::move(s));
  }
  return out;
}

std::array<float, 3> eval_shader(std::span<const ShaderLayer> layers, std::span<const float> input) {
  std::vector<float> cur(input.begin(), input.end()), next;
  for (const auto& l : layers) {
    if (static_cast<int>(cur.size()) != l.in) throw ConfigError("shader input size mismatch");
    next.assign(l.bias.begin(), l.bias.end());
    for (int i = 0; i < l.in; ++i) {
      const float x = cur[i];
      const float* w = l.weights.data() + static_cast<std::size_t>(i) * l.out;
      for (int o = 0; o < l.out; ++o) next[o] += x * w[o];
    }
    for (float& v : next) {
      if (l.activation == Activation::relu)
        v = v > 0.0f ? v : 0.0f;
      else if (l.activation == Activation::sigmoid)
        v = 1.0f / (1.0f + std::exp(-v));
    }
    std::swap(cur, next);
  }
  if (cur.size() != 3) throw ConfigError("shader must produce 3 outputs");
  return {cur[0], cur[1], cur[2]};
}

BakedAsset bake_quads(const TrainState& state, std::span<const std::uint32_t> quads, const AtlasLayout& layout,
                      int threads) {
  if (layout.placements.size() != quads.size()) throw ConfigError("atlas layout does not match quad count");
  if (!std::is_sorted(quads.begin(), quads.end())) throw ConfigError("quads must be sorted ascending");
  const int K = layout.K;
  BakedAsset asset;
  asset.K = K;
  asset.P = state.config.lattice.P;
  asset.scene_kind = scene_kind_name(state.config.lattice.kind);
  {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(state.config)));
    asset.config_hash = buf;
  }
  for (int dim : layout.page_dims) {
    asset.feat0.push_back(Image8{dim, dim, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(dim) * dim * 4)});
    asset.feat1.push_back(Image8{dim, dim, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(dim) * dim * 4)});
  }
  asset.shader = narrow_shader(state.field.shader);

  const auto positions = state.lattice.positions();
  const auto& topo = state.lattice.topology;
  for (std::size_t i = 0; i < quads.size(); ++i) {
    const Quad& quad = topo.quads.at(quads[i]);
    const auto& pl = layout.placements[i];
    const int W = layout.page_dims[pl.page];
    const auto base = static_cast<std::uint32_t>(asset.positions.size());
    for (int c = 0; c < 4; ++c) {
      const Vec3& p = positions[quad.vertices[c]];
      asset.positions.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())});
      const int s = c & 1, t = c >> 1;
      asset.uvs.push_back({static_cast<float>((pl.x0 + 0.5 + s * (K - 1)) / W),
                           static_cast<float>(1.0 - (pl.y0 + 0.5 + t * (K - 1)) / W)});
    }
    asset.triangles.push_back({base, base + 1, base + 3});
    asset.triangles.push_back({base, base + 3, base + 2});
    asset.quad_pages.push_back(pl.page);
  }

  parallel_for(quads.size(), resolve_threads(threads), [&](std::size_t q0, std::size_t q1) {
    for (std::size_t i = q0; i < q1; ++i) {
      const Quad& quad = topo.quads[quads[i]];
      const std::array<Vec3, 4> corners{positions[quad.vertices[0]], positions[quad.vertices[1]],
                                        positions[quad.vertices[2]], positions[quad.vertices[3]]};
      ad::Tensor points(static_cast<std::size_t>(K) * K, 3);
      for (int b = 0; b < K; ++b)
        for (int a = 0; a < K; ++a) {
          const Vec3 p = quad_point(corners, texel_param(a, K), texel_param(b, K));
          for (int c = 0; c < 3; ++c) points(static_cast<std::size_t>(b) * K + a, c) = p[c];
        }
      const auto [alpha, features] = field_eval_batch(state.field, points);
      const auto& pl = layout.placements[i];
      for (int b = 0; b < K; ++b)
        for (int a = 0; a < K; ++a) {
          const std::size_t k = static_cast<std::size_t>(b) * K + a;
          Features f{};
          for (std::size_t c = 0; c < kFeatureCount; ++c) f[c] = features(k, c);
          const auto q = encode_texel(binarize(alpha[k]) == 1.0, f);
          std::uint8_t* t0 = asset.feat0[pl.page].texel(pl.x0 + a, pl.y0 + b);
          std::uint8_t* t1 = asset.feat1[pl.page].texel(pl.x0 + a, pl.y0 + b);
          std::copy(q.begin(), q.begin() + 4, t0);
          std::copy(q.begin() + 4, q.end(), t1);
        }
    }
  });
  return asset;
}

BakedAsset bake(const TrainState& state, std::span<const Camera> train_cameras, const BakeOptions& options) {
  const auto quads = visible_quads(state, train_cameras, options.supersample, options.threads);
  const auto layout = allocate_atlas(quads.size(), options.K, options.max_dim);
  return bake_quads(state, quads, layout, options.threads);
}

// ---- asset files -----------------------------------------------------------------

namespace {

std::string page_name(int channel_block, std::size_t page) {
  return "feat" + std::to_string(channel_block) + "_" + std::to_string(page) + ".png";
}

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

float parse_float(const std::string& s, const fs::path& file, std::size_t line) {
  try {
    std::size_t used = 0;
    const float v = std::stof(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(file.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
}

void write_obj(const BakedAsset& a, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# meshfield asset\n";
  for (const auto& p : a.positions) out << "v " << fmt_float(p[0]) << ' ' << fmt_float(p[1]) << ' ' << fmt_float(p[2]) << '\n';
  for (const auto& t : a.uvs) out << "vt " << fmt_float(t[0]) << ' ' << fmt_float(t[1]) << '\n';
  std::int64_t current = -1;
  for (std::size_t i = 0; i < a.triangles.size(); ++i) {
    const std::size_t quad = i / 2;
    const auto page = quad < a.quad_pages.size() ? a.quad_pages[quad] : 0u;
    if (static_cast<std::int64_t>(page) != current) {
      out << "usemtl page_" << page << '\n';
      current = page;
    }
    out << 'f';
    for (auto v : a.triangles[i]) out << ' ' << v + 1 << '/' << v + 1;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void read_obj(BakedAsset& a, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  std::uint32_t page = 0;
  while (std::getline(in, line)) {
    ++n;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    std::vector<std::string> f;
    for (std::string w; ss >> w;) f.push_back(w);
    if (tag == "v") {
      if (f.size() != 3) throw IoError(path.string() + ":" + std::to_string(n) + ": expected 3 coordinates");
      a.positions.push_back({parse_float(f[0], path, n), parse_float(f[1], path, n), parse_float(f[2], path, n)});
    } else if (tag == "vt") {
      if (f.size() != 2) throw IoError(path.string() + ":" + std::to_string(n) + ": expected 2 texture coordinates");
      a.uvs.push_back({parse_float(f[0], path, n), parse_float(f[1], path, n)});
    } else if (tag == "usemtl") {
      if (f.size() != 1 || f[0].rfind("page_", 0) != 0)
        throw IoError(path.string() + ":" + std::to_string(n) + ": expected usemtl page_<n>");
      page = static_cast<std::uint32_t>(std::stoul(f[0].substr(5)));
    } else if (tag == "f") {
      if (f.size() != 3) throw IoError(path.string() + ":" + std::to_string(n) + ": only triangles are supported");
      std::array<std::uint32_t, 3> tri{};
      for (int k = 0; k < 3; ++k) {
        const auto slash = f[k].find('/');
        if (slash == std::string::npos || f[k].substr(0, slash) != f[k].substr(slash + 1))
          throw IoError(path.string() + ":" + std::to_string(n) + ": expected matching v/vt indices");
        const long idx = std::stol(f[k].substr(0, slash));
        if (idx < 1) throw IoError(path.string() + ":" + std::to_string(n) + ": index out of range");
        tri[k] = static_cast<std::uint32_t>(idx - 1);
      }
      if (a.triangles.size() % 2 == 0) a.quad_pages.push_back(page);
      a.triangles.push_back(tri);
    } else {
      throw IoError(path.string() + ":" + std::to_string(n) + ": unsupported record '" + tag + "'");
    }
  }
}

json manifest_json(const BakedAsset& a) {
  json layers = json::array();
  for (const auto& l : a.shader) {
    json w = json::array();
    for (int i = 0; i < l.in; ++i) {
      json row = json::array();
      for (int o = 0; o < l.out; ++o) row.push_back(l.weights[static_cast<std::size_t>(i) * l.out + o]);
      w.push_back(std::move(row));
    }
    layers.push_back({{"weights", std::move(w)}, {"bias", l.bias}, {"activation", std::string(to_string(l.activation))}});
  }
  return {{"format_version", a.format_version},
          {"K", a.K},
          {"P", a.P},
          {"scene_kind", a.scene_kind},
          {"background", a.background},
          {"num_pages", a.num_pages()},
          {"num_triangles", a.triangles.size()},
          {"config_hash", a.config_hash},
          {"layers", std::move(layers)}};
}

void read_manifest(BakedAsset& a, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
    const int version = j.at("format_version").get<int>();
    if (version != kAssetFormatVersion)
      throw IoError(path.string() + ": unsupported asset format_version " + std::to_string(version) + " (expected " +
                    std::to_string(kAssetFormatVersion) + ")");
    a.format_version = version;
    a.K = j.at("K").get<int>();
    a.P = j.at("P").get<int>();
    a.scene_kind = j.at("scene_kind").get<std::string>();
    a.background = j.at("background").get<std::array<float, 3>>();
    a.config_hash = j.value("config_hash", std::string());
    for (const auto& l : j.at("layers")) {
      ShaderLayer s;
      const auto& w = l.at("weights");
      s.in = static_cast<int>(w.size());
      s.out = s.in > 0 ? static_cast<int>(w.at(0).size()) : 0;
      for (const auto& row : w) {
        if (static_cast<int>(row.size()) != s.out) throw IoError(path.string() + ": ragged weight matrix");
        for (const auto& v : row) s.weights.push_back(static_cast<float>(v.get<double>()));
      }
      for (const auto& v : l.at("bias")) s.bias.push_back(static_cast<float>(v.get<double>()));
      s.activation = activation_from_string(l.at("activation").get<std::string>());
      a.shader.push_back(std::move(s));
    }
    const auto pages = j.at("num_pages").get<std::size_t>();
    a.feat0.resize(pages);
    a.feat1.resize(pages);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

void export_asset(const BakedAsset& asset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_obj(asset, dir / "mesh.obj");
  for (std::size_t p = 0; p < asset.num_pages(); ++p) {
    write_png(dir / page_name(0, p), asset.feat0[p]);
    write_png(dir / page_name(1, p), asset.feat1[p]);
  }
  std::ofstream out(dir / "mlp.json");
  if (!out) throw IoError("cannot write " + (dir / "mlp.json").string());
  out << manifest_json(asset).dump() << '\n';
  if (!out) throw IoError("failed writing " + (dir / "mlp.json").string());
}

BakedAsset import_asset(const fs::path& dir) {
  BakedAsset a;
  read_manifest(a, dir / "mlp.json");
  read_obj(a, dir / "mesh.obj");
  for (std::size_t p = 0; p < a.feat0.size(); ++p) {
    a.feat0[p] = read_png(dir / page_name(0, p));
    a.feat1[p] = read_png(dir / page_name(1, p));
    if (a.feat0[p].channels != 4 || a.feat1[p].channels != 4)
      throw IoError((dir / page_name(0, p)).string() + ": feature pages must be RGBA");
  }
  return a;
}

std::vector<std::string> validate_asset(const BakedAsset& a) {
  std::vector<std::string> bad;
  auto fail = [&](std::string s) { bad.push_back(std::move(s)); };
  if (a.format_version != kAssetFormatVersion) fail("unsupported format_version " + std::to_string(a.format_version));
  if (a.K < 2) fail("patch size K must be >= 2");
  if (a.feat0.size() != a.feat1.size()) fail("feat0 and feat1 page counts differ");
  for (std::size_t p = 0; p < std::min(a.feat0.size(), a.feat1.size()); ++p) {
    const auto& f0 = a.feat0[p];
    const auto& f1 = a.feat1[p];
    const std::string name = "page " + std::to_string(p);
    if (f0.width != f0.height || !std::has_single_bit(static_cast<unsigned>(std::max(f0.width, 0))) ||
        f0.width > kMaxPageDim)
      fail(name + ": dimensions " + std::to_string(f0.width) + "x" + std::to_string(f0.height) +
           " are not a square power of two <= 4096");
    if (f1.width != f0.width || f1.height != f0.height) fail(name + ": feat1 dimensions differ from feat0");
    if (f0.channels != 4 || f1.channels != 4) fail(name + ": pages must have 4 channels");
  }

  const std::size_t quads = a.positions.size() / 4;
  if (a.positions.size() % 4 != 0) fail("vertex count is not a multiple of 4");
  if (a.uvs.size() != a.positions.size()) fail("uv count differs from vertex count");
  if (a.triangles.size() != 2 * quads) fail("expected two triangles per quad");
  if (a.quad_pages.size() != quads) fail("page assignment count differs from quad count");
  for (const auto& p : a.positions)
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      fail("non-finite vertex position");
      break;
    }
  if (bad.empty()) {
    std::vector<std::vector<std::uint8_t>> used(a.num_pages());
    for (std::size_t p = 0; p < a.num_pages(); ++p)
      used[p].assign(static_cast<std::size_t>(a.feat0[p].width) * a.feat0[p].height, 0);
    for (std::size_t q = 0; q < quads; ++q) {
      const auto b = static_cast<std::uint32_t>(4 * q);
      const std::string name = "quad " + std::to_string(q);
      if (a.triangles[2 * q] != std::array<std::uint32_t, 3>{b, b + 1, b + 3} ||
          a.triangles[2 * q + 1] != std::array<std::uint32_t, 3>{b, b + 3, b + 2}) {
        fail(name + ": triangles do not follow the quad split");
        continue;
      }
      const auto page = a.quad_pages[q];
      if (page >= a.num_pages()) {
        fail(name + ": page " + std::to_string(page) + " does not exist");
        continue;
      }
      const int W = a.feat0[page].width;
      const double fx = a.uvs[b][0] * W - 0.5;
      const double fy = (1.0 - a.uvs[b][1]) * W - 0.5;
      const int x0 = static_cast<int>(std::lround(fx));
      const int y0 = static_cast<int>(std::lround(fy));
      bool ok = std::abs(fx - x0) < 1e-3 && std::abs(fy - y0) < 1e-3;
      for (int c = 0; c < 4 && ok; ++c) {
        const double ex = x0 + 0.5 + (c & 1) * (a.K - 1);
        const double ey = y0 + 0.5 + (c >> 1) * (a.K - 1);
        ok = std::abs(a.uvs[b + c][0] * W - ex) < 1e-3 && std::abs((1.0 - a.uvs[b + c][1]) * W - ey) < 1e-3;
      }
      if (!ok) {
        fail(name + ": uvs do not span a K x K patch interior");
        continue;
      }
      if (x0 < 0 || y0 < 0 || x0 + a.K > W || y0 + a.K > W) {
        fail(name + ": patch lies outside page " + std::to_string(page));
        continue;
      }
      bool overlap = false;
      for (int y = y0; y < y0 + a.K; ++y)
        for (int x = x0; x < x0 + a.K; ++x) {
          auto& u = used[page][static_cast<std::size_t>(y) * W + x];
          overlap |= u != 0;
          u = 1;
        }
      if (overlap) fail(name + ": patch overlaps another patch");
    }
    // Texels no patch owns are never sampled and must stay empty.
    for (std::size_t p = 0; p < a.num_pages() && bad.empty(); ++p) {
      const int W = a.feat0[p].width;
      for (std::size_t i = 0; i < used[p].size(); ++i) {
        if (used[p][i]) continue;
        const std::uint8_t* t0 = a.feat0[p].data.data() + 4 * i;
        const std::uint8_t* t1 = a.feat1[p].data.data() + 4 * i;
        if (std::any_of(t0, t0 + 4, [](std::uint8_t v) { return v != 0; }) ||
            std::any_of(t1, t1 + 4, [](std::uint8_t v) { return v != 0; })) {
          fail("page " + std::to_string(p) + ": texel (" + std::to_string(static_cast<int>(i) % W) + "," +
               std::to_string(static_cast<int>(i) / W) + ") lies outside every patch but is not zero");
          break;
        }
      }
    }
  }

  if (a.shader.empty()) {
    fail("shader has no layers");
  } else {
    if (a.shader.front().in != static_cast<int>(kFeatureCount + 3)) fail("shader input width must be 11");
    if (a.shader.back().out != 3) fail("shader output width must be 3");
    for (std::size_t l = 0; l < a.shader.size(); ++l) {
      const auto& s = a.shader[l];
      const std::string name = "shader layer " + std::to_string(l);
      if (s.weights.size() != static_cast<std::size_t>(s.in) * s.out || s.bias.size() != static_cast<std::size_t>(s.out))
        fail(name + ": weight or bias size mismatch");
      if (l + 1 < a.shader.size() && a.shader[l + 1].in != s.out) fail(name + ": output width does not feed next layer");
      for (float w : s.weights)
        if (!std::isfinite(w)) {
          fail(name + ": non-finite weight");
          break;
        }
    }
  }
  return bad;
}

}  // namespace meshfield
