// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// meshfield: train, bake, render, eval, bench and validate from the command
// line. Exit codes: 0 ok, 2 usage or configuration, 3 I/O, 4 invariant
// violation, 5 training failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "meshfield/baker.hpp"
#include "meshfield/checkpoint.hpp"
#include "meshfield/config.hpp"
#include "meshfield/error.hpp"
#include "meshfield/image.hpp"
#include "meshfield/parallel.hpp"
#include "meshfield/raster.hpp"
#include "meshfield/trainer.hpp"

namespace fs = std::filesystem;
using namespace meshfield;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kInvariant = 4, kTraining = 5 };

struct ConfigFlags {
  std::string config;
  std::string scene;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<int> supersample;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON training config");
    cmd->add_option("--scene", scene, "synthetic | forward_facing | unbounded | toy:<name>");
    cmd->add_option("--data", data, "directory with transforms_{train,test}.json");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--supersample", supersample, "sub-pixel grid edge (1 or 2)")->check(CLI::Range(1, 2));
  }

  TrainConfig resolve() const {
    TrainConfig c = toy_config();
    if (!config.empty()) c = load_config(config, c);
    if (!scene.empty()) {
      if (scene.starts_with("toy:"))
        c.scene = scene;
      else
        c.lattice.kind = scene_kind_from_string(scene);
    }
    if (!data.empty()) c.scene = data;
    if (seed) c.seed = *seed;
    if (supersample) c.supersample = *supersample;
    c.validate();
    return c;
  }
};

struct OrbitFlags {
  int frames = 360;
  int width = 64;
  int height = 64;
  double fov = 0.75;
  double radius = 3.0;
  double elevation = 0.8;

  void add(CLI::App* cmd, int default_frames) {
    frames = default_frames;
    cmd->add_option("--frames", frames, "orbit frames")->check(CLI::PositiveNumber);
    cmd->add_option("--width", width, "image width")->check(CLI::PositiveNumber);
    cmd->add_option("--height", height, "image height")->check(CLI::PositiveNumber);
    cmd->add_option("--fov", fov, "horizontal field of view in radians");
    cmd->add_option("--radius", radius, "orbit radius");
    cmd->add_option("--elevation", elevation, "orbit height");
  }

  std::vector<Camera> cameras() const { return orbit_cameras(width, height, fov, radius, elevation, frames); }
};

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) { open_output(path) << text; }

std::span<const View> split_views(const Dataset& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "test") return data.test;
  throw ConfigError("unknown split '" + split + "'");
}

std::vector<Camera> split_cameras(std::span<const View> views) {
  std::vector<Camera> out;
  for (const View& v : views) out.push_back(v.camera);
  return out;
}

// ---- train ---------------------------------------------------------------------

int cmd_train(const ConfigFlags& flags, const std::string& resume, int until_stage, const fs::path& out, int threads) {
  TrainState state = resume.empty() ? TrainState(flags.resolve()) : load_checkpoint(resume);
  const Dataset data = load_scene(state.config);
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(state.config) + "\n");

  std::ofstream log = open_output(out / "train_log.csv");
  log << "stage,step,loss,color,color_binary,distortion,vertex,grid,lr,rays,samples,quadrature_limit,"
         "batch_multiplier\n";
  const int every = std::max(1, state.config.log_every);
  while (state.stage <= until_stage && state.stage <= 3) {
    run_stage(state, data, threads, [&](const StepStats& s) {
      char line[512];
      std::snprintf(line, sizeof line, "%d,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu,%zu,%zu,%d\n", s.stage,
                    static_cast<unsigned long long>(s.step), s.loss, s.color, s.color_binary, s.distortion, s.vertex,
                    s.grid, s.lr, s.rays, s.samples, s.quadrature_limit, s.batch_multiplier);
      log << line;
      if (s.step % every == 0) std::cerr << "stage " << s.stage << " step " << s.step << " loss " << s.loss << "\n";
    });
  }
  save_checkpoint(out / "checkpoint.mfck", state);
  std::cout << "wrote " << (out / "checkpoint.mfck").string() << "\n";
  return kOk;
}

// ---- bake ----------------------------------------------------------------------

int cmd_bake(const std::string& checkpoint, const fs::path& out, int K, int threads) {
  const TrainState state = load_checkpoint(checkpoint);
  const Dataset data = load_scene(state.config);
  BakeOptions options;
  options.K = K;
  options.supersample = state.config.supersample;
  options.threads = threads;
  const BakedAsset asset = bake(state, split_cameras(data.train), options);
  if (const auto violations = validate_asset(asset); !violations.empty())
    throw InvariantError("baked asset is invalid: " + violations.front());
  export_asset(asset, out);
  std::cout << "wrote " << out.string() << ": " << asset.triangles.size() << " triangles, " << asset.num_pages()
            << " pages\n";
  return kOk;
}

// ---- render --------------------------------------------------------------------

int cmd_render(const std::string& asset_dir, const ConfigFlags& flags, const std::string& split,
               const OrbitFlags& orbit, const fs::path& out, int threads) {
  const BakedAsset asset = import_asset(asset_dir);
  std::vector<Camera> cameras;
  if (split.empty()) {
    cameras = orbit.cameras();
  } else {
    const Dataset data = load_scene(flags.resolve());
    cameras = split_cameras(split_views(data, split));
  }
  const int ss = flags.supersample.value_or(2);
  fs::create_directories(out);
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.png", i);
    write_png(out / name, to_image8(render(asset, cameras[i], threads, ss)));
  }
  std::cout << "wrote " << cameras.size() << " frames to " << out.string() << "\n";
  return kOk;
}

// ---- eval ----------------------------------------------------------------------

int cmd_eval(const std::string& asset_dir, const std::string& checkpoint, const ConfigFlags& flags,
             const std::string& split, const std::string& mode, const std::string& out, int threads) {
  if (asset_dir.empty() == checkpoint.empty()) throw CLI::ValidationError("eval needs exactly one of --asset, --checkpoint");
  EvalResult result;
  std::string source;
  if (!asset_dir.empty()) {
    const BakedAsset asset = import_asset(asset_dir);
    const TrainConfig config = flags.resolve();
    const Dataset data = load_scene(config);
    const int ss = flags.supersample.value_or(config.supersample);
    result = evaluate(split_views(data, split), [&](const Camera& c) { return render(asset, c, threads, ss); });
    source = "baked";
  } else {
    const TrainState state = load_checkpoint(checkpoint);
    const Dataset data = load_scene(state.config);
    std::string m = mode;
    if (m.empty()) m = state.stage <= 1 ? "stage1" : "binary";
    std::function<Image(const Camera&)> fn;
    SupersampleOptions ss;
    ss.supersample = flags.supersample.value_or(state.config.supersample);
    if (m == "stage1") {
      fn = [&](const Camera& c) { return render_stage1(state, c, threads); };
    } else if (m == "continuous" || m == "binary") {
      ss.mode = m == "binary" ? PixelMode::binary : PixelMode::continuous;
      fn = [&](const Camera& c) { return render_supersampled(state, c, ss, threads); };
    } else {
      throw CLI::ValidationError("--mode must be stage1, continuous or binary");
    }
    result = evaluate(split_views(data, split), fn);
    source = m;
  }

  std::ostringstream csv;
  csv << "source,split,view,psnr\n";
  for (std::size_t i = 0; i < result.psnr.size(); ++i)
    csv << source << ',' << split << ',' << i << ',' << result.psnr[i] << '\n';
  csv << source << ',' << split << ",mean," << result.mean_psnr << '\n';
  std::cout << csv.str();
  if (!out.empty()) write_text(out, csv.str());
  return kOk;
}

// ---- bench ---------------------------------------------------------------------

int cmd_bench(const std::string& asset_dir, const OrbitFlags& orbit, const std::string& out, int threads) {
  const BakedAsset asset = import_asset(asset_dir);
  const BenchStats stats = bench(asset, orbit.cameras(), threads);
  std::ostringstream csv;
  csv << "frame,raster_ms,shade_ms,total_ms\n";
  for (const BenchRow& r : stats.rows)
    csv << r.frame << ',' << r.raster_ms << ',' << r.shade_ms << ',' << r.total_ms << '\n';
  csv << "mean," << stats.mean_raster_ms << ',' << stats.mean_shade_ms << ',' << stats.mean_ms << '\n';
  csv << "median,,," << stats.median_ms << '\n';
  if (out.empty())
    std::cout << csv.str();
  else
    write_text(out, csv.str());
  std::cerr << "frames " << stats.rows.size() << " mean " << stats.mean_ms << " ms median " << stats.median_ms
            << " ms\n";
  return kOk;
}

// ---- validate ------------------------------------------------------------------

int cmd_validate(const std::string& asset_dir) {
  const BakedAsset asset = import_asset(asset_dir);
  const auto violations = validate_asset(asset);
  for (const std::string& v : violations) std::cout << "violation: " << v << "\n";
  if (!violations.empty()) {
    std::cout << violations.size() << " violation(s)\n";
    return kInvariant;
  }
  std::cout << "ok: " << asset.triangles.size() << " triangles, " << asset.num_pages() << " pages\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshfield: textured-mesh radiance fields"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default MESHFIELD_THREADS, then all cores)");

  ConfigFlags flags;
  std::string resume, checkpoint, asset_dir, render_split, eval_split, mode, out;
  int stage = 3;
  int K = kDefaultPatch;
  OrbitFlags render_orbit, bench_orbit;

  auto* train = app.add_subcommand("train", "train stages 1 through --stage and write a checkpoint");
  flags.add(train);
  train->add_option("--stage", stage, "last stage to run (3 is fine-tuning)")->check(CLI::Range(1, 3));
  train->add_option("--resume", resume, "continue from a checkpoint");
  train->add_option("--out", out, "output directory")->required();

  auto* bake_cmd = app.add_subcommand("bake", "bake a checkpoint into an asset directory");
  bake_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  bake_cmd->add_option("--patch", K, "texels per patch edge")->check(CLI::Range(2, 256));
  bake_cmd->add_option("--out", out, "asset directory")->required();

  auto* render_cmd = app.add_subcommand("render", "render an asset to PNG frames");
  render_cmd->add_option("--asset", asset_dir, "asset directory")->required();
  render_cmd->add_option("--split", render_split, "render dataset cameras (train or test) instead of an orbit");
  flags.add(render_cmd);
  render_orbit.add(render_cmd, 36);
  render_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "per-view and mean PSNR of an asset or checkpoint");
  eval_cmd->add_option("--asset", asset_dir, "asset directory");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval_cmd->add_option("--mode", mode, "checkpoint renderer: stage1, continuous or binary");
  eval_cmd->add_option("--split", eval_split, "train or test")->default_val("test");
  flags.add(eval_cmd);
  eval_cmd->add_option("--out", out, "metrics CSV");

  auto* bench_cmd = app.add_subcommand("bench", "time the CPU renderer on an orbit");
  bench_cmd->add_option("--asset", asset_dir, "asset directory")->required();
  bench_orbit.add(bench_cmd, 360);
  bench_cmd->add_option("--out", out, "timing CSV");

  auto* validate_cmd = app.add_subcommand("validate", "check every asset invariant");
  validate_cmd->add_option("--asset", asset_dir, "asset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const int n = resolve_threads(threads);
    if (*train) return cmd_train(flags, resume, stage, out, n);
    if (*bake_cmd) return cmd_bake(checkpoint, out, K, n);
    if (*render_cmd) return cmd_render(asset_dir, flags, render_split, render_orbit, out, n);
    if (*eval_cmd) return cmd_eval(asset_dir, checkpoint, flags, eval_split, mode, out, n);
    if (*bench_cmd) return cmd_bench(asset_dir, bench_orbit, out, n);
    if (*validate_cmd) return cmd_validate(asset_dir);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kInvariant;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kTraining;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
