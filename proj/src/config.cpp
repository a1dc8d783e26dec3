// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "meshfield/error.hpp"

namespace meshfield {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects any it did not consume.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path_ + key + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path_ + k + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "config section '" + path_ + "'"; }
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_lattice(const json& j, LatticeConfig& c) {
  Reader r(j, "lattice.");
  r.get("P", c.P);
  std::string kind = scene_kind_name(c.kind);
  r.get("kind", kind);
  SceneKind next = scene_kind_from_string(kind);
  if (next.index() == c.kind.index()) next = c.kind;
  if (auto* s = std::get_if<SyntheticScene>(&next)) r.get("scale", s->scale);
  if (auto* s = std::get_if<ForwardFacingScene>(&next)) {
    r.get("u", s->u);
    r.get("v", s->v);
  }
  if (auto* s = std::get_if<UnboundedScene>(&next)) {
    r.get("shells", s->shells);
    r.get("box_subdiv", s->box_subdiv);
  }
  c.kind = next;
  r.finish();
}

void read_field(const json& j, FieldConfig& c) {
  Reader r(j, "field.");
  r.get("width", c.width);
  r.get("depth", c.depth);
  r.get("skips", c.skips);
  r.get("pe_degree", c.pe_degree);
  r.get("shader_width", c.shader_width);
  r.get("shader_depth", c.shader_depth);
  r.get("opacity_bias", c.opacity_bias);
  r.finish();
}

void read_toy(const json& j, ToyViewConfig& c) {
  Reader r(j, "toy.");
  r.get("train_views", c.train_views);
  r.get("test_views", c.test_views);
  r.get("width", c.width);
  r.get("height", c.height);
  r.get("camera_angle_x", c.camera_angle_x);
  r.get("radius", c.radius);
  r.get("supersample", c.supersample);
  r.finish();
}

json lattice_json(const LatticeConfig& c) {
  json j{{"P", c.P}, {"kind", scene_kind_name(c.kind)}};
  if (const auto* s = std::get_if<SyntheticScene>(&c.kind)) j["scale"] = s->scale;
  if (const auto* s = std::get_if<ForwardFacingScene>(&c.kind)) {
    j["u"] = s->u;
    j["v"] = s->v;
  }
  if (const auto* s = std::get_if<UnboundedScene>(&c.kind)) {
    j["shells"] = s->shells;
    j["box_subdiv"] = s->box_subdiv;
  }
  return j;
}

}  // namespace

Dataset load_scene(const TrainConfig& config) {
  constexpr std::string_view kToy = "toy:";
  if (config.scene.starts_with(kToy))
    return make_toy_dataset(toy_scene(std::string_view(config.scene).substr(kToy.size())), config.toy);
  return load_transforms(config.scene);
}

SceneKind scene_kind_from_string(std::string_view name) {
  if (name == "synthetic") return SyntheticScene{};
  if (name == "forward_facing") return ForwardFacingScene{};
  if (name == "unbounded") return UnboundedScene{};
  throw ConfigError("unknown scene kind '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  lattice.validate();
  if (field.width == 0 || field.depth == 0 || field.shader_width == 0 || field.shader_depth == 0)
    throw ConfigError("network sizes must be positive");
  if (field.pe_degree < 0) throw ConfigError("pe_degree must be >= 0");
  if (stage1_steps < 0 || stage2_steps < 0 || finetune_steps < 0 || stage2_warmup_steps < 0)
    throw ConfigError("step counts must be >= 0");
  if (batch_rays < 1 || batch_pixels < 1) throw ConfigError("batch sizes must be >= 1");
  if (supersample < 1 || supersample > 2) throw ConfigError("supersample must be 1 or 2");
  if (!(lr_init >= 0.0) || !(lr_final >= 0.0) || !(grid_lr >= 0.0) || !(offsets_lr_scale >= 0.0))
    throw ConfigError("learning rates must be >= 0");
  if (!(w_v >= 0.0) || !(grid_weights.sparse >= 0.0) || !(grid_weights.smooth >= 0.0))
    throw ConfigError("loss weights must be >= 0");
  if (!(grid_threshold >= 0.0)) throw ConfigError("grid_threshold must be >= 0");
  if (toy.width < 1 || toy.height < 1 || toy.train_views < 1 || toy.test_views < 0)
    throw ConfigError("toy view settings out of range");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

double TrainConfig::distortion_weight() const {
  if (w_d >= 0.0) return w_d;
  if (std::holds_alternative<ForwardFacingScene>(lattice.kind)) return 0.01;
  if (std::holds_alternative<UnboundedScene>(lattice.kind)) return 0.001;
  return 0.0;
}

int TrainConfig::stage_steps(int stage) const {
  switch (stage) {
    case 1: return stage1_steps;
    case 2: return stage2_steps;
    case 3: return finetune_steps;
  }
  throw ConfigError("unknown stage " + std::to_string(stage));
}

TrainConfig toy_config() {
  TrainConfig c;
  c.field.width = 64;
  c.field.depth = 4;
  c.field.skips = {2};
  c.field.pe_degree = 6;
  c.stage1_steps = 6000;
  c.stage2_steps = 1000;
  c.finetune_steps = 500;
  c.lr_init = 2e-3;
  c.lr_final = 5e-5;
  c.w_v = 1.0 / 4096.0;  // regularizer averaged over the P^3 vertices
  return c;
}

TrainConfig config_from_json(std::string_view text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig c = base;
  Reader r(j, "");
  r.get("scene", c.scene);
  if (const json* l = r.child("lattice")) read_lattice(*l, c.lattice);
  if (const json* f = r.child("field")) read_field(*f, c.field);
  if (const json* t = r.child("toy")) read_toy(*t, c.toy);
  r.get("stage1_steps", c.stage1_steps);
  r.get("stage2_steps", c.stage2_steps);
  r.get("finetune_steps", c.finetune_steps);
  r.get("stage2_warmup_steps", c.stage2_warmup_steps);
  r.get("batch_rays", c.batch_rays);
  r.get("batch_pixels", c.batch_pixels);
  r.get("supersample", c.supersample);
  r.get("lr_init", c.lr_init);
  r.get("lr_final", c.lr_final);
  r.get("offsets_lr_scale", c.offsets_lr_scale);
  r.get("grid_lr", c.grid_lr);
  r.get("grid_threshold", c.grid_threshold);
  r.get("grid_sparse", c.grid_weights.sparse);
  r.get("grid_smooth", c.grid_weights.smooth);
  r.get("w_d", c.w_d);
  r.get("w_v", c.w_v);
  r.get("seed", c.seed);
  r.get("log_every", c.log_every);
  r.finish();
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["scene"] = c.scene;
  j["lattice"] = lattice_json(c.lattice);
  j["field"] = {{"width", c.field.width},           {"depth", c.field.depth},
                {"skips", c.field.skips},           {"pe_degree", c.field.pe_degree},
                {"shader_width", c.field.shader_width}, {"shader_depth", c.field.shader_depth},
                {"opacity_bias", c.field.opacity_bias}};
  j["toy"] = {{"train_views", c.toy.train_views}, {"test_views", c.toy.test_views},
              {"width", c.toy.width},             {"height", c.toy.height},
              {"camera_angle_x", c.toy.camera_angle_x}, {"radius", c.toy.radius},
              {"supersample", c.toy.supersample}};
  j["stage1_steps"] = c.stage1_steps;
  j["stage2_steps"] = c.stage2_steps;
  j["finetune_steps"] = c.finetune_steps;
  j["stage2_warmup_steps"] = c.stage2_warmup_steps;
  j["batch_rays"] = c.batch_rays;
  j["batch_pixels"] = c.batch_pixels;
  j["supersample"] = c.supersample;
  j["lr_init"] = c.lr_init;
  j["lr_final"] = c.lr_final;
  j["offsets_lr_scale"] = c.offsets_lr_scale;
  j["grid_lr"] = c.grid_lr;
  j["grid_threshold"] = c.grid_threshold;
  j["grid_sparse"] = c.grid_weights.sparse;
  j["grid_smooth"] = c.grid_weights.smooth;
  j["w_d"] = c.w_d;
  j["w_v"] = c.w_v;
  j["seed"] = c.seed;
  j["log_every"] = c.log_every;
  return j.dump(2);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const TrainConfig& config) { return fnv1a64(config_to_json(config)); }

}  // namespace meshfield
