// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "meshfield/config.hpp"

namespace meshfield::testing {

/// Fresh empty directory under the system temp dir, unique per process.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("meshfield_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Few-second training setup: a 6^3 lattice, narrow networks, 12x12 views.
inline TrainConfig tiny_config() {
  TrainConfig c = toy_config();
  c.lattice.P = 6;
  c.field.width = 16;
  c.field.depth = 2;
  c.field.skips = {};
  c.field.pe_degree = 2;
  c.field.shader_width = 8;
  c.toy.train_views = 3;
  c.toy.test_views = 1;
  c.toy.width = c.toy.height = 12;
  c.stage1_steps = 4;
  c.stage2_steps = 2;
  c.finetune_steps = 2;
  c.stage2_warmup_steps = 1;
  c.batch_rays = 40;
  c.batch_pixels = 12;
  return c;
}

}  // namespace meshfield::testing
