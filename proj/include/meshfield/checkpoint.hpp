// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// Versioned binary snapshot of a training run: the config (as JSON plus its
// hash), the stage counters, every parameter and every optimizer moment.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "meshfield/trainer.hpp"

namespace meshfield {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
/// Throws IoError on unreadable files, bad magic, version or hash mismatch.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace meshfield
