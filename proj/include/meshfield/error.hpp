// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace meshfield {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad dimensions, unknown keys, out-of-range settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed. The message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A baked asset or checkpoint violates one of its structural invariants.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace meshfield
