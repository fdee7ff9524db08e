// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tiletrain {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model, topology or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Misuse of the runtime API: unregistered handles, conflicting accesses,
// host access while tasks are pending.
class RuntimeError : public Error {
 public:
  using Error::Error;
};

// A kernel precondition was violated (shape mismatch, index out of range).
class KernelError : public Error {
 public:
  using Error::Error;
};

// No device can host a task, or a handle does not fit a specific device.
class SchedulingError : public Error {
 public:
  using Error::Error;
};

// A bounded device could not make room for a tile.
class OutOfDeviceMemory : public Error {
 public:
  OutOfDeviceMemory(const std::string& what, int device, std::size_t needed,
                    std::size_t used, std::size_t capacity)
      : Error(what),
        device_(device),
        needed_(needed),
        used_(used),
        capacity_(capacity) {}

  int device() const noexcept { return device_; }
  std::size_t needed() const noexcept { return needed_; }
  std::size_t used() const noexcept { return used_; }
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  int device_;
  std::size_t needed_;
  std::size_t used_;
  std::size_t capacity_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace tiletrain
