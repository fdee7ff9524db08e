// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace tiletrain {

using TaskId = std::uint64_t;
using TileId = std::uint64_t;
using DeviceId = int;

inline constexpr TaskId kNoTask = 0;

enum class AccessMode : std::uint8_t { Read, Write, ReadWrite, Reduce };

constexpr bool writes(AccessMode m) noexcept {
  return m == AccessMode::Write || m == AccessMode::ReadWrite;
}

constexpr bool reads(AccessMode m) noexcept {
  return m == AccessMode::Read || m == AccessMode::ReadWrite;
}

std::string_view to_string(AccessMode mode) noexcept;

// Identity of one registered tile. Version and home buffer live in the
// runtime's main store; the handle itself is a cheap value.
struct TileHandle {
  TileId id = 0;
  std::size_t nbytes = 0;

  bool valid() const noexcept { return id != 0; }
  friend bool operator==(const TileHandle&, const TileHandle&) = default;
};

struct Access {
  TileHandle handle;
  AccessMode mode = AccessMode::Read;
};

}  // namespace tiletrain
