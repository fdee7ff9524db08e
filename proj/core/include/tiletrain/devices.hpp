// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tiletrain/types.hpp"

namespace tiletrain {

enum class DeviceKind : std::uint8_t { CpuCore, GpuLike };

std::string_view to_string(DeviceKind kind) noexcept;

// One modeled worker. A device without a memory capacity reads and writes
// the main store directly; a bounded device keeps private copies of tiles
// and pays bandwidth_to_main for every byte moved to or from main.
struct DeviceModel {
  DeviceId id = 0;
  DeviceKind kind = DeviceKind::GpuLike;
  double speed = 1.0;
  std::optional<std::size_t> mem_capacity;
  double bandwidth_to_main = 1e9;

  bool unbounded() const noexcept { return !mem_capacity.has_value(); }
};

struct Topology {
  std::vector<DeviceModel> devices;
  // Flops per virtual second delivered by a device of speed 1.
  double flops_per_speed_unit = 1.0;

  std::size_t size() const noexcept { return devices.size(); }
  const DeviceModel& operator[](DeviceId id) const { return devices.at(static_cast<std::size_t>(id)); }

  // Throws ConfigError on empty topologies, non-positive speeds or
  // bandwidths, zero capacities and ids that do not match positions.
  void validate() const;

  double compute_seconds(DeviceId id, double flops) const;
  double max_flop_rate() const;
  std::size_t bounded_capacity_total() const;
  bool has_unbounded() const;
};

struct TopologyParams {
  int gpu_count = 4;
  std::size_t gpu_capacity = std::size_t{256} << 20;
  double gpu_speed = 10.0;
  int cpu_count = 4;
  double cpu_speed = 1.0;
  double bandwidth = 16e9;
  double flops_per_speed_unit = 1e9;
};

// GpuLike devices come first (ids 0..gpu_count-1), then CpuCore devices.
Topology make_topology(const TopologyParams& params);

// 4 GpuLike (speed 10) + 4 CpuCore (speed 1, unbounded).
Topology default_topology();

// Home copies of every registered tile.
class MainStore {
 public:
  TileId add(std::size_t nbytes);

  bool contains(TileId id) const noexcept { return id >= 1 && id <= entries_.size(); }
  std::size_t nbytes(TileId id) const { return entry(id).data.size(); }
  std::span<std::byte> data(TileId id) { return entry(id).data; }
  std::span<const std::byte> data(TileId id) const { return entry(id).data; }

  // The main copy is stale while some device holds a Dirty copy.
  bool stale(TileId id) const { return entry(id).stale; }
  void set_stale(TileId id, bool stale) { entry(id).stale = stale; }

  std::size_t tile_count() const noexcept { return entries_.size(); }
  std::size_t total_bytes() const noexcept { return total_bytes_; }

 private:
  struct Entry {
    std::vector<std::byte> data;
    bool stale = false;
  };

  Entry& entry(TileId id);
  const Entry& entry(TileId id) const;

  std::vector<Entry> entries_;
  std::size_t total_bytes_ = 0;
};

enum class CopyState : std::uint8_t { Valid, Dirty };

// Accumulates the modeled cost of residency operations performed for one
// task start, prefetch or host synchronisation.
struct TransferLog {
  std::size_t bytes = 0;
  std::size_t writeback_bytes = 0;
  double seconds = 0.0;
  // Earliest virtual time at which every acquired copy is usable (in-flight
  // prefetches complete later than the acquiring task may start).
  double ready_at = 0.0;
  std::vector<TileId> evicted;
};

struct MemoryEvent {
  double time = 0.0;
  DeviceId device = 0;
  std::size_t bytes_used = 0;
};

// Per-device tile residency with LRU eviction, lazy writeback and
// best-effort prefetch. Holds real copies of tile data for bounded devices;
// only the coordination thread mutates it.
class ResidencyMap {
 public:
  ResidencyMap(const Topology& topology, MainStore& store, bool allow_eviction);

  // --- queries -----------------------------------------------------------
  std::optional<CopyState> state(DeviceId device, TileId tile) const;
  // True when the device can use the tile without any transfer.
  bool is_valid(DeviceId device, TileId tile) const;
  std::optional<DeviceId> dirty_owner(TileId tile) const;
  bool bounded(DeviceId device) const { return !topology_[device].unbounded(); }
  std::size_t bytes_used(DeviceId device) const { return used_.at(static_cast<std::size_t>(device)); }
  std::size_t capacity(DeviceId device) const;
  std::size_t peak_bytes(DeviceId device) const { return peak_.at(static_cast<std::size_t>(device)); }
  std::size_t resident_tiles(DeviceId device) const { return copies_.at(static_cast<std::size_t>(device)).size(); }
  bool allow_eviction() const noexcept { return allow_eviction_; }

  // Bytes and modeled seconds needed before `mode` access on `device`
  // could run, given current residency. Used for completion-time estimates.
  std::size_t missing_bytes(DeviceId device, TileId tile, AccessMode mode) const;
  double fetch_seconds(DeviceId device, TileId tile, AccessMode mode) const;

  // --- mutations ---------------------------------------------------------
  // Makes a usable copy of `tile` on `device` and pins it. Write modes make
  // the device copy the only valid one.
  void acquire(DeviceId device, TileId tile, AccessMode mode, double now, TransferLog& log);
  void unpin(DeviceId device, TileId tile);

  // Writes back and drops least-recently-used unpinned tiles until
  // `bytes_needed` more bytes fit. Throws OutOfDeviceMemory if impossible
  // or if eviction is disabled; nothing is evicted in that case.
  std::vector<TileId> evict(DeviceId device, std::size_t bytes_needed, double now, TransferLog& log);

  // Best-effort copy from main into `device`, completing at the returned
  // log's ready_at. Returns false (and does nothing) when the tile is
  // already usable there, is not clean in main, or does not fit.
  bool prefetch(DeviceId device, TileId tile, double now, TransferLog& log);

  // Private accumulation space for Reduce accesses.
  void reserve_scratch(DeviceId device, std::size_t nbytes, double now, TransferLog& log);
  void release_scratch(DeviceId device, std::size_t nbytes, double now);

  std::span<std::byte> data(DeviceId device, TileId tile);

  // Host access: bring main up to date / discard device copies after a
  // host write.
  void sync_to_main(TileId tile, TransferLog& log);
  void drop_device_copies(TileId tile, double now);

  void set_record_events(bool on) noexcept { record_events_ = on; }
  const std::vector<MemoryEvent>& memory_events() const noexcept { return events_; }
  void clear_events() { events_.clear(); }

 private:
  struct Copy {
    std::vector<std::byte> data;
    CopyState state = CopyState::Valid;
    double ready_at = 0.0;
    std::uint64_t tick = 0;
    int pins = 0;
  };

  using CopyTable = std::unordered_map<TileId, Copy>;

  Copy* find(DeviceId device, TileId tile);
  const Copy* find(DeviceId device, TileId tile) const;
  void touch(DeviceId device, TileId tile, Copy& copy);
  void make_room(DeviceId device, std::size_t nbytes, double now, TransferLog& log);
  void drop(DeviceId device, TileId tile, double now);
  void write_back(DeviceId owner, TileId tile, TransferLog& log);
  void note_usage(DeviceId device, double now);

  const Topology& topology_;
  MainStore& store_;
  bool allow_eviction_;
  std::vector<CopyTable> copies_;
  std::vector<std::map<std::uint64_t, TileId>> lru_;
  std::unordered_map<TileId, DeviceId> dirty_;
  std::vector<std::size_t> used_;
  std::vector<std::size_t> peak_;
  std::vector<double> link_free_;
  std::uint64_t tick_ = 0;
  bool record_events_ = true;
  std::vector<MemoryEvent> events_;
};

}  // namespace tiletrain
