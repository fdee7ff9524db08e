// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tiletrain/devices.hpp"
#include "tiletrain/types.hpp"

namespace tiletrain {

// Times are virtual seconds unless suffixed with _ns (wall clock).
struct TaskTraceRecord {
  TaskId id = kNoTask;
  std::string kernel;
  DeviceId worker = 0;
  double ready = 0.0;
  double start = 0.0;
  double end = 0.0;
  std::uint64_t wall_start_ns = 0;
  std::uint64_t wall_end_ns = 0;
  std::size_t bytes_transferred = 0;
  double cost_hint = 0.0;
  std::vector<TaskId> predecessors;
};

struct PrefetchTraceRecord {
  double issued = 0.0;
  double ready_at = 0.0;
  DeviceId device = 0;
  TileId tile = 0;
  std::size_t bytes = 0;
  TaskId for_task = kNoTask;
  // Residency of the tile on the device when the directive was issued.
  bool was_valid = false;
  bool performed = false;
};

struct Trace {
  std::vector<TaskTraceRecord> tasks;
  std::vector<PrefetchTraceRecord> prefetches;
  std::vector<MemoryEvent> memory;

  void clear() {
    tasks.clear();
    prefetches.clear();
    memory.clear();
  }
};

// Chrome trace-event JSON: one complete ("X") event per task on its worker
// lane, counter ("C") events for device memory, instant events for
// prefetches. Timestamps are virtual time in microseconds.
void write_chrome_trace(const Trace& trace, const Topology& topology, std::ostream& out);
void write_chrome_trace(const Trace& trace, const Topology& topology, const std::string& path);

}  // namespace tiletrain
