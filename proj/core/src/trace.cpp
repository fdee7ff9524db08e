// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/trace.hpp"

#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "tiletrain/error.hpp"

namespace tiletrain {

namespace {

constexpr double kMicros = 1e6;

}  // namespace

void write_chrome_trace(const Trace& trace, const Topology& topology, std::ostream& out) {
  using nlohmann::json;
  json events = json::array();

  for (const DeviceModel& d : topology.devices) {
    events.push_back({{"name", "thread_name"},
                      {"ph", "M"},
                      {"pid", 0},
                      {"tid", d.id},
                      {"args", {{"name", std::string(to_string(d.kind)) + " " + std::to_string(d.id)}}}});
  }

  for (const TaskTraceRecord& t : trace.tasks) {
    events.push_back({{"name", t.kernel},
                      {"cat", "task"},
                      {"ph", "X"},
                      {"pid", 0},
                      {"tid", t.worker},
                      {"ts", t.start * kMicros},
                      {"dur", (t.end - t.start) * kMicros},
                      {"args",
                       {{"task", t.id},
                        {"ready_us", t.ready * kMicros},
                        {"wall_start_ns", t.wall_start_ns},
                        {"wall_end_ns", t.wall_end_ns},
                        {"bytes", t.bytes_transferred},
                        {"flops", t.cost_hint},
                        {"preds", t.predecessors}}}});
  }

  for (const PrefetchTraceRecord& p : trace.prefetches) {
    if (!p.performed) continue;
    events.push_back({{"name", "prefetch"},
                      {"cat", "transfer"},
                      {"ph", "i"},
                      {"s", "t"},
                      {"pid", 0},
                      {"tid", p.device},
                      {"ts", p.issued * kMicros},
                      {"args", {{"tile", p.tile}, {"bytes", p.bytes}, {"for_task", p.for_task}}}});
  }

  for (const MemoryEvent& m : trace.memory) {
    events.push_back({{"name", "mem dev" + std::to_string(m.device)},
                      {"ph", "C"},
                      {"pid", 1},
                      {"ts", m.time * kMicros},
                      {"args", {{"bytes", m.bytes_used}}}});
  }

  out << json{{"traceEvents", std::move(events)}, {"displayTimeUnit", "ms"}}.dump() << '\n';
}

void write_chrome_trace(const Trace& trace, const Topology& topology, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open trace file '" + path + "'");
  write_chrome_trace(trace, topology, out);
}

}  // namespace tiletrain
