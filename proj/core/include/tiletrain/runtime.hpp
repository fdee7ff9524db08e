// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tiletrain/devices.hpp"
#include "tiletrain/scheduler.hpp"
#include "tiletrain/trace.hpp"
#include "tiletrain/types.hpp"

namespace tiletrain {

enum class TaskState : std::uint8_t { Submitted, Ready, Running, Done };

// Neutral element and merge rule of a handle's Reduce accesses. Each Reduce
// task writes into a private buffer initialised by `init`; at commit the
// buffers are folded into the canonical tile with `combine` in submission
// order, so the result does not depend on placement.
struct ReduceOp {
  std::function<void(std::span<std::byte>)> init;
  std::function<void(std::span<std::byte> acc, std::span<const std::byte> part)> combine;

  static ReduceOp sum_f32();
};

class TaskContext {
 public:
  std::size_t size() const noexcept { return spans_.size(); }
  DeviceId worker() const noexcept { return worker_; }

  std::span<std::byte> bytes(std::size_t i) const { return spans_.at(i); }

  // Access i reinterpreted as an array of T (F32 data or I32 indices).
  template <class T>
  std::span<T> as(std::size_t i) const {
    auto b = bytes(i);
    return {reinterpret_cast<T*>(b.data()), b.size() / sizeof(T)};
  }

 private:
  friend class Runtime;
  std::vector<std::span<std::byte>> spans_;
  DeviceId worker_ = 0;
};

using KernelFn = std::function<void(const TaskContext&)>;

struct TaskNode {
  TaskId id = kNoTask;
  std::string kernel;
  std::vector<Access> accesses;
  double cost_hint = 0.0;
  TaskState state = TaskState::Submitted;
  std::vector<TaskId> predecessors;
  std::vector<TaskId> successors;
  // Internal reduction merge inserted by the runtime.
  bool commit = false;
};

// Tasks submitted since the last barrier. Edges only point from earlier to
// later submissions.
class TaskGraph {
 public:
  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  TaskId first_id() const noexcept { return first_; }
  TaskId end_id() const noexcept { return first_ + nodes_.size(); }
  bool contains(TaskId id) const noexcept { return id >= first_ && id < end_id(); }

  const TaskNode& node(TaskId id) const;
  std::span<const TaskId> predecessors(TaskId id) const { return node(id).predecessors; }
  std::span<const TaskId> successors(TaskId id) const { return node(id).successors; }

  // Longest cost_hint-weighted path through the graph.
  double critical_path_cost() const;
  bool acyclic() const;

 private:
  friend class Runtime;
  TaskNode& mut(TaskId id);

  std::deque<TaskNode> nodes_;
  TaskId first_ = 1;
};

struct RuntimeOptions {
  Topology topology = default_topology();
  PolicyKind policy = PolicyKind::GreedyEct;
  // Allow LRU eviction (offloading) from bounded devices.
  bool offload = true;
  bool prefetch = true;
  bool record_trace = true;
};

// Idle gaps of one device in virtual seconds, binned by decade: bin 0 holds
// gaps below 1 us, bin i gaps in [10^(i-7), 10^(i-6)) s, the last bin 1 s
// and above. Back-to-back tasks record no gap.
struct IdleHistogram {
  static constexpr std::size_t kBins = 8;
  std::array<std::size_t, kBins> counts{};
  double total_seconds = 0.0;

  void add(double gap);
  void merge(const IdleHistogram& other);
  // Lower edge of bin i in seconds (0 for the first bin).
  static double lower_edge(std::size_t i);
};

// Per-barrier accounting in virtual time.
struct FlushStats {
  double start = 0.0;
  double end = 0.0;
  std::size_t tasks = 0;
  std::size_t bytes_transferred = 0;
  std::size_t prefetch_bytes = 0;
  double total_flops = 0.0;
  double critical_path_flops = 0.0;
  std::vector<double> busy_seconds;
  // Gaps before, between and after a device's tasks within the flush.
  std::vector<IdleHistogram> idle;

  double makespan() const noexcept { return end - start; }
};

struct RunStats {
  std::size_t flushes = 0;
  std::size_t tasks = 0;
  std::size_t bytes_transferred = 0;
  std::size_t host_sync_bytes = 0;
  std::vector<double> busy_seconds;
  std::vector<IdleHistogram> idle;
};

// Sequential-task-flow runtime. Tasks are submitted one by one from a single
// thread; dependencies follow from declared access modes. wait_all() runs the
// pending graph: placement and timing are simulated in virtual time while
// kernels execute on one real thread per modeled device.
class Runtime {
 public:
  explicit Runtime(RuntimeOptions options = {});
  ~Runtime();

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  TileHandle register_tile(std::size_t nbytes, const std::function<void(std::span<std::byte>)>& init = {});
  void set_reduce_op(TileHandle handle, ReduceOp op);
  bool registered(TileHandle handle) const noexcept;
  std::uint64_t version(TileHandle handle) const;

  TaskId submit(std::string kernel, std::vector<Access> accesses, double cost_hint, KernelFn fn);

  // Schedules the merge of all pending Reduce contributions on the handle.
  // No-op when nothing is pending.
  void reduction_commit(TileHandle handle);

  // Runs every submitted task. Rethrows the first kernel, scheduling or
  // memory error, after which the runtime refuses further work.
  void wait_all();

  // Host access; only legal when no tasks are pending.
  void read_tile(TileHandle handle, std::span<std::byte> out);
  std::vector<std::byte> read_tile(TileHandle handle);
  void write_tile(TileHandle handle, std::span<const std::byte> data);

  const TaskGraph& graph() const noexcept { return graph_; }
  TaskState state(TaskId id) const;

  const Topology& topology() const noexcept { return options_.topology; }
  const RuntimeOptions& options() const noexcept { return options_; }
  const ResidencyMap& residency() const noexcept { return residency_; }
  const Scheduler& scheduler() const noexcept { return scheduler_; }
  SchedulePolicy& policy() noexcept { return scheduler_.policy(); }

  const Trace& trace() const noexcept { return trace_; }
  void clear_trace() { trace_.clear(); }
  void set_record_trace(bool on);

  const FlushStats& last_flush() const noexcept { return last_flush_; }
  const RunStats& stats() const noexcept { return stats_; }
  double now() const noexcept { return now_; }
  std::size_t registered_bytes() const noexcept { return store_.total_bytes(); }
  bool failed() const noexcept { return failed_; }

 private:
  struct TileMeta;
  struct Exec;
  class Workers;
  class Lookup;

  void check_usable() const;
  TileMeta& meta(TileHandle handle);
  const TileMeta& meta(TileHandle handle) const;
  TaskId append(std::string kernel, std::vector<Access> accesses, double cost_hint, KernelFn fn,
                std::vector<TaskId> preds, bool commit);
  void submit_commit(TileHandle handle);
  Exec& exec(TaskId id) { return *exec_[id - graph_.first_]; }
  TaskView view(TaskId id) const;
  void run_pending();
  void finish_batch();

  RuntimeOptions options_;
  MainStore store_;
  ResidencyMap residency_;
  Scheduler scheduler_;
  TaskGraph graph_;
  std::vector<std::unique_ptr<TileMeta>> tiles_;
  std::vector<std::unique_ptr<Exec>> exec_;
  std::unique_ptr<Workers> workers_;
  Trace trace_;
  FlushStats last_flush_;
  RunStats stats_;
  double now_ = 0.0;
  TaskId next_id_ = 1;
  bool failed_ = false;
};

}  // namespace tiletrain
