// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tiletrain/devices.hpp"
#include "tiletrain/types.hpp"

namespace tiletrain {

class TaskGraph;

enum class PolicyKind : std::uint8_t { EagerFifo, GreedyEct };

std::string_view to_string(PolicyKind kind) noexcept;
// Accepts "eager" and "greedy-ect" (the CLI spellings).
PolicyKind parse_policy(std::string_view name);

// What a policy may know about a device when placing a task.
struct DeviceState {
  DeviceId id = 0;
  double available_at = 0.0;
  bool idle = true;
};

// Scheduler-facing description of a Ready task.
struct TaskView {
  TaskId id = kNoTask;
  std::span<const Access> accesses;
  double cost_hint = 0.0;
  double ready_time = 0.0;
  // Bytes that must be resident at once on a bounded device.
  std::size_t footprint = 0;
  // Bytes streamed from main without residency (reduction contributions).
  std::size_t streamed_bytes = 0;
};

struct ScheduleDecision {
  TaskId task = kNoTask;
  DeviceId device = 0;
  double predicted_start = 0.0;
  double predicted_end = 0.0;
  std::size_t predicted_transfer_bytes = 0;
};

struct PrefetchDirective {
  DeviceId device = 0;
  TileHandle handle;
  TaskId for_task = kNoTask;
};

bool can_host(const DeviceModel& device, const TaskView& task) noexcept;

// Modeled transfer seconds and bytes for running `task` on `device` now.
struct TransferEstimate {
  double seconds = 0.0;
  std::size_t bytes = 0;
};
TransferEstimate estimate_transfer(const TaskView& task, const DeviceModel& device, const ResidencyMap& residency);

// A placement rule. Implementations are pure functions of their arguments.
class SchedulePolicy {
 public:
  virtual ~SchedulePolicy() = default;

  virtual PolicyKind kind() const noexcept = 0;

  // Push policies commit a task to a device as soon as it is Ready; pull
  // policies leave it in a shared queue until some device is idle.
  virtual bool assigns_at_ready() const noexcept = 0;

  // Returns nullopt when no suitable device is currently available (pull
  // policies only). `cursor` is the round-robin starting device.
  virtual std::optional<ScheduleDecision> pick_device(const TaskView& task, std::span<const DeviceState> devices,
                                                      const Topology& topology, const ResidencyMap& residency,
                                                      double now, std::size_t cursor) const = 0;

  virtual std::vector<PrefetchDirective> prefetch_directives(const TaskView&, DeviceId, const Topology&,
                                                             const ResidencyMap&) const {
    return {};
  }

  // Called with the complete pending graph before a batch runs. This is the
  // extension point for whole-graph policies; the greedy policies ignore it.
  virtual void observe_graph(const TaskGraph&) {}
};

// First idle device that can host the task, scanning from the cursor.
class EagerFifoPolicy final : public SchedulePolicy {
 public:
  PolicyKind kind() const noexcept override { return PolicyKind::EagerFifo; }
  bool assigns_at_ready() const noexcept override { return false; }
  std::optional<ScheduleDecision> pick_device(const TaskView& task, std::span<const DeviceState> devices,
                                              const Topology& topology, const ResidencyMap& residency, double now,
                                              std::size_t cursor) const override;
};

// Minimum estimated completion time:
//   max(now, available_at) + transfer seconds + cost_hint / rate,
// ties to the lower device id. Requests prefetch of missing inputs on the
// chosen device.
class GreedyEctPolicy final : public SchedulePolicy {
 public:
  PolicyKind kind() const noexcept override { return PolicyKind::GreedyEct; }
  bool assigns_at_ready() const noexcept override { return true; }
  std::optional<ScheduleDecision> pick_device(const TaskView& task, std::span<const DeviceState> devices,
                                              const Topology& topology, const ResidencyMap& residency, double now,
                                              std::size_t cursor) const override;
  std::vector<PrefetchDirective> prefetch_directives(const TaskView& task, DeviceId device, const Topology& topology,
                                                     const ResidencyMap& residency) const override;
};

std::unique_ptr<SchedulePolicy> make_policy(PolicyKind kind);

class TaskLookup {
 public:
  virtual ~TaskLookup() = default;
  virtual TaskView view(TaskId id) const = 0;
};

// Holds Ready tasks and turns policy decisions into task starts. Owned and
// driven by the runtime's coordination loop.
class Scheduler {
 public:
  Scheduler(std::unique_ptr<SchedulePolicy> policy, const Topology& topology, bool prefetch);

  SchedulePolicy& policy() noexcept { return *policy_; }
  const SchedulePolicy& policy() const noexcept { return *policy_; }

  void begin_batch(double now);

  std::vector<PrefetchDirective> task_ready(const TaskView& task, const ResidencyMap& residency, double now);

  // Enqueues the successors readied by `done` finishing on `device`.
  std::vector<PrefetchDirective> on_task_done(TaskId done, DeviceId device, std::span<const TaskView> newly_ready,
                                              const ResidencyMap& residency, double now);

  // Decisions for tasks that should start at `now` on currently idle devices.
  std::vector<ScheduleDecision> dispatch(std::span<const DeviceState> devices, const TaskLookup& tasks,
                                         const ResidencyMap& residency, double now);

  // Feedback from the runtime once the actual end time of a start is known.
  void task_started(const ScheduleDecision& decision, double actual_end);

  bool empty() const noexcept;
  const std::vector<ScheduleDecision>& decisions() const noexcept { return decisions_; }
  void clear_decisions() { decisions_.clear(); }

 private:
  std::unique_ptr<SchedulePolicy> policy_;
  const Topology& topology_;
  bool prefetch_;
  std::deque<TaskId> fifo_;
  std::vector<std::deque<ScheduleDecision>> queues_;
  // Per device: actual end of the running task and predicted seconds of the
  // tasks still queued behind it.
  std::vector<double> running_end_;
  std::vector<double> queued_seconds_;
  std::size_t cursor_ = 0;
  std::vector<ScheduleDecision> decisions_;
};

}  // namespace tiletrain
