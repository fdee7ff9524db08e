// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "tiletrain/error.hpp"

namespace tiletrain {

std::string_view to_string(PolicyKind kind) noexcept {
  return kind == PolicyKind::EagerFifo ? "eager" : "greedy-ect";
}

PolicyKind parse_policy(std::string_view name) {
  if (name == "eager" || name == "eager-fifo") return PolicyKind::EagerFifo;
  if (name == "greedy-ect" || name == "greedy") return PolicyKind::GreedyEct;
  throw ConfigError("unknown scheduling policy '" + std::string(name) + "' (expected eager or greedy-ect)");
}

bool can_host(const DeviceModel& device, const TaskView& task) noexcept {
  return device.unbounded() || task.footprint <= *device.mem_capacity;
}

TransferEstimate estimate_transfer(const TaskView& task, const DeviceModel& device, const ResidencyMap& residency) {
  TransferEstimate est;
  for (std::size_t i = 0; i < task.accesses.size(); ++i) {
    const Access& a = task.accesses[i];
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j) seen = seen || task.accesses[j].handle.id == a.handle.id;
    if (seen) continue;
    est.seconds += residency.fetch_seconds(device.id, a.handle.id, a.mode);
    est.bytes += residency.missing_bytes(device.id, a.handle.id, a.mode);
  }
  if (!device.unbounded() && task.streamed_bytes > 0) {
    est.seconds += static_cast<double>(task.streamed_bytes) / device.bandwidth_to_main;
    est.bytes += task.streamed_bytes;
  }
  return est;
}

namespace {

[[noreturn]] void throw_unhostable(const TaskView& task) {
  throw SchedulingError("task " + std::to_string(task.id) + " needs " + std::to_string(task.footprint) +
                        " resident bytes, more than any device can hold");
}

}  // namespace

std::optional<ScheduleDecision> EagerFifoPolicy::pick_device(const TaskView& task,
                                                             std::span<const DeviceState> devices,
                                                             const Topology& topology,
                                                             const ResidencyMap& residency, double now,
                                                             std::size_t cursor) const {
  const std::size_t n = devices.size();
  bool hostable_anywhere = false;
  for (std::size_t k = 0; k < n; ++k) {
    const DeviceState& s = devices[(cursor + k) % n];
    const DeviceModel& model = topology[s.id];
    if (!can_host(model, task)) continue;
    hostable_anywhere = true;
    if (!s.idle) continue;
    const TransferEstimate xfer = estimate_transfer(task, model, residency);
    ScheduleDecision d;
    d.task = task.id;
    d.device = s.id;
    d.predicted_start = now;
    d.predicted_end = now + xfer.seconds + topology.compute_seconds(s.id, task.cost_hint);
    d.predicted_transfer_bytes = xfer.bytes;
    return d;
  }
  if (!hostable_anywhere) throw_unhostable(task);
  return std::nullopt;
}

std::optional<ScheduleDecision> GreedyEctPolicy::pick_device(const TaskView& task,
                                                             std::span<const DeviceState> devices,
                                                             const Topology& topology,
                                                             const ResidencyMap& residency, double now,
                                                             std::size_t /*cursor*/) const {
  std::optional<ScheduleDecision> best;
  for (const DeviceState& s : devices) {
    const DeviceModel& model = topology[s.id];
    if (!can_host(model, task)) continue;
    const double start = std::max({now, s.available_at, task.ready_time});
    const TransferEstimate xfer = estimate_transfer(task, model, residency);
    const double end = start + xfer.seconds + topology.compute_seconds(s.id, task.cost_hint);
    if (!best || end < best->predicted_end) {
      best = ScheduleDecision{task.id, s.id, start, end, xfer.bytes};
    }
  }
  if (!best) throw_unhostable(task);
  return best;
}

std::vector<PrefetchDirective> GreedyEctPolicy::prefetch_directives(const TaskView& task, DeviceId device,
                                                                    const Topology& topology,
                                                                    const ResidencyMap& residency) const {
  std::vector<PrefetchDirective> out;
  if (topology[device].unbounded()) return out;
  for (const Access& a : task.accesses) {
    if (!reads(a.mode)) continue;
    if (residency.is_valid(device, a.handle.id) || residency.dirty_owner(a.handle.id)) continue;
    const bool dup = std::any_of(out.begin(), out.end(),
                                 [&](const PrefetchDirective& p) { return p.handle.id == a.handle.id; });
    if (!dup) out.push_back(PrefetchDirective{device, a.handle, task.id});
  }
  return out;
}

std::unique_ptr<SchedulePolicy> make_policy(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::EagerFifo:
      return std::make_unique<EagerFifoPolicy>();
    case PolicyKind::GreedyEct:
      return std::make_unique<GreedyEctPolicy>();
  }
  throw ConfigError("unknown policy kind");
}

// ---------------------------------------------------------------------------

Scheduler::Scheduler(std::unique_ptr<SchedulePolicy> policy, const Topology& topology, bool prefetch)
    : policy_(std::move(policy)),
      topology_(topology),
      prefetch_(prefetch),
      queues_(topology.size()),
      running_end_(topology.size(), 0.0),
      queued_seconds_(topology.size(), 0.0) {}

void Scheduler::begin_batch(double now) {
  for (auto& t : running_end_) t = std::max(t, now);
}

bool Scheduler::empty() const noexcept {
  if (!fifo_.empty()) return false;
  return std::all_of(queues_.begin(), queues_.end(), [](const auto& q) { return q.empty(); });
}

std::vector<PrefetchDirective> Scheduler::task_ready(const TaskView& task, const ResidencyMap& residency,
                                                     double now) {
  if (!policy_->assigns_at_ready()) {
    fifo_.push_back(task.id);
    return {};
  }
  std::vector<DeviceState> states(topology_.size());
  for (std::size_t d = 0; d < states.size(); ++d) {
    const double free_at = std::max(now, running_end_[d]) + queued_seconds_[d];
    states[d] = DeviceState{static_cast<DeviceId>(d), free_at, queues_[d].empty()};
  }
  auto decision = policy_->pick_device(task, states, topology_, residency, now, cursor_);
  if (!decision) throw SchedulingError("push policy returned no device");
  queued_seconds_[static_cast<std::size_t>(decision->device)] += decision->predicted_end - decision->predicted_start;
  queues_[static_cast<std::size_t>(decision->device)].push_back(*decision);
  decisions_.push_back(*decision);
  if (!prefetch_) return {};
  return policy_->prefetch_directives(task, decision->device, topology_, residency);
}

std::vector<PrefetchDirective> Scheduler::on_task_done(TaskId /*done*/, DeviceId /*device*/,
                                                       std::span<const TaskView> newly_ready,
                                                       const ResidencyMap& residency, double now) {
  std::vector<PrefetchDirective> out;
  for (const TaskView& t : newly_ready) {
    auto more = task_ready(t, residency, now);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

std::vector<ScheduleDecision> Scheduler::dispatch(std::span<const DeviceState> devices, const TaskLookup& tasks,
                                                  const ResidencyMap& residency, double now) {
  std::vector<ScheduleDecision> starts;
  if (policy_->assigns_at_ready()) {
    for (const DeviceState& s : devices) {
      auto& q = queues_[static_cast<std::size_t>(s.id)];
      if (!s.idle || q.empty()) continue;
      starts.push_back(q.front());
      q.pop_front();
    }
    return starts;
  }

  std::vector<DeviceState> local(devices.begin(), devices.end());
  auto any_idle = [&] { return std::any_of(local.begin(), local.end(), [](const DeviceState& s) { return s.idle; }); };
  for (auto it = fifo_.begin(); it != fifo_.end() && any_idle();) {
    const TaskView view = tasks.view(*it);
    auto decision = policy_->pick_device(view, local, topology_, residency, now, cursor_);
    if (!decision) {
      ++it;
      continue;
    }
    local[static_cast<std::size_t>(decision->device)].idle = false;
    cursor_ = (static_cast<std::size_t>(decision->device) + 1) % local.size();
    decisions_.push_back(*decision);
    starts.push_back(*decision);
    it = fifo_.erase(it);
  }
  return starts;
}

void Scheduler::task_started(const ScheduleDecision& decision, double actual_end) {
  const auto d = static_cast<std::size_t>(decision.device);
  running_end_[d] = actual_end;
  if (policy_->assigns_at_ready()) {
    queued_seconds_[d] = std::max(0.0, queued_seconds_[d] - (decision.predicted_end - decision.predicted_start));
    if (queues_[d].empty()) queued_seconds_[d] = 0.0;
  }
}

}  // namespace tiletrain
