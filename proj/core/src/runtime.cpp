// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <exception>
#include <future>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <thread>
#include <utility>

#include "tiletrain/error.hpp"

namespace tiletrain {

namespace {

std::uint64_t wall_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

std::size_t unique_bytes(const std::vector<Access>& accesses) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < accesses.size(); ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j) seen = seen || accesses[j].handle.id == accesses[i].handle.id;
    if (!seen) total += accesses[i].handle.nbytes;
  }
  return total;
}

}  // namespace

ReduceOp ReduceOp::sum_f32() {
  ReduceOp op;
  op.init = [](std::span<std::byte> buf) { std::fill(buf.begin(), buf.end(), std::byte{0}); };
  op.combine = [](std::span<std::byte> acc, std::span<const std::byte> part) {
    auto* a = reinterpret_cast<float*>(acc.data());
    const auto* p = reinterpret_cast<const float*>(part.data());
    const std::size_t n = std::min(acc.size(), part.size()) / sizeof(float);
    for (std::size_t i = 0; i < n; ++i) a[i] += p[i];
  };
  return op;
}

void IdleHistogram::add(double gap) {
  if (!(gap > 0.0)) return;
  total_seconds += gap;
  std::size_t bin = 0;
  while (bin + 1 < kBins && gap >= lower_edge(bin + 1)) ++bin;
  ++counts[bin];
}

void IdleHistogram::merge(const IdleHistogram& other) {
  for (std::size_t i = 0; i < kBins; ++i) counts[i] += other.counts[i];
  total_seconds += other.total_seconds;
}

double IdleHistogram::lower_edge(std::size_t i) {
  return i == 0 ? 0.0 : std::pow(10.0, static_cast<double>(i) - 7.0);
}

// ---------------------------------------------------------------------------

const TaskNode& TaskGraph::node(TaskId id) const {
  if (!contains(id)) throw RuntimeError("task " + std::to_string(id) + " is not in the pending graph");
  return nodes_[id - first_];
}

TaskNode& TaskGraph::mut(TaskId id) { return nodes_[id - first_]; }

double TaskGraph::critical_path_cost() const {
  std::vector<double> longest(nodes_.size(), 0.0);
  double best = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    double before = 0.0;
    for (TaskId p : nodes_[i].predecessors) before = std::max(before, longest[p - first_]);
    longest[i] = before + nodes_[i].cost_hint;
    best = std::max(best, longest[i]);
  }
  return best;
}

bool TaskGraph::acyclic() const {
  for (const TaskNode& n : nodes_) {
    for (TaskId p : n.predecessors) {
      if (p >= n.id || !contains(p)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

struct Runtime::TileMeta {
  std::size_t nbytes = 0;
  std::uint64_t version = 0;
  ReduceOp op;
  TaskId last_writer = kNoTask;
  std::vector<TaskId> readers;
  // (task, access index) of uncommitted Reduce accesses, submission order.
  std::vector<std::pair<TaskId, std::uint32_t>> reducers;
};

struct Runtime::Exec {
  KernelFn fn;
  std::uint32_t unmet = 0;
  std::size_t footprint = 0;
  std::size_t streamed = 0;
  double ready = 0.0;
  double start = 0.0;
  double end = 0.0;
  DeviceId device = -1;
  std::size_t bytes = 0;
  std::uint64_t wall_start_ns = 0;
  std::uint64_t wall_end_ns = 0;
  std::vector<std::vector<std::byte>> scratch;
  std::vector<std::pair<TaskId, std::uint32_t>> merges;
  std::future<void> done;
};

// One thread per modeled device, each draining its own FIFO.
class Runtime::Workers {
 public:
  explicit Workers(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      lanes_.push_back(std::make_unique<Lane>());
      Lane* lane = lanes_.back().get();
      lane->thread = std::thread([lane] { run(*lane); });
    }
  }

  ~Workers() {
    for (auto& lane : lanes_) {
      {
        std::lock_guard lock(lane->mutex);
        lane->stop = true;
      }
      lane->cv.notify_one();
    }
    for (auto& lane : lanes_) lane->thread.join();
  }

  std::future<void> post(DeviceId device, std::function<void()> job) {
    Lane& lane = *lanes_.at(static_cast<std::size_t>(device));
    std::packaged_task<void()> task(std::move(job));
    auto fut = task.get_future();
    {
      std::lock_guard lock(lane.mutex);
      lane.jobs.push_back(std::move(task));
    }
    lane.cv.notify_one();
    return fut;
  }

 private:
  struct Lane {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::packaged_task<void()>> jobs;
    bool stop = false;
    std::thread thread;
  };

  static void run(Lane& lane) {
    for (;;) {
      std::packaged_task<void()> job;
      {
        std::unique_lock lock(lane.mutex);
        lane.cv.wait(lock, [&] { return lane.stop || !lane.jobs.empty(); });
        if (lane.jobs.empty()) return;
        job = std::move(lane.jobs.front());
        lane.jobs.pop_front();
      }
      job();
    }
  }

  std::vector<std::unique_ptr<Lane>> lanes_;
};

class Runtime::Lookup final : public TaskLookup {
 public:
  explicit Lookup(const Runtime& rt) : rt_(rt) {}
  TaskView view(TaskId id) const override { return rt_.view(id); }

 private:
  const Runtime& rt_;
};

// ---------------------------------------------------------------------------

Runtime::Runtime(RuntimeOptions options)
    : options_((options.topology.validate(), std::move(options))),
      residency_(options_.topology, store_, options_.offload),
      scheduler_(make_policy(options_.policy), options_.topology, options_.prefetch),
      workers_(std::make_unique<Workers>(options_.topology.size())) {
  stats_.busy_seconds.assign(options_.topology.size(), 0.0);
  stats_.idle.assign(options_.topology.size(), IdleHistogram{});
  residency_.set_record_events(options_.record_trace);
}

Runtime::~Runtime() = default;

void Runtime::set_record_trace(bool on) {
  options_.record_trace = on;
  residency_.set_record_events(on);
}

void Runtime::check_usable() const {
  if (failed_) throw RuntimeError("runtime is unusable after a failed run");
}

Runtime::TileMeta& Runtime::meta(TileHandle handle) {
  if (!registered(handle)) throw RuntimeError("unregistered tile handle " + std::to_string(handle.id));
  return *tiles_[handle.id - 1];
}

const Runtime::TileMeta& Runtime::meta(TileHandle handle) const {
  if (!registered(handle)) throw RuntimeError("unregistered tile handle " + std::to_string(handle.id));
  return *tiles_[handle.id - 1];
}

bool Runtime::registered(TileHandle handle) const noexcept {
  return handle.id >= 1 && handle.id <= tiles_.size() && tiles_[handle.id - 1]->nbytes == handle.nbytes;
}

std::uint64_t Runtime::version(TileHandle handle) const { return meta(handle).version; }

TileHandle Runtime::register_tile(std::size_t nbytes, const std::function<void(std::span<std::byte>)>& init) {
  check_usable();
  if (nbytes == 0) throw RuntimeError("cannot register a zero-sized tile");
  const TileId id = store_.add(nbytes);
  if (init) init(store_.data(id));
  auto m = std::make_unique<TileMeta>();
  m->nbytes = nbytes;
  m->op = ReduceOp::sum_f32();
  tiles_.push_back(std::move(m));
  return TileHandle{id, nbytes};
}

void Runtime::set_reduce_op(TileHandle handle, ReduceOp op) {
  TileMeta& m = meta(handle);
  if (!m.reducers.empty()) throw RuntimeError("cannot change the reduce op while reductions are pending");
  if (!op.init || !op.combine) throw RuntimeError("reduce op needs both init and combine");
  m.op = std::move(op);
}

TaskId Runtime::append(std::string kernel, std::vector<Access> accesses, double cost_hint, KernelFn fn,
                       std::vector<TaskId> preds, bool commit) {
  const TaskId id = next_id_++;
  for (TaskId p : preds) graph_.mut(p).successors.push_back(id);

  auto ex = std::make_unique<Exec>();
  ex->fn = std::move(fn);
  ex->unmet = static_cast<std::uint32_t>(preds.size());
  ex->footprint = unique_bytes(accesses);
  ex->scratch.resize(accesses.size());

  TaskNode node;
  node.id = id;
  node.kernel = std::move(kernel);
  node.accesses = std::move(accesses);
  node.cost_hint = cost_hint;
  node.predecessors = std::move(preds);
  node.commit = commit;
  graph_.nodes_.push_back(std::move(node));
  exec_.push_back(std::move(ex));
  return id;
}

TaskId Runtime::submit(std::string kernel, std::vector<Access> accesses, double cost_hint, KernelFn fn) {
  check_usable();
  if (accesses.empty()) throw RuntimeError("task '" + kernel + "' declares no accesses");
  if (!(cost_hint >= 0.0)) throw RuntimeError("task '" + kernel + "' has a negative cost hint");
  if (!fn) throw RuntimeError("task '" + kernel + "' has no kernel function");
  for (std::size_t i = 0; i < accesses.size(); ++i) {
    meta(accesses[i].handle);
    for (std::size_t j = 0; j < i; ++j) {
      if (accesses[j].handle.id != accesses[i].handle.id) continue;
      if (accesses[i].mode != AccessMode::Read || accesses[j].mode != AccessMode::Read) {
        throw RuntimeError("task '" + kernel + "' accesses tile " + std::to_string(accesses[i].handle.id) +
                           " twice with conflicting modes");
      }
    }
  }

  for (const Access& a : accesses) {
    if (a.mode != AccessMode::Reduce && !meta(a.handle).reducers.empty()) submit_commit(a.handle);
  }

  std::vector<TaskId> preds;
  for (const Access& a : accesses) {
    const TileMeta& m = meta(a.handle);
    if (m.last_writer != kNoTask) preds.push_back(m.last_writer);
    if (a.mode != AccessMode::Read) preds.insert(preds.end(), m.readers.begin(), m.readers.end());
  }
  std::sort(preds.begin(), preds.end());
  preds.erase(std::unique(preds.begin(), preds.end()), preds.end());

  const auto snapshot = accesses;
  const TaskId id = append(std::move(kernel), std::move(accesses), cost_hint, std::move(fn), std::move(preds), false);

  for (std::uint32_t i = 0; i < snapshot.size(); ++i) {
    TileMeta& m = meta(snapshot[i].handle);
    switch (snapshot[i].mode) {
      case AccessMode::Read:
        if (m.readers.empty() || m.readers.back() != id) m.readers.push_back(id);
        break;
      case AccessMode::Write:
      case AccessMode::ReadWrite:
        m.last_writer = id;
        m.readers.clear();
        break;
      case AccessMode::Reduce:
        m.reducers.emplace_back(id, i);
        break;
    }
  }
  return id;
}

void Runtime::submit_commit(TileHandle handle) {
  TileMeta& m = meta(handle);
  if (m.reducers.empty()) return;

  std::vector<TaskId> preds;
  for (const auto& r : m.reducers) preds.push_back(r.first);
  if (m.last_writer != kNoTask) preds.push_back(m.last_writer);
  preds.insert(preds.end(), m.readers.begin(), m.readers.end());
  std::sort(preds.begin(), preds.end());
  preds.erase(std::unique(preds.begin(), preds.end()), preds.end());

  auto merges = m.reducers;
  const double cost = static_cast<double>(merges.size()) * static_cast<double>(m.nbytes / sizeof(float));
  KernelFn fn = [this, merges, combine = m.op.combine](const TaskContext& ctx) {
    auto acc = ctx.bytes(0);
    for (const auto& [task, index] : merges) combine(acc, exec(task).scratch[index]);
  };
  const TaskId id = append("reduce_commit", {Access{handle, AccessMode::ReadWrite}}, cost, std::move(fn),
                           std::move(preds), true);
  exec(id).merges = merges;
  exec(id).streamed = merges.size() * m.nbytes;

  m.last_writer = id;
  m.readers.clear();
  m.reducers.clear();
}

void Runtime::reduction_commit(TileHandle handle) {
  check_usable();
  meta(handle);
  submit_commit(handle);
}

TaskState Runtime::state(TaskId id) const {
  if (graph_.contains(id)) return graph_.node(id).state;
  if (id >= 1 && id < next_id_) return TaskState::Done;
  throw RuntimeError("unknown task id " + std::to_string(id));
}

TaskView Runtime::view(TaskId id) const {
  const TaskNode& n = graph_.node(id);
  const Exec& ex = *exec_[id - graph_.first_];
  TaskView v;
  v.id = id;
  v.accesses = n.accesses;
  v.cost_hint = n.cost_hint;
  v.ready_time = ex.ready;
  v.footprint = ex.footprint;
  v.streamed_bytes = ex.streamed;
  return v;
}

void Runtime::wait_all() {
  check_usable();
  for (std::size_t i = 0; i < tiles_.size(); ++i) {
    if (!tiles_[i]->reducers.empty()) submit_commit(TileHandle{i + 1, tiles_[i]->nbytes});
  }
  if (graph_.empty()) return;
  run_pending();
  finish_batch();
}

void Runtime::run_pending() {
  const std::size_t ndev = topology().size();
  scheduler_.clear_decisions();
  scheduler_.policy().observe_graph(graph_);
  scheduler_.begin_batch(now_);

  FlushStats fs;
  fs.start = now_;
  fs.tasks = graph_.size();
  fs.critical_path_flops = graph_.critical_path_cost();
  fs.busy_seconds.assign(ndev, 0.0);
  fs.idle.assign(ndev, IdleHistogram{});
  for (const TaskNode& n : graph_.nodes_) fs.total_flops += n.cost_hint;

  std::vector<bool> idle(ndev, true);
  std::vector<double> free_at(ndev, now_);

  struct Event {
    double time;
    std::uint64_t seq;
    TaskId task;
    bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t seq = 0;
  const Lookup lookup(*this);

  auto apply_prefetch = [&](const std::vector<PrefetchDirective>& directives) {
    for (const PrefetchDirective& d : directives) {
      PrefetchTraceRecord rec;
      rec.issued = now_;
      rec.device = d.device;
      rec.tile = d.handle.id;
      rec.for_task = d.for_task;
      rec.was_valid = residency_.is_valid(d.device, d.handle.id);
      TransferLog log;
      if (!rec.was_valid) rec.performed = residency_.prefetch(d.device, d.handle.id, now_, log);
      rec.bytes = log.bytes;
      rec.ready_at = log.ready_at;
      fs.bytes_transferred += log.bytes;
      fs.prefetch_bytes += log.bytes;
      if (options_.record_trace) trace_.prefetches.push_back(rec);
    }
  };

  auto make_ready = [&](TaskId id) {
    graph_.mut(id).state = TaskState::Ready;
    exec(id).ready = now_;
  };

  auto start = [&](const ScheduleDecision& dec) {
    TaskNode& node = graph_.mut(dec.task);
    Exec& ex = exec(dec.task);
    const DeviceId d = dec.device;
    const DeviceModel& dm = topology()[d];

    TransferLog log;
    log.ready_at = now_;
    for (std::size_t i = 0; i < node.accesses.size(); ++i) {
      const Access& a = node.accesses[i];
      if (a.mode == AccessMode::Reduce) {
        residency_.reserve_scratch(d, a.handle.nbytes, now_, log);
        ex.scratch[i].assign(a.handle.nbytes, std::byte{0});
        meta(a.handle).op.init(ex.scratch[i]);
      } else {
        residency_.acquire(d, a.handle.id, a.mode, now_, log);
      }
    }

    TaskContext ctx;
    ctx.worker_ = d;
    double writeback = 0.0;
    std::size_t extra_bytes = 0;
    for (std::size_t i = 0; i < node.accesses.size(); ++i) {
      const Access& a = node.accesses[i];
      if (a.mode == AccessMode::Reduce) {
        ctx.spans_.emplace_back(ex.scratch[i]);
        if (!dm.unbounded()) {
          writeback += static_cast<double>(a.handle.nbytes) / dm.bandwidth_to_main;
          extra_bytes += a.handle.nbytes;
        }
      } else {
        ctx.spans_.push_back(residency_.data(d, a.handle.id));
      }
    }
    double streamed = 0.0;
    if (!dm.unbounded() && ex.streamed > 0) {
      streamed = static_cast<double>(ex.streamed) / dm.bandwidth_to_main;
      extra_bytes += ex.streamed;
    }

    const double exec_start = std::max(now_ + log.seconds + streamed, log.ready_at);
    ex.device = d;
    ex.start = now_;
    ex.end = exec_start + topology().compute_seconds(d, node.cost_hint) + writeback;
    ex.bytes = log.bytes + extra_bytes;
    node.state = TaskState::Running;
    idle[static_cast<std::size_t>(d)] = false;
    fs.idle[static_cast<std::size_t>(d)].add(now_ - free_at[static_cast<std::size_t>(d)]);
    free_at[static_cast<std::size_t>(d)] = ex.end;
    scheduler_.task_started(dec, ex.end);

    ex.done = workers_->post(d, [&ex, ctx = std::move(ctx)] {
      ex.wall_start_ns = wall_ns();
      ex.fn(ctx);
      ex.wall_end_ns = wall_ns();
    });
    events.push(Event{ex.end, seq++, dec.task});
  };

  auto complete = [&](TaskId id) {
    TaskNode& node = graph_.mut(id);
    Exec& ex = exec(id);
    ex.done.get();
    node.state = TaskState::Done;
    const DeviceId d = ex.device;

    for (std::size_t i = 0; i < node.accesses.size(); ++i) {
      const Access& a = node.accesses[i];
      if (a.mode == AccessMode::Reduce) {
        residency_.release_scratch(d, a.handle.nbytes, now_);
      } else {
        residency_.unpin(d, a.handle.id);
        if (writes(a.mode)) ++meta(a.handle).version;
      }
    }
    for (const auto& [task, index] : ex.merges) {
      auto& buf = exec(task).scratch[index];
      buf.clear();
      buf.shrink_to_fit();
    }
    ex.fn = nullptr;

    idle[static_cast<std::size_t>(d)] = true;
    fs.busy_seconds[static_cast<std::size_t>(d)] += ex.end - ex.start;
    fs.bytes_transferred += ex.bytes;

    if (options_.record_trace) {
      TaskTraceRecord rec;
      rec.id = id;
      rec.kernel = node.kernel;
      rec.worker = d;
      rec.ready = ex.ready;
      rec.start = ex.start;
      rec.end = ex.end;
      rec.wall_start_ns = ex.wall_start_ns;
      rec.wall_end_ns = ex.wall_end_ns;
      rec.bytes_transferred = ex.bytes;
      rec.cost_hint = node.cost_hint;
      rec.predecessors = node.predecessors;
      trace_.tasks.push_back(std::move(rec));
    }

    std::vector<TaskView> readied;
    for (TaskId s : node.successors) {
      if (--exec(s).unmet == 0) {
        make_ready(s);
        readied.push_back(view(s));
      }
    }
    apply_prefetch(scheduler_.on_task_done(id, d, readied, residency_, now_));
  };

  std::exception_ptr error;
  try {
    for (TaskId id = graph_.first_id(); id < graph_.end_id(); ++id) {
      if (exec(id).unmet == 0) {
        make_ready(id);
        apply_prefetch(scheduler_.task_ready(view(id), residency_, now_));
      }
    }
    for (;;) {
      std::vector<DeviceState> states(ndev);
      for (std::size_t d = 0; d < ndev; ++d) {
        states[d] = DeviceState{static_cast<DeviceId>(d), std::max(now_, free_at[d]), static_cast<bool>(idle[d])};
      }
      for (const ScheduleDecision& dec : scheduler_.dispatch(states, lookup, residency_, now_)) start(dec);
      if (events.empty()) break;
      const Event ev = events.top();
      events.pop();
      now_ = std::max(now_, ev.time);
      complete(ev.task);
    }
    for (const TaskNode& n : graph_.nodes_) {
      if (n.state != TaskState::Done) throw std::logic_error("task graph stalled with unfinished tasks");
    }
  } catch (...) {
    error = std::current_exception();
  }

  if (error) {
    while (!events.empty()) {
      Exec& ex = exec(events.top().task);
      events.pop();
      try {
        ex.done.get();
      } catch (...) {
      }
    }
    failed_ = true;
    std::rethrow_exception(error);
  }

  fs.end = now_;
  for (std::size_t d = 0; d < ndev; ++d) fs.idle[d].add(fs.end - std::max(fs.start, free_at[d]));
  last_flush_ = std::move(fs);
}

void Runtime::finish_batch() {
  stats_.flushes += 1;
  stats_.tasks += last_flush_.tasks;
  stats_.bytes_transferred += last_flush_.bytes_transferred;
  for (std::size_t d = 0; d < stats_.busy_seconds.size(); ++d) {
    stats_.busy_seconds[d] += last_flush_.busy_seconds[d];
    stats_.idle[d].merge(last_flush_.idle[d]);
  }

  if (options_.record_trace) {
    const auto& ev = residency_.memory_events();
    trace_.memory.insert(trace_.memory.end(), ev.begin(), ev.end());
  }
  residency_.clear_events();

  graph_.nodes_.clear();
  graph_.first_ = next_id_;
  exec_.clear();
  for (auto& m : tiles_) {
    m->last_writer = kNoTask;
    m->readers.clear();
  }
}

void Runtime::read_tile(TileHandle handle, std::span<std::byte> out) {
  check_usable();
  meta(handle);
  if (!graph_.empty()) throw RuntimeError("host read with pending tasks; call wait_all() first");
  if (out.size() != handle.nbytes) throw RuntimeError("host read buffer size mismatch");
  TransferLog log;
  residency_.sync_to_main(handle.id, log);
  stats_.host_sync_bytes += log.bytes;
  auto src = store_.data(handle.id);
  std::memcpy(out.data(), src.data(), src.size());
}

std::vector<std::byte> Runtime::read_tile(TileHandle handle) {
  std::vector<std::byte> out(handle.nbytes);
  read_tile(handle, out);
  return out;
}

void Runtime::write_tile(TileHandle handle, std::span<const std::byte> data) {
  check_usable();
  TileMeta& m = meta(handle);
  if (!graph_.empty()) throw RuntimeError("host write with pending tasks; call wait_all() first");
  if (data.size() != handle.nbytes) throw RuntimeError("host write size mismatch");
  residency_.drop_device_copies(handle.id, now_);
  auto dst = store_.data(handle.id);
  std::memcpy(dst.data(), data.data(), data.size());
  ++m.version;
}

}  // namespace tiletrain
