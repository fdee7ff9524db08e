// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/devices.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "tiletrain/error.hpp"

namespace tiletrain {

std::string_view to_string(AccessMode mode) noexcept {
  switch (mode) {
    case AccessMode::Read:
      return "R";
    case AccessMode::Write:
      return "W";
    case AccessMode::ReadWrite:
      return "RW";
    case AccessMode::Reduce:
      return "REDUX";
  }
  return "?";
}

std::string_view to_string(DeviceKind kind) noexcept {
  return kind == DeviceKind::CpuCore ? "cpu" : "gpu";
}

void Topology::validate() const {
  if (devices.empty()) throw ConfigError("topology has no devices");
  if (!(flops_per_speed_unit > 0.0)) throw ConfigError("flops_per_speed_unit must be > 0");
  for (std::size_t i = 0; i < devices.size(); ++i) {
    const auto& d = devices[i];
    std::ostringstream where;
    where << "device " << i << ": ";
    if (d.id != static_cast<DeviceId>(i)) throw ConfigError(where.str() + "id does not match position");
    if (!(d.speed > 0.0)) throw ConfigError(where.str() + "speed must be > 0");
    if (!(d.bandwidth_to_main > 0.0)) throw ConfigError(where.str() + "bandwidth must be > 0");
    if (d.mem_capacity && *d.mem_capacity == 0) throw ConfigError(where.str() + "capacity must be > 0");
  }
}

double Topology::compute_seconds(DeviceId id, double flops) const {
  return flops / ((*this)[id].speed * flops_per_speed_unit);
}

double Topology::max_flop_rate() const {
  double best = 0.0;
  for (const auto& d : devices) best = std::max(best, d.speed);
  return best * flops_per_speed_unit;
}

std::size_t Topology::bounded_capacity_total() const {
  std::size_t total = 0;
  for (const auto& d : devices)
    if (d.mem_capacity) total += *d.mem_capacity;
  return total;
}

bool Topology::has_unbounded() const {
  return std::any_of(devices.begin(), devices.end(), [](const DeviceModel& d) { return d.unbounded(); });
}

Topology make_topology(const TopologyParams& p) {
  if (p.gpu_count < 0 || p.cpu_count < 0) throw ConfigError("device counts must be >= 0");
  Topology t;
  t.flops_per_speed_unit = p.flops_per_speed_unit;
  for (int i = 0; i < p.gpu_count; ++i) {
    t.devices.push_back(DeviceModel{static_cast<DeviceId>(t.devices.size()), DeviceKind::GpuLike, p.gpu_speed,
                                    p.gpu_capacity, p.bandwidth});
  }
  for (int i = 0; i < p.cpu_count; ++i) {
    t.devices.push_back(DeviceModel{static_cast<DeviceId>(t.devices.size()), DeviceKind::CpuCore, p.cpu_speed,
                                    std::nullopt, p.bandwidth});
  }
  t.validate();
  return t;
}

Topology default_topology() { return make_topology(TopologyParams{}); }

// ---------------------------------------------------------------------------

TileId MainStore::add(std::size_t nbytes) {
  entries_.push_back(Entry{std::vector<std::byte>(nbytes), false});
  total_bytes_ += nbytes;
  return entries_.size();
}

MainStore::Entry& MainStore::entry(TileId id) {
  if (!contains(id)) throw RuntimeError("unregistered tile id " + std::to_string(id));
  return entries_[id - 1];
}

const MainStore::Entry& MainStore::entry(TileId id) const {
  if (!contains(id)) throw RuntimeError("unregistered tile id " + std::to_string(id));
  return entries_[id - 1];
}

// ---------------------------------------------------------------------------

ResidencyMap::ResidencyMap(const Topology& topology, MainStore& store, bool allow_eviction)
    : topology_(topology),
      store_(store),
      allow_eviction_(allow_eviction),
      copies_(topology.size()),
      lru_(topology.size()),
      used_(topology.size(), 0),
      peak_(topology.size(), 0),
      link_free_(topology.size(), 0.0) {}

std::size_t ResidencyMap::capacity(DeviceId device) const {
  const auto& cap = topology_[device].mem_capacity;
  return cap ? *cap : static_cast<std::size_t>(-1);
}

ResidencyMap::Copy* ResidencyMap::find(DeviceId device, TileId tile) {
  auto& table = copies_.at(static_cast<std::size_t>(device));
  auto it = table.find(tile);
  return it == table.end() ? nullptr : &it->second;
}

const ResidencyMap::Copy* ResidencyMap::find(DeviceId device, TileId tile) const {
  const auto& table = copies_.at(static_cast<std::size_t>(device));
  auto it = table.find(tile);
  return it == table.end() ? nullptr : &it->second;
}

std::optional<CopyState> ResidencyMap::state(DeviceId device, TileId tile) const {
  if (!bounded(device)) {
    if (store_.stale(tile)) return std::nullopt;
    return CopyState::Valid;
  }
  const Copy* c = find(device, tile);
  if (!c) return std::nullopt;
  return c->state;
}

bool ResidencyMap::is_valid(DeviceId device, TileId tile) const { return state(device, tile).has_value(); }

std::optional<DeviceId> ResidencyMap::dirty_owner(TileId tile) const {
  auto it = dirty_.find(tile);
  if (it == dirty_.end()) return std::nullopt;
  return it->second;
}

std::size_t ResidencyMap::missing_bytes(DeviceId device, TileId tile, AccessMode mode) const {
  const std::size_t n = store_.nbytes(tile);
  if (mode == AccessMode::Reduce) return bounded(device) ? n : 0;
  if (!reads(mode)) return 0;
  auto owner = dirty_owner(tile);
  if (!bounded(device)) return owner ? n : 0;
  if (find(device, tile)) return 0;
  return (owner && *owner != device) ? 2 * n : n;
}

double ResidencyMap::fetch_seconds(DeviceId device, TileId tile, AccessMode mode) const {
  const double n = static_cast<double>(store_.nbytes(tile));
  const double bw = topology_[device].bandwidth_to_main;
  if (mode == AccessMode::Reduce) return bounded(device) ? n / bw : 0.0;
  if (!reads(mode)) return 0.0;
  auto owner = dirty_owner(tile);
  if (!bounded(device)) return owner ? n / topology_[*owner].bandwidth_to_main : 0.0;
  if (find(device, tile)) return 0.0;
  double s = n / bw;
  if (owner && *owner != device) s += n / topology_[*owner].bandwidth_to_main;
  return s;
}

void ResidencyMap::touch(DeviceId device, TileId tile, Copy& copy) {
  auto& lru = lru_[static_cast<std::size_t>(device)];
  if (copy.tick != 0) lru.erase(copy.tick);
  copy.tick = ++tick_;
  lru.emplace(copy.tick, tile);
}

void ResidencyMap::note_usage(DeviceId device, double now) {
  const auto d = static_cast<std::size_t>(device);
  if (used_[d] > capacity(device)) throw std::logic_error("device memory accounting exceeded capacity");
  peak_[d] = std::max(peak_[d], used_[d]);
  if (record_events_) events_.push_back(MemoryEvent{now, device, used_[d]});
}

void ResidencyMap::write_back(DeviceId owner, TileId tile, TransferLog& log) {
  Copy* c = find(owner, tile);
  if (!c || c->state != CopyState::Dirty) throw std::logic_error("write_back of a tile that is not dirty");
  auto main = store_.data(tile);
  std::memcpy(main.data(), c->data.data(), main.size());
  c->state = CopyState::Valid;
  dirty_.erase(tile);
  store_.set_stale(tile, false);
  log.bytes += main.size();
  log.writeback_bytes += main.size();
  log.seconds += static_cast<double>(main.size()) / topology_[owner].bandwidth_to_main;
}

void ResidencyMap::drop(DeviceId device, TileId tile, double now) {
  auto& table = copies_[static_cast<std::size_t>(device)];
  auto it = table.find(tile);
  if (it == table.end()) return;
  if (it->second.pins > 0) throw std::logic_error("dropping a pinned tile copy");
  lru_[static_cast<std::size_t>(device)].erase(it->second.tick);
  used_[static_cast<std::size_t>(device)] -= it->second.data.size();
  auto owner = dirty_.find(tile);
  if (owner != dirty_.end() && owner->second == device) dirty_.erase(owner);
  table.erase(it);
  note_usage(device, now);
}

std::vector<TileId> ResidencyMap::evict(DeviceId device, std::size_t bytes_needed, double now, TransferLog& log) {
  const std::size_t cap = capacity(device);
  const std::size_t used = bytes_used(device);
  if (used + bytes_needed <= cap) return {};
  if (!allow_eviction_) {
    std::ostringstream msg;
    msg << "device " << device << " out of memory with offloading disabled: need " << bytes_needed
        << " bytes, " << used << " of " << cap << " in use";
    throw OutOfDeviceMemory(msg.str(), device, bytes_needed, used, cap);
  }
  const std::size_t to_free = used + bytes_needed - cap;
  std::vector<TileId> victims;
  std::size_t freed = 0;
  for (const auto& [tick, tile] : lru_[static_cast<std::size_t>(device)]) {
    if (freed >= to_free) break;
    const Copy* c = find(device, tile);
    if (c->pins > 0) continue;
    victims.push_back(tile);
    freed += c->data.size();
  }
  if (freed < to_free) {
    std::ostringstream msg;
    msg << "device " << device << " out of memory: need " << bytes_needed << " bytes, " << used << " of "
        << cap << " in use and only " << freed << " bytes evictable (rest pinned)";
    throw OutOfDeviceMemory(msg.str(), device, bytes_needed, used, cap);
  }
  for (TileId tile : victims) {
    if (find(device, tile)->state == CopyState::Dirty) write_back(device, tile, log);
    drop(device, tile, now);
    log.evicted.push_back(tile);
  }
  return victims;
}

void ResidencyMap::make_room(DeviceId device, std::size_t nbytes, double now, TransferLog& log) {
  if (nbytes > capacity(device)) {
    std::ostringstream msg;
    msg << nbytes << " bytes can never fit on device " << device << " (capacity " << capacity(device) << ")";
    throw SchedulingError(msg.str());
  }
  if (bytes_used(device) + nbytes > capacity(device)) evict(device, nbytes, now, log);
}

void ResidencyMap::acquire(DeviceId device, TileId tile, AccessMode mode, double now, TransferLog& log) {
  if (mode == AccessMode::Reduce) throw std::logic_error("Reduce accesses use reserve_scratch");
  const std::size_t n = store_.nbytes(tile);
  const auto owner = dirty_owner(tile);

  if (!bounded(device)) {
    if (owner) {
      if (reads(mode)) write_back(*owner, tile, log);
      if (writes(mode)) {
        for (std::size_t e = 0; e < copies_.size(); ++e) drop(static_cast<DeviceId>(e), tile, now);
      }
    } else if (writes(mode)) {
      for (std::size_t e = 0; e < copies_.size(); ++e) drop(static_cast<DeviceId>(e), tile, now);
    }
    store_.set_stale(tile, false);
    return;
  }

  Copy* c = find(device, tile);
  if (!c) {
    make_room(device, n, now, log);
    if (reads(mode) && owner && *owner != device) write_back(*owner, tile, log);
    Copy fresh;
    fresh.data.resize(n);
    if (reads(mode)) {
      auto main = store_.data(tile);
      std::memcpy(fresh.data.data(), main.data(), n);
      log.bytes += n;
      log.seconds += static_cast<double>(n) / topology_[device].bandwidth_to_main;
    }
    fresh.ready_at = now;
    c = &copies_[static_cast<std::size_t>(device)].emplace(tile, std::move(fresh)).first->second;
    used_[static_cast<std::size_t>(device)] += n;
    note_usage(device, now);
  } else {
    log.ready_at = std::max(log.ready_at, c->ready_at);
  }
  touch(device, tile, *c);
  ++c->pins;

  if (writes(mode)) {
    for (std::size_t e = 0; e < copies_.size(); ++e) {
      if (static_cast<DeviceId>(e) != device) drop(static_cast<DeviceId>(e), tile, now);
    }
    c->state = CopyState::Dirty;
    dirty_[tile] = device;
    store_.set_stale(tile, true);
  }
}

void ResidencyMap::unpin(DeviceId device, TileId tile) {
  if (!bounded(device)) return;
  Copy* c = find(device, tile);
  if (!c || c->pins == 0) throw std::logic_error("unpin of a tile that is not pinned");
  --c->pins;
}

bool ResidencyMap::prefetch(DeviceId device, TileId tile, double now, TransferLog& log) {
  if (!bounded(device) || find(device, tile) || dirty_owner(tile) || store_.stale(tile)) return false;
  const std::size_t n = store_.nbytes(tile);
  if (n > capacity(device)) return false;
  if (bytes_used(device) + n > capacity(device)) {
    if (!allow_eviction_) return false;
    try {
      evict(device, n, now, log);
    } catch (const OutOfDeviceMemory&) {
      return false;
    }
  }
  Copy fresh;
  fresh.data.assign(store_.data(tile).begin(), store_.data(tile).end());
  auto& link = link_free_[static_cast<std::size_t>(device)];
  const double start = std::max(now, link);
  fresh.ready_at = start + static_cast<double>(n) / topology_[device].bandwidth_to_main;
  link = fresh.ready_at;
  Copy& c = copies_[static_cast<std::size_t>(device)].emplace(tile, std::move(fresh)).first->second;
  touch(device, tile, c);
  used_[static_cast<std::size_t>(device)] += n;
  note_usage(device, now);
  log.bytes += n;
  log.ready_at = std::max(log.ready_at, c.ready_at);
  return true;
}

void ResidencyMap::reserve_scratch(DeviceId device, std::size_t nbytes, double now, TransferLog& log) {
  if (!bounded(device)) return;
  make_room(device, nbytes, now, log);
  used_[static_cast<std::size_t>(device)] += nbytes;
  note_usage(device, now);
}

void ResidencyMap::release_scratch(DeviceId device, std::size_t nbytes, double now) {
  if (!bounded(device)) return;
  auto& used = used_[static_cast<std::size_t>(device)];
  if (used < nbytes) throw std::logic_error("scratch release exceeds usage");
  used -= nbytes;
  note_usage(device, now);
}

std::span<std::byte> ResidencyMap::data(DeviceId device, TileId tile) {
  if (!bounded(device)) return store_.data(tile);
  Copy* c = find(device, tile);
  if (!c) throw std::logic_error("tile not resident on device");
  return c->data;
}

void ResidencyMap::sync_to_main(TileId tile, TransferLog& log) {
  if (auto owner = dirty_owner(tile)) write_back(*owner, tile, log);
}

void ResidencyMap::drop_device_copies(TileId tile, double now) {
  for (std::size_t e = 0; e < copies_.size(); ++e) drop(static_cast<DeviceId>(e), tile, now);
  dirty_.erase(tile);
  store_.set_stale(tile, false);
}

}  // namespace tiletrain
