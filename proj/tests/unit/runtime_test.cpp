// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "random_program.hpp"
#include "test_support.hpp"
#include "tiletrain/error.hpp"
#include "tiletrain/runtime.hpp"
#include "tiletrain/trace.hpp"

namespace {

using namespace tiletrain;

TileHandle scalar(Runtime& rt, float v = 0.0f) {
  return rt.register_tile(sizeof(float), [v](std::span<std::byte> b) { std::memcpy(b.data(), &v, sizeof v); });
}

float read_scalar(Runtime& rt, TileHandle h) {
  float v = 0.0f;
  rt.read_tile(h, std::as_writable_bytes(std::span<float>(&v, 1)));
  return v;
}

void noop(const TaskContext&) {}

bool has_edge(const Runtime& rt, TaskId from, TaskId to) {
  const auto preds = rt.graph().predecessors(to);
  return std::find(preds.begin(), preds.end(), from) != preds.end();
}

RuntimeOptions traced(int gpus = 2, int cpus = 2, std::size_t cap = std::size_t{1} << 20) {
  RuntimeOptions o = tt_test::options(gpus, cpus, cap);
  o.record_trace = true;
  return o;
}

TEST(RuntimeTest, RegisterTileStartsAtVersionZeroWithZeros) {
  Runtime rt;
  const TileHandle a = rt.register_tile(4096);
  const TileHandle b = rt.register_tile(4096);
  EXPECT_NE(a.id, b.id);
  EXPECT_EQ(rt.version(a), 0u);
  const auto bytes = rt.read_tile(a);
  ASSERT_EQ(bytes.size(), 4096u);
  EXPECT_TRUE(std::all_of(bytes.begin(), bytes.end(), [](std::byte x) { return x == std::byte{0}; }));
  EXPECT_EQ(rt.registered_bytes(), 8192u);
}

TEST(RuntimeTest, RejectsBadRegistrationsAndSubmissions) {
  Runtime rt;
  EXPECT_THROW(rt.register_tile(0), RuntimeError);
  const TileHandle a = scalar(rt);
  EXPECT_THROW(rt.submit("k", {}, 1.0, noop), RuntimeError);
  EXPECT_THROW(rt.submit("k", {{TileHandle{99, 4}, AccessMode::Read}}, 1.0, noop), RuntimeError);
  EXPECT_THROW(rt.submit("k", {{a, AccessMode::Read}, {a, AccessMode::Write}}, 1.0, noop), RuntimeError);
  EXPECT_THROW(rt.submit("k", {{a, AccessMode::Read}}, -1.0, noop), RuntimeError);
  EXPECT_NO_THROW(rt.submit("k", {{a, AccessMode::Read}, {a, AccessMode::Read}}, 1.0, noop));
  rt.wait_all();
}

TEST(RuntimeTest, WriteThenReadCreatesEdge) {
  Runtime rt;
  const TileHandle a = scalar(rt), b = scalar(rt), c = scalar(rt);
  const TaskId fill = rt.submit("fill", {{a, AccessMode::Write}}, 1.0, noop);
  const TaskId gemm =
      rt.submit("gemm", {{a, AccessMode::Read}, {b, AccessMode::Read}, {c, AccessMode::ReadWrite}}, 1.0, noop);
  EXPECT_TRUE(has_edge(rt, fill, gemm));
  EXPECT_EQ(rt.graph().predecessors(gemm).size(), 1u);
  rt.wait_all();
}

TEST(RuntimeTest, ReadsAndReducesAreMutuallyIndependent) {
  Runtime rt;
  const TileHandle x = scalar(rt), g = scalar(rt);
  const TaskId r1 = rt.submit("r", {{x, AccessMode::Read}}, 1.0, noop);
  const TaskId r2 = rt.submit("r", {{x, AccessMode::Read}}, 1.0, noop);
  const TaskId g1 = rt.submit("g", {{g, AccessMode::Reduce}}, 1.0, noop);
  const TaskId g2 = rt.submit("g", {{g, AccessMode::Reduce}}, 1.0, noop);
  EXPECT_TRUE(rt.graph().predecessors(r2).empty());
  EXPECT_TRUE(rt.graph().predecessors(g2).empty());
  EXPECT_FALSE(has_edge(rt, r1, r2));
  EXPECT_FALSE(has_edge(rt, g1, g2));
  rt.wait_all();
}

TEST(RuntimeTest, WriteAfterReadAndReduceAfterReadAreOrdered) {
  Runtime rt;
  const TileHandle x = scalar(rt);
  const TaskId r = rt.submit("r", {{x, AccessMode::Read}}, 1.0, noop);
  const TaskId w = rt.submit("w", {{x, AccessMode::Write}}, 1.0, noop);
  EXPECT_TRUE(has_edge(rt, r, w));
  const TaskId r2 = rt.submit("r", {{x, AccessMode::Read}}, 1.0, noop);
  const TaskId red = rt.submit("red", {{x, AccessMode::Reduce}}, 1.0, noop);
  EXPECT_TRUE(has_edge(rt, w, r2));
  EXPECT_TRUE(has_edge(rt, r2, red));
  rt.wait_all();
}

TEST(RuntimeTest, ReadAfterReduceWaitsForAnInsertedCommit) {
  Runtime rt;
  const TileHandle g = scalar(rt);
  const TaskId a = rt.submit("g", {{g, AccessMode::Reduce}}, 1.0, noop);
  const TaskId b = rt.submit("g", {{g, AccessMode::Reduce}}, 1.0, noop);
  const TaskId r = rt.submit("r", {{g, AccessMode::Read}}, 1.0, noop);
  const auto preds = rt.graph().predecessors(r);
  ASSERT_EQ(preds.size(), 1u);
  const TaskNode& commit = rt.graph().node(preds[0]);
  EXPECT_TRUE(commit.commit);
  EXPECT_TRUE(has_edge(rt, a, commit.id));
  EXPECT_TRUE(has_edge(rt, b, commit.id));
  rt.wait_all();
}

TEST(RuntimeTest, FourReduceIncrementsSumToFour) {
  Runtime rt(tt_test::options(2, 2));
  const TileHandle g = scalar(rt);
  for (int i = 0; i < 4; ++i) {
    rt.submit("inc", {{g, AccessMode::Reduce}}, 1.0, [](const TaskContext& ctx) { ctx.as<float>(0)[0] += 1.0f; });
  }
  rt.reduction_commit(g);
  rt.wait_all();
  EXPECT_EQ(read_scalar(rt, g), 4.0f);
  EXPECT_EQ(rt.version(g), 1u);
}

TEST(RuntimeTest, CommitWithoutPendingReducesIsANoOp) {
  Runtime rt;
  const TileHandle g = scalar(rt, 2.5f);
  rt.reduction_commit(g);
  EXPECT_TRUE(rt.graph().empty());
  rt.wait_all();
  EXPECT_EQ(read_scalar(rt, g), 2.5f);
  EXPECT_EQ(rt.version(g), 0u);
}

TEST(RuntimeTest, ReduceResultIsBitwiseStableAcrossPlacements) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> parts(64);
  for (float& p : parts) p = dist(rng) * std::pow(10.0f, dist(rng) * 6.0f);

  auto run = [&](const RuntimeOptions& o) {
    Runtime rt(o);
    const TileHandle g = scalar(rt);
    for (float p : parts) {
      rt.submit("part", {{g, AccessMode::Reduce}}, 1e6 * (1.0 + std::abs(p)),
                [p](const TaskContext& ctx) { ctx.as<float>(0)[0] += p; });
    }
    rt.wait_all();
    return read_scalar(rt, g);
  };
  const float ref = run(tt_test::options(1, 0, std::size_t{1} << 20, PolicyKind::EagerFifo));
  for (const auto& o : {tt_test::options(4, 4), tt_test::options(2, 0, 64, PolicyKind::EagerFifo),
                        tt_test::options(0, 3, 0, PolicyKind::GreedyEct)}) {
    const float v = run(o);
    EXPECT_EQ(std::memcmp(&v, &ref, sizeof v), 0) << v << " vs " << ref;
  }
}

TEST(RuntimeTest, VersionCountsCompletedWrites) {
  Runtime rt;
  const TileHandle a = scalar(rt);
  rt.submit("w", {{a, AccessMode::Write}}, 1.0, noop);
  rt.submit("rw", {{a, AccessMode::ReadWrite}}, 1.0, noop);
  rt.submit("r", {{a, AccessMode::Read}}, 1.0, noop);
  rt.wait_all();
  EXPECT_EQ(rt.version(a), 2u);
}

TEST(RuntimeTest, WaitAllOnEmptyGraphAndTwiceIsANoOp) {
  Runtime rt;
  rt.wait_all();
  EXPECT_EQ(rt.stats().tasks, 0u);
  const TileHandle a = scalar(rt);
  rt.submit("w", {{a, AccessMode::Write}}, 1.0, [](const TaskContext& ctx) { ctx.as<float>(0)[0] = 7.0f; });
  rt.wait_all();
  const double t = rt.now();
  const std::size_t tasks = rt.stats().tasks;
  rt.wait_all();
  EXPECT_EQ(rt.now(), t);
  EXPECT_EQ(rt.stats().tasks, tasks);
  EXPECT_EQ(read_scalar(rt, a), 7.0f);
}

TEST(RuntimeTest, IndependentTasksAllComplete) {
  Runtime rt(traced());
  std::vector<TileHandle> tiles;
  std::vector<TaskId> ids;
  for (int i = 0; i < 16; ++i) {
    tiles.push_back(scalar(rt));
    ids.push_back(rt.submit("w", {{tiles.back(), AccessMode::Write}}, 1e6,
                            [i](const TaskContext& ctx) { ctx.as<float>(0)[0] = static_cast<float>(i); }));
  }
  rt.wait_all();
  EXPECT_EQ(rt.trace().tasks.size(), 16u);
  for (int i = 0; i < 16; ++i) {
    EXPECT_EQ(rt.state(ids[i]), TaskState::Done);
    EXPECT_EQ(read_scalar(rt, tiles[i]), static_cast<float>(i));
  }
}

TEST(RuntimeTest, ChainCompletesInSubmissionOrder) {
  Runtime rt(traced());
  const TileHandle a = scalar(rt);
  std::vector<TaskId> ids;
  for (int i = 0; i < 3; ++i) {
    ids.push_back(rt.submit("step", {{a, AccessMode::ReadWrite}}, 1e6,
                            [](const TaskContext& ctx) { ctx.as<float>(0)[0] = ctx.as<float>(0)[0] * 2.0f + 1.0f; }));
  }
  rt.wait_all();
  std::map<TaskId, const TaskTraceRecord*> rec;
  for (const auto& r : rt.trace().tasks) rec[r.id] = &r;
  ASSERT_EQ(rec.size(), 3u);
  EXPECT_LE(rec[ids[0]]->end, rec[ids[1]]->start);
  EXPECT_LE(rec[ids[1]]->end, rec[ids[2]]->start);
  EXPECT_EQ(read_scalar(rt, a), 7.0f);
}

TEST(RuntimeTest, NoTaskStartsBeforeItsPredecessorsFinish) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const tt_test::Program prog = tt_test::random_program(seed);
    Runtime rt(traced(2, 2, 256));
    tt_test::run_on(rt, prog);
    std::map<TaskId, const TaskTraceRecord*> rec;
    for (const auto& r : rt.trace().tasks) rec[r.id] = &r;
    for (const auto& r : rt.trace().tasks) {
      EXPECT_LE(r.ready, r.start);
      EXPECT_LE(r.start, r.end);
      for (TaskId p : r.predecessors) {
        ASSERT_TRUE(rec.count(p));
        EXPECT_LE(rec[p]->end, r.start) << "seed " << seed << " task " << r.id;
      }
    }
  }
}

TEST(RuntimeTest, RandomSubmissionsStayAcyclic) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const tt_test::Program prog = tt_test::random_program(seed, {8, 60, 4, 4});
    Runtime rt(tt_test::options(1, 1));
    std::vector<TileHandle> tiles;
    for (std::size_t n : prog.tile_floats) tiles.push_back(rt.register_tile(n * sizeof(float)));
    for (const auto& t : prog.tasks) {
      std::vector<Access> acc;
      for (const auto& a : t.accesses) acc.push_back({tiles[a.tile], a.mode});
      rt.submit("t", acc, t.cost, noop);
    }
    EXPECT_TRUE(rt.graph().acyclic());
    for (TaskId id = rt.graph().first_id(); id < rt.graph().end_id(); ++id) {
      for (TaskId p : rt.graph().predecessors(id)) EXPECT_LT(p, id);
    }
    rt.wait_all();
  }
}

TEST(RuntimeTest, MatchesSequentialExecution) {
  for (std::uint64_t seed = 100; seed < 160; ++seed) {
    const tt_test::Program prog = tt_test::random_program(seed);
    Runtime rt(tt_test::options(2, 2, 128));
    EXPECT_EQ(tt_test::run_on(rt, prog).final, tt_test::run_sequential(prog)) << "seed " << seed;
  }
}

TEST(RuntimeTest, FirstKernelErrorSurfacesAndRuntimeStopsAcceptingWork) {
  Runtime rt(tt_test::options(1, 0));
  const TileHandle a = scalar(rt);
  rt.submit("ok", {{a, AccessMode::Write}}, 1.0, noop);
  rt.submit("boom", {{a, AccessMode::ReadWrite}}, 1.0,
            [](const TaskContext&) { throw KernelError("first failure"); });
  rt.submit("later", {{a, AccessMode::ReadWrite}}, 1.0, [](const TaskContext&) { throw KernelError("second"); });
  try {
    rt.wait_all();
    FAIL() << "expected a kernel error";
  } catch (const KernelError& e) {
    EXPECT_STREQ(e.what(), "first failure");
  }
  EXPECT_TRUE(rt.failed());
  EXPECT_THROW(rt.submit("x", {{a, AccessMode::Read}}, 1.0, noop), RuntimeError);
}

TEST(RuntimeTest, HostAccessRequiresAQuiescentGraph) {
  Runtime rt;
  const TileHandle a = scalar(rt);
  rt.submit("w", {{a, AccessMode::Write}}, 1.0, noop);
  EXPECT_THROW(rt.read_tile(a), RuntimeError);
  rt.wait_all();
  const float v = 3.0f;
  rt.write_tile(a, std::as_bytes(std::span<const float>(&v, 1)));
  EXPECT_EQ(read_scalar(rt, a), 3.0f);
}

TEST(RuntimeTest, TraceRecordsOneEventPerTask) {
  Runtime rt(traced());
  const TileHandle a = rt.register_tile(1024), b = rt.register_tile(1024);
  rt.submit("w", {{a, AccessMode::Write}}, 1e6, noop);
  rt.submit("copy", {{a, AccessMode::Read}, {b, AccessMode::Write}}, 1e6, noop);
  rt.wait_all();
  ASSERT_EQ(rt.trace().tasks.size(), 2u);
  for (const auto& r : rt.trace().tasks) {
    EXPECT_FALSE(r.kernel.empty());
    EXPECT_LE(r.wall_start_ns, r.wall_end_ns);
  }
  std::ostringstream out;
  write_chrome_trace(rt.trace(), rt.topology(), out);
  const auto doc = nlohmann::json::parse(out.str());
  const auto& events = doc.contains("traceEvents") ? doc["traceEvents"] : doc;
  int complete = 0;
  for (const auto& e : events) complete += e.value("ph", "") == "X";
  EXPECT_EQ(complete, 2);
}

TEST(RuntimeTest, FlushStatsRespectTheCriticalPathBound) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const tt_test::Program prog = tt_test::layered_program(seed);
    for (PolicyKind p : {PolicyKind::EagerFifo, PolicyKind::GreedyEct}) {
      Runtime rt(tt_test::options(4, 4, std::size_t{64} << 20, p));
      tt_test::run_on(rt, prog);
      const FlushStats& fs = rt.last_flush();
      EXPECT_EQ(fs.tasks, prog.tasks.size());
      EXPECT_GE(fs.makespan() * (1 + 1e-12), fs.critical_path_flops / rt.topology().max_flop_rate());
      EXPECT_GE(fs.total_flops, fs.critical_path_flops);
    }
  }
}

TEST(RuntimeTest, BusyAndIdleTimeCoverTheMakespan) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const tt_test::Program prog = tt_test::layered_program(seed);
    Runtime rt(tt_test::options(2, 3));
    tt_test::run_on(rt, prog);
    tt_test::run_on(rt, prog);
    const FlushStats& fs = rt.last_flush();
    double total = 0.0;
    for (std::size_t d = 0; d < fs.busy_seconds.size(); ++d) {
      EXPECT_NEAR(fs.busy_seconds[d] + fs.idle[d].total_seconds, fs.makespan(), 1e-12 + 1e-9 * fs.makespan());
      total += rt.stats().idle[d].total_seconds + rt.stats().busy_seconds[d];
    }
    EXPECT_GT(total, 0.0);
  }
}

TEST(RuntimeTest, IdleHistogramBinsByDecade) {
  IdleHistogram h;
  h.add(0.0);
  h.add(5e-7);
  h.add(1e-6);
  h.add(3e-3);
  h.add(2.0);
  EXPECT_EQ(h.counts[0], 1u);
  EXPECT_EQ(h.counts[1], 1u);
  EXPECT_EQ(h.counts[4], 1u);
  EXPECT_EQ(h.counts[7], 1u);
  EXPECT_DOUBLE_EQ(h.total_seconds, 5e-7 + 1e-6 + 3e-3 + 2.0);
  EXPECT_EQ(IdleHistogram::lower_edge(0), 0.0);
  EXPECT_DOUBLE_EQ(IdleHistogram::lower_edge(7), 1.0);
}

}  // namespace
